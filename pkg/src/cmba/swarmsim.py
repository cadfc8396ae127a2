"""Point-mass swarm: n agents with damped double-integrator dynamics.

Each agent observes 8 numbers::

    [px, py, vx, vy, gx - px, gy - py, mx, my]

position, velocity, offset to its own goal, and the mean offset from it to
the other agents. The joint observation concatenates agents in index order.
The full simulator state is recoverable from the joint observation (goal =
position + goal offset), so no hidden state exists apart from the step count.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigurationError, ShapeError

OBS_PER_AGENT = 8
ACT_PER_AGENT = 2
COORD_NAMES = ("px", "py", "vx", "vy", "gx", "gy", "mx", "my")
POS = slice(0, 2)
VEL = slice(2, 4)
GOAL = slice(4, 6)
MEAN = slice(6, 8)
ACTION_COST = 0.01


@dataclass(frozen=True)
class EnvSpec:
    n_agents: int = 4
    dt: float = 0.1
    damping: float = 0.1
    half_width: float = 10.0
    v_max: float = 2.0
    horizon: int = 200
    gamma: float = 1.0
    # goals are drawn uniformly from [-goal_spread * L, goal_spread * L]^2
    goal_spread: float = 0.5

    def __post_init__(self):
        if self.n_agents < 1 or self.horizon < 1:
            raise ConfigurationError("n_agents and horizon must be positive")
        if self.dt <= 0 or self.half_width <= 0 or self.v_max <= 0:
            raise ConfigurationError("dt, half_width and v_max must be positive")
        if not 0.0 <= self.damping < 1.0:
            raise ConfigurationError("damping must lie in [0, 1)")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigurationError("gamma must lie in (0, 1]")
        if not 0.0 < self.goal_spread < 1.0:
            raise ConfigurationError("goal_spread must lie in (0, 1)")

    @property
    def obs_dim(self):
        return OBS_PER_AGENT * self.n_agents

    @property
    def act_dim(self):
        return ACT_PER_AGENT * self.n_agents


def agent_slice(i):
    """Index range of agent ``i`` inside a joint observation."""
    return slice(OBS_PER_AGENT * i, OBS_PER_AGENT * (i + 1))


def action_slice(i):
    return slice(ACT_PER_AGENT * i, ACT_PER_AGENT * (i + 1))


def split_agents(joint_obs, n_agents):
    return np.asarray(joint_obs).reshape(n_agents, OBS_PER_AGENT)


def coordinate_names(n_agents):
    return [f"a{i}_{c}" for i in range(n_agents) for c in COORD_NAMES]


def velocity_indices(n_agents):
    return np.array([OBS_PER_AGENT * i + k for i in range(n_agents) for k in (2, 3)])


def observe(pos, vel, goals):
    n = len(pos)
    obs = np.empty((n, OBS_PER_AGENT))
    obs[:, POS] = pos
    obs[:, VEL] = vel
    obs[:, GOAL] = goals - pos
    if n > 1:
        # mean over j != i of (p_j - p_i)
        obs[:, MEAN] = (pos.sum(axis=0) - pos) / (n - 1) - pos
    else:
        obs[:, MEAN] = 0.0
    return obs.ravel()


def observation_bounds(spec):
    """Per-coordinate box ``(lower, upper)`` containing every reachable observation."""
    L, vm = spec.half_width, spec.v_max
    upper_agent = np.array([L, L, vm, vm, 2 * L, 2 * L, 2 * L, 2 * L])
    upper = np.tile(upper_agent, spec.n_agents)
    return -upper, upper


class SwarmEnv:
    """One episode at a time; not shareable across workers mid-episode."""

    def __init__(self, spec=None):
        self.spec = spec or EnvSpec()
        self.pos = self.vel = self.goals = None
        self.t = 0
        self.done = True

    def reset(self, seed):
        spec = self.spec
        rng = np.random.default_rng(seed)
        half = 0.5 * spec.half_width
        self.pos = rng.uniform(-half, half, size=(spec.n_agents, 2))
        self.vel = np.zeros((spec.n_agents, 2))
        g = spec.goal_spread * spec.half_width
        self.goals = rng.uniform(-g, g, size=(spec.n_agents, 2))
        self.t = 0
        self.done = False
        return self.observation()

    def observation(self):
        return observe(self.pos, self.vel, self.goals)

    def set_state(self, pos, vel, goals, t=0):
        self.pos = np.array(pos, dtype=np.float64).reshape(-1, 2)
        self.vel = np.array(vel, dtype=np.float64).reshape(-1, 2)
        self.goals = np.array(goals, dtype=np.float64).reshape(-1, 2)
        self.t = t
        self.done = False
        return self.observation()

    def step(self, action):
        spec = self.spec
        if self.done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        a = np.asarray(action, dtype=np.float64)
        if a.size != spec.act_dim:
            raise ShapeError(f"joint action has {a.size} entries, expected {spec.act_dim}")
        self.pos, self.vel, reward, touched = kernels.swarm_step(
            self.pos, self.vel, self.goals, a.reshape(spec.n_agents, 2),
            spec.dt, spec.damping, spec.half_width, spec.v_max, ACTION_COST,
        )
        self.t += 1
        self.done = touched or self.t >= spec.horizon
        return self.observation(), float(reward), self.done
