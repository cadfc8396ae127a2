"""Per-agent differentiable policies.

All policies map one agent's 8-dim observation to a 2-dim action in
[-1, 1]^2 and expose ``act``, ``jacobian`` and ``vjp`` (``J^T g``) so the
attacks can differentiate through them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import netcore
from .errors import ConfigurationError, ShapeError
from .swarmsim import ACT_PER_AGENT, GOAL, OBS_PER_AGENT, VEL, agent_slice


def _check_obs(obs):
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape[-1] != OBS_PER_AGENT:
        raise ShapeError(f"agent observation has {obs.shape[-1]} entries, expected {OBS_PER_AGENT}")
    return obs


@dataclass(frozen=True)
class ScriptedPolicy:
    """PD controller toward the goal, squashed with tanh.

    ``sign=+1`` is the expert; ``sign=-1`` flips the argument inside the tanh
    and gives the anti-expert used as the iFGSM target source.
    """

    kp: float = 1.0
    kd: float = 0.5
    sign: float = 1.0

    @property
    def kind(self):
        return "scripted_expert" if self.sign > 0 else "scripted_anti_expert"

    def _arg(self, obs):
        return self.sign * (self.kp * obs[..., GOAL] - self.kd * obs[..., VEL])

    def act(self, obs):
        return np.tanh(self._arg(_check_obs(obs)))

    def jacobian(self, obs):
        obs = _check_obs(obs)
        sech2 = 1.0 - np.tanh(self._arg(obs)) ** 2
        jac = np.zeros((ACT_PER_AGENT, OBS_PER_AGENT))
        for k in range(ACT_PER_AGENT):
            jac[k, GOAL.start + k] = self.sign * self.kp * sech2[k]
            jac[k, VEL.start + k] = -self.sign * self.kd * sech2[k]
        return jac

    def vjp(self, obs, upstream):
        obs = _check_obs(obs)
        g = np.asarray(upstream, dtype=np.float64) * (1.0 - np.tanh(self._arg(obs)) ** 2)
        out = np.zeros(OBS_PER_AGENT)
        out[GOAL] = self.sign * self.kp * g
        out[VEL] = -self.sign * self.kd * g
        return out


def expert(kp=1.0, kd=0.5):
    return ScriptedPolicy(kp, kd, 1.0)


def anti_expert(kp=1.0, kd=0.5):
    return ScriptedPolicy(kp, kd, -1.0)


@dataclass(frozen=True)
class DensePolicy:
    net: netcore.DenseNet
    kind: str = "dense_net"

    def __post_init__(self):
        if self.net.n_inputs != OBS_PER_AGENT or self.net.n_outputs != ACT_PER_AGENT:
            raise ShapeError(f"policy net must map {OBS_PER_AGENT} -> {ACT_PER_AGENT}")

    def act(self, obs):
        return netcore.forward(self.net, _check_obs(obs))

    def jacobian(self, obs):
        obs = _check_obs(obs)
        return np.stack([netcore.input_gradient(self.net, obs, row) for row in np.eye(ACT_PER_AGENT)])

    def vjp(self, obs, upstream):
        return netcore.input_gradient(self.net, _check_obs(obs), upstream)


def joint_act(policies, joint_obs):
    """Concatenate every agent's action on its own slice of ``joint_obs``."""
    return np.concatenate([pi.act(joint_obs[agent_slice(i)]) for i, pi in enumerate(policies)])


def behavior_clone(teacher, states, cfg, hidden=(64, 64), seed=0):
    """Fit a tanh-headed DenseNet to the teacher's actions on ``states``.

    Returns ``(DensePolicy, holdout_mse)``.
    """
    states = np.asarray(states, dtype=np.float64).reshape(-1, OBS_PER_AGENT)
    if len(states) == 0:
        raise ConfigurationError("behavior cloning needs at least one state")
    targets = teacher.act(states)
    net = netcore.init_dense((OBS_PER_AGENT, *hidden, ACT_PER_AGENT), "tanh", "tanh", seed=seed)
    fit = netcore.fit_regression(net, states, targets, cfg)
    fit.net.metadata = {"kind": "policy", "teacher": getattr(teacher, "kind", "unknown")}
    return DensePolicy(fit.net), fit.holdout_mse
