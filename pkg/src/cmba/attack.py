"""Observation-perturbation attacks against the joint policy.

The feasible set for a perturbation ``x`` of the joint observation ``s`` is::

    lower - s <= x <= upper - s            (observation box)
    ||x_i||_p <= eps        for victims i  (per-agent budget)
    x_i = 0                 otherwise

``cmba_attack`` minimises the masked squared distance between the model's
predicted next observation and a failure target by projected gradient
descent; the uniform, Gaussian and iterative-FGSM attacks are model-free
baselines that share the same feasible set.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigurationError, ProjectionWarning, ShapeError
from .swarmsim import OBS_PER_AGENT, action_slice, agent_slice, velocity_indices

DYKSTRA_TOL = 1e-10
# 200 rounds leave about 1% of random instances short of 1e-5 accuracy
DYKSTRA_ROUNDS = 100_000
L1_FEASIBILITY_TOL = 1e-8


@dataclass(frozen=True)
class Budget:
    p: object = "inf"
    eps: float = 0.1

    def __post_init__(self):
        p = self.p
        if isinstance(p, str):
            p = p.lower()
            p = "inf" if p in ("inf", "linf", "l_inf") else p
        if p in (1, "1", "l1"):
            p = 1
        elif p in (np.inf, "inf"):
            p = "inf"
        else:
            raise ConfigurationError(f"unsupported norm {self.p!r}; use 'inf' or 1")
        object.__setattr__(self, "p", p)
        if not self.eps >= 0:
            raise ConfigurationError("eps must be nonnegative")

    @property
    def label(self):
        return "linf" if self.p == "inf" else "l1"


@dataclass
class ConstraintSet:
    s: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    victims: tuple
    budget: Budget
    n_agents: int

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=np.float64)
        if self.s.shape != (OBS_PER_AGENT * self.n_agents,):
            raise ShapeError(f"joint observation has shape {self.s.shape}")
        self.victims = tuple(sorted(int(v) for v in self.victims))
        if any(v < 0 or v >= self.n_agents for v in self.victims):
            raise ConfigurationError(f"victim index out of range: {self.victims}")
        if len(set(self.victims)) != len(self.victims):
            raise ConfigurationError(f"duplicate victims: {self.victims}")

    @property
    def dim(self):
        return self.s.size

    def with_victims(self, victims):
        return ConstraintSet(self.s, self.lower, self.upper, tuple(victims), self.budget, self.n_agents)

    def block_box(self, i):
        """Box bounds on agent ``i``'s perturbation block (before the l_p ball)."""
        sl = agent_slice(i)
        lo = self.lower[sl] - self.s[sl]
        hi = self.upper[sl] - self.s[sl]
        if np.any(lo > hi):
            raise ConfigurationError(f"empty observation box for agent {i}")
        return lo, hi

    def victim_mask(self):
        mask = np.zeros(self.dim, dtype=bool)
        for v in self.victims:
            mask[agent_slice(v)] = True
        return mask

    def contains(self, x, tol=None):
        """Membership test; l1 budgets allow ``L1_FEASIBILITY_TOL`` slack by default."""
        if tol is None:
            tol = 0.0 if self.budget.p == "inf" else L1_FEASIBILITY_TOL
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self.s.shape or not np.all(np.isfinite(x)):
            return False
        if np.any(x[~self.victim_mask()] != 0.0):
            return False
        eps = self.budget.eps
        for v in self.victims:
            lo, hi = self.block_box(v)
            xb = x[agent_slice(v)]
            if np.any(xb < lo - tol) or np.any(xb > hi + tol):
                return False
            norm = np.max(np.abs(xb)) if self.budget.p == "inf" else np.sum(np.abs(xb))
            if norm > eps + tol:
                return False
        return True


@dataclass
class FailureTarget:
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.shape != self.mask.shape:
            raise ShapeError("target values and mask differ in shape")
        if not self.mask.any():
            raise ConfigurationError("failure target mask selects no coordinate")
        if not np.all(np.isfinite(self.values)):
            raise ConfigurationError("failure target values must be finite")


def velocity_failure_target(n_agents):
    """Every agent's velocity driven to zero; other coordinates ignored."""
    mask = np.zeros(OBS_PER_AGENT * n_agents, dtype=bool)
    mask[velocity_indices(n_agents)] = True
    return FailureTarget(np.zeros(mask.size), mask)


@dataclass
class AttackConfig:
    steps: int = 30
    step_size: float | None = None
    # eta = step_scale * eps unless step_size is given
    step_scale: float = 100.0
    selector_lr: float = 0.01
    seed: int = 0
    gaussian_std_scale: float = 1.0

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigurationError("steps must be >= 1")
        if self.step_size is not None and self.step_size <= 0:
            raise ConfigurationError("step_size must be positive")

    def eta(self, eps):
        return self.step_size if self.step_size is not None else self.step_scale * eps


@dataclass
class AttackResult:
    delta: np.ndarray
    objective_trace: list
    objective: float
    feasible: bool
    victims: tuple
    extras: dict = field(default_factory=dict)


# -- projections ------------------------------------------------------------

def project_linf_box(x, c):
    """Exact Euclidean projection; the l_inf ball intersected with a box is a box."""
    if c.budget.p != "inf":
        raise ConfigurationError("project_linf_box needs an l_inf budget")
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    eps = c.budget.eps
    for v in c.victims:
        lo, hi = c.block_box(v)
        sl = agent_slice(v)
        out[sl] = kernels.clamp(x[sl], np.maximum(lo, -eps), np.minimum(hi, eps))
    return out


def project_l1_box(x, c, tol=DYKSTRA_TOL, max_rounds=DYKSTRA_ROUNDS):
    """Euclidean projection onto (l1 ball ∩ box) per victim block, by Dykstra."""
    if c.budget.p != 1:
        raise ConfigurationError("project_l1_box needs an l1 budget")
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    for v in c.victims:
        lo, hi = c.block_box(v)
        sl = agent_slice(v)
        out[sl], rounds, change = kernels.dykstra_l1_box(x[sl], lo, hi, c.budget.eps, tol, max_rounds)
        if change > tol:
            warnings.warn(
                ProjectionWarning(
                    f"Dykstra projection for agent {v} stopped after {rounds} rounds "
                    f"with change {change:.3e}", change,
                ),
                stacklevel=2,
            )
    return out


def project(x, c):
    return project_linf_box(x, c) if c.budget.p == "inf" else project_l1_box(x, c)


# -- model-based objective ----------------------------------------------------

def _perturbed_actions(policies, s, delta, victims, scale=None):
    """Joint action with victims acting on ``s_i + w_i * delta_i``.

    Returns the action and the per-agent inputs the policies saw.
    """
    n = len(policies)
    inputs = []
    actions = []
    for i, pi in enumerate(policies):
        sl = agent_slice(i)
        if i in victims:
            w = 1.0 if scale is None else scale[i]
            obs_i = s[sl] + w * delta[sl]
        else:
            obs_i = s[sl]
        inputs.append(obs_i)
        actions.append(pi.act(obs_i))
    return np.concatenate(actions), inputs, n


def objective(model, policies, c, target, delta):
    """Masked squared distance of the predicted next observation to the target.

    Returns ``(d, grad)`` with ``grad`` the exact gradient w.r.t. ``delta``
    (zero on non-victim blocks).
    """
    delta = np.asarray(delta, dtype=np.float64)
    if delta.shape != c.s.shape:
        raise ShapeError(f"perturbation has shape {delta.shape}, expected {c.s.shape}")
    victims = set(c.victims)
    a, inputs, n = _perturbed_actions(policies, c.s, delta, victims)
    pred = model.predict(c.s, a)
    resid = np.where(target.mask, pred - target.values, 0.0)
    d = float(resid @ resid)
    _, grad_a = model.vjp(c.s, a, 2.0 * resid)
    grad = np.zeros_like(delta)
    for i in c.victims:
        grad[agent_slice(i)] = policies[i].vjp(inputs[i], grad_a[action_slice(i)])
    return d, grad


def _sign_init(c, rng):
    """``eps * sign(z)`` with ``z ~ N(0, 1)`` on victim coordinates, made feasible."""
    z = rng.standard_normal(c.dim)
    x = np.where(c.victim_mask(), c.budget.eps * np.sign(z), 0.0)
    return project(x, c)


def cmba_attack(model, policies, c, target, cfg=None):
    """Projected gradient descent on ``objective``; returns the best iterate seen."""
    cfg = cfg or AttackConfig()
    eps = c.budget.eps
    zero = np.zeros(c.dim)
    if eps == 0.0 or not c.victims:
        d0, _ = objective(model, policies, c, target, zero)
        return AttackResult(zero, [d0], d0, c.contains(zero), c.victims)
    rng = np.random.default_rng(cfg.seed)
    eta = cfg.eta(eps)
    x = _sign_init(c, rng)
    trace = []
    best_x, best_d = None, np.inf
    for _ in range(cfg.steps):
        d, g = objective(model, policies, c, target, x)
        trace.append(d)
        if d < best_d:
            best_x, best_d = x, d
        x = project(x - eta * g, c)
    d, _ = objective(model, policies, c, target, x)
    if d < best_d:
        best_x, best_d = x, d
    return AttackResult(best_x, trace, best_d, c.contains(best_x), c.victims,
                        {"last_objective": d, "initial_objective": trace[0]})


# -- model-free baselines -------------------------------------------------------

def _random_attack(c, sample, rng):
    raw = np.where(c.victim_mask(), sample(rng, c.dim), 0.0)
    x = project(raw, c) if c.budget.eps > 0 else np.zeros(c.dim)
    return AttackResult(x, [], float("nan"), c.contains(x), c.victims, {"raw": raw})


def uniform_attack(c, seed):
    eps = c.budget.eps
    return _random_attack(c, lambda rng, n: rng.uniform(-eps, eps, size=n), np.random.default_rng(seed))


def gaussian_attack(c, seed, std_scale=1.0):
    """N(0, sigma) with ``sigma = std_scale * eps`` per victim coordinate, then projected."""
    sigma = std_scale * c.budget.eps
    return _random_attack(c, lambda rng, n: rng.normal(0.0, sigma, size=n), np.random.default_rng(seed))


def action_distance(policies, c, targets, delta):
    """``sum_i ||pi_i(s_i + delta_i) - a_adv_i||^2`` over victims, with gradient."""
    d = 0.0
    grad = np.zeros(c.dim)
    for i in c.victims:
        sl = agent_slice(i)
        obs_i = c.s[sl] + delta[sl]
        r = policies[i].act(obs_i) - targets[i]
        d += float(r @ r)
        grad[sl] = policies[i].vjp(obs_i, 2.0 * r)
    return d, grad


def ifgsm_attack(policies, adversarial_policies, c, cfg=None):
    """Signed-gradient steps of size ``eps / K`` toward the adversary's target actions."""
    cfg = cfg or AttackConfig()
    zero = np.zeros(c.dim)
    targets = {i: adversarial_policies[i].act(c.s[agent_slice(i)]) for i in c.victims}
    if c.budget.eps == 0.0 or not c.victims:
        d0, _ = action_distance(policies, c, targets, zero)
        return AttackResult(zero, [d0], d0, c.contains(zero), c.victims)
    alpha = c.budget.eps / cfg.steps
    x = zero
    trace = []
    for _ in range(cfg.steps):
        d, g = action_distance(policies, c, targets, x)
        trace.append(d)
        x = project(x - alpha * np.sign(g), c)
    d, _ = action_distance(policies, c, targets, x)
    return AttackResult(x, trace, d, c.contains(x), c.victims)
