"""Choosing which agents to attack.

Strategies:

* ``fixed``   -- a configured victim set, attacked with ``cmba_attack``.
* ``random``  -- a seeded uniform subset of size ``n_v``.
* ``greedy``  -- every size-``n_v`` subset attacked, lowest objective kept.
* ``learned`` -- joint descent over the perturbation and a softmax weight
  network; the ``n_v`` largest weights pick the victims.
* ``learned_plus_alg1`` -- ``learned`` to pick victims, then ``cmba_attack``
  restricted to them.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import netcore
from .attack import AttackConfig, AttackResult, _sign_init, cmba_attack, objective, project
from .errors import ConfigurationError, ShapeError
from .swarmsim import OBS_PER_AGENT, action_slice, agent_slice

STRATEGIES = ("fixed", "random", "greedy", "learned", "learned_plus_alg1")
GREEDY_MAX_AGENTS = 8


@dataclass(frozen=True)
class SelectionConfig:
    n_v: int = 1
    strategy: str = "fixed"
    agents: tuple | None = (0,)
    warm_start: bool = False

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"unknown selection strategy {self.strategy!r}")
        if self.n_v < 1:
            raise ConfigurationError("n_v must be >= 1")
        if self.agents is not None:
            object.__setattr__(self, "agents", tuple(int(a) for a in self.agents))
            if self.strategy == "fixed" and len(set(self.agents)) != self.n_v:
                raise ConfigurationError(
                    f"fixed victim set {self.agents} does not have n_v={self.n_v} distinct agents"
                )
        elif self.strategy == "fixed":
            raise ConfigurationError("strategy 'fixed' needs an agent list")

    def validate(self, n_agents):
        if self.n_v > n_agents:
            raise ConfigurationError(f"n_v={self.n_v} exceeds {n_agents} agents")
        if self.strategy == "fixed" and any(a < 0 or a >= n_agents for a in self.agents):
            raise ConfigurationError(f"fixed victim set {self.agents} out of range")

    @property
    def label(self):
        if self.strategy == "fixed":
            return "fixed" + "-".join(str(a) for a in self.agents)
        return f"{self.strategy}{self.n_v}"


class SelectorNetwork:
    """Softmax weight network over agents, fed the clean joint observation."""

    def __init__(self, net):
        if net.output_activation != "softmax":
            raise ConfigurationError("selector network needs a softmax head")
        self.net = net

    @classmethod
    def create(cls, n_agents, hidden=(64, 64), seed=0):
        net = netcore.init_dense((OBS_PER_AGENT * n_agents, *hidden, n_agents), "tanh", "softmax", seed=seed)
        return cls(net)

    @property
    def n_agents(self):
        return self.net.n_outputs

    def copy(self):
        return SelectorNetwork(self.net.copy())


def selector_forward(sel, s):
    s = np.asarray(s, dtype=np.float64)
    if s.shape != (sel.net.n_inputs,):
        raise ShapeError(f"selector expects a joint observation of size {sel.net.n_inputs}")
    return netcore.forward(sel.net, s)


def top_k(weights, k):
    """Indices of the ``k`` largest weights, ties going to the lower index."""
    order = np.argsort(-np.asarray(weights), kind="stable")
    return tuple(sorted(int(i) for i in order[:k]))


def weighted_objective(model, policies, c, target, delta, weights):
    """Objective with victim ``i`` seeing ``s_i + w_i * delta_i``.

    Returns ``(d, grad_delta, grad_weights)``.
    """
    a_parts, inputs = [], []
    for i, pi in enumerate(policies):
        sl = agent_slice(i)
        obs_i = c.s[sl] + weights[i] * delta[sl] if i in c.victims else c.s[sl]
        inputs.append(obs_i)
        a_parts.append(pi.act(obs_i))
    a = np.concatenate(a_parts)
    pred = model.predict(c.s, a)
    resid = np.where(target.mask, pred - target.values, 0.0)
    d = float(resid @ resid)
    _, grad_a = model.vjp(c.s, a, 2.0 * resid)
    grad_delta = np.zeros(c.dim)
    grad_w = np.zeros(len(policies))
    for i in c.victims:
        sl = agent_slice(i)
        g_obs = policies[i].vjp(inputs[i], grad_a[action_slice(i)])
        grad_delta[sl] = weights[i] * g_obs
        grad_w[i] = g_obs @ delta[sl]
    return d, grad_delta, grad_w


def learned_select_attack(model, policies, c_template, target, sel, cfg=None, n_v=1):
    """Joint descent on perturbation and selector weights, then keep the top ``n_v`` blocks.

    ``sel`` is updated in place (callers wanting a fresh selector per
    timestep pass a new one). The returned perturbation holds the final
    unscaled iterate on the selected blocks and zeros elsewhere.
    """
    cfg = cfg or AttackConfig()
    n = c_template.n_agents
    if not 1 <= n_v <= n:
        raise ConfigurationError(f"n_v={n_v} must lie in [1, {n}]")
    c_all = c_template.with_victims(range(n))
    eps = c_all.budget.eps
    if eps == 0.0:
        weights = selector_forward(sel, c_all.s)
        chosen = top_k(weights, n_v)
        zero = np.zeros(c_all.dim)
        c_sel = c_all.with_victims(chosen)
        d0, _ = objective(model, policies, c_sel, target, zero)
        return chosen, AttackResult(zero, [d0], d0, c_sel.contains(zero), chosen,
                                    {"weights": weights, "scaled_objective": d0})

    rng = np.random.default_rng(cfg.seed)
    eta = cfg.eta(eps)
    delta = _sign_init(c_all, rng)
    trace = []
    for _ in range(cfg.steps):
        weights = selector_forward(sel, c_all.s)
        d, g_delta, g_w = weighted_objective(model, policies, c_all, target, delta, weights)
        trace.append(d)
        dws, dbs = netcore.param_gradient(sel.net, c_all.s, g_w)
        delta = project(delta - eta * g_delta, c_all)
        for j in range(len(sel.net.weights)):
            sel.net.weights[j] = sel.net.weights[j] - cfg.selector_lr * dws[j]
            sel.net.biases[j] = sel.net.biases[j] - cfg.selector_lr * dbs[j]

    weights = selector_forward(sel, c_all.s)
    scaled_d, _, _ = weighted_objective(model, policies, c_all, target, delta, weights)
    chosen = top_k(weights, n_v)
    c_sel = c_all.with_victims(chosen)
    out = np.where(c_sel.victim_mask(), delta, 0.0)
    d, _ = objective(model, policies, c_sel, target, out)
    return chosen, AttackResult(out, trace, d, c_sel.contains(out), chosen,
                                {"weights": weights, "scaled_objective": scaled_d})


def greedy_select_attack(model, policies, c_template, target, cfg=None, n_v=1):
    """Attack every size-``n_v`` subset; keep the one with the lowest objective."""
    n = c_template.n_agents
    if n > GREEDY_MAX_AGENTS:
        raise ConfigurationError(
            f"greedy sweep over {n} agents is too large; use the 'learned' strategy"
        )
    if not 1 <= n_v <= n:
        raise ConfigurationError(f"n_v={n_v} must lie in [1, {n}]")
    table = []
    best = None
    for subset in itertools.combinations(range(n), n_v):
        res = cmba_attack(model, policies, c_template.with_victims(subset), target, cfg)
        table.append((subset, res.objective))
        if best is None or res.objective < best[1].objective:
            best = (subset, res)
    best[1].extras["sweep"] = table
    return best


def strategy_attack(selection, model, policies, c_template, target, cfg=None, selector=None):
    """Dispatch on ``selection.strategy``; returns ``(victims, AttackResult)``.

    ``selector`` carries the weight network between calls when
    ``warm_start`` is set; otherwise a fresh one seeded from ``cfg.seed`` is
    used.
    """
    cfg = cfg or AttackConfig()
    n = c_template.n_agents
    selection.validate(n)
    if selection.strategy == "fixed":
        victims = tuple(sorted(selection.agents))
        return victims, cmba_attack(model, policies, c_template.with_victims(victims), target, cfg)
    if selection.strategy == "random":
        victims = random_victims(n, selection.n_v, cfg.seed)
        return victims, cmba_attack(model, policies, c_template.with_victims(victims), target, cfg)
    if selection.strategy == "greedy":
        return greedy_select_attack(model, policies, c_template, target, cfg, selection.n_v)
    if selector is None or not selection.warm_start:
        selector = SelectorNetwork.create(n, seed=cfg.seed)
    victims, res = learned_select_attack(model, policies, c_template, target, selector, cfg, selection.n_v)
    res.extras["selector"] = selector
    if selection.strategy == "learned":
        return victims, res
    follow = cmba_attack(model, policies, c_template.with_victims(victims), target, cfg)
    follow.extras["learned_objective"] = res.objective
    follow.extras["selector"] = selector
    return victims, follow


def random_victims(n_agents, n_v, seed):
    rng = np.random.default_rng(seed)
    return tuple(sorted(int(i) for i in rng.choice(n_agents, size=n_v, replace=False)))
