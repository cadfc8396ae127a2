"""Seeded experiment driver: episodes under attack, budget sweeps, CSV/SVG output.

Episode ``k`` of every cell uses seed ``base_seed + k`` so that all methods
see the same environment realisations (paired comparison). Per-timestep
attack randomness is derived from ``(episode seed, t)``.
"""
from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from . import attack, dynlearn, netcore
from .errors import ConfigurationError
from .policy import DensePolicy, anti_expert, expert
from .swarmsim import EnvSpec, SwarmEnv, agent_slice, coordinate_names, observation_bounds
from .victimselect import SelectionConfig, random_victims, strategy_attack

CONFIG_VERSION = 1
METHODS = ("none", "uniform", "gaussian", "ifgsm", "cmba")
MODEL_FREE = ("uniform", "gaussian", "ifgsm")
DEFAULT_LINF_GRID = (0.025, 0.05, 0.1, 0.2)


@dataclass
class ExperimentConfig:
    env: EnvSpec = field(default_factory=EnvSpec)
    policy: str = "scripted"
    dynamics: str | None = None
    methods: tuple = METHODS
    selections: tuple = (SelectionConfig(),)
    budgets: tuple = tuple(("inf", e) for e in DEFAULT_LINF_GRID)
    episodes: int = 16
    seed: int = 0
    output_dir: str = "results"
    attack: attack.AttackConfig = field(default_factory=attack.AttackConfig)
    workers: int = 1

    def __post_init__(self):
        self.methods = tuple(self.methods)
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigurationError(f"unknown attack methods {unknown}; choose from {METHODS}")
        self.budgets = tuple(b if isinstance(b, attack.Budget) else attack.Budget(b[0], float(b[1]))
                             for b in self.budgets)
        if not self.budgets and any(m != "none" for m in self.methods):
            raise ConfigurationError("budget grid is empty")
        if self.episodes < 1:
            raise ConfigurationError("episodes must be positive")
        self.selections = tuple(self.selections)
        for sel in self.selections:
            sel.validate(self.env.n_agents)


# -- configuration file --------------------------------------------------------

_TOP_KEYS = {"version", "env", "policy", "dynamics", "methods", "selections", "budgets",
             "episodes", "seed", "output_dir", "attack", "workers"}


def _check_keys(section, data, allowed):
    if not isinstance(data, dict):
        raise ConfigurationError(f"section {section!r} must be a mapping")
    extra = set(data) - set(allowed)
    if extra:
        raise ConfigurationError(f"unknown keys in {section!r}: {sorted(extra)}")


def config_from_dict(data, base_dir="."):
    """Build an ExperimentConfig from a parsed config document (schema version 1)."""
    _check_keys("<top>", data, _TOP_KEYS)
    version = data.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigurationError(f"unsupported config version {version}")
    kw = {}
    if "env" in data:
        _check_keys("env", data["env"], {f.name for f in fields(EnvSpec)})
        kw["env"] = EnvSpec(**data["env"])
    for key in ("policy", "dynamics"):
        if data.get(key) is not None:
            value = str(data[key])
            if key == "dynamics" or value != "scripted":
                value = str(Path(base_dir, value))
            kw[key] = value
    if "methods" in data:
        kw["methods"] = tuple(data["methods"])
    if "selections" in data:
        sels = []
        for item in data["selections"]:
            _check_keys("selections", item, {"strategy", "n_v", "agents", "warm_start"})
            item = dict(item)
            if "agents" in item and item["agents"] is not None:
                item["agents"] = tuple(item["agents"])
            sels.append(SelectionConfig(**item))
        kw["selections"] = tuple(sels)
    if "budgets" in data:
        budgets = []
        for item in data["budgets"]:
            _check_keys("budgets", item, {"p", "eps"})
            eps = item["eps"]
            for e in eps if isinstance(eps, (list, tuple)) else [eps]:
                budgets.append(attack.Budget(item.get("p", "inf"), float(e)))
        kw["budgets"] = tuple(budgets)
    for key in ("episodes", "seed", "workers"):
        if key in data:
            kw[key] = int(data[key])
    if "output_dir" in data:
        kw["output_dir"] = str(Path(base_dir, data["output_dir"]))
    if "attack" in data:
        _check_keys("attack", data["attack"], {f.name for f in fields(attack.AttackConfig)} - {"seed"})
        kw["attack"] = attack.AttackConfig(**data["attack"])
    return ExperimentConfig(**kw)


def load_config(path):
    path = Path(path)
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    return config_from_dict(data, base_dir=path.parent)


# -- resources -------------------------------------------------------------------

@dataclass
class Lab:
    """Everything a rollout needs, loaded once and shared read-only."""

    spec: EnvSpec
    policies: list
    adversaries: list
    model: dynlearn.DynamicsModel | None
    target: attack.FailureTarget
    attack_cfg: attack.AttackConfig = field(default_factory=attack.AttackConfig)

    @classmethod
    def from_config(cls, cfg, model=None, policies=None):
        """Load policies and the dynamics model named in ``cfg``.

        Missing files raise before any rollout starts.
        """
        n = cfg.env.n_agents
        if policies is None:
            if cfg.policy == "scripted":
                policies = [expert()] * n
            else:
                policies = [DensePolicy(netcore.load_net(cfg.policy))] * n
        if model is None and cfg.dynamics is not None:
            model = dynlearn.load_model(cfg.dynamics)
        needs_model = "cmba" in cfg.methods
        if needs_model and model is None:
            raise ConfigurationError("method 'cmba' needs a dynamics model (set 'dynamics' in the config)")
        if model is not None and model.obs_dim != cfg.env.obs_dim:
            raise ConfigurationError("dynamics model does not match the environment size")
        return cls(cfg.env, list(policies), [anti_expert()] * n, model,
                   attack.velocity_failure_target(n), cfg.attack)


def step_seed(seed, t):
    return int(np.random.SeedSequence([int(seed), int(t)]).generate_state(1)[0])


@dataclass
class EpisodeRecord:
    seed: int
    length: int
    total_reward: float
    states: np.ndarray
    deltas: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    objectives: np.ndarray
    victims: list


def compute_perturbation(lab, method, budget, selection, s, seed, selector=None):
    """Perturbation for one timestep; returns ``(delta, victims, objective, selector)``."""
    n = lab.spec.n_agents
    lo, hi = observation_bounds(lab.spec)
    cfg = replace(lab.attack_cfg, seed=seed)
    if method == "none":
        return np.zeros_like(s), (), float("nan"), selector
    if method == "cmba":
        c = attack.ConstraintSet(s, lo, hi, (), budget, n)
        victims, res = strategy_attack(selection, lab.model, lab.policies, c, lab.target, cfg, selector)
        return res.delta, victims, res.objective, res.extras.get("selector", selector)
    if selection.strategy == "fixed":
        victims = selection.agents
    elif selection.strategy == "random":
        victims = random_victims(n, selection.n_v, seed)
    else:
        raise ConfigurationError(f"{method} supports only fixed or random victims, not {selection.strategy!r}")
    c = attack.ConstraintSet(s, lo, hi, victims, budget, n)
    if method == "uniform":
        res = attack.uniform_attack(c, seed)
    elif method == "gaussian":
        res = attack.gaussian_attack(c, seed, lab.attack_cfg.gaussian_std_scale)
    else:
        res = attack.ifgsm_attack(lab.policies, lab.adversaries, c, cfg)
    return res.delta, c.victims, res.objective, selector


def run_episode(lab, method, budget, seed, selection=None):
    """Roll out one seeded episode; victims act on perturbed observations."""
    selection = selection or SelectionConfig()
    env = SwarmEnv(lab.spec)
    s = env.reset(seed)
    states, deltas, actions, rewards, objectives, victim_log = [], [], [], [], [], []
    selector = None
    done = False
    while not done:
        delta, victims, d, selector = compute_perturbation(
            lab, method, budget, selection, s, step_seed(seed, env.t), selector)
        parts = []
        for i, pi in enumerate(lab.policies):
            sl = agent_slice(i)
            block = delta[sl]
            parts.append(pi.act(s[sl] + block) if block.any() else pi.act(s[sl]))
        a = np.concatenate(parts)
        states.append(s)
        deltas.append(delta)
        actions.append(a)
        objectives.append(d)
        victim_log.append(tuple(victims))
        s, r, done = env.step(a)
        rewards.append(r)
    rewards = np.array(rewards)
    return EpisodeRecord(int(seed), len(rewards), float(np.sum(rewards)), np.array(states),
                         np.array(deltas), np.array(actions), rewards, np.array(objectives), victim_log)


# -- sweeps ------------------------------------------------------------------------

@dataclass
class CellResult:
    method: str
    budget: attack.Budget
    selection: SelectionConfig
    rewards: list
    lengths: list
    seeds: list
    status: str = "ok"

    @property
    def mean(self):
        return float(np.mean(self.rewards)) if self.rewards else float("nan")

    @property
    def std(self):
        return float(np.std(self.rewards)) if self.rewards else float("nan")


def _episode_summary(args):
    lab, method, budget, seed, selection = args
    rec = run_episode(lab, method, budget, seed, selection)
    return rec.seed, rec.length, rec.total_reward


def run_cell(lab, cfg, method, budget, selection, pool=None):
    seeds = [cfg.seed + k for k in range(cfg.episodes)]
    jobs = [(lab, method, budget, s, selection) for s in seeds]
    try:
        results = list(pool.map(_episode_summary, jobs)) if pool else [_episode_summary(j) for j in jobs]
    except Exception as exc:  # a failed cell is recorded, the sweep goes on
        return CellResult(method, budget, selection, [], [], [], f"failed: {type(exc).__name__}: {exc}")
    results.sort(key=lambda r: r[0])
    return CellResult(method, budget, selection, [r[2] for r in results], [r[1] for r in results],
                      [r[0] for r in results])


def sweep_budget(cfg, lab=None, write=True):
    """Run every (selection x budget x method) cell; optionally write CSV/SVG output."""
    lab = lab or Lab.from_config(cfg)
    cells = []
    pool = ProcessPoolExecutor(cfg.workers) if cfg.workers > 1 else None
    try:
        for selection in cfg.selections:
            for budget in cfg.budgets:
                for method in cfg.methods:
                    cells.append(run_cell(lab, cfg, method, budget, selection, pool))
    finally:
        if pool:
            pool.shutdown()
    if write:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_episodes_csv(cells, out / "episodes.csv")
        table = cells_to_table(cells)
        emit_report(table, out)
    return cells


RESULT_COLUMNS = ("method", "norm", "eps", "victims", "episodes", "mean_reward", "std_reward",
                  "mean_length", "status")


def _fmt(x):
    return repr(float(x))


def cells_to_table(cells):
    rows = []
    for c in cells:
        rows.append({
            "method": c.method,
            "norm": c.budget.label,
            "eps": float(c.budget.eps),
            "victims": c.selection.label,
            "episodes": len(c.rewards),
            "mean_reward": c.mean,
            "std_reward": c.std,
            "mean_length": float(np.mean(c.lengths)) if c.lengths else float("nan"),
            "status": c.status,
        })
    return rows


def write_results_csv(table, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in table:
            w.writerow([r["method"], r["norm"], _fmt(r["eps"]), r["victims"], r["episodes"],
                        _fmt(r["mean_reward"]), _fmt(r["std_reward"]), _fmt(r["mean_length"]),
                        r["status"]])


def read_results_csv(path):
    table = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            table.append({
                "method": r["method"], "norm": r["norm"], "eps": float(r["eps"]),
                "victims": r["victims"], "episodes": int(r["episodes"]),
                "mean_reward": float(r["mean_reward"]), "std_reward": float(r["std_reward"]),
                "mean_length": float(r["mean_length"]), "status": r["status"],
            })
    return table


def write_episodes_csv(cells, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("method", "norm", "eps", "victims", "seed", "length", "total_reward"))
        for c in cells:
            for seed, length, reward in zip(c.seeds, c.lengths, c.rewards):
                w.writerow([c.method, c.budget.label, _fmt(c.budget.eps), c.selection.label,
                            seed, length, _fmt(reward)])


# -- traces ----------------------------------------------------------------------------

def emit_traces(record, path, n_agents):
    """Write ``states.csv`` and ``perturbations.csv`` (one row per timestep) under ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    header = ["t"] + coordinate_names(n_agents)
    out = []
    for name, arr in (("states.csv", record.states), ("perturbations.csv", record.deltas)):
        with open(path / name, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for t, row in enumerate(arr):
                w.writerow([t] + [_fmt(v) for v in row])
        out.append(path / name)
    return out


def read_trace(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row[1:]] for row in reader]
    return header[1:], np.array(rows)


# -- SVG report ---------------------------------------------------------------------------

PALETTE = ("#4d4d4d", "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b")


def _svg_pane(rows, title):
    W, H = 640, 420
    left, right, top, bottom = 70, 170, 40, 60
    pw, ph = W - left - right, H - top - bottom
    methods = list(dict.fromkeys(r["method"] for r in rows))
    eps_vals = sorted({r["eps"] for r in rows})
    ok = [r for r in rows if r["status"] == "ok"]
    lows = [r["mean_reward"] - r["std_reward"] for r in ok]
    highs = [r["mean_reward"] + r["std_reward"] for r in ok]
    ymin, ymax = (min(lows), max(highs)) if ok else (0.0, 1.0)
    if ymax - ymin < 1e-9:
        ymin, ymax = ymin - 1.0, ymax + 1.0
    pad = 0.05 * (ymax - ymin)
    ymin, ymax = ymin - pad, ymax + pad
    xmin, xmax = (eps_vals[0], eps_vals[-1]) if eps_vals else (0.0, 1.0)
    if xmax - xmin < 1e-12:
        xmin, xmax = xmin - 0.5, xmax + 0.5

    def X(e):
        return left + pw * (e - xmin) / (xmax - xmin)

    def Y(v):
        return top + ph * (1.0 - (v - ymin) / (ymax - ymin))

    def f(v):
        return f"{v:.2f}"

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<text x="{left + pw / 2:.2f}" y="22" text-anchor="middle" font-family="sans-serif" font-size="15">{title}</text>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for k in range(5):
        v = ymin + (ymax - ymin) * k / 4
        out.append(f'<line x1="{left - 4}" y1="{f(Y(v))}" x2="{left}" y2="{f(Y(v))}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{f(Y(v) + 4)}" text-anchor="end" font-family="sans-serif" '
                   f'font-size="11">{v:.3g}</text>')
    for e in eps_vals:
        out.append(f'<line x1="{f(X(e))}" y1="{top + ph}" x2="{f(X(e))}" y2="{top + ph + 4}" stroke="black"/>')
        out.append(f'<text x="{f(X(e))}" y="{top + ph + 18}" text-anchor="middle" font-family="sans-serif" '
                   f'font-size="11">{e:g}</text>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{H - 15}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="13">budget eps</text>')
    out.append(f'<text x="18" y="{top + ph / 2:.2f}" text-anchor="middle" font-family="sans-serif" '
               f'font-size="13" transform="rotate(-90 18 {top + ph / 2:.2f})">team reward</text>')

    for k, m in enumerate(methods):
        color = PALETTE[k % len(PALETTE)]
        pts = sorted((r["eps"], r["mean_reward"], r["std_reward"]) for r in ok if r["method"] == m)
        if not pts:
            continue
        if m == "none":
            # no-attack reference: horizontal line at its mean over the grid
            mu = float(np.mean([p[1] for p in pts]))
            sd = float(np.mean([p[2] for p in pts]))
            pts = [(xmin, mu, sd), (xmax, mu, sd)]
        upper = " ".join(f"{f(X(e))},{f(Y(mu + sd))}" for e, mu, sd in pts)
        lower = " ".join(f"{f(X(e))},{f(Y(mu - sd))}" for e, mu, sd in reversed(pts))
        out.append(f'<polygon class="band" points="{upper} {lower}" fill="{color}" fill-opacity="0.18" stroke="none"/>')
        line = " ".join(f"{f(X(e))},{f(Y(mu))}" for e, mu, _ in pts)
        dash = ' stroke-dasharray="6,4"' if m == "none" else ""
        out.append(f'<polyline class="curve" points="{line}" fill="none" stroke="{color}" stroke-width="2"{dash}/>')
        ly = top + 16 + 20 * k
        out.append(f'<line x1="{left + pw + 15}" y1="{ly}" x2="{left + pw + 40}" y2="{ly}" stroke="{color}" '
                   f'stroke-width="2"{dash}/>')
        out.append(f'<text class="legend" x="{left + pw + 46}" y="{ly + 4}" font-family="sans-serif" '
                   f'font-size="12">{m}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_report(table, path):
    """Write ``results.csv`` and one SVG per (norm, victim choice) pane under ``path``."""
    if not table:
        raise ConfigurationError("cannot render an empty results table")
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    write_results_csv(table, path / "results.csv")
    written = [path / "results.csv"]
    panes = list(dict.fromkeys((r["norm"], r["victims"]) for r in table))
    for norm, victims in panes:
        rows = [r for r in table if r["norm"] == norm and r["victims"] == victims]
        svg = path / f"reward_{norm}_{victims}.svg"
        svg.write_text(_svg_pane(rows, f"{norm} budget, victims: {victims}"))
        written.append(svg)
    return written

