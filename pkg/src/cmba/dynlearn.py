"""Learned environment dynamics: data collection, regression and evaluation."""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field

import numpy as np

from . import netcore
from .errors import ConfigurationError, ShapeError
from .policy import expert, joint_act
from .swarmsim import SwarmEnv

SOURCES = ("trained_policy", "random_policy", "mixed")
_SOURCE_CODE = {"trained_policy": 0, "random_policy": 1}


@dataclass
class TransitionDataset:
    obs: np.ndarray
    actions: np.ndarray
    next_obs: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    episode: np.ndarray
    source: np.ndarray  # 0 = trained policy, 1 = random policy
    kind: str = "mixed"

    def __len__(self):
        return len(self.obs)

    @property
    def counts(self):
        return {
            "trained_policy": int(np.sum(self.source == 0)),
            "random_policy": int(np.sum(self.source == 1)),
        }

    def subset(self, idx):
        idx = np.asarray(idx)
        return TransitionDataset(
            self.obs[idx], self.actions[idx], self.next_obs[idx], self.rewards[idx],
            self.dones[idx], self.episode[idx], self.source[idx], self.kind,
        )

    def nonterminal(self):
        return self.subset(np.nonzero(~self.dones)[0])


def concat(parts, kind="mixed"):
    """Union of datasets; episode ids are renumbered so they stay distinct."""
    offset = 0
    episodes = []
    for p in parts:
        episodes.append(p.episode + offset)
        offset += int(p.episode.max()) + 1 if len(p) else 0
    return TransitionDataset(
        np.concatenate([p.obs for p in parts]),
        np.concatenate([p.actions for p in parts]),
        np.concatenate([p.next_obs for p in parts]),
        np.concatenate([p.rewards for p in parts]),
        np.concatenate([p.dones for p in parts]),
        np.concatenate(episodes),
        np.concatenate([p.source for p in parts]),
        kind,
    )


def collect_transitions(spec, policy_kind, n_samples, seed, policies=None, mix=0.5):
    """Roll out ``n_samples`` transitions under the trained or random policy.

    ``policies`` overrides the trained policy (default: scripted expert for
    every agent). ``mixed`` collects ``round(mix * n)`` trained transitions
    and the rest random, with independent child seeds.
    """
    if n_samples <= 0:
        raise ConfigurationError("n_samples must be positive")
    if policy_kind not in SOURCES:
        raise ConfigurationError(f"unknown policy kind {policy_kind!r}")
    if policy_kind == "mixed":
        n_train = int(round(mix * n_samples))
        s_train, s_rand = (int(v) for v in np.random.SeedSequence(seed).generate_state(2))
        parts = []
        if n_train:
            parts.append(collect_transitions(spec, "trained_policy", n_train, s_train, policies))
        if n_samples - n_train:
            parts.append(collect_transitions(spec, "random_policy", n_samples - n_train, s_rand))
        return concat(parts, "mixed")

    if policies is None:
        policies = [expert()] * spec.n_agents
    ss = np.random.SeedSequence(seed)
    action_rng = np.random.default_rng(ss.spawn(1)[0])
    env = SwarmEnv(spec)
    rows = {k: [] for k in ("obs", "actions", "next_obs", "rewards", "dones", "episode")}
    episode = 0
    obs = env.reset(int(ss.generate_state(1)[0]) + episode)
    while len(rows["obs"]) < n_samples:
        if policy_kind == "trained_policy":
            a = joint_act(policies, obs)
        else:
            a = action_rng.uniform(-1.0, 1.0, size=spec.act_dim)
        nxt, r, done = env.step(a)
        rows["obs"].append(obs)
        rows["actions"].append(a)
        rows["next_obs"].append(nxt)
        rows["rewards"].append(r)
        rows["dones"].append(done)
        rows["episode"].append(episode)
        obs = nxt
        if done:
            episode += 1
            obs = env.reset(int(ss.generate_state(1)[0]) + episode)
    code = _SOURCE_CODE[policy_kind]
    return TransitionDataset(
        np.array(rows["obs"]), np.array(rows["actions"]), np.array(rows["next_obs"]),
        np.array(rows["rewards"]), np.array(rows["dones"], dtype=bool),
        np.array(rows["episode"]), np.full(n_samples, code), policy_kind,
    )


@dataclass
class DynamicsModel:
    """``f(s, a) = s + net([s, a])``: the net regresses the one-step change."""

    net: netcore.DenseNet
    obs_dim: int
    act_dim: int
    test_mse: float = float("nan")
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.net.n_inputs != self.obs_dim + self.act_dim or self.net.n_outputs != self.obs_dim:
            raise ShapeError(
                f"dynamics net {self.net.layer_sizes} incompatible with obs {self.obs_dim}, act {self.act_dim}"
            )

    def predict(self, obs, actions):
        obs = np.asarray(obs, dtype=np.float64)
        x = np.concatenate([obs, np.asarray(actions, dtype=np.float64)], axis=-1)
        return obs + netcore.forward(self.net, x)

    def vjp(self, obs, actions, upstream):
        """``(d/ds, d/da)`` of ``<upstream, predict(s, a)>``."""
        obs = np.asarray(obs, dtype=np.float64)
        x = np.concatenate([obs, np.asarray(actions, dtype=np.float64)], axis=-1)
        g = netcore.input_gradient(self.net, x, upstream)
        return upstream + g[..., :self.obs_dim], g[..., self.obs_dim:]

    def to_net(self):
        net = self.net.copy()
        net.metadata = {
            "kind": "dynamics", "obs_dim": self.obs_dim, "act_dim": self.act_dim,
            "test_mse": self.test_mse, **self.meta,
        }
        return net

    @classmethod
    def from_net(cls, net):
        md = dict(net.metadata)
        if md.get("kind") != "dynamics":
            raise ConfigurationError("model file does not hold a dynamics model")
        obs_dim, act_dim, test_mse = md.pop("obs_dim"), md.pop("act_dim"), md.pop("test_mse")
        md.pop("kind")
        return cls(net, obs_dim, act_dim, test_mse, md)


def save_model(model, path):
    return netcore.save_net(model.to_net(), path)


def load_model(path):
    return DynamicsModel.from_net(netcore.load_net(path))


def eval_mse(model, test):
    """Mean over ``test`` of ``||f(s, a) - s'||^2``."""
    if test.obs.shape[1] != model.obs_dim or test.actions.shape[1] != model.act_dim:
        raise ShapeError("test set dimensions do not match the dynamics model")
    return netcore.mse(model.predict(test.obs, test.actions), test.next_obs)


def identity_mse(test):
    """Error of the trivial predictor ``s' = s``."""
    return netcore.mse(test.obs, test.next_obs)


def split_by_episode(data, fraction, seed):
    """Seeded ``(train, test)`` split that keeps each episode on one side.

    Falls back to a row split when the data holds a single episode.
    """
    rng = np.random.default_rng(seed)
    want = max(1, int(round(fraction * len(data))))
    if len(data) < 2:
        return data, data
    episodes = np.unique(data.episode)
    if len(episodes) < 2:
        order = rng.permutation(len(data))
        return data.subset(order[want:]), data.subset(order[:want])
    held, count = [], 0
    sizes = {e: n for e, n in zip(*np.unique(data.episode, return_counts=True))}
    for e in rng.permutation(episodes):
        if count >= want or len(held) == len(episodes) - 1:
            break
        held.append(e)
        count += sizes[e]
    is_test = np.isin(data.episode, held)
    return data.subset(np.nonzero(~is_test)[0]), data.subset(np.nonzero(is_test)[0])


DEFAULT_DYNAMICS_TRAIN = netcore.TrainConfig(
    learning_rate=1e-3, weight_decay=1e-4, batch_size=128, epochs=10, lr_grid=(1e-3,),
)


def train_dynamics(data, cfg=DEFAULT_DYNAMICS_TRAIN, hidden=(128, 128, 128), seed=0,
                   test=None, test_fraction=0.1):
    """Regress next observations on (observation, action) pairs.

    Terminal transitions are dropped. Without an explicit ``test`` set,
    whole episodes covering about ``test_fraction`` of the rows are held out
    (consecutive rows of one episode are nearly duplicates, so a row-level
    split would flatter the model) and the error on them is ``test_mse``.
    """
    data = data.nonterminal()
    if len(data) == 0:
        raise ConfigurationError("no non-terminal transitions to train on")
    if test is None:
        data, test = split_by_episode(data, test_fraction, seed)
    obs_dim, act_dim = data.obs.shape[1], data.actions.shape[1]
    net = netcore.init_dense((obs_dim + act_dim, *hidden, obs_dim), "tanh", "identity", seed=seed)
    x = np.concatenate([data.obs, data.actions], axis=1)
    fit = netcore.fit_regression(net, x, data.next_obs - data.obs, cfg)
    model = DynamicsModel(
        fit.net, obs_dim, act_dim,
        meta={"n_samples": len(data), "epochs": cfg.epochs, "learning_rate": fit.learning_rate},
    )
    model.test_mse = eval_mse(model, test)
    return model


# -- CSV persistence --------------------------------------------------------

def save_csv(data, path):
    """One transition per row: s_t | a_t | s_{t+1} | r | done (plus bookkeeping)."""
    d_obs, d_act = data.obs.shape[1], data.actions.shape[1]
    header = ([f"s{j}" for j in range(d_obs)] + [f"a{j}" for j in range(d_act)]
              + [f"s_next{j}" for j in range(d_obs)] + ["r", "done", "episode", "source"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(len(data)):
            w.writerow(
                [repr(float(v)) for v in data.obs[i]]
                + [repr(float(v)) for v in data.actions[i]]
                + [repr(float(v)) for v in data.next_obs[i]]
                + [repr(float(data.rewards[i])), int(data.dones[i]), int(data.episode[i]),
                   int(data.source[i])]
            )


def load_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = np.array([[float(v) for v in row] for row in reader])
    d_obs = sum(1 for h in header if re.fullmatch(r"s\d+", h))
    d_act = sum(1 for h in header if re.fullmatch(r"a\d+", h))
    if rows.size == 0:
        rows = rows.reshape(0, len(header))
    a0, n0 = d_obs, d_obs + d_act
    src = rows[:, -1].astype(int)
    kind = "mixed" if len(set(src.tolist())) > 1 else (
        "trained_policy" if len(src) and src[0] == 0 else "random_policy")
    return TransitionDataset(
        rows[:, :a0], rows[:, a0:n0], rows[:, n0:n0 + d_obs], rows[:, -4],
        rows[:, -3].astype(bool), rows[:, -2].astype(int), src, kind,
    )
