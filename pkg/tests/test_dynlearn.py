import numpy as np
import pytest

from cmba import dynlearn, netcore, policy
from cmba.errors import ConfigurationError, ShapeError
from cmba.swarmsim import EnvSpec, SwarmEnv, split_agents

SPEC = EnvSpec()


@pytest.fixture(scope="module")
def mixed():
    return dynlearn.collect_transitions(SPEC, "mixed", 3000, 7)


def test_collection_is_deterministic():
    a = dynlearn.collect_transitions(SPEC, "mixed", 1000, 3)
    b = dynlearn.collect_transitions(SPEC, "mixed", 1000, 3)
    for name in ("obs", "actions", "next_obs", "rewards", "dones", "episode", "source"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()


@pytest.mark.parametrize("kind", dynlearn.SOURCES)
def test_exact_sample_count(kind):
    assert len(dynlearn.collect_transitions(SPEC, kind, 777, 0)) == 777


def test_nonpositive_sample_count():
    with pytest.raises(ConfigurationError):
        dynlearn.collect_transitions(SPEC, "mixed", 0, 0)


def test_trained_actions_are_expert_actions():
    d = dynlearn.collect_transitions(SPEC, "trained_policy", 500, 1)
    pols = [policy.expert()] * SPEC.n_agents
    for s, a in zip(d.obs, d.actions):
        np.testing.assert_array_equal(a, policy.joint_act(pols, s))


def test_random_actions_are_uniform_in_box():
    d = dynlearn.collect_transitions(SPEC, "random_policy", 5000, 2)
    assert np.all(np.abs(d.actions) <= 1.0)
    assert abs(d.actions.mean()) < 0.02
    assert d.actions.var() == pytest.approx(1.0 / 3.0, rel=0.03)


def test_transitions_replay_through_the_environment(mixed):
    env = SwarmEnv(SPEC)
    for i in range(0, len(mixed), 37):
        obs = split_agents(mixed.obs[i], SPEC.n_agents)
        env.set_state(obs[:, 0:2], obs[:, 2:4], obs[:, 0:2] + obs[:, 4:6])
        nxt, r, _ = env.step(mixed.actions[i])
        # goals are rebuilt from offsets, so allow round-off on the offset columns
        np.testing.assert_allclose(nxt, mixed.next_obs[i], rtol=0, atol=1e-12)
        assert r == pytest.approx(mixed.rewards[i], abs=1e-12)


def test_no_transition_straddles_episodes(mixed):
    same = mixed.episode[1:] == mixed.episode[:-1]
    np.testing.assert_array_equal(mixed.next_obs[:-1][same], mixed.obs[1:][same])
    assert not np.any(mixed.dones[:-1][same])


def test_mixed_is_half_and_half(mixed):
    assert mixed.counts == {"trained_policy": 1500, "random_policy": 1500}
    assert sum(mixed.counts.values()) == len(mixed)
    assert len(set(mixed.episode[mixed.source == 0]) & set(mixed.episode[mixed.source == 1])) == 0


def test_mix_ratio_configurable():
    d = dynlearn.collect_transitions(SPEC, "mixed", 1000, 0, mix=0.8)
    assert d.counts == {"trained_policy": 800, "random_policy": 200}


def test_training_requires_nonterminal_rows(mixed):
    only_terminal = mixed.subset(np.arange(5))
    only_terminal.dones[:] = True
    with pytest.raises(ConfigurationError):
        dynlearn.train_dynamics(only_terminal)


def test_episode_split_is_disjoint(mixed):
    train, test = dynlearn.split_by_episode(mixed, 0.2, 0)
    assert len(train) + len(test) == len(mixed)
    assert not set(train.episode) & set(test.episode)
    assert 0.1 * len(mixed) <= len(test) <= 0.5 * len(mixed)


def test_zero_epochs_records_untrained_error(mixed):
    cfg = netcore.TrainConfig(epochs=0, lr_grid=(1e-3,))
    test = mixed.subset(np.arange(100)).nonterminal()
    model = dynlearn.train_dynamics(mixed, cfg, hidden=(32,), seed=5, test=test)
    init = netcore.init_dense((40, 32, 32), "tanh", "identity", seed=5)
    np.testing.assert_array_equal(model.net.get_flat(), init.get_flat())
    x = np.concatenate([test.obs, test.actions], axis=1)
    expected = netcore.mse(test.obs + netcore.forward(init, x), test.next_obs)
    assert model.test_mse == pytest.approx(expected, rel=1e-14)


def test_trained_model_beats_identity_and_init(model4):
    test = dynlearn.collect_transitions(SPEC, "mixed", 4000, 99).nonterminal()
    assert dynlearn.eval_mse(model4, test) <= 0.1 * dynlearn.identity_mse(test)
    init = dynlearn.DynamicsModel(
        netcore.init_dense((40, 128, 128, 32), "tanh", "identity", seed=0), 32, 8)
    assert dynlearn.eval_mse(model4, test) < dynlearn.eval_mse(init, test)


def test_degraded_model_is_worse(model4):
    data = dynlearn.collect_transitions(SPEC, "mixed", 4000, 0)
    weak = dynlearn.train_dynamics(data, netcore.TrainConfig(epochs=1, lr_grid=(1e-3,), batch_size=128),
                                   hidden=(64, 64))
    test = dynlearn.collect_transitions(SPEC, "mixed", 4000, 99).nonterminal()
    assert dynlearn.eval_mse(weak, test) > dynlearn.eval_mse(model4, test)


def test_eval_mse_closed_forms(mixed, model4):
    test = mixed.subset(np.arange(200))
    perfect = dynlearn.TransitionDataset(test.obs, test.actions, model4.predict(test.obs, test.actions),
                                         test.rewards, test.dones, test.episode, test.source)
    assert dynlearn.eval_mse(model4, perfect) == 0.0
    # linear residual net with weight -I on the observation: f(s, a) = 0
    w = np.vstack([-np.eye(32), np.zeros((8, 32))])
    zero_model = dynlearn.DynamicsModel(netcore.DenseNet((40, 32), [w], [np.zeros(32)]), 32, 8)
    expected = np.mean(np.sum(test.next_obs ** 2, axis=1))
    assert dynlearn.eval_mse(zero_model, test) == pytest.approx(expected, rel=1e-13)


def test_eval_mse_permutation_invariant(mixed, model4):
    perm = np.random.default_rng(0).permutation(len(mixed))
    assert dynlearn.eval_mse(model4, mixed) == pytest.approx(dynlearn.eval_mse(model4, mixed.subset(perm)),
                                                            rel=1e-12)


def test_eval_mse_shape_mismatch(model2, mixed):
    with pytest.raises(ShapeError):
        dynlearn.eval_mse(model2, mixed)


def test_model_vjp_matches_finite_differences(model4):
    from oracles import central_difference, relative_error
    rng = np.random.default_rng(4)
    s, a, up = rng.normal(size=32), rng.uniform(-1, 1, 8), rng.normal(size=32)
    gs, ga = model4.vjp(s, a, up)
    assert relative_error(gs, central_difference(lambda z: model4.predict(z, a) @ up, s)) <= 1e-4
    assert relative_error(ga, central_difference(lambda z: model4.predict(s, z) @ up, a)) <= 1e-4


def test_model_round_trip(tmp_path, model4):
    path = tmp_path / "dyn.bin"
    dynlearn.save_model(model4, path)
    back = dynlearn.load_model(path)
    assert back.test_mse == model4.test_mse and back.meta == model4.meta
    s = np.random.default_rng(0).normal(size=(50, 32))
    a = np.zeros((50, 8))
    assert back.predict(s, a).tobytes() == model4.predict(s, a).tobytes()


def test_policy_file_is_not_a_dynamics_model(tmp_path):
    path = tmp_path / "pol.bin"
    net = netcore.init_dense((8, 2))
    net.metadata = {"kind": "policy"}
    netcore.save_net(net, path)
    with pytest.raises(ConfigurationError):
        dynlearn.load_model(path)


def test_csv_round_trip(tmp_path, mixed):
    path = tmp_path / "d.csv"
    part = mixed.subset(np.arange(300))
    dynlearn.save_csv(part, path)
    back = dynlearn.load_csv(path)
    for name in ("obs", "actions", "next_obs", "rewards", "dones", "episode", "source"):
        np.testing.assert_array_equal(getattr(back, name), getattr(part, name))
