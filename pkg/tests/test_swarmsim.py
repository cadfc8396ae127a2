import numpy as np
import pytest

from cmba import policy
from cmba.errors import ConfigurationError, ShapeError
from cmba.swarmsim import (EnvSpec, SwarmEnv, agent_slice, coordinate_names, observation_bounds,
                           split_agents, velocity_indices)


def one_agent_env(**kw):
    return SwarmEnv(EnvSpec(n_agents=1, **kw))


def test_reset_is_deterministic():
    a, b = SwarmEnv().reset(12), SwarmEnv().reset(12)
    assert a.tobytes() == b.tobytes()
    assert SwarmEnv().reset(13).tobytes() != a.tobytes()


def test_reset_starts_at_rest_in_inner_half():
    spec = EnvSpec()
    obs = split_agents(SwarmEnv(spec).reset(5), spec.n_agents)
    np.testing.assert_array_equal(obs[:, 2:4], 0.0)
    assert np.all(np.abs(obs[:, 0:2]) <= 0.5 * spec.half_width)


def test_reset_within_bounds():
    spec = EnvSpec()
    lo, hi = observation_bounds(spec)
    for seed in range(20):
        s = SwarmEnv(spec).reset(seed)
        assert np.all(lo <= s) and np.all(s <= hi)


def test_update_rule_example():
    env = one_agent_env()
    env.set_state([[0.0, 0.0]], [[1.0, 0.0]], [[5.0, 0.0]])
    obs, _, _ = env.step([0.0, 0.0])
    np.testing.assert_allclose(obs[0:2], [0.09, 0.0], rtol=0, atol=1e-15)
    np.testing.assert_allclose(obs[2:4], [0.9, 0.0], rtol=0, atol=1e-15)


def test_reward_is_velocity_along_goal_direction():
    env = one_agent_env()
    env.set_state([[0.0, 0.0]], [[1.0 / 0.9, 0.0]], [[5.0, 0.0]])
    _, r, _ = env.step([0.0, 0.0])
    assert r == pytest.approx(1.0, abs=1e-12)


def test_reward_action_penalty_and_averaging():
    env = SwarmEnv(EnvSpec(n_agents=2))
    env.set_state([[0.0, 0.0], [1.0, 1.0]], [[0.0, 0.0], [0.0, 0.0]], [[0.0, 3.0], [1.0, 1.0]])
    a = np.array([0.5, 0.0, 0.0, -1.0])
    _, r, _ = env.step(a)
    # agent 0: v' = (0.05, 0) orthogonal to the goal direction; agent 1 sits on its goal
    assert r == pytest.approx(0.0 - 0.01 * (0.25 + 1.0), abs=1e-15)


def test_actions_are_clipped():
    env = one_agent_env()
    env.set_state([[0.0, 0.0]], [[0.0, 0.0]], [[5.0, 0.0]])
    obs, _, _ = env.step([7.0, -3.0])
    np.testing.assert_allclose(obs[2:4], [0.1, -0.1])


def test_boundary_terminates():
    spec = EnvSpec(n_agents=1)
    env = SwarmEnv(spec)
    env.set_state([[spec.half_width - 0.05, 0.0]], [[1.0, 0.0]], [[0.0, 0.0]])
    obs, _, done = env.step([1.0, 0.0])
    assert done and obs[0] == spec.half_width


def test_horizon_terminates_and_further_steps_fail():
    env = SwarmEnv(EnvSpec(horizon=3))
    env.reset(0)
    dones = [env.step(np.zeros(8))[2] for _ in range(3)]
    assert dones == [False, False, True]
    with pytest.raises(RuntimeError):
        env.step(np.zeros(8))


def test_wrong_action_size():
    env = SwarmEnv()
    env.reset(0)
    with pytest.raises(ShapeError):
        env.step(np.zeros(3))


def test_observation_bounds_layout():
    spec = EnvSpec()
    lo, hi = observation_bounds(spec)
    assert lo.shape == (32,)
    np.testing.assert_array_equal(hi[agent_slice(2)][:2], [spec.half_width] * 2)
    np.testing.assert_array_equal(lo[agent_slice(1)][2:4], [-spec.v_max] * 2)
    np.testing.assert_array_equal(-lo, hi)


def test_random_rollouts_stay_within_bounds():
    spec = EnvSpec()
    lo, hi = observation_bounds(spec)
    rng = np.random.default_rng(0)
    env = SwarmEnv(spec)
    s = env.reset(0)
    seen = 0
    while seen < 1000:
        s, _, done = env.step(rng.uniform(-1, 1, size=spec.act_dim) * 3)
        assert np.all(lo <= s) and np.all(s <= hi)
        seen += 1
        if done:
            s = env.reset(seen)


def test_same_actions_same_trajectory():
    acts = np.random.default_rng(1).uniform(-1, 1, size=(50, 8))
    runs = []
    for _ in range(2):
        env = SwarmEnv()
        traj = [env.reset(4)]
        for a in acts:
            traj.append(env.step(a)[0])
        runs.append(np.array(traj).tobytes())
    assert runs[0] == runs[1]


def test_mean_offset_feature():
    env = SwarmEnv(EnvSpec(n_agents=3))
    s = env.set_state([[0, 0], [3, 0], [0, 6]], np.zeros((3, 2)), np.zeros((3, 2)))
    np.testing.assert_allclose(s[agent_slice(0)][6:8], [1.5, 3.0])
    np.testing.assert_allclose(s[agent_slice(1)][6:8], [-3.0, 3.0])


def test_coordinate_helpers():
    names = coordinate_names(2)
    assert len(names) == 16 and names[2] == "a0_vx" and names[11] == "a1_vy"
    assert list(velocity_indices(2)) == [2, 3, 10, 11]


@pytest.mark.parametrize("kw", [dict(n_agents=0), dict(damping=1.0), dict(gamma=0.0), dict(dt=-1.0)])
def test_invalid_spec(kw):
    with pytest.raises(ConfigurationError):
        EnvSpec(**kw)


def _episode_return(spec, act, seed):
    env = SwarmEnv(spec)
    s = env.reset(seed)
    total, done = 0.0, False
    while not done:
        s, r, done = env.step(act(s))
        total += r
    return total


def test_expert_beats_random_policy_by_ten_times():
    spec = EnvSpec()
    pols = [policy.expert()] * spec.n_agents
    expert_mean = np.mean([_episode_return(spec, lambda s: policy.joint_act(pols, s), k) for k in range(16)])
    rng = np.random.default_rng(0)
    random_mean = np.mean([_episode_return(spec, lambda s: rng.uniform(-1, 1, spec.act_dim), k)
                           for k in range(16)])
    assert expert_mean > 0
    assert expert_mean >= 10 * random_mean


def test_total_reward_is_sum_of_step_rewards():
    spec = EnvSpec(horizon=30)
    env = SwarmEnv(spec)
    s = env.reset(2)
    rs, done = [], False
    pols = [policy.expert()] * spec.n_agents
    while not done:
        s, r, done = env.step(policy.joint_act(pols, s))
        rs.append(r)
    assert len(rs) == 30
    assert float(np.sum(rs)) == pytest.approx(_episode_return(spec, lambda s: policy.joint_act(pols, s), 2),
                                              abs=0)
