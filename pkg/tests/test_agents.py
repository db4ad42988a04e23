from types import SimpleNamespace

import numpy as np
import pytest
from sklearn.base import clone

from edgetwin.agents import (
    DQNScheduler,
    GreedyScheduler,
    ObservationScaler,
    RandomScheduler,
    ReplayBuffer,
    dqn_train_step,
    train,
)
from edgetwin.agents.dqn import read_checkpoint
from edgetwin.agents.mlp import (
    clip_by_global_norm,
    copy_params,
    global_norm,
    init_mlp,
    mlp_backward,
    mlp_forward,
    td_loss,
)
from edgetwin.env import MdpState, SchedulingEnv
from edgetwin.traffic import ScenarioSpec

CHI2_DF3_P001 = 16.266  # upper 0.1% point of chi-square with 3 dof


def observation(used=None, caps=None, req=(1e6, 1e6, 1e5), e=4):
    caps = np.full((e, 3), 1e9) if caps is None else np.asarray(caps, dtype=float)
    used = np.zeros((e, 3)) if used is None else np.asarray(used, dtype=float)
    return MdpState(np.full(e, 0.01), caps, used, np.asarray(req, dtype=float)).vector()


# -- baselines ---------------------------------------------------------------
def test_random_single_server():
    policy = RandomScheduler(1, random_state=0)
    assert set(policy.predict(np.zeros((50, 10)))) == {0}


def test_random_uniform():
    draws = RandomScheduler(4, random_state=1).predict(np.zeros((10_000, 31)))
    counts = np.bincount(draws, minlength=4)
    assert np.all(np.abs(counts / 10_000 - 0.25) <= 0.02)
    chi2 = float(((counts - 2500) ** 2 / 2500).sum())
    assert chi2 < CHI2_DF3_P001


def test_random_reproducible():
    X = np.zeros((20, 31))
    a = RandomScheduler(4, random_state=5).predict(X)
    b = RandomScheduler(4, random_state=5).predict(X)
    assert a.tolist() == b.tolist()
    p = RandomScheduler(4, random_state=5)
    p.begin_episode(3)
    first = p.predict(X)
    p.begin_episode(3)
    assert p.predict(X).tolist() == first.tolist()


def test_greedy_cases():
    g = GreedyScheduler(4, service_time=0.05)
    assert g.act(observation()) == 0
    used = np.zeros((4, 3))
    used[0, 0] = 1e9
    assert g.act(observation(used)) == 1
    assert g.act(observation(np.full((4, 3), 1e9))) == 3


def test_greedy_all_saturated_records_drop():
    spec = ScenarioSpec(vehicle_count=4, penetration_ratio=1.0, episode_slots=2, server_count=2,
                        routes=[[[10, 10]]], speed_range=(0, 0),
                        fixed_servers=[{"capacity": [1e3, 1e3, 1e3]}, {"capacity": [1e3, 1e3, 1e3]}],
                        fixed_aps=[{"position": [10, 10]}, {"position": [20, 10]}])
    env = SchedulingEnv(spec)
    state = env.reset(0)
    action = GreedyScheduler(2).act(state)
    assert action == 1
    assert not env.step(action).info["admitted"]


def test_scheduler_width_check():
    with pytest.raises(ValueError):
        GreedyScheduler(4).predict(np.zeros((2, 30)))


# -- MLP ---------------------------------------------------------------------
def test_zero_weights_zero_output(rng):
    params = [(np.zeros_like(W), np.zeros_like(b)) for W, b in init_mlp([5, 8, 3], rng)]
    assert np.all(mlp_forward(params, rng.normal(size=(4, 5))) == 0)


def test_identity_layer():
    params = [(np.eye(5)[:, :3], np.zeros(3))]
    x = np.arange(5.0)
    assert mlp_forward(params, x).tolist() == [0.0, 1.0, 2.0]


def test_forward_matches_loops(rng):
    params = init_mlp([6, 5, 4, 2], rng)
    params = [(W, rng.normal(size=b.shape)) for W, b in params]
    X = rng.normal(size=(3, 6))
    got = mlp_forward(params, X)
    for n in range(3):
        h = list(X[n])
        for li, (W, b) in enumerate(params):
            z = [sum(h[i] * W[i, j] for i in range(len(h))) + b[j] for j in range(W.shape[1])]
            h = z if li == len(params) - 1 else [max(v, 0.0) for v in z]
        assert got[n] == pytest.approx(h, rel=1e-12, abs=1e-14)


def test_forward_width_mismatch(rng):
    with pytest.raises(ValueError):
        mlp_forward(init_mlp([4, 2], rng), np.zeros(5))


def test_zero_td_error_zero_grad(rng):
    params = init_mlp([4, 6, 3], rng)
    X = rng.normal(size=(5, 4))
    a = rng.integers(3, size=5)
    y = mlp_forward(params, X)[np.arange(5), a]
    loss, grads = mlp_backward(params, X, a, y)
    assert loss == 0.0
    assert global_norm(grads) == 0.0


def test_single_sample_finite_difference(rng):
    params = init_mlp([4, 6, 3], rng)
    x, a, y = rng.normal(size=(1, 4)), np.array([2]), np.array([0.7])
    _, grads = mlp_backward(params, x, a, y)
    h = 1e-6
    for (W, _), (gW, _) in zip(params, grads):
        for idx in [(0, 0), (W.shape[0] - 1, W.shape[1] - 1), (1, 1)]:
            old = W[idx]
            W[idx] = old + h
            up = td_loss(params, x, a, y)
            W[idx] = old - h
            down = td_loss(params, x, a, y)
            W[idx] = old
            fd = (up - down) / (2 * h)
            assert abs(fd - gW[idx]) <= 1e-4 * max(abs(fd), abs(gW[idx]), 1e-6)


def test_clip_by_global_norm(rng):
    grads = [(rng.normal(size=(3, 2)), rng.normal(size=2))]
    clipped = clip_by_global_norm(grads, 0.5)
    assert global_norm(clipped) == pytest.approx(0.5, rel=1e-12)
    assert clip_by_global_norm(grads, 1e9) is grads


# -- DQN update ---------------------------------------------------------------
def cfg(**kw):
    base = dict(batch_size=2, gamma=0.0, double_dqn=False, grad_clip=1e9, learning_rate=0.1, target_sync_interval=1000)
    base.update(kw)
    return SimpleNamespace(**base)


def filled_buffer(rng, n=2, width=3, terminal=False):
    buf = ReplayBuffer(8, width)
    for i in range(n):
        buf.add(rng.normal(size=width), i % 2, float(i) - 0.5, rng.normal(size=width), terminal)
    return buf


def test_insufficient_buffer_is_noop(rng):
    params = init_mlp([3, 2], rng)
    before = copy_params(params)
    buf = filled_buffer(rng, n=1)
    assert dqn_train_step(buf, params, copy_params(params), cfg(), rng) is None
    assert all(np.array_equal(W, W0) for (W, _), (W0, _) in zip(params, before))


def test_gamma_zero_targets_are_rewards(rng):
    online = init_mlp([3, 4, 2], rng)
    target = init_mlp([3, 4, 2], np.random.default_rng(99))
    buf = filled_buffer(rng)
    s, a, r = buf.states[:2], buf.actions[:2], buf.rewards[:2]
    want = td_loss(online, s, a, r)
    assert dqn_train_step(buf, online, target, cfg(), np.random.default_rng(0)) == pytest.approx(want, rel=1e-14)


def test_terminal_batch_ignores_target(rng):
    online = init_mlp([3, 4, 2], rng)
    buf = filled_buffer(rng, terminal=True)
    t1 = init_mlp([3, 4, 2], np.random.default_rng(1))
    t2 = init_mlp([3, 4, 2], np.random.default_rng(2))
    l1 = dqn_train_step(buf, copy_params(online), t1, cfg(gamma=0.9), np.random.default_rng(0))
    l2 = dqn_train_step(buf, copy_params(online), t2, cfg(gamma=0.9), np.random.default_rng(0))
    assert l1 == l2


def test_hand_computed_two_transition_batch():
    # single linear layer, 2 inputs, 2 actions
    online = [(np.array([[1.0, 0.0], [0.0, 2.0]]), np.array([0.0, 0.5]))]
    target = [(np.array([[0.5, 1.0], [1.0, 0.0]]), np.array([0.0, 0.0]))]
    buf = ReplayBuffer(2, 2)
    buf.add([1.0, 1.0], 0, 1.0, [2.0, 0.0], False)  # Q=1, next max=max(1,2)=2, y=1+0.5*2=2, err=-1
    buf.add([0.0, 1.0], 1, 0.0, [0.0, 0.0], True)  # Q=2.5, y=0, err=2.5
    loss = dqn_train_step(buf, online, target, cfg(gamma=0.5, learning_rate=0.1), np.random.default_rng(0))
    assert loss == pytest.approx((1.0 + 6.25) / 2, rel=1e-15)
    # gradient for W: sum_n 2*err_n/2 * x_n in the taken action's column
    np.testing.assert_allclose(online[0][0], [[1.0 + 0.1 * 1.0, 0.0], [0.1 * 1.0, 2.0 - 0.1 * 2.5]], rtol=1e-15)
    np.testing.assert_allclose(online[0][1], [0.0 + 0.1 * 1.0, 0.5 - 0.1 * 2.5], rtol=1e-15)


def test_target_staleness(rng):
    online = init_mlp([3, 4, 2], rng)
    target = copy_params(online)
    frozen = copy_params(target)
    buf = filled_buffer(rng, n=6)
    c = cfg(target_sync_interval=3)
    for step in range(2):
        dqn_train_step(buf, online, target, c, rng, step)
        assert all(np.array_equal(W, W0) for (W, _), (W0, _) in zip(target, frozen))
    dqn_train_step(buf, online, target, c, rng, 2)
    assert all(np.array_equal(W, W0) for (W, _), (W0, _) in zip(target, online))


def test_replay_buffer_bounds_and_no_replacement(rng):
    buf = ReplayBuffer(5, 2)
    for i in range(9):
        buf.add([i, i], 0, float(i), [i, i], False)
    assert len(buf) == 5
    s, *_ = buf.sample(5, rng)
    assert sorted(s[:, 0].tolist()) == [4.0, 5.0, 6.0, 7.0, 8.0]


# -- DQN estimator ---------------------------------------------------------------
def tiny_env():
    spec = ScenarioSpec(vehicle_count=30, episode_slots=3, penetration_ratio=1.0, server_count=2)
    return SchedulingEnv(spec)


def small_dqn(**kw):
    base = dict(n_servers=2, hidden_sizes=(8,), batch_size=8, replay_capacity=200, n_episodes=3,
                epsilon_decay_steps=50, target_sync_interval=20, random_state=0)
    base.update(kw)
    return DQNScheduler(**base)


def test_same_seeds_same_curve():
    a = small_dqn().fit(tiny_env(), seeds=[0, 1, 2])
    b = small_dqn().fit(tiny_env(), seeds=[0, 1, 2])
    for key in ("mean_reward", "loss", "epsilon"):
        assert np.array_equal([r[key] for r in a.curve_], [r[key] for r in b.curve_], equal_nan=True)
    assert all(np.array_equal(W, W2) for (W, _), (W2, _) in zip(a.params_, b.params_))


def test_zero_episodes_no_checkpoint(tmp_path):
    model, curve = train(tiny_env(), small_dqn().get_params(), episodes=0, checkpoint=tmp_path / "m.dqn")
    assert curve == []
    assert not (tmp_path / "m.dqn").exists()


def test_checkpoint_round_trip(tmp_path):
    model = small_dqn().fit(tiny_env(), seeds=[0, 1, 2])
    model.save(tmp_path / "m.dqn")
    back = DQNScheduler.load(tmp_path / "m.dqn")
    X = np.abs(np.random.default_rng(0).normal(size=(10, 17))) * 1e8
    assert np.array_equal(model.q_values(X), back.q_values(X))
    back.save(tmp_path / "n.dqn")
    assert (tmp_path / "m.dqn").read_bytes() == (tmp_path / "n.dqn").read_bytes()
    params, meta = read_checkpoint(tmp_path / "m.dqn")
    assert [W.shape for W, _ in params] == [(17, 8), (8, 2)]


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "bad").write_bytes(b"nope")
    with pytest.raises(ValueError):
        read_checkpoint(tmp_path / "bad")


def test_greedy_action_is_argmax_and_deterministic(tmp_path):
    model = small_dqn().fit(tiny_env(), seeds=[0])
    x = observation(e=2)
    q = model.q_values(x)
    assert model.act(x) == int(np.argmax(q)) == model.act(x)
    # ties resolve to the lowest index
    model.params_[-1][0][:] = 0.0
    model.params_[-1][1][:] = 0.0
    assert model.act(x) == 0


def test_dqn_validation():
    with pytest.raises(ValueError):
        small_dqn(gamma=1.0).fit(tiny_env())
    with pytest.raises(ValueError):
        small_dqn(n_servers=3).fit(tiny_env())


def test_epsilon_schedule():
    m = DQNScheduler(epsilon_start=1.0, epsilon_end=0.05, epsilon_decay_steps=100)
    assert m.epsilon(0) == 1.0
    assert m.epsilon(50) == pytest.approx(0.525)
    assert m.epsilon(10_000) == 0.05


def test_sklearn_params_and_clone():
    m = small_dqn(learning_rate=0.01)
    assert clone(m).get_params() == m.get_params()
    assert GreedyScheduler(3).get_params() == {"n_servers": 3, "service_time": 0.05}


def test_observation_scaler():
    X = np.stack([observation(used=np.full((4, 3), 5e8)), observation()])
    scaler = ObservationScaler(4).fit(X)
    Z = scaler.transform(X)
    assert Z.shape == (2, 31)
    assert np.all(Z[0, 16:28] == 0.5)
    assert np.all(Z[:, 4:16] == 1.0)
    fixed = ObservationScaler(4, delay_cap=0.25, capacity_max=[2e9] * 3, ops_max=[1e6] * 3).fit()
    assert fixed.transform(X[0])[0] == pytest.approx(0.04)
    with pytest.raises(ValueError):
        ObservationScaler(4).fit()
