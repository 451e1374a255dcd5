import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import actor_gradient_error, critic_gradient_error, random_batch, small_agent

from sparsepde.dictionary import DictionarySpec, default_names
from sparsepde.env import make_env
from sparsepde.errors import ConfigError
from sparsepde.td3 import (
    DEFAULT_LAMBDA,
    Batch,
    PolyActor,
    ReplayBuffer,
    Schedule,
    Td3Agent,
    Td3Hyper,
    actor_forward,
    soft_update,
    td_targets,
    train,
)


def constant_critic(net, value):
    for p in net.params:
        p[...] = 0.0
    net.params[-1][...] = value


# -- hyperparameters ---------------------------------------------------------


def test_defaults():
    h = Td3Hyper()
    assert (h.batch_size, h.gamma, h.rho, h.actor_lr, h.critic_lr, h.hidden) == (256, 0.99, 0.005, 3e-4, 3e-4, 256)
    assert (h.exploration_noise, h.target_noise, h.target_noise_clip, h.policy_delay) == (0.1, 0.2, 0.5, 2)
    assert h.warmup_steps == 1000 and h.buffer_size == 1_000_000
    assert DEFAULT_LAMBDA["poly_l0"] == 5e-4 and DEFAULT_LAMBDA["poly_l1"] == 5e-3


@pytest.mark.parametrize("bad", [{"gamma": 1.0}, {"rho": 0.0}, {"target_noise_clip": 0.0}, {"policy_delay": 0}])
def test_hyper_validation(bad):
    with pytest.raises(ConfigError):
        Td3Hyper(**bad)
    with pytest.raises(ConfigError):
        Td3Hyper.from_dict({"nope": 1})


# -- actors ------------------------------------------------------------------


def ks_spec():
    return DictionarySpec(9, 3, default_names(8, ("μ",)))


def test_zero_coefficients_give_zero_action():
    actor = PolyActor(ks_spec(), 8, np.random.default_rng(0), "l0", Xi=np.zeros((220, 8)))
    s = np.random.default_rng(1).normal(size=(5, 9))
    assert np.all(actor_forward(actor, s) == 0)


def test_closed_gates_give_zero_action():
    rng = np.random.default_rng(0)
    actor = PolyActor(ks_spec(), 8, rng, "l0", log_alpha=np.full((220, 8), -20.0))
    s = rng.normal(size=(5, 9))
    assert np.all(actor_forward(actor, s) == 0)
    assert np.all(actor_forward(actor, s, "train_sample", rng) == 0)


def test_leading_term_of_sparse_law():
    spec = ks_spec()
    Xi = np.zeros((220, 8))
    Xi[spec.labels().index("m_4"), 3] = -7.524
    actor = PolyActor(spec, 8, None, "l0", Xi=Xi, log_alpha=np.full((220, 8), 20.0))
    s = np.random.default_rng(2).normal(size=9)
    a = actor_forward(actor, s)
    assert a[3] == pytest.approx(np.tanh(-7.524 * s[3]), rel=1e-15)
    assert np.all(np.delete(a, 3) == 0)


@pytest.mark.parametrize("variant", ["dnn", "dnn_no_param", "poly_l0", "poly_l1"])
def test_actions_in_box(variant):
    agent = small_agent(variant, state_dim=4, n_sens=3, action_dim=3)
    s = 50 * np.random.default_rng(3).normal(size=(20, 4))
    a = actor_forward(agent.actor, s)
    assert np.all(np.abs(a) <= 1)
    for _ in range(5):
        assert np.all(np.abs(agent.act(s[0], explore=True)) <= 1)


def test_no_param_actor_ignores_parameters():
    agent = small_agent("dnn_no_param", state_dim=4, n_sens=3)
    s = np.random.default_rng(4).normal(size=4)
    s2 = s.copy()
    s2[3] += 10
    np.testing.assert_array_equal(actor_forward(agent.actor, s), actor_forward(agent.actor, s2))
    # critics still see the parameter
    assert agent.q1.sizes[0] == 4 + 2


def test_dimension_mismatch():
    agent = small_agent("poly_l0")
    with pytest.raises(ConfigError):
        actor_forward(agent.actor, np.zeros(5))
    with pytest.raises(ConfigError):
        Td3Agent(3, 2, "cnn")


# -- critic targets ----------------------------------------------------------


def test_target_min_rule():
    agent = small_agent("dnn")
    constant_critic(agent.q1_target, 2.0)
    constant_critic(agent.q2_target, 3.0)
    b = random_batch(np.random.default_rng(0), 3, 2)
    b.r[:] = 1.0
    q = agent.critic_target(b, noise=np.zeros_like(b.a))
    np.testing.assert_allclose(q, 1 + 0.99 * 2, rtol=1e-15)


def test_zero_discount_and_identical_twins():
    r = np.array([0.3, -1.0])
    np.testing.assert_array_equal(td_targets(r, np.array([5.0, 6.0]), np.array([1.0, 9.0]), 0.0), r)
    agent = small_agent("poly_l1")
    for t, p in zip(agent.q2_target.params, agent.q1_target.params):
        t[...] = p
    b = random_batch(np.random.default_rng(1), 3, 2)
    noise = np.zeros_like(b.a)
    a2 = np.clip(actor_forward(agent.actor_target, b.s2), -1, 1)
    single = b.r + 0.99 * agent.q1_target(np.concatenate([b.s2, a2], axis=1))[:, 0]
    np.testing.assert_allclose(agent.critic_target(b, noise), single, rtol=1e-14)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_twin_min_property(seed):
    rng = np.random.default_rng(seed)
    agent = small_agent("dnn", seed=seed % 1000)
    b = random_batch(rng, 3, 2, n=16)
    noise = rng.normal(0, 0.2, size=b.a.shape)
    q = agent.critic_target(b, noise)
    a2 = np.clip(actor_forward(agent.actor_target, b.s2) + np.clip(noise, -0.5, 0.5), -1, 1)
    x2 = np.concatenate([b.s2, a2], axis=1)
    assert np.all(q <= b.r + 0.99 * agent.q1_target(x2)[:, 0] + 1e-12)
    assert np.all(q <= b.r + 0.99 * agent.q2_target(x2)[:, 0] + 1e-12)


def test_target_noise_is_clipped():
    agent = small_agent("dnn")
    b = random_batch(np.random.default_rng(2), 3, 2)
    big = np.full_like(b.a, 100.0)
    clipped = np.full_like(b.a, 0.5)
    np.testing.assert_array_equal(agent.critic_target(b, big), agent.critic_target(b, clipped))


# -- gradients ---------------------------------------------------------------


@pytest.mark.parametrize("variant", ["dnn", "poly_l0"])
def test_critic_gradient(variant):
    agent = small_agent(variant, seed=3)
    b = random_batch(np.random.default_rng(3), 3, 2)
    assert critic_gradient_error(agent, b) < 1e-4


@pytest.mark.parametrize("variant,lam", [("poly_l0", 5e-4), ("poly_l0", 0.05), ("poly_l1", 5e-3), ("dnn", None)])
def test_actor_gradient(variant, lam):
    agent = small_agent(variant, seed=4, lam=lam)
    rng = np.random.default_rng(4)
    if variant == "poly_l1":
        # keep every coefficient away from the |x| kink
        agent.actor.Xi[...] = np.sign(agent.actor.Xi) * (0.05 + np.abs(agent.actor.Xi))
    if variant == "poly_l0":
        agent.actor.gates.log_alpha[...] = rng.normal(0.5, 1.0, size=agent.actor.Xi.shape)
    b = random_batch(rng, 3, 2)
    assert actor_gradient_error(agent, b, rng) < 1e-4


def test_deterministic_mask_backward():
    # the fixed-mask branch (used when gates are not sampled) is also exact
    agent = small_agent("poly_l0", seed=5)
    actor = agent.actor
    actor.gates.log_alpha[...] = np.random.default_rng(5).normal(0, 1, size=actor.Xi.shape)
    S = np.random.default_rng(6).normal(size=(4, 3))
    w = np.random.default_rng(7).normal(size=(4, 2))
    a, cache = actor.forward(S, "deterministic")
    grads = actor.backward(cache, w)

    from oracles import central_differences, max_relative_error

    fd = central_differences(lambda: float(np.sum(w * actor.forward(S, "deterministic")[0])), actor.params)
    assert max_relative_error(grads, fd) < 1e-4


# -- updates -----------------------------------------------------------------


def test_perfect_critics_do_not_move():
    agent = small_agent("dnn")
    for net in (agent.q1, agent.q2, agent.q1_target, agent.q2_target):
        constant_critic(net, 4.0)
    b = random_batch(np.random.default_rng(0), 3, 2)
    b.r[:] = 4.0 * (1 - 0.99)
    before = [p.copy() for p in agent.q1.params + agent.q2.params]
    loss = agent.update_critics(b, noise=np.zeros_like(b.a))
    assert loss == pytest.approx(0.0, abs=1e-28)
    for p, q in zip(before, agent.q1.params + agent.q2.params):
        np.testing.assert_array_equal(p, q)


def test_repeated_transition_equals_single():
    b1 = random_batch(np.random.default_rng(1), 3, 2, n=1)
    big = Batch(*(np.repeat(x, 256, axis=0) for x in (b1.s, b1.a, b1.r, b1.s2, b1.done)))
    a1, a2 = small_agent("poly_l0", seed=9), small_agent("poly_l0", seed=9)
    a1.update_critics(b1, noise=np.full((1, 2), 0.1))
    a2.update_critics(big, noise=np.full((256, 2), 0.1))
    for p, q in zip(a1.q1.params + a1.q2.params, a2.q1.params + a2.q2.params):
        np.testing.assert_allclose(p, q, rtol=1e-10, atol=1e-15)


def test_constant_critic_leaves_unpenalized_actor_fixed():
    agent = small_agent("dnn")
    constant_critic(agent.q1, 1.0)
    before = [p.copy() for p in agent.actor.params]
    agent.update_actor(random_batch(np.random.default_rng(0), 3, 2))
    for p, q in zip(before, agent.actor.params):
        np.testing.assert_array_equal(p, q)


def test_penalty_increases_with_lambda():
    pens = []
    for lam in (0.0, 1e-4, 1e-3, 1e-2):
        pens.append(small_agent("poly_l0", seed=1, lam=lam).actor.penalty())
    assert all(b > a for a, b in zip(pens, pens[1:]))
    l1 = [small_agent("poly_l1", seed=1, lam=lam).actor.penalty() for lam in (1e-3, 1e-2)]
    assert l1[1] > l1[0]


def test_soft_update_examples():
    t = [np.zeros(3)]
    soft_update(t, [np.ones(3)], 0.005)
    np.testing.assert_array_equal(t[0], 0.005)
    t = [np.array([0.3])]
    soft_update(t, [np.array([7.0])], 1.0)
    assert t[0][0] == 7.0
    soft_update(t, [np.array([1.0])], 0.0)
    assert t[0][0] == 7.0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), rho=st.floats(0.0, 1.0))
def test_soft_update_exact_and_on_segment(seed, rho):
    rng = np.random.default_rng(seed)
    old = rng.normal(size=(4, 3))
    online = rng.normal(size=(4, 3))
    t = [old.copy()]
    soft_update(t, [online], rho)
    np.testing.assert_array_equal(t[0], old * (1 - rho) + rho * online)
    lo, hi = np.minimum(old, online), np.maximum(old, online)
    assert np.all((t[0] >= lo - 1e-15) & (t[0] <= hi + 1e-15))


def test_actor_changes_only_on_delay_boundaries():
    agent = small_agent("poly_l0", seed=2)
    buf = ReplayBuffer(3, 2, 100)
    rng = np.random.default_rng(0)
    for _ in range(20):
        buf.add(rng.normal(size=3), rng.uniform(-1, 1, 2), -1.0, rng.normal(size=3), False)
    for k in range(1, 7):
        before = [p.copy() for p in agent.actor.params]
        agent.train_step(buf)
        changed = any(not np.array_equal(a, b) for a, b in zip(before, agent.actor.params))
        assert changed == (k % 2 == 0)


def test_zero_gates_never_reopen_under_penalty_only():
    agent = small_agent("poly_l0", seed=3, lam=1.0)
    agent.actor_opt.lr = 0.05
    constant_critic(agent.q1, 0.0)
    b = random_batch(np.random.default_rng(1), 3, 2)
    counts = []
    for _ in range(150):
        agent.update_actor(b)
        counts.append(int(np.sum(agent.actor.mask() == 0)))
    assert all(b >= a for a, b in zip(counts, counts[1:]))
    assert counts[-1] == agent.actor.Xi.size


# -- replay ------------------------------------------------------------------


def test_replay_fifo_and_capacity():
    buf = ReplayBuffer(1, 1, capacity=5)
    for i in range(8):
        buf.add([i], [0], -i, [i + 1], False)
    assert len(buf) == 5
    assert sorted(buf.s[:5, 0]) == [3, 4, 5, 6, 7]


def test_replay_sampling_reproducible():
    buf = ReplayBuffer(2, 1, capacity=50)
    rng = np.random.default_rng(0)
    for _ in range(30):
        buf.add(rng.normal(size=2), [0.1], -1.0, rng.normal(size=2), False)
    a = buf.sample(8, np.random.default_rng(42))
    b = buf.sample(8, np.random.default_rng(42))
    np.testing.assert_array_equal(a.s, b.s)
    with pytest.raises(ValueError):
        ReplayBuffer(2, 1).sample(1, rng)


def test_replay_grows_past_initial_allocation():
    buf = ReplayBuffer(1, 1, capacity=10_000)
    for i in range(5000):
        buf.add([i], [0], 0.0, [i], False)
    assert len(buf) == 5000 and buf.s[4999, 0] == 4999


# -- training loop -----------------------------------------------------------


def tiny_cdr_run(seed=5):
    env = make_env("cdr")
    hyper = Td3Hyper(hidden=16, batch_size=16, warmup_steps=30)
    agent = Td3Agent(11, 8, "poly_l0", hyper, seed, n_sens=8, names=default_names(8, ("ν", "c", "r")))
    rows = train(agent, env, Schedule(episodes=2, train_grid=env.cfg.train_grid))
    return agent, rows


def test_training_is_deterministic():
    _, r1 = tiny_cdr_run()
    _, r2 = tiny_cdr_run()
    strip = lambda rows: [{k: v for k, v in r.items() if k != "wall_time"} for r in rows]
    assert strip(r1) == strip(r2)
    assert set(r1[0]) == {"episode", "reward", "c1", "c2", "active_coeffs", "wall_time"}


class DivergingEnv:
    """Two-step episodes; the very first episode blows up on its first step."""

    n_sensors = 1

    def __init__(self):
        self.episode = 0

    def reset(self, params, seed):
        self.episode += 1
        self.steps = 0
        self.diverged = False
        return np.zeros(2)

    def step(self, a):
        self.steps += 1
        if self.episode == 1:
            self.diverged = True
            return np.zeros(2), -1e6, True
        self.last_costs = (1.0, 0.0)
        return np.zeros(2), -1.0, self.steps >= 2


def test_divergent_episode_is_logged_and_training_continues():
    agent = Td3Agent(2, 1, "dnn", Td3Hyper(hidden=4, batch_size=2, warmup_steps=0), 0, n_sens=1)
    rows = train(agent, DivergingEnv(), Schedule(episodes=3, fixed_params=()))
    assert len(rows) == 3
    assert rows[0]["reward"] == -1e6
    assert rows[1]["reward"] == -2.0
