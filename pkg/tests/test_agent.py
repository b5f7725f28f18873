import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from awmp import distributions as dist
from awmp.agent import AgentConfig, AwmpAgent, gating_policy
from awmp.networks import grad_check_nets
from awmp.replay import Batch, ReplayBuffer, Transition
from awmp.sac import SacAgent
from awmp.training import Streams, train

TINY = dict(hidden=(8, 8), replay_capacity=1000, start_steps=50, update_after=50)


def make(O=2, A=1, S=2, seed=0, **kw):
    cfg = AgentConfig(n_components=O, **{**TINY, **kw})
    rng = np.random.default_rng(seed)
    return AwmpAgent(S, A, cfg, rng, rng)


def set_heads(agent, means, log_stds):
    """Make the policy output constant heads (zero weights, chosen biases)."""
    agent.policy.flat[:] = 0.0
    agent.policy.params[-1][:] = np.concatenate([np.ravel(means), np.ravel(log_stds)])


def set_constant(net, value):
    net.flat[:] = 0.0
    net.params[-1][:] = value


def set_linear_q(net, coef):
    """Q(s, a) = coef * a[0] through a ReLU net: relu(a) - relu(-a)."""
    net.flat[:] = 0.0
    w1, b1, w2, b2, w3, b3 = net.params
    S = w1.shape[0] - 1
    w1[S, 0], w1[S, 1] = 1.0, -1.0
    w2[0, 0], w2[1, 1] = 1.0, 1.0
    w3[0, 0], w3[1, 0] = coef, -coef


def batch_of(states, actions=None, rewards=None, next_states=None, terminals=None):
    n = len(states)
    return Batch(states, np.zeros((n, 1)) if actions is None else actions,
                 np.zeros(n) if rewards is None else rewards,
                 states if next_states is None else next_states,
                 np.zeros(n, bool) if terminals is None else terminals, np.zeros(n), np.arange(n))


# -- gating -----------------------------------------------------------------

def test_gating_examples():
    np.testing.assert_allclose(gating_policy(np.zeros(4)), 0.25, atol=1e-15)
    np.testing.assert_allclose(gating_policy([0.0, math.log(3)]), [0.25, 0.75], atol=1e-15)


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=6), st.floats(-1e4, 1e4))
def test_gating_shift_invariance(q, c):
    np.testing.assert_allclose(gating_policy(np.array(q) + c), gating_policy(q), atol=1e-12)


# -- option values ----------------------------------------------------------

def test_option_value_deterministic_component(rng):
    agent = make(O=2, alpha_pi=0.0)
    set_heads(agent, [0.4, -0.9], [dist.LOG_STD_MIN] * 2)
    s = rng.normal(size=(3, 2))
    qv = agent.option_values(s, rng)
    for g, m in enumerate([0.4, -0.9]):
        x = np.concatenate([s, np.full((3, 1), math.tanh(m))], axis=1)
        np.testing.assert_allclose(qv[:, g], agent.q_target.predict(x)[:, 0], atol=1e-7)


def test_option_value_matches_quadrature():
    agent = make(O=1, alpha_pi=0.2)
    set_linear_q(agent.q_target, 1.7)
    mean, std = 0.3, 0.6
    set_heads(agent, [mean], [math.log(std)])
    rng = np.random.default_rng(8)
    n = 10_000
    eps = rng.standard_normal((1, n, 1, 1))
    u = mean + std * eps[0, :, 0, 0]
    logp = dist.squashed_logprob(dist.GaussianHead(np.array([mean]), np.array([math.log(std)])), u[:, None]).data
    samples = 1.7 * np.tanh(u) - 0.2 * logp
    mc = agent.option_values(np.zeros((1, 2)), eps=eps, n_mc=n)[0, 0]

    nodes, weights = np.polynomial.hermite_e.hermegauss(200)
    uq = mean + std * nodes
    lq = dist.squashed_logprob(dist.GaussianHead(np.array([mean]), np.array([math.log(std)])), uq[:, None]).data
    exact = np.sum(weights * (1.7 * np.tanh(uq) - 0.2 * lq)) / math.sqrt(2 * math.pi)
    # cross-check the Gauss-Hermite nodes against adaptive quadrature
    ref = integrate.quad(lambda z: (1.7 * math.tanh(mean + std * z)) * math.exp(-z * z / 2), -12, 12)[0]
    assert np.sum(weights * 1.7 * np.tanh(uq)) == pytest.approx(ref, abs=1e-9)
    assert abs(mc - exact) < 3 * samples.std() / math.sqrt(n)


def test_identical_heads_identical_option_values(rng):
    agent = make(O=3)
    set_heads(agent, [0.2] * 3, [-0.5] * 3)
    s = rng.normal(size=(4, 2))
    eps = np.broadcast_to(rng.standard_normal((4, 16, 1, 1)), (4, 16, 3, 1))
    qv = agent.option_values(s, eps=eps)
    np.testing.assert_allclose(qv, np.broadcast_to(qv[:, :1], qv.shape), atol=1e-12)
    noisy = agent.option_values(s, rng=rng, n_mc=4000)
    assert np.ptp(noisy, axis=1).max() < 0.05


# -- action selection -------------------------------------------------------

def test_single_component_acts_like_sac():
    cfg = AgentConfig(n_components=1, **TINY)
    sac = SacAgent(2, 1, cfg, np.random.default_rng(1))
    awmp = AwmpAgent(2, 1, cfg, np.random.default_rng(1), np.random.default_rng(2))
    s = np.array([0.3, -0.2])
    a1, l1 = sac.act(s, np.random.default_rng(5))
    a2, l2 = awmp.act(s, np.random.default_rng(5), np.random.default_rng(6))
    np.testing.assert_array_equal(a1, a2)
    assert l1 == pytest.approx(l2, abs=1e-12)
    np.testing.assert_array_equal(sac.act_greedy(s), awmp.act_greedy(s))


def test_evaluate_mode_deterministic(rng):
    agent = make(O=4)
    agent.policy.flat[:] = rng.normal(scale=0.3, size=agent.policy.flat.size)
    s = rng.normal(size=2)
    first = agent.select_action(s, "evaluate")
    for _ in range(5):
        agent.select_action(s, "explore", rng)
        np.testing.assert_array_equal(agent.select_action(s, "evaluate"), first)


def test_explore_component_frequencies(monkeypatch):
    agent = make(O=2)
    set_heads(agent, [3.0, -3.0], [dist.LOG_STD_MIN] * 2)
    monkeypatch.setattr(agent, "gating", lambda s, rng=None, eps=None: np.full((1, 2), 0.5))
    rng, grng = np.random.default_rng(0), np.random.default_rng(1)
    n = 100_000
    pos = sum(agent.act(np.zeros(2), rng, grng)[0][0] > 0 for _ in range(n))
    assert abs(pos / n - 0.5) < 0.01


def test_actions_strictly_inside_box(rng):
    agent = make(O=2)
    set_heads(agent, [40.0, -40.0], [0.0, 0.0])
    for _ in range(20):
        a = agent.select_action(rng.normal(size=2), "explore", rng)
        assert np.all(np.abs(a) < 1.0)
    assert np.all(np.abs(agent.select_action(np.zeros(2), "evaluate")) < 1.0)
    with pytest.raises(ValueError):
        agent.select_action(np.zeros(2), "greedy")


# -- value target -----------------------------------------------------------

def test_value_target_single_component_is_sac_target(rng):
    cfg = AgentConfig(n_components=1, **TINY)
    sac = SacAgent(2, 1, cfg, np.random.default_rng(3))
    awmp = AwmpAgent(2, 1, cfg, np.random.default_rng(3), None)
    s = rng.normal(size=(5, 2))
    eps = rng.standard_normal((5, 1))
    fresh = dist.sample_reparam(sac._head(s), eps)
    expected = sac._min_q(s, fresh.action).data - cfg.alpha_pi * fresh.log_prob.data
    got = awmp.value_target(s, eps[:, None, :], rho=np.ones((5, 1)))
    np.testing.assert_allclose(got, expected, atol=1e-12)


def test_value_target_uses_min_of_twins(rng):
    agent = make(O=2, alpha_pi=0.0, alpha_g=0.0)
    set_constant(agent.q1, 0.0)
    set_constant(agent.q2, 5.0)
    v = agent.value_target(rng.normal(size=(4, 2)), rng.standard_normal((4, 2, 1)), rho=np.full((4, 2), 0.5))
    np.testing.assert_array_equal(v, 0.0)


def test_gating_entropy_contribution(rng):
    agent = make(O=2, alpha_g=0.001)
    s, eps = rng.normal(size=(3, 2)), rng.standard_normal((3, 2, 1))
    uniform = agent.value_target(s, eps, rho=np.full((3, 2), 0.5))
    agent.cfg.alpha_g = 0.0
    base = agent.value_target(s, eps, rho=np.full((3, 2), 0.5))
    np.testing.assert_allclose(uniform - base, 0.001 * math.log(2), atol=1e-15)


def test_value_target_linear_q_closed_form():
    agent = make(O=2, alpha_pi=0.0, alpha_g=0.0)
    set_linear_q(agent.q1, 2.0)
    set_linear_q(agent.q2, 2.0)
    means, std = [0.5, -1.0], 0.4
    set_heads(agent, means, [math.log(std)] * 2)
    rho = np.array([0.3, 0.7])
    n = 40_000
    rng = np.random.default_rng(11)
    v = agent.value_target(np.zeros((n, 2)), rng.standard_normal((n, 2, 1)), rho=np.tile(rho, (n, 1)))

    def e_tanh(m):
        f = lambda z: math.tanh(m + std * z) * math.exp(-z * z / 2) / math.sqrt(2 * math.pi)
        return integrate.quad(f, -12, 12)[0]

    exact = sum(r * 2.0 * e_tanh(m) for r, m in zip(rho, means))
    assert abs(v.mean() - exact) < 3 * v.std() / math.sqrt(n)


# -- critic update ----------------------------------------------------------

def test_q_hat_examples():
    agent = make(O=2, gamma=0.0)
    b = batch_of(np.zeros((2, 2)), rewards=np.array([1.0, -2.0]))
    np.testing.assert_array_equal(agent.q_hat(b), [1.0, -2.0])
    agent = make(O=2, gamma=0.99)
    set_constant(agent.v_target, 2.0)
    b = batch_of(np.zeros((2, 2)), rewards=np.ones(2), terminals=np.array([True, False]))
    np.testing.assert_allclose(agent.q_hat(b), [1.0, 2.98], atol=1e-15)


def test_critic_update_reports_non_finite(rng):
    agent = make(O=2)
    b = batch_of(rng.normal(size=(4, 2)), rewards=np.array([np.nan, 0, 0, 0]))
    with pytest.raises(FloatingPointError, match="J_Q1"):
        agent.critic_update(b, rng.standard_normal((4, 2, 1)), rho=np.full((4, 2), 0.5))


def fill_buffer(agent, n, rng):
    buf = ReplayBuffer(agent.state_dim, agent.action_dim, 10_000)
    for _ in range(n):
        buf.push(Transition(rng.normal(size=agent.state_dim), rng.uniform(-1, 1, agent.action_dim),
                            float(rng.normal()), rng.normal(size=agent.state_dim), bool(rng.random() < 0.1),
                            float(rng.normal())))
    return buf


def test_targets_move_toward_online(rng):
    agent = make(O=2, critic_batch=16, policy_batch=16, prior_batch=8)
    agent.v_target.flat[:] += rng.normal(size=agent.v_target.flat.size)
    agent.q_target.flat[:] += rng.normal(size=agent.q_target.flat.size)
    buf = fill_buffer(agent, 64, rng)
    old_v, old_q = agent.v_target.flat.copy(), agent.q_target.flat.copy()
    agent.update(buf, Streams(0))
    # averaged toward the online weights after this step's gradient updates
    np.testing.assert_allclose(agent.v_target.flat, 0.995 * old_v + 0.005 * agent.v.flat, atol=1e-14)
    np.testing.assert_allclose(agent.q_target.flat, 0.999 * old_q + 0.001 * agent.q1.flat, atol=1e-14)
    assert np.all(np.abs(agent.v_target.flat - agent.v.flat) < np.abs(old_v - agent.v.flat) + 1e-15)


# -- policy update ----------------------------------------------------------

@pytest.mark.parametrize("score", ["components", "mixed"])
def test_policy_loss_gradient(score):
    rng = np.random.default_rng(4)
    agent = make(O=3, A=2, hidden=(5, 5), policy_score=score)
    agent.policy.flat[:] = rng.normal(scale=0.5, size=agent.policy.flat.size)
    s, eps = rng.normal(size=(4, 2)), rng.standard_normal((4, 3, 2))
    rho, h = rng.dirichlet(np.ones(3), size=4), rng.dirichlet(np.ones(3), size=4)
    assert grad_check_nets(lambda t: agent.policy_loss(s, eps, t, rho=rho, h=h)[0], [agent.policy]) < 1e-3


def test_policy_loss_is_sac_loss_for_one_component(rng):
    cfg = AgentConfig(n_components=1, **TINY)
    sac = SacAgent(2, 1, cfg, np.random.default_rng(3))
    awmp = AwmpAgent(2, 1, cfg, np.random.default_rng(3), None)
    s, eps = rng.normal(size=(6, 2)), rng.standard_normal((6, 1))
    sample = dist.sample_reparam(sac._head(s), eps)
    ref = np.mean(cfg.alpha_pi * sample.log_prob.data - sac._min_q(s, sample.action).data)
    got = awmp.policy_loss(s, eps[:, None, :], None)[0].data
    assert float(got) == pytest.approx(float(ref), abs=1e-12)


def test_policy_descends_on_frozen_batch():
    rng = np.random.default_rng(0)
    agent = make(O=2, hidden=(16, 16))
    s = rng.normal(size=(32, 2))
    eps = rng.standard_normal((32, 2, 1))
    rho, h = np.full((32, 2), 0.5), rng.dirichlet(np.ones(2), size=32)
    from awmp import autodiff as ad
    from awmp.networks import adam_step
    losses = []
    for _ in range(500):
        tape = ad.Tape()
        loss, _ = agent.policy_loss(s, eps, tape, rho=rho, h=h)
        tape.backward(loss)
        adam_step(agent.opts["policy"], agent.policy.flat, tape.grad(agent.policy))
        losses.append(float(loss.data))
    tail = np.array(losses[-50:])
    assert np.all(np.diff(tail) <= 1e-9)
    assert losses[-1] < losses[0]


# -- training loop ----------------------------------------------------------

def test_replay_size_tracks_steps():
    cfg = AgentConfig(n_components=2, hidden=(4,), replay_capacity=120, critic_batch=16, policy_batch=16,
                      prior_batch=8, start_steps=60, update_after=200)
    _, _, buf = train("bang1d", cfg, 0, total_steps=150, eval_interval=0)
    assert len(buf) == 120 and buf.writes == 150


def test_same_seed_same_rows():
    cfg = AgentConfig(n_components=2, hidden=(6,), **{k: v for k, v in TINY.items() if k != "hidden"})
    kw = dict(total_steps=160, eval_interval=40, eval_episodes=2)
    _, r1, _ = train("bang1d", cfg, 3, **kw)
    _, r2, _ = train("bang1d", cfg, 3, **kw)
    strip = lambda rows: [{**vars(r), "wall_clock": 0} for r in rows]
    assert strip(r1) == strip(r2)


def test_one_component_run_equals_sac_run():
    cfg = AgentConfig(n_components=1, **TINY)
    a, rows_a, _ = train("bang1d", cfg, 1, "sac", total_steps=200, eval_interval=100, eval_episodes=2)
    b, rows_b, _ = train("bang1d", cfg, 1, "sac-awmp", total_steps=200, eval_interval=100, eval_episodes=2)
    for name in ("policy", "q1", "q2", "v", "v_target"):
        np.testing.assert_array_equal(getattr(a, name).flat, getattr(b, name).flat)
    assert [r.returns for r in rows_a] == [r.returns for r in rows_b]


def test_config_validation():
    with pytest.raises(ValueError):
        AgentConfig(n_components=0)
    with pytest.raises(ValueError):
        AgentConfig(gamma=1.0)
    with pytest.raises(ValueError):
        AgentConfig(alpha_pi=-0.1)
    with pytest.raises(ValueError):
        AgentConfig(policy_score="other")
    assert AgentConfig(n_components=4).policy_batch_size == 400
