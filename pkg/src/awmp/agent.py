"""Soft actor-critic with an advantage-weighted mixture policy.

The policy has O squashed-Gaussian components produced by one trunk.  A
softmax *gating* distribution over components, computed from Monte-Carlo
soft option values under the target action-value network, selects which
component acts and weights the state-value target.  The reparameterised
policy update instead mixes the per-component samples with weights from the
prior network (:mod:`awmp.prior`).  With ``n_components = 1`` every gating
quantity collapses and the learner is plain SAC with a state-value network.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from . import distributions as dist
from .networks import DEFAULT_HIDDEN, AdamState, Mlp, adam_step, polyak_update
from .prior import PriorNet, prior_update

POLICY_SCORES = ("components", "mixed")


@dataclass
class AgentConfig:
    """Hyperparameters shared by SAC and SAC-AWMP.

    ``policy_batch = None`` means ``100 * n_components``.

    ``policy_score`` picks the entropy term of the mixture policy loss:
    ``"components"`` (default) scores every component's own sample under
    the gated mixture and weights those scores by the prior weights h;
    ``"mixed"`` scores the convex combination ``a_mix`` itself.  The mixed
    form is unbounded below: moving component means away from
    ``atanh(a_mix)`` lowers the log-density without limit once the samples
    saturate, and training diverges.  Both coincide for one component.
    """

    n_components: int = 4
    alpha_pi: float = 0.2
    alpha_g: float = 0.001
    gamma: float = 0.99
    tau_v: float = 0.005
    tau_q: float = 0.001
    lr: float = 3e-4
    critic_batch: int = 100
    policy_batch: int | None = None
    prior_batch: int = 50
    window: int = 5000
    replay_capacity: int = 1_000_000
    hidden: tuple = DEFAULT_HIDDEN
    n_mc: int = 4
    sigma_reg: float = 0.04
    zeta: float = 0.1
    start_steps: int = 1000
    update_after: int = 1000
    policy_score: str = "components"

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        if self.alpha_pi < 0 or self.alpha_g < 0:
            raise ValueError("temperatures must be >= 0")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0, 1)")
        for name in ("tau_v", "tau_q"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in (0, 1]")
        if self.policy_score not in POLICY_SCORES:
            raise ValueError(f"policy_score must be one of {POLICY_SCORES}")
        if self.replay_capacity < max(self.critic_batch, self.policy_batch_size, self.prior_batch):
            raise ValueError("replay capacity smaller than a batch size")

    @property
    def policy_batch_size(self):
        return self.policy_batch if self.policy_batch is not None else 100 * self.n_components

    @property
    def batch_size(self):
        """Rows drawn per gradient step; critics use the first ``critic_batch``."""
        return max(self.critic_batch, self.policy_batch_size)

    def replace(self, **kw):
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(kw)
        return AgentConfig(**values)


def _softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def gating_policy(option_vals):
    """rho(g|s) = softmax over components of the soft option values."""
    return _softmax(np.asarray(option_vals, dtype=np.float64))


class AwmpAgent:
    """SAC-AWMP learner.

    Parameters
    ----------
    state_dim, action_dim : int
    config : AgentConfig
    init_rng, prior_rng : numpy.random.Generator
        Initialisation streams for the actor-critic networks and the prior
        network respectively.
    """

    algorithm = "sac-awmp"

    def __init__(self, state_dim, action_dim, config, init_rng, prior_rng):
        self.cfg = config
        self.state_dim, self.action_dim = state_dim, action_dim
        O, A, H = config.n_components, action_dim, config.hidden
        self.policy = Mlp((state_dim, *H, 2 * O * A), init_rng, out_scale=1e-2, name="policy")
        self.q1 = Mlp((state_dim + A, *H, 1), init_rng, name="q1")
        self.q2 = Mlp((state_dim + A, *H, 1), init_rng, name="q2")
        self.v = Mlp((state_dim, *H, 1), init_rng, name="v")
        self.v_target = self.v.copy("v_target")
        self.q_target = self.q1.copy("q_target")
        self.opts = {net.name: AdamState(net.flat.size, lr=config.lr, name=net.name)
                     for net in (self.policy, self.q1, self.q2, self.v)}
        self.prior = None
        if O > 1:
            self.prior = PriorNet(state_dim, A, O, prior_rng, hidden=H, sigma_reg=config.sigma_reg,
                                  zeta=config.zeta, lr=config.lr)
        # common random numbers for greedy (evaluation) gating
        self._eval_eps = np.random.default_rng(0x5eed).standard_normal((config.n_mc, O, A))

    # ------------------------------------------------------------------ heads
    def heads(self, states):
        """Numpy component means and log-stds, shape ``(B, O, A)``."""
        out = self.policy.predict(states)
        B, O, A = len(states), self.cfg.n_components, self.action_dim
        k = O * A
        mean = out[:, :k].reshape(B, O, A)
        log_std = np.clip(out[:, k:].reshape(B, O, A), dist.LOG_STD_MIN, dist.LOG_STD_MAX)
        return mean, log_std

    def _min_q(self, states, actions):
        x = np.concatenate([states, actions], axis=-1)
        return np.minimum(self.q1.predict(x), self.q2.predict(x))[:, 0]

    def advantage(self, states, actions):
        """min(Q1, Q2)(s, a) - V(s) from the online critics."""
        return self._min_q(states, actions) - self.v.predict(states)[:, 0]

    def option_values(self, states, rng=None, eps=None, n_mc=None):
        """Monte-Carlo soft option values Q_G(s, g), shape ``(B, O)``.

        Mean over ``n_mc`` reparameterised draws per component of
        ``Qbar(s, a) - alpha_pi * log pi_g(a | s)`` under the target
        action-value network.
        """
        states = np.atleast_2d(states)
        B, O, A = len(states), self.cfg.n_components, self.action_dim
        if eps is not None and n_mc is None:
            n_mc = np.shape(eps)[1]
        n_mc = n_mc or self.cfg.n_mc
        if eps is None:
            eps = rng.standard_normal((B, n_mc, O, A))
        eps = np.broadcast_to(eps, (B, n_mc, O, A))
        mean, log_std = self.heads(states)
        head = dist.GaussianHead(mean[:, None], log_std[:, None])
        u = mean[:, None] + np.exp(log_std)[:, None] * eps
        logp = dist.squashed_logprob(head, u).data  # (B, n_mc, O)
        s_rep = np.broadcast_to(states[:, None, None, :], (B, n_mc, O, states.shape[-1]))
        x = np.concatenate([s_rep, np.tanh(u)], axis=-1).reshape(B * n_mc * O, -1)
        q = self.q_target.predict(x).reshape(B, n_mc, O)
        return (q - self.cfg.alpha_pi * logp).mean(axis=1)

    def gating(self, states, rng=None, eps=None):
        if self.cfg.n_components == 1:
            return np.ones((len(np.atleast_2d(states)), 1))
        return gating_policy(self.option_values(states, rng, eps))

    # ------------------------------------------------------------- acting
    def act(self, state, rng, gating_rng):
        """Exploration action and its behaviour log-density log mu(a|s)."""
        s = np.asarray(state, dtype=np.float64)[None]
        rho = self.gating(s, gating_rng)
        g = 0 if self.cfg.n_components == 1 else dist.sample_categorical(rho[0], gating_rng)
        mean, log_std = self.heads(s)
        eps = rng.standard_normal(self.action_dim)
        u = mean[0, g] + np.exp(log_std[0, g]) * eps
        a = np.clip(np.tanh(u), -dist.ACTION_EDGE, dist.ACTION_EDGE)
        with np.errstate(divide="ignore"):
            log_rho = np.log(rho)
        logmu = dist.mixture_logprob(dist.GaussianHead(mean, log_std), log_rho, u=u[None]).data[0]
        return a, float(logmu)

    def act_greedy(self, state):
        """Deterministic action: tanh of the mean of the most likely component."""
        s = np.asarray(state, dtype=np.float64)[None]
        mean, _ = self.heads(s)
        g = 0 if self.cfg.n_components == 1 else int(np.argmax(self.gating(s, eps=self._eval_eps[None])[0]))
        return np.clip(np.tanh(mean[0, g]), -dist.ACTION_EDGE, dist.ACTION_EDGE)

    def select_action(self, state, mode, rng=None, gating_rng=None):
        if mode == "evaluate":
            return self.act_greedy(state)
        if mode == "explore":
            return self.act(state, rng, gating_rng if gating_rng is not None else rng)[0]
        raise ValueError(f"unknown mode {mode!r}")

    # ------------------------------------------------------------- learning
    def value_target(self, states, eps, gating_rng=None, rho=None):
        """Soft state-value target, one reparameterised sample per component.

        sum_g rho_g (min(Q1,Q2)(s, a_g) - alpha_pi log pi_g(a_g|s))
        - alpha_g sum_g rho_g log rho_g
        """
        B, O, A = len(states), self.cfg.n_components, self.action_dim
        mean, log_std = self.heads(states)
        u = mean + np.exp(log_std) * eps
        logp = dist.squashed_logprob(dist.GaussianHead(mean, log_std), u).data  # (B, O)
        s_rep = np.broadcast_to(states[:, None, :], (B, O, states.shape[-1])).reshape(B * O, -1)
        q = self._min_q(s_rep, np.tanh(u).reshape(B * O, A)).reshape(B, O)
        if rho is None:
            rho = self.gating(states, gating_rng)
        inner = (rho * (q - self.cfg.alpha_pi * logp)).sum(axis=-1)
        return inner + self.cfg.alpha_g * dist.categorical_entropy(rho)

    def q_hat(self, batch):
        """r + gamma * V_target(s'), with the bootstrap masked on terminal steps."""
        not_done = 1.0 - batch.terminals.astype(np.float64)
        return batch.rewards + self.cfg.gamma * not_done * self.v_target.predict(batch.next_states)[:, 0]

    def critic_loss(self, batch, v_hat, tape):
        v_pred = self.v(batch.states, tape)[:, 0]
        loss_v = ad.mean(ad.mul(0.5, ad.square(ad.sub(v_pred, v_hat))))
        q_hat = self.q_hat(batch)
        x = np.concatenate([batch.states, batch.actions], axis=-1)
        loss_q1 = ad.mean(ad.mul(0.5, ad.square(ad.sub(self.q1(x, tape)[:, 0], q_hat))))
        loss_q2 = ad.mean(ad.mul(0.5, ad.square(ad.sub(self.q2(x, tape)[:, 0], q_hat))))
        return loss_v, loss_q1, loss_q2

    def critic_update(self, batch, eps, gating_rng=None, rho=None):
        v_hat = self.value_target(batch.states, eps, gating_rng, rho)
        tape = ad.Tape()
        loss_v, loss_q1, loss_q2 = self.critic_loss(batch, v_hat, tape)
        total = ad.add(ad.add(loss_v, loss_q1), loss_q2)
        if not np.isfinite(total.data):
            raise FloatingPointError(
                f"critic loss non-finite: J_V={loss_v.data} J_Q1={loss_q1.data} J_Q2={loss_q2.data}")
        tape.backward(total)
        for net in (self.v, self.q1, self.q2):
            adam_step(self.opts[net.name], net.flat, tape.grad(net))
        return float(loss_v.data), float(loss_q1.data), float(loss_q2.data)

    def mixture_weights(self, states, f, gating_rng, rho=None):
        """(rho, h): gating distribution and prior-network weights per state.

        A component is drawn from rho for each state, its sample is used as
        the action the prior network is conditioned on.
        """
        B, O = len(states), self.cfg.n_components
        if O == 1:
            ones = np.ones((B, 1))
            return ones, ones
        if rho is None:
            rho = self.gating(states, gating_rng)
        g = dist.sample_categorical(rho, gating_rng)
        a_sample = f[np.arange(B), g]
        return rho, self.prior.probs(states, a_sample)

    def policy_loss(self, states, eps, tape, rho=None, h=None, gating_rng=None):
        """Reparameterised mixture loss mean[alpha_pi * logp - min Q(s, a_mix)].

        ``a_mix = sum_i h_i f_i`` mixes the per-component squashed samples
        ``f_i``.  ``logp`` is ``sum_i h_i log pi(f_i|s)`` or, with
        ``policy_score="mixed"``, ``log pi(a_mix|s)``; ``pi`` is the mixture
        gated by rho.  ``rho`` and ``h`` are treated as constants; when
        omitted they are computed with :meth:`mixture_weights`.
        """
        B, O, A = len(states), self.cfg.n_components, self.action_dim
        head = dist.split_head(self.policy(states, tape), O, A)
        u = ad.add(head.mean, ad.mul(ad.exp(head.log_std), eps))
        f = ad.tanh(u)
        if h is None:
            rho, h = self.mixture_weights(states, f.data, gating_rng, rho)
        a_mix = ad.sum(ad.mul(h[:, :, None], f), axis=1)
        with np.errstate(divide="ignore"):
            log_rho = np.log(rho)
        if O == 1:
            logp = dist.mixture_logprob(head, log_rho, u=ad.reshape(u, (B, A)))
        elif self.cfg.policy_score == "mixed":
            edge = dist.ACTION_EDGE
            logp = dist.mixture_logprob(head, log_rho, a=ad.clip(a_mix, -edge, edge))
        else:
            logp = ad.sum(ad.mul(h, dist.mixture_logprob(head, log_rho, u=u)), axis=1)
        x = ad.concat([states, a_mix], axis=-1)
        q = ad.minimum(self.q1(x, tape), self.q2(x, tape))[:, 0]
        loss = ad.mean(ad.sub(ad.mul(self.cfg.alpha_pi, logp), q))
        return loss, rho

    def policy_update(self, states, eps, gating_rng, rho=None):
        tape = ad.Tape()
        loss, rho = self.policy_loss(states, eps, tape, rho=rho, gating_rng=gating_rng)
        if not np.isfinite(loss.data):
            raise FloatingPointError(f"policy loss non-finite: J_pi={loss.data}")
        tape.backward(loss)
        adam_step(self.opts["policy"], self.policy.flat, tape.grad(self.policy))
        return float(loss.data), float(dist.categorical_entropy(rho).mean())

    def update(self, buffer, rngs):
        """One prior step (O > 1) and one gradient step; returns a loss dict."""
        cfg = self.cfg
        stats = {}
        if self.prior is not None:
            recent = buffer.sample_recent(cfg.window, cfg.prior_batch, rngs.prior)
            stats["loss_eta"], stats["mi"] = prior_update(self.prior, recent, self, rngs.prior)
        batch = buffer.sample_uniform(cfg.batch_size, rngs.buffer)
        critic = batch.head(cfg.critic_batch)
        O, A = cfg.n_components, self.action_dim
        # theta and the target Q are fixed until the policy step, so one
        # gating pass serves both the value target and the policy loss
        rho = self.gating(batch.states, rngs.gating)
        eps_v = rngs.update.standard_normal((cfg.critic_batch, O, A))
        stats["loss_v"], q1, q2 = self.critic_update(critic, eps_v, rho=rho[:cfg.critic_batch])
        stats["loss_q"] = 0.5 * (q1 + q2)
        eps_pi = rngs.update.standard_normal((cfg.policy_batch_size, O, A))
        n = cfg.policy_batch_size
        stats["loss_pi"], stats["gating_entropy"] = self.policy_update(
            batch.states[:n], eps_pi, rngs.gating, rho=rho[:n])
        polyak_update(self.v_target, self.v, cfg.tau_v)
        polyak_update(self.q_target, self.q1, cfg.tau_q)
        return stats

    def networks(self):
        nets = {n.name: n for n in (self.policy, self.q1, self.q2, self.v, self.v_target, self.q_target)}
        if self.prior is not None:
            nets["prior"] = self.prior.net
        return nets
