"""Reference soft actor-critic with a state-value network and twin critics.

Single tanh-squashed Gaussian policy.  Written independently of
:mod:`awmp.agent` so that the mixture learner with one component can be
checked against it step for step.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import distributions as dist
from .networks import AdamState, Mlp, adam_step, polyak_update


class SacAgent:
    algorithm = "sac"

    def __init__(self, state_dim, action_dim, config, init_rng, prior_rng=None):
        self.cfg = config
        self.state_dim, self.action_dim = state_dim, action_dim
        A, H = action_dim, config.hidden
        self.policy = Mlp((state_dim, *H, 2 * A), init_rng, out_scale=1e-2, name="policy")
        self.q1 = Mlp((state_dim + A, *H, 1), init_rng, name="q1")
        self.q2 = Mlp((state_dim + A, *H, 1), init_rng, name="q2")
        self.v = Mlp((state_dim, *H, 1), init_rng, name="v")
        self.v_target = self.v.copy("v_target")
        self.opts = {n.name: AdamState(n.flat.size, lr=config.lr, name=n.name)
                     for n in (self.policy, self.q1, self.q2, self.v)}

    def _head(self, states, tape=None):
        out = self.policy(states, tape)
        A = self.action_dim
        return dist.GaussianHead(out[:, :A], ad.clip(out[:, A:], dist.LOG_STD_MIN, dist.LOG_STD_MAX))

    def act(self, state, rng, gating_rng=None):
        head = self._head(np.asarray(state, dtype=np.float64)[None])
        sample = dist.sample_reparam(head, rng.standard_normal(self.action_dim)[None])
        a = np.clip(sample.action.data[0], -dist.ACTION_EDGE, dist.ACTION_EDGE)
        return a, float(sample.log_prob.data[0])

    def act_greedy(self, state):
        head = self._head(np.asarray(state, dtype=np.float64)[None])
        return np.clip(np.tanh(head.mean.data[0]), -dist.ACTION_EDGE, dist.ACTION_EDGE)

    def select_action(self, state, mode, rng=None, gating_rng=None):
        return self.act_greedy(state) if mode == "evaluate" else self.act(state, rng)[0]

    def _min_q(self, states, actions, tape=None):
        x = ad.concat([states, actions], axis=-1)
        return ad.minimum(self.q1(x, tape), self.q2(x, tape))[:, 0]

    def advantage(self, states, actions):
        return self._min_q(states, actions).data - self.v.predict(states)[:, 0]

    def update(self, buffer, rngs):
        cfg = self.cfg
        batch = buffer.sample_uniform(cfg.critic_batch, rngs.buffer)
        s, a, r, s2 = batch.states, batch.actions, batch.rewards, batch.next_states

        # V target with a fresh policy sample
        fresh = dist.sample_reparam(self._head(s), rngs.update.standard_normal((len(s), self.action_dim)))
        v_hat = self._min_q(s, fresh.action).data - cfg.alpha_pi * fresh.log_prob.data
        q_hat = r + cfg.gamma * (1.0 - batch.terminals) * self.v_target.predict(s2)[:, 0]

        tape = ad.Tape()
        loss_v = ad.mean(ad.mul(0.5, ad.square(ad.sub(self.v(s, tape)[:, 0], v_hat))))
        sa = np.concatenate([s, a], axis=-1)
        loss_q1 = ad.mean(ad.mul(0.5, ad.square(ad.sub(self.q1(sa, tape)[:, 0], q_hat))))
        loss_q2 = ad.mean(ad.mul(0.5, ad.square(ad.sub(self.q2(sa, tape)[:, 0], q_hat))))
        total = ad.add(ad.add(loss_v, loss_q1), loss_q2)
        if not np.isfinite(total.data):
            raise FloatingPointError(f"SAC critic loss non-finite: {loss_v.data}, {loss_q1.data}, {loss_q2.data}")
        tape.backward(total)
        for net in (self.v, self.q1, self.q2):
            adam_step(self.opts[net.name], net.flat, tape.grad(net))

        tape = ad.Tape()
        sample = dist.sample_reparam(self._head(s, tape), rngs.update.standard_normal((len(s), self.action_dim)))
        loss_pi = ad.mean(ad.sub(ad.mul(cfg.alpha_pi, sample.log_prob), self._min_q(s, sample.action, tape)))
        if not np.isfinite(loss_pi.data):
            raise FloatingPointError(f"SAC policy loss non-finite: {loss_pi.data}")
        tape.backward(loss_pi)
        adam_step(self.opts["policy"], self.policy.flat, tape.grad(self.policy))

        polyak_update(self.v_target, self.v, cfg.tau_v)
        return {"loss_v": float(loss_v.data), "loss_q": 0.5 * float(loss_q1.data + loss_q2.data),
                "loss_pi": float(loss_pi.data), "gating_entropy": 0.0}

    def networks(self):
        return {n.name: n for n in (self.policy, self.q1, self.q2, self.v, self.v_target)}
