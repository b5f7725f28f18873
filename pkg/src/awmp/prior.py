"""Prior network P(h | s, a) trained by advantage-weighted information maximisation.

The objective minimised is ``J = KL-regulariser - zeta * MI`` where MI is
the mutual information between the component label ``h`` and the
state-action pair, estimated on a mini-batch under normalised
advantage-weighted importance weights.
"""

from __future__ import annotations

import logging

import numpy as np

from . import autodiff as ad
from .networks import DEFAULT_HIDDEN, AdamState, Mlp, adam_step

log = logging.getLogger(__name__)

TINY = 1e-300


def normalized_importance_weights(advantages, behavior_logprobs):
    """Weights proportional to exp(A_i) / mu(a_i|s_i), normalised over the batch.

    Computed in log space with a max shift; the partition function of the
    advantage transform cancels in the normalisation.
    """
    adv = np.asarray(advantages, dtype=np.float64)
    blp = np.asarray(behavior_logprobs, dtype=np.float64)
    if adv.size == 0:
        raise ValueError("normalized_importance_weights: empty batch")
    if not (np.all(np.isfinite(adv)) and np.all(np.isfinite(blp))):
        raise ValueError("normalized_importance_weights: non-finite advantages or log-densities")
    logw = adv - blp
    m = logw.max()
    w = np.exp(logw - m)
    total = w.sum()
    if not total > 0:
        raise ValueError("normalized_importance_weights: all weights vanish")
    return w / total


def estimate_marginal(h_dists, weights):
    """Importance-weighted average of per-sample categorical distributions."""
    return ad.sum(ad.mul(np.asarray(weights)[:, None], h_dists), axis=0)


def _entropy_terms(p, logp):
    # p log p with 0 log 0 = 0
    return ad.mul(p, logp)


def mi_estimate(h_dists, weights, log_h=None):
    """H(marginal) - H(h | s, a) for a batch of distributions (returns a Tensor).

    ``log_h`` may be passed when the caller has log-probabilities from a
    log-softmax (more accurate than ``log(h)`` near zero).
    """
    h_dists = ad.as_tensor(h_dists)
    w = np.asarray(weights, dtype=np.float64)
    if log_h is None:
        log_h = ad.log(ad.add(h_dists, TINY))
    cond = ad.neg(ad.sum(ad.mul(w[:, None], _entropy_terms(h_dists, log_h))))
    marginal = estimate_marginal(h_dists, w)
    marg_ent = ad.neg(ad.sum(_entropy_terms(marginal, ad.log(ad.add(marginal, TINY)))))
    return ad.sub(marg_ent, cond)


def kl_categorical(p_log, q_log):
    """Row-wise KL(p || q) from log-probabilities."""
    return ad.sum(ad.mul(ad.exp(p_log), ad.sub(p_log, q_log)), axis=-1)


class PriorNet:
    """Softmax network over O components on concatenated (state, action).

    Parameters
    ----------
    state_dim, action_dim, n_components : int
    rng : numpy.random.Generator
        Initialisation randomness.
    hidden : tuple of int
    sigma_reg : float
        Std of the Gaussian input perturbation in the KL regulariser.
    zeta : float
        Weight of the mutual-information term.
    lr : float
        Adam learning rate.
    """

    def __init__(self, state_dim, action_dim, n_components, rng, hidden=DEFAULT_HIDDEN,
                 sigma_reg=0.04, zeta=0.1, lr=3e-4):
        if n_components < 1:
            raise ValueError("n_components must be >= 1")
        self.n_components = n_components
        self.sigma_reg = sigma_reg
        self.zeta = zeta
        self.net = Mlp((state_dim + action_dim, *hidden, n_components), rng, out_scale=1e-2, name="prior")
        self.opt = AdamState(self.net.flat.size, lr=lr, name="prior")

    def probs(self, states, actions):
        x = np.concatenate([states, actions], axis=-1)
        logits = self.net.predict(x)
        logits -= logits.max(axis=-1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=-1, keepdims=True)

    def log_probs(self, x, tape=None):
        return ad.log_softmax(self.net(x, tape), axis=-1)

    def kl_regularizer(self, states, actions, noise, tape=None):
        """Mean KL(P(h | perturbed input) || P(h | clean input)).

        ``noise`` is a standard-normal draw with the shape of the
        concatenated input; it is scaled by ``sigma_reg`` here.
        """
        x = np.concatenate([states, actions], axis=-1)
        if self.sigma_reg == 0.0:
            return ad.as_tensor(0.0)
        clean = self.log_probs(x, tape)
        noisy = self.log_probs(x + self.sigma_reg * noise, tape)
        return ad.mean(kl_categorical(noisy, clean))

    def objective(self, states, actions, weights, noise, tape=None):
        """Returns (J, regulariser, MI) as tensors."""
        x = np.concatenate([states, actions], axis=-1)
        log_h = self.log_probs(x, tape)
        h = ad.exp(log_h)
        mi = mi_estimate(h, weights, log_h)
        reg = self.kl_regularizer(states, actions, noise, tape)
        return ad.sub(reg, ad.mul(self.zeta, mi)), reg, mi

    def update(self, states, actions, advantages, behavior_logprobs, rng):
        """One Adam step on J.  Returns (loss, MI estimate) as floats."""
        weights = normalized_importance_weights(advantages, behavior_logprobs)
        noise = rng.standard_normal((len(states), states.shape[-1] + actions.shape[-1]))
        tape = ad.Tape()
        loss, _, mi = self.objective(states, actions, weights, noise, tape)
        if not np.isfinite(loss.data):
            raise FloatingPointError(f"prior loss is non-finite ({loss.data})")
        tape.backward(loss)
        adam_step(self.opt, self.net.flat, tape.grad(self.net))
        return float(loss.data), float(mi.data)


def prior_update(prior, batch, critics, rng):
    """Advantage-weighted prior step on a recent-window batch.

    ``critics`` needs ``advantage(states, actions)``, e.g. min(Q1, Q2) - V
    from the current online networks.
    """
    if batch is None or len(batch) == 0:
        log.warning("prior_update: empty recent window, skipping")
        return None
    adv = critics.advantage(batch.states, batch.actions)
    return prior.update(batch.states, batch.actions, adv, batch.behavior_logprobs, rng)
