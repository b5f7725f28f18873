"""Diagonal Gaussians, tanh squashing, categorical draws and mixture densities.

Functions accept :class:`~awmp.autodiff.Tensor` or plain arrays and return
tensors, so they sit on the gradient path when the inputs do.  The last axis
is always the action dimension.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
LOG2 = math.log(2.0)
# tanh rounds to exactly +-1 for |u| > 19; emitted actions are kept inside
ACTION_EDGE = 1.0 - 1e-12


@dataclass
class GaussianHead:
    """Mean and log standard deviation of a diagonal Gaussian."""

    mean: object
    log_std: object


@dataclass
class SquashedSample:
    u: object
    action: object
    log_prob: object
    eps: np.ndarray


def split_head(out, n_components, action_dim):
    """Split raw policy-network output into per-component Gaussian heads.

    The output columns are laid out as ``[means (O*A), log_stds (O*A)]``; the
    result has shapes ``(batch, O, A)``.  Log-std is clamped to
    ``[LOG_STD_MIN, LOG_STD_MAX]``.
    """
    out = ad.as_tensor(out)
    batch = out.shape[0]
    k = n_components * action_dim
    mean = ad.reshape(out[:, :k], (batch, n_components, action_dim))
    log_std = ad.reshape(out[:, k:], (batch, n_components, action_dim))
    return GaussianHead(mean, ad.clip(log_std, LOG_STD_MIN, LOG_STD_MAX))


def log1m_tanh2(u):
    """log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)), stable for large |u|."""
    return ad.mul(2.0, ad.sub(ad.sub(LOG2, u), ad.softplus(ad.mul(-2.0, u))))


def gaussian_logprob(head, u):
    """Diagonal Gaussian log-density of ``u``, summed over the action axis."""
    z = ad.div(ad.sub(u, head.mean), ad.exp(head.log_std))
    per_dim = ad.sub(ad.sub(ad.mul(-0.5, ad.square(z)), head.log_std), HALF_LOG_2PI)
    return ad.sum(per_dim, axis=-1)


def squashed_logprob(head, u):
    """Log-density of ``a = tanh(u)`` when ``u ~ N(mean, std^2)``."""
    return ad.sub(gaussian_logprob(head, u), ad.sum(log1m_tanh2(u), axis=-1))


def sample_reparam(head, eps):
    """Reparameterised squashed sample ``a = tanh(mean + std * eps)``."""
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape[-1] != ad.as_tensor(head.mean).shape[-1]:
        raise ad.ShapeError(f"sample_reparam: eps width {eps.shape[-1]} != action dim")
    u = ad.add(head.mean, ad.mul(ad.exp(head.log_std), eps))
    a = ad.tanh(u)
    return SquashedSample(u, a, squashed_logprob(head, u), eps)


def mixture_logprob(head, log_weights, a=None, u=None):
    """log sum_g w_g pi_g(a) for a batch of O-component squashed Gaussians.

    Parameters
    ----------
    head : GaussianHead
        Component parameters of shape ``(batch, O, A)``.
    log_weights : array or Tensor
        Log mixture weights, shape ``(batch, O)``.
    a : array or Tensor, optional
        Actions of shape ``(batch, A)``, strictly inside the unit box, or
        ``(batch, K, A)`` to score K actions per row.
    u : array or Tensor, optional
        Pre-squash value ``atanh(a)`` if already known; avoids the
        round-trip through ``atanh``.

    Returns
    -------
    Tensor of shape ``(batch,)`` or ``(batch, K)``.
    """
    if u is None:
        a = ad.as_tensor(a)
        if np.any(np.abs(a.data) >= 1.0):
            raise ValueError("mixture_logprob: action outside the open box (-1, 1)")
        u = ad.atanh(a)
    u = ad.as_tensor(u)
    if u.ndim == 2:
        u_b = ad.reshape(u, (u.shape[0], 1, u.shape[-1]))
        comp = squashed_logprob(head, u_b)
        return ad.logsumexp(ad.add(log_weights, comp), axis=-1)
    B, K, A = u.shape
    mean, log_std = ad.as_tensor(head.mean), ad.as_tensor(head.log_std)
    O = mean.shape[1]
    wide = GaussianHead(ad.reshape(mean, (B, 1, O, A)), ad.reshape(log_std, (B, 1, O, A)))
    comp = squashed_logprob(wide, ad.reshape(u, (B, K, 1, A)))  # (B, K, O)
    lw = ad.reshape(ad.as_tensor(log_weights), (B, 1, O))
    return ad.logsumexp(ad.add(lw, comp), axis=-1)


def sample_categorical(probs, rng):
    """Draw indices from the rows of ``probs`` (1-D or 2-D) by inverse CDF."""
    probs = np.asarray(probs, dtype=np.float64)
    single = probs.ndim == 1
    p = probs[None, :] if single else probs
    cdf = np.cumsum(p, axis=-1)
    r = rng.random(p.shape[0])[:, None] * cdf[:, -1:]
    idx = (cdf <= r).sum(axis=-1)
    idx = np.minimum(idx, p.shape[-1] - 1)
    # a zero-probability trailing bucket can only be hit through rounding
    return int(idx[0]) if single else idx


def categorical_entropy(probs, axis=-1):
    p = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -terms.sum(axis=axis)
