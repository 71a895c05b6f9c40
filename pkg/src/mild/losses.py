"""Surrogate and margin loss kernels with hand-derived gradients.

All kernels accept a score vector of shape ``(p,)`` or a batch ``(m, p)``.
Expert indices are 0-based.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import margin
from .exceptions import InvalidInputError
from .validation import check_rewards, check_rhos

# Exponents are clipped to this magnitude before exponentiation. Beyond it the
# log-sum-exp is linear in the largest term to far below double precision.
SATURATION = 700.0


class Aggregation(str, Enum):
    MAX = "max"
    SUM = "sum"


@dataclass(frozen=True)
class SurrogateSpec:
    """Comp-sum surrogate family member: ``tau=1`` logistic, ``tau=0`` exponential."""

    tau: float = 1.0
    aggregation: Aggregation = Aggregation.SUM

    def __post_init__(self):
        if not self.tau >= 0:
            raise InvalidInputError("tau must be non-negative")
        object.__setattr__(self, "aggregation", Aggregation(self.aggregation))

    @property
    def is_logistic(self):
        return self.tau == 1.0


MILD_SPEC = SurrogateSpec(1.0, Aggregation.SUM)


def rho_margin(u, rho):
    """Clamped ramp ``min(1, max(0, 1 - u / rho))``."""
    if not rho > 0:
        raise InvalidInputError("rho must be positive")
    return np.clip(1.0 - np.asarray(u, dtype=float) / rho, 0.0, 1.0)


def comp_sum_phi(u, tau):
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise InvalidInputError("comp-sum transform is defined for u >= 0")
    if tau < 0:
        raise InvalidInputError("tau must be non-negative")
    if tau == 1.0:
        return np.log1p(u)
    a = 1.0 - tau
    # expm1 form stays accurate as tau -> 1
    return np.expm1(a * np.log1p(u)) / a


def _pairwise_z(scores, rhos):
    """``z[..., k, k'] = (s[k'] - s[k]) / rho[k]``."""
    s = np.asarray(scores, dtype=float)
    return (s[..., None, :] - s[..., :, None]) / rhos[:, None]


def _logsumexp(z, axis=-1):
    z = np.clip(z, -SATURATION * 1e3, SATURATION * 1e3)
    zmax = z.max(axis=axis, keepdims=True)
    out = zmax + np.log(np.exp(np.clip(z - zmax, -SATURATION, 0.0)).sum(axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def _softplus(z):
    return np.logaddexp(0.0, z)


def tilde_ell_all(scores, rhos):
    """``log sum_{k'} exp((f_k' - f_k) / rho_k)`` for every target ``k``.

    Returns an array shaped like ``scores``.
    """
    s = np.asarray(scores, dtype=float)
    rhos = check_rhos(rhos, s.shape[-1])
    return np.maximum(_logsumexp(_pairwise_z(s, rhos)), 0.0)


def surrogate_tilde_ell(scores, k, rhos):
    return tilde_ell_all(scores, rhos)[..., k]


def comp_sum_all(scores, rhos, spec=MILD_SPEC):
    """Per-target comp-sum surrogate values, shape like ``scores``.

    Sum aggregation with ``tau=1`` is the log-sum-exp of ``tilde_ell_all``;
    with ``tau != 1`` it is ``sum_{k' != k} Phi^tau(exp(z))``. Max aggregation
    keeps only the largest competitor.
    """
    s = np.asarray(scores, dtype=float)
    p = s.shape[-1]
    rhos = check_rhos(rhos, p)
    z = _pairwise_z(s, rhos)
    off = ~np.eye(p, dtype=bool)
    if spec.aggregation is Aggregation.MAX:
        zmax = np.where(off, z, -np.inf).max(axis=-1)
        if spec.tau == 1.0:
            return _softplus(zmax)
        return np.expm1((1.0 - spec.tau) * _softplus(np.minimum(zmax, SATURATION))) / (1.0 - spec.tau)
    if spec.tau == 1.0:
        return tilde_ell_all(s, rhos)
    a = 1.0 - spec.tau
    terms = np.expm1(a * _softplus(np.minimum(z, SATURATION))) / a
    return np.where(off, terms, 0.0).sum(axis=-1)


def psi_scale(tau):
    """``Phi^tau(1)``: dividing by it makes the surrogate equal 1 at zero margin."""
    return float(comp_sum_phi(1.0, tau))


def cs_margin_loss(scores, k, cost_row, rhos):
    """``max_{k'} c(x, k, k') * Phi_{rho_k}(f_k - f_k')`` for a single input."""
    s = np.asarray(scores, dtype=float)
    c = np.asarray(cost_row, dtype=float)
    rhos = check_rhos(rhos, s.shape[-1])
    if c.shape != s.shape:
        raise InvalidInputError("cost row must have one entry per expert")
    if c[k] != 0.0:
        raise InvalidInputError("cost of predicting the true expert must be zero")
    if np.any(c < 0) or np.any(c > 1):
        raise InvalidInputError("costs must lie in [0, 1]")
    return float(np.max(c * rho_margin(s[k] - s, rhos[k])))


def surrogate_upper_chain(scores, k, big_c, rhos):
    """Margin loss and its max-form and sum-form logistic upper bounds.

    For a class-independent cost ``big_c`` returns ``(l_margin, l_max, l_sum)``
    with

    * ``l_margin = big_c * Phi_{rho_k}(margin_k)``
    * ``l_max = big_c * log2(1 + max_{k' != k} exp((f_k' - f_k) / rho_k))``
    * ``l_sum = big_c * log2(sum_{k'} exp((f_k' - f_k) / rho_k))``

    The base-2 logarithm is the logistic loss scaled to equal 1 at zero margin,
    which is what makes it dominate the ramp.
    """
    s = np.asarray(scores, dtype=float)
    rhos = check_rhos(rhos, s.shape[-1])
    if not 0.0 <= big_c <= 1.0:
        raise InvalidInputError("big_c must lie in [0, 1]")
    mgn = margin(s, k)
    l_margin = big_c * float(rho_margin(mgn, rhos[k]))
    l_max = big_c * float(_softplus(-mgn / rhos[k])) / np.log(2.0)
    l_sum = big_c * float(surrogate_tilde_ell(s, k, rhos)) / np.log(2.0)
    return l_margin, l_max, l_sum


def cs_surrogate(scores, k, cost_row, rhos, tau=1.0, aggregation=Aggregation.SUM, normalized=True):
    """Upper bounds on ``cs_margin_loss`` for non-constant costs ``c(x, k, k')``.

    ``tau=1`` gives ``max_{k'} c log(1 + e^z)`` (max) or
    ``log sum_{k' != k} (1 + e^z)^c`` (sum); ``tau != 1`` gives
    ``max`` / ``sum`` of ``c * Phi^tau(e^z)``. With ``normalized`` the
    logistic base is calibrated so that the bounds dominate the ramp loss.
    """
    s = np.asarray(scores, dtype=float)
    c = np.asarray(cost_row, dtype=float)
    rhos = check_rhos(rhos, s.shape[-1])
    aggregation = Aggregation(aggregation)
    z = np.delete((s - s[k]) / rhos[k], k)
    ck = np.delete(c, k)
    scale = psi_scale(tau) if normalized else 1.0
    if tau == 1.0:
        sp = _softplus(z)
        if aggregation is Aggregation.MAX:
            return float(np.max(ck * sp)) / scale
        return float(np.log(np.sum(np.exp(ck * sp)))) / scale
    a = 1.0 - tau
    phi = np.expm1(a * _softplus(np.minimum(z, SATURATION))) / a / scale
    terms = ck * phi
    return float(terms.max() if aggregation is Aggregation.MAX else terms.sum())


def mild_surrogate(scores, rewards, rhos):
    """Reward-weighted sum of ``tilde_ell`` over target experts."""
    s = np.asarray(scores, dtype=float)
    r = check_rewards(rewards, s.shape[-1])
    return (r * tilde_ell_all(s, rhos)).sum(axis=-1)


def tdef_surrogate(scores, rewards, p=None):
    s = np.asarray(scores, dtype=float)
    p = s.shape[-1] if p is None else p
    return mild_surrogate(s, rewards, np.ones(p))


def grad_mild(scores, rewards, rhos):
    """Gradient of ``mild_surrogate`` with respect to the scores.

    For target ``k`` with ``w = softmax((f - f_k) / rho_k)`` the contribution is
    ``rewards_k / rho_k * (w - e_k)``.
    """
    s = np.asarray(scores, dtype=float)
    p = s.shape[-1]
    rhos = check_rhos(rhos, p)
    r = check_rewards(rewards, p)
    z = _pairwise_z(s, rhos)
    z = z - z.max(axis=-1, keepdims=True)
    w = np.exp(z)
    w /= w.sum(axis=-1, keepdims=True)
    coef = r / rhos
    g = np.einsum("...k,...kj->...j", coef, w)
    return g - coef


def mild_value_and_grad(scores, rewards, rhos):
    """``mild_surrogate`` and ``grad_mild`` from one pass over the pairwise terms."""
    s = np.asarray(scores, dtype=float)
    p = s.shape[-1]
    rhos = check_rhos(rhos, p)
    r = check_rewards(rewards, p)
    z = _pairwise_z(s, rhos)
    lse = _logsumexp(z)
    w = np.exp(np.clip(z - lse[..., None], -SATURATION, 0.0))
    w /= w.sum(axis=-1, keepdims=True)
    coef = r / rhos
    value = (r * np.maximum(lse, 0.0)).sum(axis=-1)
    return value, np.einsum("...k,...kj->...j", coef, w) - coef


def grad_comp_sum(scores, rewards, rhos, tau):
    """Gradient of ``sum_k rewards_k * comp_sum_all(...)[k]`` for sum aggregation."""
    if tau == 1.0:
        return grad_mild(scores, rewards, rhos)
    s = np.asarray(scores, dtype=float)
    p = s.shape[-1]
    rhos = check_rhos(rhos, p)
    r = check_rewards(rewards, p)
    z = np.minimum(_pairwise_z(s, rhos), SATURATION)
    # d/dz Phi^tau(e^z) = e^z (1 + e^z)^(-tau)
    dz = np.exp(z - tau * _softplus(z))
    dz = np.where(~np.eye(p, dtype=bool), dz, 0.0) * (r / rhos)[..., :, None]
    return dz.sum(axis=-2) - dz.sum(axis=-1)
