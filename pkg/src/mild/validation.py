"""Input validation helpers shared by the estimators and kernels."""

import numpy as np

from .exceptions import InvalidInputError


def check_matrix(a, name, ndim=2, dtype=float):
    a = np.asarray(a, dtype=dtype)
    if a.ndim != ndim:
        raise InvalidInputError(f"{name} must be {ndim}-D, got shape {a.shape}")
    if dtype is float and not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} contains NaN or Inf")
    return a


def check_costs(costs, p=None, name="costs"):
    """Validate a per-sample, per-expert cost array with entries in [0, 1]."""
    costs = np.asarray(costs, dtype=float)
    if costs.ndim not in (1, 2):
        raise InvalidInputError(f"{name} must be 1-D or 2-D, got shape {costs.shape}")
    if not np.all(np.isfinite(costs)):
        raise InvalidInputError(f"{name} contains NaN or Inf")
    if np.any(costs < 0) or np.any(costs > 1):
        raise InvalidInputError(f"{name} entries must lie in [0, 1]")
    if p is not None and costs.shape[-1] != p:
        raise InvalidInputError(
            f"{name} has {costs.shape[-1]} experts, expected {p}"
        )
    return costs


def check_rewards(rewards, p=None):
    rewards = np.asarray(rewards, dtype=float)
    if not np.all(np.isfinite(rewards)) or np.any(rewards < 0):
        raise InvalidInputError("rewards must be finite and non-negative")
    if p is not None and rewards.shape[-1] != p:
        raise InvalidInputError(f"rewards have {rewards.shape[-1]} experts, expected {p}")
    return rewards


def check_rhos(rhos, p=None):
    rhos = np.atleast_1d(np.asarray(rhos, dtype=float))
    if rhos.ndim != 1 or not np.all(np.isfinite(rhos)) or np.any(rhos <= 0):
        raise InvalidInputError("margin parameters must be finite and strictly positive")
    if p is not None and rhos.shape[0] != p:
        raise InvalidInputError(f"got {rhos.shape[0]} margin parameters for {p} experts")
    return rhos


def check_probability_vector(v, name="distribution", atol=1e-9):
    v = np.asarray(v, dtype=float)
    if np.any(v < 0) or not np.all(np.isfinite(v)):
        raise InvalidInputError(f"{name} must be non-negative and finite")
    if abs(v.sum(axis=-1) - 1.0).max() > atol:
        raise InvalidInputError(f"{name} must sum to 1 (within {atol})")
    return v
