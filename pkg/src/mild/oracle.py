"""Brute-force verifiers on finite instances.

A :class:`DiscreteInstance` is a finite input space with known label
distributions, so every expectation below is an exact finite sum and every
infimum over score vectors is a minimum over an explicit grid. The checks
are numerical smoke tests of the consistency guarantees, not proofs: the grid
class is not complete and its minimizability gaps are taken to be zero.
"""

import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple, Tuple

import numpy as np
from scipy.optimize import minimize

from .core import (
    RewardScheme,
    conditional_expert_dist,
    not_selected,
    reformulation_constant,
    rewards_from_costs,
    select_expert,
)
from .exceptions import BudgetExceededError, InvalidInputError
from .losses import grad_mild, mild_surrogate, tilde_ell_all
from .train import rademacher_upper_bound, BoundInputs
from .validation import check_rhos

MAX_EXPERTS = 4
MAX_AXIS_POINTS = 21
DEFAULT_GRID = (-3.0, 3.0, 0.5)


@dataclass(frozen=True)
class DiscreteInstance:
    """Finite routing problem.

    ``costs[i, y, k]`` is the cost of expert ``k`` at point ``i`` when the
    label is ``y`` (0-based here; labels are 1-based only in files).
    """

    marginals: np.ndarray
    label_dist: np.ndarray
    costs: np.ndarray
    score_grid: Tuple[float, float, float] = DEFAULT_GRID

    def __post_init__(self):
        mu = np.asarray(self.marginals, dtype=float)
        q = np.asarray(self.label_dist, dtype=float)
        c = np.asarray(self.costs, dtype=float)
        if mu.ndim != 1 or q.ndim != 2 or c.ndim != 3:
            raise InvalidInputError("need marginals (n,), label_dist (n, c) and costs (n, c, p)")
        if q.shape[0] != mu.shape[0] or c.shape[:2] != q.shape:
            raise InvalidInputError("marginals, label_dist and costs disagree in shape")
        if np.any(mu < 0) or abs(mu.sum() - 1.0) > 1e-9:
            raise InvalidInputError("marginals must be a probability vector")
        if np.any(q < 0) or np.any(np.abs(q.sum(axis=1) - 1.0) > 1e-9):
            raise InvalidInputError("every label_dist row must be a probability vector")
        if not np.all(np.isfinite(c)) or np.any(c < 0) or np.any(c > 1):
            raise InvalidInputError("costs must lie in [0, 1]")
        lo, hi, step = (float(v) for v in self.score_grid)
        if not (hi > lo and step > 0):
            raise InvalidInputError("score_grid needs lo < hi and step > 0")
        object.__setattr__(self, "marginals", mu)
        object.__setattr__(self, "label_dist", q)
        object.__setattr__(self, "costs", c)
        object.__setattr__(self, "score_grid", (lo, hi, step))

    @property
    def n_points(self):
        return self.marginals.shape[0]

    @property
    def n_experts(self):
        return self.costs.shape[2]

    @property
    def n_labels(self):
        return self.costs.shape[1]

    def expected_costs(self):
        """``E[c_k | x_i]`` as an ``(n, p)`` array."""
        return np.einsum("ny,nyk->nk", self.label_dist, self.costs)

    def point(self, i):
        return DiscreteInstance(
            np.ones(1), self.label_dist[i : i + 1], self.costs[i : i + 1], self.score_grid
        )

    def expert_distributions(self, scheme=RewardScheme.LEMMA1):
        """Per-point ``p(k | x)`` and ``C(x)`` as arrays ``(n, p)`` and ``(n,)``."""
        probs = np.empty((self.n_points, self.n_experts))
        big_c = np.empty(self.n_points)
        for i in range(self.n_points):
            dist = conditional_expert_dist(rewards_from_costs(self.costs[i], scheme), self.label_dist[i])
            probs[i], big_c[i] = dist.probs, dist.big_c
        return probs, big_c


def random_instance(rng, n_points=3, n_experts=3, n_labels=3, score_grid=DEFAULT_GRID):
    """Random instance with Dirichlet marginals and label distributions."""
    mu = rng.dirichlet(np.ones(n_points))
    q = rng.dirichlet(np.ones(n_labels), size=n_points)
    costs = rng.random((n_points, n_labels, n_experts))
    return DiscreteInstance(mu, q, costs, score_grid)


class BayesRouting(NamedTuple):
    choices: np.ndarray
    deferral_loss: float
    ratios: np.ndarray


def bayes_router(instance):
    """Pointwise ``argmin_k E[c_k | x]`` (ties to the highest index)."""
    expected = instance.expected_costs()
    choices = select_expert(-expected)
    dl = float(instance.marginals @ expected[np.arange(instance.n_points), choices])
    ratios = np.bincount(choices, weights=instance.marginals, minlength=instance.n_experts)
    return BayesRouting(choices, dl, ratios)


def expected_deferral_loss(instance, scores):
    """Exact ``E[L_def]`` of the router given by per-point ``scores`` ``(n, p)``."""
    scores = _check_scores(instance, scores)
    expected = instance.expected_costs()
    chosen = select_expert(scores)
    return float(instance.marginals @ expected[np.arange(instance.n_points), chosen])


def _check_scores(instance, scores):
    scores = np.asarray(scores, dtype=float)
    if scores.shape != (instance.n_points, instance.n_experts):
        raise InvalidInputError(
            f"need one score row per point: expected {(instance.n_points, instance.n_experts)}, "
            f"got {scores.shape}"
        )
    return scores


def expectation_transfer_check(instance, scores, scheme=RewardScheme.LEMMA1):
    """Residual of ``E_D[L_def] = E_P[C(x) 1{f(x) != k}] + E[K]`` by exact summation."""
    scores = _check_scores(instance, scores)
    probs, big_c = instance.expert_distributions(scheme)
    target = expected_deferral_loss(instance, scores)
    transferred = float(instance.marginals @ (big_c * (probs * not_selected(scores)).sum(axis=1)))
    constant = float(
        instance.marginals
        @ (instance.label_dist * reformulation_constant(instance.costs, scheme)).sum(axis=1)
    )
    return abs(target - transferred - constant)


def score_grid_points(p, score_grid=DEFAULT_GRID):
    """All score vectors on the cube grid, refusing grids beyond the budget."""
    lo, hi, step = score_grid
    axis = np.arange(lo, hi + step / 2, step)
    if p > MAX_EXPERTS or axis.size > MAX_AXIS_POINTS:
        raise BudgetExceededError(axis.size**p, MAX_AXIS_POINTS**MAX_EXPERTS)
    return np.array(list(itertools.product(axis, repeat=p)))


class ConsistencyCheck(NamedTuple):
    lhs: np.ndarray
    rhs: np.ndarray
    holds: bool
    slack: float
    lipschitz_slack: float
    max_violation: float


def surrogate_infimum(probs, big_c, rhos):
    """Infimum over all score vectors of ``C sum_k p_k ell_k(f)`` (convex in ``f``)."""
    weights = big_c * np.asarray(probs, dtype=float)
    if not np.any(weights > 0):
        return 0.0
    res = minimize(
        lambda f: float(mild_surrogate(f, weights, rhos)),
        np.zeros(weights.shape[0]),
        jac=lambda f: grad_mild(f, weights, rhos),
        method="L-BFGS-B",
        options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 10_000},
    )
    return float(res.fun)


def _excesses(probs, big_c, rhos, grid, infimum="grid"):
    """Target and surrogate conditional excess risks at every grid vector."""
    chosen = select_expert(grid)
    target = big_c * (probs.max() - probs[chosen])
    surrogate = big_c * (tilde_ell_all(grid, rhos) @ probs)
    floor = surrogate.min()
    if infimum == "exact":
        floor = min(floor, surrogate_infimum(probs, big_c, rhos))
    elif infimum != "grid":
        raise InvalidInputError("infimum must be 'grid' or 'exact'")
    return target, np.maximum(surrogate - floor, 0.0), chosen


def consistency_bound_grid(probs, big_c, rhos, score_grid=DEFAULT_GRID, slack=None, infimum="grid"):
    """Check the pointwise bound for a given ``p(. | x)`` and ``C(x)``.

    ``lhs = C (max_k p_k - p_{f})`` and
    ``rhs = sqrt(2 max(1, C)) * sqrt(C sum_k p_k ell_k(f) - inf)``.
    For ``C <= 1`` this is the stated square-root bound; a larger mass
    scales the constant by ``sqrt(C)``. The infimum is the grid minimum by
    default (slack ``2 * step``) or the exact convex minimum.
    """
    probs = np.asarray(probs, dtype=float)
    p = probs.shape[0]
    rhos = check_rhos(rhos, p)
    if big_c < 0:
        raise InvalidInputError("C(x) must be non-negative")
    grid = score_grid_points(p, score_grid)
    lhs, excess, _ = _excesses(probs, big_c, rhos, grid, infimum)
    rhs = math.sqrt(2.0 * max(1.0, big_c)) * np.sqrt(excess)
    step = score_grid[2]
    slack = 2.0 * step if slack is None else float(slack)
    violation = float((lhs - rhs).max())
    return ConsistencyCheck(
        lhs, rhs, violation <= slack, slack, step * big_c * 2.0 / rhos.min(), violation
    )


def check_consistency_bound(instance, rhos, scheme=RewardScheme.LEMMA1, slack=None, infimum="grid"):
    """Pointwise consistency bound on a single-point instance, every grid vector."""
    if instance.n_points != 1:
        raise InvalidInputError("check_consistency_bound takes a single-point instance")
    probs, big_c = instance.expert_distributions(scheme)
    return consistency_bound_grid(probs[0], big_c[0], rhos, instance.score_grid, slack, infimum)


class ExcessBoundCheck(NamedTuple):
    holds: bool
    slack: float
    max_violation: float
    worst_choices: np.ndarray
    n_routers: int


def check_excess_error_bound(instance, rhos, scheme=RewardScheme.LEMMA1, slack=None, infimum="grid"):
    """Excess-error bound over every router that picks one grid vector per point.

    Infima decompose pointwise. For a router the left side only depends on
    which expert each point selects, so the worst router for each selection
    pattern uses, at every point, the grid vector with the smallest surrogate
    excess among those selecting that expert. Checking the ``p^n`` patterns
    this way covers all ``G^n`` grid routers.
    """
    p = instance.n_experts
    rhos = check_rhos(rhos, p)
    probs, big_c = instance.expert_distributions(scheme)
    grid = score_grid_points(p, instance.score_grid)
    gap = np.empty((instance.n_points, p))
    best_excess = np.full((instance.n_points, p), np.inf)
    for i in range(instance.n_points):
        target, excess, chosen = _excesses(probs[i], big_c[i], rhos, grid, infimum)
        for k in range(p):
            mask = chosen == k
            if mask.any():
                gap[i, k] = target[mask][0]
                best_excess[i, k] = excess[mask].min()
    factor = math.sqrt(2.0 * max(1.0, float(big_c.max())))
    mu = instance.marginals
    slack = 2.0 * instance.score_grid[2] if slack is None else float(slack)
    worst, worst_choice = -np.inf, None
    for pattern in itertools.product(range(p), repeat=instance.n_points):
        idx = (np.arange(instance.n_points), np.array(pattern))
        if not np.all(np.isfinite(best_excess[idx])):
            continue
        lhs = float(mu @ gap[idx])
        rhs = factor * math.sqrt(max(float(mu @ best_excess[idx]), 0.0))
        if lhs - rhs > worst:
            worst, worst_choice = lhs - rhs, np.array(pattern)
    return ExcessBoundCheck(
        worst <= slack, slack, worst, worst_choice, grid.shape[0] ** instance.n_points
    )


class RademacherEstimate(NamedTuple):
    estimate: float
    stderr: float
    bound: float


def mc_class_sensitive_rademacher(features_by_group, rhos, F=1.0, trials=200, seed=0):
    """Monte-Carlo class-sensitive Rademacher complexity of the linear L2 ball.

    Group ``j`` holds the feature rows of samples whose expert is ``j``. With
    block features ``Phi(x, k) = e_k (x) phi(x)`` the supremum over
    ``||W|| <= F`` has the closed form
    ``F * sqrt(sum_k ||sum_i eps_ik phi(x_i) / rho_j(i)||^2)``; the estimate is
    its mean over ``trials`` sign draws divided by ``m``.
    """
    if trials < 100:
        raise InvalidInputError("need at least 100 trials")
    if F < 0:
        raise InvalidInputError("F must be non-negative")
    groups = [np.atleast_2d(np.asarray(g, dtype=float)) for g in features_by_group]
    p = len(groups)
    rhos = check_rhos(rhos, p)
    Phi = np.vstack(groups)
    scale = np.concatenate([np.full(g.shape[0], 1.0 / rhos[j]) for j, g in enumerate(groups)])
    m = Phi.shape[0]
    if m == 0:
        raise InvalidInputError("need at least one sample")
    weighted = Phi * scale[:, None]
    rng = np.random.default_rng(seed)
    sups = np.empty(trials)
    for t in range(trials):
        eps = rng.choice([-1.0, 1.0], size=(m, p))
        sups[t] = F * np.linalg.norm(eps.T @ weighted) / m
    m_j = np.array([g.shape[0] for g in groups], dtype=float)
    norms = [np.linalg.norm(g, axis=1) for g in groups]
    X_j = np.array([n.max() if n.size else 1.0 for n in norms])
    bound = 0.0
    if F > 0:
        inputs = BoundInputs(m_j, np.maximum(X_j, 1e-300), F, m, p)
        bound = rademacher_upper_bound(inputs, rhos)
    return RademacherEstimate(float(sups.mean()), float(sups.std(ddof=1) / math.sqrt(trials)), bound)
