"""Regularized empirical objectives, gradient descent, and margin allocation."""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Union

import numpy as np

from .core import (
    CostTensor,
    Dataset,
    MarginVector,
    RewardScheme,
    Router,
    evaluate_choices,
    lowest_cost_expert,
    rewards_from_costs,
    select_expert,
)
from .exceptions import DivergenceError, InvalidInputError
from .features import make_feature_map
from .losses import (
    MILD_SPEC,
    Aggregation,
    SurrogateSpec,
    comp_sum_all,
    grad_comp_sum,
    mild_value_and_grad,
)
from .validation import check_rewards, check_rhos

logger = logging.getLogger(__name__)

MILD = "mild"
TDEF = "tdef"
METHODS = (MILD, TDEF)


@dataclass(frozen=True)
class Fixed:
    rhos: MarginVector


@dataclass(frozen=True)
class AutoFormula:
    rho_bar: float = 1.0


@dataclass(frozen=True)
class AutoWithValidation:
    rho_bar: float = 1.0
    neighborhood_halfwidth: float = 5.0
    step: float = 1.0


RhoMode = Union[Fixed, AutoFormula, AutoWithValidation]


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 1e-3
    learning_rate: Union[float, str] = "auto"
    epochs: int = 200
    batch_size: int = 0  # 0 or >= n means full batch
    seed: int = 0
    rho_mode: RhoMode = field(default_factory=AutoFormula)
    feature_map: str = "identity"
    bandwidth: float = 1.0
    output_dim: int = 200
    holdout: float = 0.2

    def __post_init__(self):
        lr = self.learning_rate
        if self.lam < 0 or (lr != "auto" and not (isinstance(lr, (int, float)) and lr > 0)):
            raise InvalidInputError("need lam >= 0 and learning_rate > 0 or 'auto'")
        if self.epochs < 1 or self.batch_size < 0:
            raise InvalidInputError("epochs must be positive and batch_size non-negative")
        if not 0.0 <= self.holdout < 1.0:
            raise InvalidInputError("holdout must lie in [0, 1)")
        mode = self.rho_mode
        if isinstance(mode, (AutoFormula, AutoWithValidation)) and not mode.rho_bar > 0:
            raise InvalidInputError("rho_bar must be positive")


@dataclass(frozen=True)
class BoundInputs:
    m_j: np.ndarray
    X_j: np.ndarray
    F: float
    m: int
    p: int
    delta: float = 0.05

    def __post_init__(self):
        m_j = np.asarray(self.m_j, dtype=float)
        X_j = np.asarray(self.X_j, dtype=float)
        if m_j.shape != (self.p,) or X_j.shape != (self.p,):
            raise InvalidInputError("m_j and X_j need one entry per expert")
        if abs(m_j.sum() - self.m) > 1e-9 or np.any(m_j < 0):
            raise InvalidInputError("group counts must be non-negative and sum to m")
        if np.any(X_j <= 0) or self.F <= 0 or not 0 < self.delta < 1:
            raise InvalidInputError("need X_j > 0, F > 0 and delta in (0, 1)")
        object.__setattr__(self, "m_j", m_j)
        object.__setattr__(self, "X_j", X_j)


def optimal_rho(m_j, X_j, rho_bar=1.0):
    """Margin allocation minimizing the complexity term at fixed total ``rho_bar``.

    ``rho_j = rho_bar * (m_j X_j^2)^(1/3) / sum_j' (m_j' X_j'^2)^(1/3)``.
    Empty groups get ``1e-3 * rho_bar / p`` and the rest share what remains.
    """
    m_j = np.asarray(m_j, dtype=float)
    X_j = np.asarray(X_j, dtype=float)
    if rho_bar <= 0:
        raise InvalidInputError("rho_bar must be positive")
    if m_j.shape != X_j.shape or np.any(m_j < 0) or np.any(X_j <= 0):
        raise InvalidInputError("need matching m_j >= 0 and X_j > 0")
    if not np.any(m_j > 0):
        raise InvalidInputError("at least one group must be non-empty")
    p = m_j.shape[0]
    weight = np.cbrt(m_j * X_j**2)
    empty = m_j == 0
    floor = 1e-3 * rho_bar / p
    budget = rho_bar - floor * empty.sum()
    rho = np.where(empty, floor, budget * weight / weight.sum())
    return MarginVector(rho)


def bound_second_term(inputs, rhos):
    """``4 sqrt(2) p F / m * sqrt(sum_j m_j X_j^2 / rho_j^2)``."""
    rho = check_rhos(rhos.rho if isinstance(rhos, MarginVector) else rhos, inputs.p)
    s = np.sum(inputs.m_j * inputs.X_j**2 / rho**2)
    return 4.0 * math.sqrt(2.0) * inputs.p * inputs.F / inputs.m * math.sqrt(s)


def rademacher_upper_bound(inputs, rhos):
    """Analytic bound ``sqrt(p) F / m * sqrt(sum_j m_j X_j^2 / rho_j^2)``."""
    rho = check_rhos(rhos.rho if isinstance(rhos, MarginVector) else rhos, inputs.p)
    s = np.sum(inputs.m_j * inputs.X_j**2 / rho**2)
    return math.sqrt(inputs.p) * inputs.F / inputs.m * math.sqrt(s)


def confidence_term(inputs):
    return 3.0 * math.sqrt(math.log(2.0 / inputs.delta) / (2.0 * inputs.m))


def margin_bound(empirical_margin, inputs, rhos):
    """Right-hand side of the explicit margin guarantee."""
    return empirical_margin + bound_second_term(inputs, rhos) + confidence_term(inputs)


def group_statistics(Phi, costs):
    """Group counts and per-group max feature norms.

    A sample belongs to the group of its lowest-cost expert. Empty groups
    report the overall max norm so the bound stays finite.
    """
    values = costs.values if isinstance(costs, CostTensor) else np.asarray(costs)
    p = values.shape[1]
    groups = lowest_cost_expert(values)
    m_j = np.bincount(groups, minlength=p).astype(float)
    norms = np.linalg.norm(Phi, axis=1)
    overall = float(norms.max()) if norms.size else 1.0
    X_j = np.array(
        [norms[groups == j].max() if m_j[j] > 0 else overall for j in range(p)]
    )
    return m_j, np.maximum(X_j, 1e-12)


def bound_inputs_from_data(Phi, costs, F=1.0, delta=0.05):
    m_j, X_j = group_statistics(Phi, costs)
    return BoundInputs(m_j, X_j, F, int(m_j.sum()), m_j.shape[0], delta)


def surrogate_values(scores, rewards, rhos, spec=MILD_SPEC):
    """Per-sample reward-weighted surrogate ``sum_k rewards_k psi_k``."""
    return (rewards * comp_sum_all(scores, rhos, spec)).sum(axis=-1)


def empirical_margin_loss(router, dataset, costs, rewards, rhos, spec=MILD_SPEC):
    """Mean reward-weighted surrogate over the dataset (no regularizer)."""
    r = rewards.values if hasattr(rewards, "values") else np.asarray(rewards, dtype=float)
    rho = rhos.rho if isinstance(rhos, MarginVector) else rhos
    if r.shape != costs.values.shape or r.shape[0] != len(dataset):
        raise InvalidInputError("dataset, costs and rewards disagree in shape")
    scores = router.scores(dataset.features)
    if scores.shape != r.shape:
        raise InvalidInputError("router heads do not match the expert count")
    return float(surrogate_values(scores, check_rewards(r), rho, spec).mean())


def objective(W, Phi, rewards, rhos, lam, spec=MILD_SPEC):
    scores = Phi @ W.T
    return float(surrogate_values(scores, rewards, rhos, spec).mean() + lam * np.sum(W * W))


def objective_and_grad(W, Phi, rewards, rhos, lam, spec=MILD_SPEC):
    if spec.aggregation is not Aggregation.SUM:
        raise InvalidInputError("training supports sum aggregation only")
    if not spec.is_logistic:
        return objective(W, Phi, rewards, rhos, lam, spec), objective_grad(W, Phi, rewards, rhos, lam, spec)
    values, G = mild_value_and_grad(Phi @ W.T, rewards, rhos)
    obj = float(values.mean() + lam * np.sum(W * W))
    return obj, G.T @ Phi / Phi.shape[0] + 2.0 * lam * W


def objective_grad(W, Phi, rewards, rhos, lam, spec=MILD_SPEC):
    if spec.aggregation is not Aggregation.SUM:
        raise InvalidInputError("training supports sum aggregation only")
    scores = Phi @ W.T
    G = grad_comp_sum(scores, rewards, rhos, spec.tau)
    return G.T @ Phi / Phi.shape[0] + 2.0 * lam * W


@dataclass
class TraceRow:
    epoch: int
    objective: float
    val_dl: float
    ratios: np.ndarray


@dataclass
class TrainResult:
    router: Router
    rhos: MarginVector
    trace: List[TraceRow]
    train_idx: np.ndarray
    val_idx: np.ndarray

    @property
    def final_objective(self):
        return self.trace[-1].objective


def split_indices(m, holdout, seed):
    """Seeded shuffle; the last ``holdout`` fraction is the held-out split."""
    perm = np.random.default_rng(seed).permutation(m)
    n_val = int(round(holdout * m))
    return perm[: m - n_val], perm[m - n_val :]


def smoothness_bound(Phi, rewards, rhos, lam, tau=1.0):
    """Upper bound on the curvature of the regularized objective in the weights.

    Sample ``i`` has a score Hessian of norm at most
    ``a_i = max(1, tau) * sum_k rewards_ik / (2 rho_k^2)``, so the weight
    Hessian is bounded by the top eigenvalue of ``sum_i a_i phi_i phi_i^T / n``
    plus the ridge term.
    """
    n = Phi.shape[0]
    if n == 0:
        return 2.0 * lam
    a = (rewards / (2.0 * rhos**2)).sum(axis=1) * max(1.0, tau)
    top = np.linalg.eigvalsh((Phi * a[:, None]).T @ Phi / n)[-1]
    return float(top + 2.0 * lam)


def step_size(config, Phi, rewards, rhos, spec):
    if config.learning_rate != "auto":
        return float(config.learning_rate)
    return 1.0 / max(smoothness_bound(Phi, rewards, rhos, config.lam, spec.tau), 1e-12)


def _fit_weights(Phi, rewards, rhos, config, spec, rng, monitor=None):
    n, D = Phi.shape
    p = rewards.shape[1]
    W = np.zeros((p, D))
    lr = step_size(config, Phi, rewards, rhos, spec)
    batch = n if config.batch_size in (0,) or config.batch_size >= n else config.batch_size
    trace = []
    if batch == n:
        # the gradient at the new weights comes with the recorded objective
        _, g = objective_and_grad(W, Phi, rewards, rhos, config.lam, spec)
    for epoch in range(1, config.epochs + 1):
        if batch == n:
            W = W - lr * g
            obj, g = objective_and_grad(W, Phi, rewards, rhos, config.lam, spec)
        else:
            order = rng.permutation(n)
            for start in range(0, n, batch):
                idx = order[start : start + batch]
                g = objective_grad(W, Phi[idx], rewards[idx], rhos, config.lam, spec)
                W = W - lr * g
            obj = objective(W, Phi, rewards, rhos, config.lam, spec)
        if not np.isfinite(obj) or not np.all(np.isfinite(W)):
            raise DivergenceError(epoch, obj)
        if monitor is not None:
            trace.append(monitor(epoch, obj, W))
    return W, trace


def resolve_rhos(mode, Phi, costs, method, p):
    if method == TDEF:
        return MarginVector.uniform(p)
    if isinstance(mode, Fixed):
        return MarginVector(check_rhos(mode.rhos.rho, p))
    m_j, X_j = group_statistics(Phi, costs)
    return optimal_rho(m_j, X_j, mode.rho_bar)


def train(
    dataset,
    costs,
    scheme=RewardScheme.LEMMA1,
    config=TrainConfig(),
    method=MILD,
    spec=MILD_SPEC,
):
    """Fit a router by mini-batch gradient descent on the regularized surrogate.

    TDEF is the same objective with unit margins and Lemma 1 rewards.
    ``AutoWithValidation`` runs :func:`select_rho` first.
    """
    if method not in METHODS:
        raise InvalidInputError(f"unknown method {method!r}")
    m = len(dataset)
    if m == 0:
        raise InvalidInputError("cannot train on an empty dataset")
    if costs.values.shape[0] != m:
        raise InvalidInputError("costs and dataset have different lengths")
    if method == TDEF:
        scheme, spec = RewardScheme.LEMMA1, MILD_SPEC
    p = costs.n_experts
    train_idx, val_idx = split_indices(m, config.holdout, config.seed)

    fmap = make_feature_map(config.feature_map, config.bandwidth, config.output_dim, config.seed)
    fmap.fit(dataset.features[train_idx])
    Phi = fmap.transform(dataset.features[train_idx])
    rewards = rewards_from_costs(costs.values[train_idx], scheme)

    if method == MILD and isinstance(config.rho_mode, AutoWithValidation):
        rhos = select_rho(dataset, costs, scheme, config, config.holdout, spec)
    else:
        rhos = resolve_rhos(config.rho_mode, Phi, costs.values[train_idx], method, p)

    Phi_val = fmap.transform(dataset.features[val_idx]) if len(val_idx) else None
    val_costs = costs.values[val_idx]

    def monitor(epoch, obj, W):
        if Phi_val is None:
            return TraceRow(epoch, obj, float("nan"), np.full(p, np.nan))
        rep = evaluate_choices(select_expert(Phi_val @ W.T), val_costs)
        return TraceRow(epoch, obj, rep.deferral_loss, rep.ratios)

    rng = np.random.default_rng([config.seed, 1])
    W, trace = _fit_weights(Phi, rewards, rhos.rho, config, spec, rng, monitor)
    logger.debug("%s trained: objective %.6g, rho %s", method, trace[-1].objective, rhos.rho)
    return TrainResult(Router(W, fmap), rhos, trace, train_idx, val_idx)


def rho_candidates(center, mode):
    """Margin vectors ``center + step * t`` on the neighborhood grid, nearest first.

    The same offset is added to every coordinate; vectors with a non-positive
    entry are dropped. Large offsets approach a uniform allocation.
    """
    center = np.asarray(center.rho if isinstance(center, MarginVector) else center, dtype=float)
    h, step = mode.neighborhood_halfwidth, mode.step
    n = int(math.floor(h / step + 1e-9))
    offsets = sorted(range(-n, n + 1), key=lambda t: (abs(t), t))
    return [MarginVector(center + t * step) for t in offsets if np.all(center + t * step > 0)]


def select_rho(dataset, costs, scheme, config, validation_split=0.2, spec=MILD_SPEC):
    """Validation search over margin vectors around the formula allocation.

    Candidates shift every coordinate of the formula allocation by the same
    grid offset (see :func:`rho_candidates`); the all-ones vector is tried
    last. The first candidate with the lowest validation DL wins, so ties go
    to the formula allocation.
    """
    mode = config.rho_mode
    if not isinstance(mode, AutoWithValidation):
        raise InvalidInputError("select_rho needs an AutoWithValidation rho mode")
    m = len(dataset)
    train_idx, val_idx = split_indices(m, validation_split, config.seed)
    if len(val_idx) < 10:
        raise InvalidInputError(f"validation split has {len(val_idx)} samples, need >= 10")
    p = costs.n_experts
    fmap = make_feature_map(config.feature_map, config.bandwidth, config.output_dim, config.seed)
    fmap.fit(dataset.features[train_idx])
    Phi = fmap.transform(dataset.features[train_idx])
    Phi_val = fmap.transform(dataset.features[val_idx])
    rewards = rewards_from_costs(costs.values[train_idx], scheme)
    m_j, X_j = group_statistics(Phi, costs.values[train_idx])

    candidates = rho_candidates(optimal_rho(m_j, X_j, mode.rho_bar), mode)
    candidates.append(MarginVector.uniform(p))
    fit_config = TrainConfig(
        config.lam, config.learning_rate, config.epochs, config.batch_size, config.seed
    )
    best, best_dl = None, np.inf
    for cand in candidates:
        rng = np.random.default_rng([config.seed, 1])
        W, _ = _fit_weights(Phi, rewards, cand.rho, fit_config, spec, rng)
        dl = evaluate_choices(select_expert(Phi_val @ W.T), costs.values[val_idx]).deferral_loss
        logger.debug("rho %s -> validation DL %.6g", cand.rho, dl)
        if dl < best_dl - 1e-12:
            best, best_dl = cand, dl
    return best


def validation_dl(dataset, costs, scheme, config, rhos, validation_split=0.2, spec=MILD_SPEC):
    """Validation DL of a fixed margin vector under the :func:`select_rho` split."""
    train_idx, val_idx = split_indices(len(dataset), validation_split, config.seed)
    fmap = make_feature_map(config.feature_map, config.bandwidth, config.output_dim, config.seed)
    fmap.fit(dataset.features[train_idx])
    Phi = fmap.transform(dataset.features[train_idx])
    rewards = rewards_from_costs(costs.values[train_idx], scheme)
    rng = np.random.default_rng([config.seed, 1])
    W, _ = _fit_weights(Phi, rewards, check_rhos(rhos.rho, costs.n_experts), config, spec, rng)
    Phi_val = fmap.transform(dataset.features[val_idx])
    return evaluate_choices(select_expert(Phi_val @ W.T), costs.values[val_idx]).deferral_loss


def trace_to_rows(trace):
    rows = []
    for row in trace:
        rows.append([row.epoch, row.objective, row.val_dl, *row.ratios])
    return rows
