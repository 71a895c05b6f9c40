"""Domain types and the target deferral loss.

Experts are indexed from 0 internally; anything written to a report is
1-based. Routing ties are broken toward the highest expert index.
"""

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Optional

import numpy as np

from .exceptions import InvalidInputError
from .validation import check_costs, check_matrix, check_probability_vector, check_rhos


class CostType(str, Enum):
    ERROR_ONLY = "error_only"
    ERROR_PLUS_COST = "error_plus_cost"


class RewardScheme(str, Enum):
    LEMMA1 = "lemma1"  # sum of the other experts' costs
    LEMMA2 = "lemma2"  # one minus own cost


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    conditional_label_dist: Optional[np.ndarray] = None

    def __post_init__(self):
        X = check_matrix(self.features, "features")
        y = np.asarray(self.labels, dtype=int)
        if y.shape != (X.shape[0],):
            raise InvalidInputError("labels must have one entry per feature row")
        if y.size and (y.min() < 1 or y.max() > self.n_classes):
            raise InvalidInputError(f"labels must lie in [1, {self.n_classes}]")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        if self.conditional_label_dist is not None:
            dist = check_probability_vector(
                self.conditional_label_dist, "conditional_label_dist"
            )
            if dist.shape != (X.shape[0], self.n_classes):
                raise InvalidInputError("conditional_label_dist must be (m, n_classes)")
            object.__setattr__(self, "conditional_label_dist", dist)

    def __len__(self):
        return self.features.shape[0]

    def subset(self, idx):
        dist = self.conditional_label_dist
        return Dataset(
            self.features[idx],
            self.labels[idx],
            self.n_classes,
            None if dist is None else dist[idx],
        )


@dataclass(frozen=True)
class ExpertPanel:
    """Fixed first-stage experts: their label predictions and inference costs."""

    predictions: np.ndarray
    beta: np.ndarray
    n_classes: int
    coverage: Optional[tuple] = None

    def __post_init__(self):
        preds = np.asarray(self.predictions, dtype=int)
        beta = np.asarray(self.beta, dtype=float)
        if preds.ndim != 2 or preds.shape[1] < 2:
            raise InvalidInputError("need an (m, p) prediction matrix with p >= 2")
        if beta.shape != (preds.shape[1],) or np.any(beta < 0):
            raise InvalidInputError("beta must hold p non-negative entries")
        if preds.size and (preds.min() < 1 or preds.max() > self.n_classes):
            raise InvalidInputError(f"predictions must lie in [1, {self.n_classes}]")
        object.__setattr__(self, "predictions", preds)
        object.__setattr__(self, "beta", beta)

    @property
    def n_experts(self):
        return self.predictions.shape[1]

    def subset(self, idx):
        return ExpertPanel(self.predictions[idx], self.beta, self.n_classes, self.coverage)


@dataclass(frozen=True)
class CostTensor:
    values: np.ndarray
    cost_type: CostType = CostType.ERROR_ONLY
    normalizer: float = 1.0

    def __post_init__(self):
        values = check_costs(self.values)
        if values.ndim != 2:
            raise InvalidInputError("cost tensor must be (m, p)")
        if self.normalizer <= 0:
            raise InvalidInputError("normalizer must be positive")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "cost_type", CostType(self.cost_type))

    @property
    def n_experts(self):
        return self.values.shape[1]

    def subset(self, idx):
        return CostTensor(self.values[idx], self.cost_type, self.normalizer)


@dataclass(frozen=True)
class RewardTensor:
    values: np.ndarray
    scheme: RewardScheme

    def subset(self, idx):
        return RewardTensor(self.values[idx], self.scheme)


@dataclass(frozen=True)
class MarginVector:
    rho: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rho", check_rhos(self.rho))

    @classmethod
    def uniform(cls, p, value=1.0):
        return cls(np.full(p, float(value)))

    def __len__(self):
        return self.rho.shape[0]


@dataclass(frozen=True)
class Router:
    """Per-expert linear heads over a fitted feature map.

    ``scores(X)[i, k] = weights[k] . phi(X[i])``.
    """

    weights: np.ndarray
    feature_map: object = field(default=None, compare=False)

    @property
    def n_experts(self):
        return self.weights.shape[0]

    def transform(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return X if self.feature_map is None else self.feature_map.transform(X)

    def scores(self, X):
        Phi = self.transform(X)
        if Phi.shape[1] != self.weights.shape[1]:
            raise InvalidInputError(
                f"feature dimension {Phi.shape[1]} does not match router heads {self.weights.shape[1]}"
            )
        return Phi @ self.weights.T

    def predict(self, X):
        return select_expert(self.scores(X))


def select_expert(scores):
    """Argmax over the last axis, ties resolved to the highest index."""
    scores = np.asarray(scores, dtype=float)
    p = scores.shape[-1]
    return p - 1 - np.argmax(scores[..., ::-1], axis=-1)


def not_selected(scores):
    """Indicator that expert k is not the routed expert, per sample.

    Agrees with ``margin(scores, k) <= 0`` whenever the top score is unique;
    on exact ties only the tie-break winner counts as selected.
    """
    scores = np.asarray(scores, dtype=float)
    chosen = select_expert(scores)
    onehot = np.zeros(scores.shape)
    np.put_along_axis(onehot, chosen[..., None], 1.0, axis=-1)
    return 1.0 - onehot


def margin(scores, k):
    """Score of expert ``k`` minus the best competing score."""
    scores = np.asarray(scores, dtype=float)
    p = scores.shape[-1]
    if p < 2:
        raise InvalidInputError("margin needs at least two experts")
    if not 0 <= k < p:
        raise InvalidInputError(f"expert index {k} out of range for p={p}")
    others = np.delete(scores, k, axis=-1)
    return scores[..., k] - others.max(axis=-1)


def deferral_loss_from_scores(scores, costs):
    scores = np.asarray(scores, dtype=float)
    costs = check_costs(costs)
    if scores.shape != costs.shape:
        raise InvalidInputError(
            f"scores {scores.shape} and costs {costs.shape} disagree on the expert count"
        )
    chosen = select_expert(scores)
    return np.take_along_axis(costs, chosen[..., None], axis=-1)[..., 0] if costs.ndim > 1 else costs[chosen]


def deferral_loss(router, x, y, costs):
    """Cost of the expert the router picks for ``x``.

    ``y`` enters only through ``costs`` (the row ``c_k(x, y)``); it is kept
    in the signature so call sites read like the loss definition.
    """
    costs = check_costs(costs)
    if costs.ndim != 1 or costs.shape[0] != router.n_experts:
        raise InvalidInputError("cost row length must equal the number of router heads")
    scores = router.scores(np.atleast_2d(x))[0]
    return float(deferral_loss_from_scores(scores, costs))


def rewards_from_costs(costs, scheme=RewardScheme.LEMMA1):
    scheme = RewardScheme(scheme)
    values = costs.values if isinstance(costs, CostTensor) else check_costs(costs)
    if scheme is RewardScheme.LEMMA1:
        out = values.sum(axis=-1, keepdims=True) - values
    else:
        out = 1.0 - values
    # guard the tiny negative residue of the subtraction
    out = np.maximum(out, 0.0)
    return RewardTensor(out, scheme) if isinstance(costs, CostTensor) else out


def reformulation_constant(costs, scheme):
    """Term independent of the router in the reward form of the loss."""
    costs = np.asarray(costs, dtype=float)
    p = costs.shape[-1]
    total = costs.sum(axis=-1)
    if RewardScheme(scheme) is RewardScheme.LEMMA1:
        return -(p - 2) * total
    return total - (p - 1)


def reformulation_residual_from_scores(scores, costs, scheme):
    scores = np.asarray(scores, dtype=float)
    costs = check_costs(costs)
    rewards = rewards_from_costs(costs, scheme)
    rhs = (rewards * not_selected(scores)).sum(axis=-1) + reformulation_constant(costs, scheme)
    return np.abs(deferral_loss_from_scores(scores, costs) - rhs)


def reformulation_residual(router, x, costs, scheme):
    scores = router.scores(np.atleast_2d(x))[0]
    return float(reformulation_residual_from_scores(scores, costs, scheme))


class ExpertDistribution(NamedTuple):
    probs: np.ndarray
    big_c: float
    zero_mass: bool


def conditional_expert_dist(reward_rows, label_dist):
    """Normalize expected rewards at one input into a distribution over experts.

    Parameters
    ----------
    reward_rows : array (c, p)
        Row ``y`` holds the rewards ``cbar_k(x, y)``.
    label_dist : array (c,)
        Conditional label distribution at ``x``.

    Returns
    -------
    ExpertDistribution
        ``probs[k] = E[cbar_k] / C`` with ``C = E[sum_k cbar_k]``. When ``C`` is
        zero the probabilities are uniform and ``zero_mass`` is True.
    """
    R = np.atleast_2d(np.asarray(reward_rows, dtype=float))
    q = check_probability_vector(label_dist, "label_dist")
    if np.any(R < 0):
        raise InvalidInputError("rewards must be non-negative")
    if R.shape[0] != q.shape[0]:
        raise InvalidInputError("need one reward row per label")
    expected = q @ R
    big_c = float(expected.sum())
    if big_c <= 0.0:
        p = R.shape[1]
        return ExpertDistribution(np.full(p, 1.0 / p), 0.0, True)
    return ExpertDistribution(expected / big_c, big_c, False)


@dataclass
class EvalReport:
    deferral_loss: float
    ratios: np.ndarray
    n_samples: int
    normalizer: float = 1.0

    @property
    def deferral_loss_raw(self):
        """Deferral loss in the units of the un-normalized costs."""
        return self.deferral_loss * self.normalizer

    def to_dict(self):
        out = {
            "deferral_loss": float(f"{self.deferral_loss:.9g}"),
            "deferral_loss_raw": float(f"{self.deferral_loss_raw:.9g}"),
            "n_samples": int(self.n_samples),
            "normalizer": float(f"{self.normalizer:.9g}"),
        }
        for k, r in enumerate(self.ratios, start=1):
            out[f"ratio_{k}"] = float(f"{r:.9g}")
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=False)


def evaluate_choices(choices, costs):
    """DL and routing ratios for a fixed vector of 0-based expert choices."""
    values = costs.values if isinstance(costs, CostTensor) else check_costs(costs)
    choices = np.asarray(choices, dtype=int)
    m, p = values.shape
    if m == 0:
        raise InvalidInputError("cannot evaluate on an empty dataset")
    if choices.shape != (m,):
        raise InvalidInputError("need exactly one choice per sample")
    dl = values[np.arange(m), choices].mean()
    ratios = np.bincount(choices, minlength=p) / m
    normalizer = costs.normalizer if isinstance(costs, CostTensor) else 1.0
    return EvalReport(float(dl), ratios, m, normalizer)


def evaluate(router, dataset, costs):
    if len(dataset) == 0:
        raise InvalidInputError("cannot evaluate on an empty dataset")
    if costs.values.shape[0] != len(dataset) or costs.n_experts != router.n_experts:
        raise InvalidInputError("router, dataset and cost tensor dimensions disagree")
    return evaluate_choices(router.predict(dataset.features), costs)


def costs_from_panel(dataset, panel, cost_type=CostType.ERROR_ONLY):
    """Build ``c_k(x_i, y_i)`` from expert predictions.

    Error-plus-cost entries ``1[wrong] + beta_k`` are divided by
    ``1 + max(beta)`` so every entry lands in [0, 1].
    """
    cost_type = CostType(cost_type)
    if panel.predictions.shape[0] != len(dataset):
        raise InvalidInputError("expert panel and dataset have different lengths")
    errors = (panel.predictions != dataset.labels[:, None]).astype(float)
    if cost_type is CostType.ERROR_ONLY:
        return CostTensor(errors, cost_type, 1.0)
    normalizer = 1.0 + float(panel.beta.max())
    return CostTensor((errors + panel.beta[None, :]) / normalizer, cost_type, normalizer)


def lowest_cost_expert(costs):
    """Per-sample argmin of the costs, ties resolved to the highest index."""
    values = costs.values if isinstance(costs, CostTensor) else np.asarray(costs, dtype=float)
    return select_expert(-values)
