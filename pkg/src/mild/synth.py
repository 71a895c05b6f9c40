"""Desk-scale generators for the expert-imbalance protocols.

Inputs are Gaussian class clusters; experts are label-coverage specialists.
Every generator also returns the exact conditional expected cost
``E[c_k | x]`` under its generative model, which is what the Bayes router
needs.
"""

from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from .core import CostTensor, CostType, Dataset, ExpertPanel, costs_from_panel, select_expert
from .exceptions import InvalidInputError

COVERAGE = {
    "setup1": (0.7, 0.2, 0.1),
    "setup2": (0.5, 0.2, 0.2, 0.1),
    "setup3": (0.4, 0.2, 0.2, 0.1, 0.1),
    "severe": (0.9, 0.1),
}


class Fidelity(str, Enum):
    SYNTHETIC = "synthetic"  # perfect on covered classes, uniform guess elsewhere
    REAL = "real"  # imperfect specialists with a small leak onto other classes


@dataclass(frozen=True)
class SetupSpec:
    setup: str = "setup1"
    n_classes: int = 10
    n_samples: int = 2000
    dim: int = 2
    radius: float = 3.0
    sigma: float = 1.0
    fidelity: Fidelity = Fidelity.SYNTHETIC
    covered_accuracy: float = 0.99
    leak_accuracy: float = 0.15
    cost_type: CostType = CostType.ERROR_ONLY
    seed: int = 0
    coverage: Optional[Tuple[float, ...]] = None  # only for setup="custom"

    def __post_init__(self):
        object.__setattr__(self, "fidelity", Fidelity(self.fidelity))
        object.__setattr__(self, "cost_type", CostType(self.cost_type))
        if self.setup != "custom" and self.setup not in COVERAGE:
            raise InvalidInputError(f"unknown setup {self.setup!r}")
        if self.setup == "custom" and self.coverage is None:
            raise InvalidInputError("custom setups need coverage fractions")
        if self.n_samples < 10 * self.n_classes:
            raise InvalidInputError("need at least 10 samples per class")

    @property
    def coverage_fractions(self):
        fr = self.coverage if self.setup == "custom" else COVERAGE[self.setup]
        fr = np.asarray(fr, dtype=float)
        if fr.ndim != 1 or fr.size < 2 or np.any(fr <= 0) or abs(fr.sum() - 1) > 1e-9:
            raise InvalidInputError("coverage must hold >= 2 positive fractions summing to 1")
        return fr

    def to_dict(self):
        d = asdict(self)
        d["fidelity"] = self.fidelity.value
        d["cost_type"] = self.cost_type.value
        return d


@dataclass(frozen=True)
class SyntheticProblem:
    """Dataset, experts and costs, plus the model's conditional expected costs.

    Unpacks as ``dataset, panel, costs``.
    """

    dataset: Dataset
    panel: ExpertPanel
    costs: CostTensor
    expected_costs: np.ndarray
    manifest: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.dataset, self.panel, self.costs))

    def subset(self, idx):
        return SyntheticProblem(
            self.dataset.subset(idx),
            self.panel.subset(idx),
            self.costs.subset(idx),
            self.expected_costs[idx],
            self.manifest,
        )

    def bayes_choices(self):
        return select_expert(-self.expected_costs)


def _largest_remainder(fractions, total):
    raw = np.asarray(fractions, dtype=float) * total
    counts = np.floor(raw + 1e-9).astype(int)
    short = total - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def coverage_partition(fractions, n_classes):
    """Contiguous class blocks (1-based) covered by each expert."""
    counts = _largest_remainder(fractions, n_classes)
    if np.any(counts < 1):
        raise InvalidInputError(
            f"{n_classes} classes cannot give every coverage fraction a class: {counts.tolist()}"
        )
    edges = np.concatenate([[0], np.cumsum(counts)])
    return tuple(tuple(range(edges[k] + 1, edges[k + 1] + 1)) for k in range(len(counts)))


def class_means(n_classes, dim, radius):
    if dim == 2 or dim < n_classes:
        angles = 2 * np.pi * np.arange(n_classes) / n_classes
        means = np.zeros((n_classes, dim))
        means[:, 0] = radius * np.cos(angles)
        means[:, 1] = radius * np.sin(angles)
        return means
    means = np.zeros((n_classes, dim))
    means[np.arange(n_classes), np.arange(n_classes)] = radius
    return means


def gaussian_posterior(X, means, sigma, weights=None):
    """Posterior over mixture components for isotropic Gaussian clusters."""
    d2 = ((X[:, None, :] - means[None, :, :]) ** 2).sum(axis=-1)
    logits = -d2 / (2 * sigma**2)
    if weights is not None:
        logits = logits + np.log(weights)[None, :]
    logits -= logits.max(axis=1, keepdims=True)
    post = np.exp(logits)
    return post / post.sum(axis=1, keepdims=True)


def _wrong_label(rng, y, n_classes):
    """Uniform label in [1, c] different from ``y``."""
    shift = rng.integers(1, n_classes, size=y.shape)
    return (y - 1 + shift) % n_classes + 1


def _expert_error_given_label(spec, blocks):
    """``err[y-1, k]``: probability expert k is wrong on class y."""
    c = spec.n_classes
    err = np.empty((c, len(blocks)))
    for k, block in enumerate(blocks):
        covered = np.isin(np.arange(1, c + 1), block)
        if spec.fidelity is Fidelity.SYNTHETIC:
            err[:, k] = np.where(covered, 0.0, (c - 1) / c)
        else:
            err[:, k] = np.where(covered, 1 - spec.covered_accuracy, 1 - spec.leak_accuracy)
    return err


def generate(spec):
    """Sample a dataset, a specialist expert panel and its cost tensor.

    Classes are exactly balanced. Synthetic experts are right on their own
    classes and guess uniformly over all ``c`` labels elsewhere (so a guess
    is right with probability ``1/c``). Real experts are right with
    probability ``covered_accuracy`` on their classes and ``leak_accuracy``
    elsewhere, and wrong answers are uniform over the other labels.
    """
    rng = np.random.default_rng(spec.seed)
    c, m = spec.n_classes, spec.n_samples
    fractions = spec.coverage_fractions
    blocks = coverage_partition(fractions, c)
    p = len(blocks)

    labels = rng.permutation(np.arange(m) % c + 1)
    means = class_means(c, spec.dim, spec.radius)
    X = means[labels - 1] + spec.sigma * rng.standard_normal((m, spec.dim))
    posterior = gaussian_posterior(X, means, spec.sigma)

    preds = np.empty((m, p), dtype=int)
    for k, block in enumerate(blocks):
        covered = np.isin(labels, block)
        if spec.fidelity is Fidelity.SYNTHETIC:
            guess = rng.integers(1, c + 1, size=m)
            preds[:, k] = np.where(covered, labels, guess)
        else:
            acc = np.where(covered, spec.covered_accuracy, spec.leak_accuracy)
            right = rng.random(m) < acc
            preds[:, k] = np.where(right, labels, _wrong_label(rng, labels, c))

    beta = fractions if spec.cost_type is CostType.ERROR_PLUS_COST else np.zeros(p)
    dataset = Dataset(X, labels, c, posterior)
    panel = ExpertPanel(preds, beta, c, blocks)
    costs = costs_from_panel(dataset, panel, spec.cost_type)

    err = _expert_error_given_label(spec, blocks)
    expected = (posterior @ err + beta[None, :]) / costs.normalizer
    manifest = {"generator": "setup", **spec.to_dict(), "normalizer": costs.normalizer}
    return SyntheticProblem(dataset, panel, costs, expected, manifest)


# Region accuracy profiles (rows: regions, cols: strong / mid / tiny experts)
# whose per-region optimal expert is the region index.
LLM_ERROR_ONLY = dict(
    accuracy_by_region=np.array([[0.85, 0.55, 0.45], [0.55, 0.80, 0.45], [0.50, 0.60, 0.75]]),
    betas=np.zeros(3),
    target_ratios=np.array([0.822, 0.128, 0.050]),
)
LLM_ERROR_PLUS_COST = dict(
    accuracy_by_region=np.array([[0.98, 0.05, 0.02], [0.90, 0.85, 0.15], [0.90, 0.80, 0.75]]),
    betas=np.array([1.0, 0.6, 0.1]),
    target_ratios=np.array([0.312, 0.120, 0.568]),
)


def generate_llm_analog(
    accuracy_by_region,
    betas=(1.0, 0.6, 0.1),
    m=2000,
    seed=0,
    target_ratios=None,
    n_classes=4,
    separation=3.0,
    sigma=1.0,
):
    """Routing instance mimicking a strong / mid / tiny model panel.

    Region ``r`` holds a ``target_ratios[r]`` share of the inputs and expert
    ``k`` answers correctly there with probability ``accuracy_by_region[r, k]``.
    Labels are uniform answer choices independent of the input. Raises
    :class:`InvalidInputError` when the region optima cannot realize the
    targets, reporting the ratios they do realize.
    """
    acc = np.asarray(accuracy_by_region, dtype=float)
    betas = np.asarray(betas, dtype=float)
    if acc.ndim != 2 or np.any(acc < 0) or np.any(acc > 1):
        raise InvalidInputError("accuracy_by_region must be a matrix of probabilities")
    R, p = acc.shape
    if betas.shape != (p,) or np.any(betas < 0):
        raise InvalidInputError("need one non-negative beta per expert")
    targets = np.full(R, 1.0 / R) if target_ratios is None else np.asarray(target_ratios, float)
    if targets.shape != (R,) or np.any(targets < 0) or abs(targets.sum() - 1) > 1e-6:
        raise InvalidInputError("target_ratios must be a distribution over regions")
    targets = targets / targets.sum()

    cost_type = CostType.ERROR_ONLY if not np.any(betas > 0) else CostType.ERROR_PLUS_COST
    normalizer = 1.0 if cost_type is CostType.ERROR_ONLY else 1.0 + betas.max()
    region_cost = (1 - acc + betas[None, :]) / normalizer
    best = select_expert(-region_cost)
    achieved = np.bincount(best, weights=targets, minlength=p)
    if R == p and np.abs(achieved - targets).max() > 0.01:
        raise InvalidInputError(
            f"targets {np.round(100 * targets, 1).tolist()} infeasible; "
            f"region optima give {np.round(100 * achieved, 1).tolist()}"
        )

    rng = np.random.default_rng(seed)
    counts = _largest_remainder(targets, m)
    region = rng.permutation(np.repeat(np.arange(R), counts))
    means = class_means(R, 2, separation)
    X = means[region] + sigma * rng.standard_normal((m, 2))
    labels = rng.integers(1, n_classes + 1, size=m)
    right = rng.random((m, p)) < acc[region]
    preds = np.where(right, labels[:, None], _wrong_label(rng, labels[:, None], n_classes))

    dataset = Dataset(X, labels, n_classes, np.full((m, n_classes), 1.0 / n_classes))
    panel = ExpertPanel(preds, betas, n_classes)
    costs = costs_from_panel(dataset, panel, cost_type)
    posterior = gaussian_posterior(X, means, sigma, np.maximum(targets, 1e-300))
    expected = posterior @ region_cost
    manifest = {
        "generator": "llm_analog",
        "accuracy_by_region": acc.tolist(),
        "betas": betas.tolist(),
        "target_ratios": targets.tolist(),
        "m": m,
        "seed": seed,
        "normalizer": costs.normalizer,
        "region_optimal_ratios": achieved.tolist(),
    }
    return SyntheticProblem(dataset, panel, costs, expected, manifest)
