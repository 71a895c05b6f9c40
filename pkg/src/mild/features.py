"""Fixed feature maps placed in front of the linear router heads."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.kernel_approximation import RBFSampler
from sklearn.utils.validation import check_is_fitted

from .exceptions import InvalidInputError


class IdentityMap(TransformerMixin, BaseEstimator):
    """Pass features through unchanged, optionally appending a constant column."""

    def __init__(self, intercept=True):
        self.intercept = intercept

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=float)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = np.asarray(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise InvalidInputError(
                f"expected {self.n_features_in_} features, got {X.shape[1]}"
            )
        if self.intercept:
            X = np.hstack([X, np.ones((X.shape[0], 1))])
        return X

    @property
    def tag(self):
        return "identity"


class RandomFourierMap(TransformerMixin, BaseEstimator):
    """Random Fourier features for the Gaussian kernel with the given bandwidth.

    ``phi(x) = sqrt(2/D) cos(W x + b)`` with ``W ~ N(0, 1/bandwidth^2)``, so
    ``phi(x) . phi(x')`` approximates ``exp(-|x - x'|^2 / (2 bandwidth^2))``.
    """

    def __init__(self, bandwidth=1.0, output_dim=200, seed=0, intercept=True):
        self.bandwidth = bandwidth
        self.output_dim = output_dim
        self.seed = seed
        self.intercept = intercept

    def fit(self, X, y=None):
        if self.bandwidth <= 0 or self.output_dim < 1:
            raise InvalidInputError("bandwidth must be > 0 and output_dim >= 1")
        X = np.asarray(X, dtype=float)
        self.n_features_in_ = X.shape[1]
        self.sampler_ = RBFSampler(
            gamma=1.0 / (2.0 * self.bandwidth**2),
            n_components=self.output_dim,
            random_state=self.seed,
        ).fit(X)
        return self

    def transform(self, X):
        check_is_fitted(self, "sampler_")
        X = np.asarray(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise InvalidInputError(
                f"expected {self.n_features_in_} features, got {X.shape[1]}"
            )
        Z = self.sampler_.transform(X)
        if self.intercept:
            Z = np.hstack([Z, np.ones((Z.shape[0], 1))])
        return Z

    @property
    def tag(self):
        return f"random_fourier(bandwidth={self.bandwidth}, output_dim={self.output_dim}, seed={self.seed})"


def make_feature_map(kind="identity", bandwidth=1.0, output_dim=200, seed=0, intercept=True):
    if kind == "identity":
        return IdentityMap(intercept=intercept)
    if kind in ("random_fourier", "rff"):
        return RandomFourierMap(bandwidth, output_dim, seed, intercept)
    raise InvalidInputError(f"unknown feature map {kind!r}")
