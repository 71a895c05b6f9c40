"""scikit-learn style front end for the routers.

``fit(X, costs)`` takes the per-sample expert cost matrix in place of the
usual target vector. ``predict`` returns 0-based expert indices.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .core import CostTensor, Dataset, MarginVector, RewardScheme, evaluate_choices, select_expert
from .exceptions import InvalidInputError
from .train import MILD, TDEF, AutoFormula, AutoWithValidation, Fixed, TrainConfig, train


def _config_from(est, rho_mode):
    return TrainConfig(
        lam=est.lam,
        learning_rate=est.learning_rate,
        epochs=est.epochs,
        batch_size=est.batch_size,
        seed=est.seed,
        rho_mode=rho_mode,
        feature_map=est.feature_map,
        bandwidth=est.bandwidth,
        output_dim=est.output_dim,
        holdout=est.holdout,
    )


class _RouterEstimator(BaseEstimator):
    _method = MILD

    def _rho_mode(self):
        raise NotImplementedError

    def _scheme(self):
        return RewardScheme.LEMMA1

    def fit(self, X, costs):
        X = check_array(X, dtype=float)
        C = check_array(costs, dtype=float)
        if C.shape[0] != X.shape[0]:
            raise InvalidInputError("X and costs need the same number of rows")
        dataset = Dataset(X, np.ones(X.shape[0], dtype=int), 1)
        result = train(
            dataset, CostTensor(C), self._scheme(), _config_from(self, self._rho_mode()), self._method
        )
        self.router_ = result.router
        self.rhos_ = result.rhos.rho
        self.trace_ = result.trace
        self.n_features_in_ = X.shape[1]
        self.n_experts_ = C.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "router_")
        return self.router_.scores(check_array(X, dtype=float))

    def predict(self, X):
        return select_expert(self.decision_function(X))

    def score(self, X, costs):
        """Negative deferral loss, so that larger is better."""
        C = check_array(costs, dtype=float)
        return -evaluate_choices(self.predict(X), C).deferral_loss


class MILDRouter(_RouterEstimator):
    """Router trained on the margin-weighted deferral surrogate.

    ``rho`` is ``"formula"`` (closed-form allocation with total ``rho_bar``),
    ``"validation"`` (search around it on the held-out split) or an explicit
    array of per-expert margins.
    """

    def __init__(
        self,
        rho="formula",
        rho_bar=1.0,
        neighborhood_halfwidth=5.0,
        step=1.0,
        scheme="lemma1",
        lam=1e-3,
        learning_rate="auto",
        epochs=200,
        batch_size=0,
        seed=0,
        feature_map="identity",
        bandwidth=1.0,
        output_dim=200,
        holdout=0.2,
    ):
        self.rho = rho
        self.rho_bar = rho_bar
        self.neighborhood_halfwidth = neighborhood_halfwidth
        self.step = step
        self.scheme = scheme
        self.lam = lam
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.feature_map = feature_map
        self.bandwidth = bandwidth
        self.output_dim = output_dim
        self.holdout = holdout

    def _scheme(self):
        return RewardScheme(self.scheme)

    def _rho_mode(self):
        if isinstance(self.rho, str):
            if self.rho == "formula":
                return AutoFormula(self.rho_bar)
            if self.rho == "validation":
                return AutoWithValidation(self.rho_bar, self.neighborhood_halfwidth, self.step)
            raise InvalidInputError(f"unknown rho mode {self.rho!r}")
        return Fixed(MarginVector(np.asarray(self.rho, dtype=float)))


class TDEFRouter(_RouterEstimator):
    """Baseline router: unit margins and sum-of-other-costs rewards."""

    _method = TDEF

    def __init__(
        self,
        lam=1e-3,
        learning_rate="auto",
        epochs=200,
        batch_size=0,
        seed=0,
        feature_map="identity",
        bandwidth=1.0,
        output_dim=200,
        holdout=0.2,
    ):
        self.lam = lam
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.feature_map = feature_map
        self.bandwidth = bandwidth
        self.output_dim = output_dim
        self.holdout = holdout

    def _rho_mode(self):
        return AutoFormula()
