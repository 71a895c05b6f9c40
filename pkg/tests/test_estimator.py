import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from mild.estimator import MILDRouter, TDEFRouter
from mild.exceptions import InvalidInputError


def two_regions(m=200, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(m, 2))
    left = X[:, 0] < 0
    costs = np.column_stack([~left, left]).astype(float)
    return X, costs


def test_fit_predict_score():
    X, C = two_regions()
    est = MILDRouter(epochs=150, holdout=0.0).fit(X, C)
    pred = est.predict(X)
    assert set(np.unique(pred)) <= {0, 1}
    assert est.score(X, C) > -0.1
    assert est.n_features_in_ == 2 and est.n_experts_ == 2
    assert est.decision_function(X).shape == (200, 2)
    assert len(est.trace_) == 150


def test_params_round_trip_and_clone():
    est = MILDRouter(rho=[0.5, 1.0], lam=0.01, epochs=7)
    params = est.get_params()
    assert params["lam"] == 0.01 and params["epochs"] == 7
    twin = clone(est)
    assert twin.get_params()["rho"] == [0.5, 1.0]
    est.set_params(epochs=3)
    assert est.epochs == 3


def test_fixed_rho_is_used():
    X, C = two_regions(60)
    est = MILDRouter(rho=[0.5, 1.0], epochs=3).fit(X, C)
    assert np.allclose(est.rhos_, [0.5, 1.0])
    assert np.allclose(TDEFRouter(epochs=3).fit(X, C).rhos_, 1.0)


def test_baseline_equals_unit_margin_router():
    X, C = two_regions(100, seed=1)
    a = MILDRouter(rho=[1.0, 1.0], scheme="lemma1", epochs=20).fit(X, C)
    b = TDEFRouter(epochs=20).fit(X, C)
    assert np.array_equal(a.decision_function(X), b.decision_function(X))


def test_unfitted_and_bad_input():
    with pytest.raises(NotFittedError):
        MILDRouter().predict(np.zeros((1, 2)))
    with pytest.raises(InvalidInputError):
        MILDRouter(epochs=2).fit(np.zeros((3, 2)), np.zeros((4, 2)))
