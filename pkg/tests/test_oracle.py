import itertools
import math
import pathlib

import numpy as np
import pytest

from mild.core import RewardScheme, deferral_loss_from_scores, reformulation_residual_from_scores
from mild.exceptions import BudgetExceededError, InvalidInputError
from mild.losses import mild_surrogate
from mild.oracle import (
    DiscreteInstance,
    bayes_router,
    check_consistency_bound,
    check_excess_error_bound,
    consistency_bound_grid,
    expectation_transfer_check,
    expected_deferral_loss,
    mc_class_sensitive_rademacher,
    random_instance,
    score_grid_points,
    surrogate_infimum,
)
from mild.synth import LLM_ERROR_ONLY, LLM_ERROR_PLUS_COST
from mild.train import BoundInputs, rademacher_upper_bound

REFERENCE = pathlib.Path(__file__).resolve().parents[1] / "paper.md"


def one_point(expected_costs):
    c = np.asarray(expected_costs, dtype=float)[None, None, :]
    return DiscreteInstance(np.ones(1), np.ones((1, 1)), c)


def region_instance(preset):
    """Regions as points, with one label per pattern of which experts answer right."""
    acc, betas, targets = preset["accuracy_by_region"], preset["betas"], preset["target_ratios"]
    p = acc.shape[1]
    norm = 1.0 + betas.max() if np.any(betas > 0) else 1.0
    patterns = list(itertools.product([0, 1], repeat=p))
    q = np.array([[np.prod([a if r else 1 - a for a, r in zip(row, pat)]) for pat in patterns] for row in acc])
    costs = np.array([[(1 - np.array(pat) + betas) / norm for pat in patterns] for _ in acc])
    return DiscreteInstance(targets, q, costs)


def test_bayes_router_examples():
    assert bayes_router(one_point([0.3, 0.1, 0.9])).choices[0] == 1
    assert bayes_router(one_point([0.4, 0.4, 0.4])).choices[0] == 2
    r = bayes_router(one_point([0.3, 0.1, 0.9]))
    assert r.deferral_loss == pytest.approx(0.1) and list(r.ratios) == [0, 1, 0]


def test_bayes_router_reproduces_reported_optimal_ratios():
    with open(REFERENCE, encoding="utf-8") as fh:
        text = fh.read()
    assert "82.2" in text and "12.8" in text and "31.2" in text and "56.8" in text
    for preset, reported in ((LLM_ERROR_ONLY, [82.2, 12.8, 5.0]), (LLM_ERROR_PLUS_COST, [31.2, 12.0, 56.8])):
        ratios = bayes_router(region_instance(preset)).ratios
        assert np.allclose(100 * ratios, reported, atol=1e-9)


def test_bayes_router_beats_every_grid_router():
    rng = np.random.default_rng(0)
    inst = random_instance(rng, n_points=2, n_experts=2, n_labels=3, score_grid=(-1, 1, 1))
    best = bayes_router(inst).deferral_loss
    grid = score_grid_points(2, inst.score_grid)
    for a, b in itertools.product(grid, grid):
        assert best <= expected_deferral_loss(inst, np.array([a, b])) + 1e-15


def test_instance_validation():
    with pytest.raises(InvalidInputError):
        DiscreteInstance(np.array([0.5, 0.6]), np.ones((2, 1)), np.zeros((2, 1, 2)))
    with pytest.raises(InvalidInputError):
        DiscreteInstance(np.ones(1), np.ones((1, 1)), np.full((1, 1, 2), 1.5))
    with pytest.raises(InvalidInputError):
        DiscreteInstance(np.ones(1), np.ones((1, 1)), np.zeros((1, 1, 2)), (1, 0, 0.5))


def test_expectation_transfer_examples():
    rng = np.random.default_rng(1)
    zero = DiscreteInstance(np.ones(2) / 2, np.ones((2, 2)) / 2, np.zeros((2, 2, 3)))
    assert expectation_transfer_check(zero, rng.normal(size=(2, 3))) == 0.0
    for scheme in RewardScheme:
        inst = random_instance(rng, 2, 2, 2)
        assert expectation_transfer_check(inst, rng.normal(size=(2, 2)), scheme) < 1e-12


def test_expectation_transfer_with_deterministic_labels_is_per_sample_identity():
    rng = np.random.default_rng(2)
    costs = rng.random((1, 1, 3))
    inst = DiscreteInstance(np.ones(1), np.ones((1, 1)), costs)
    for scores in ([0.0, 1.0, 1.0], [2.0, -1.0, 0.0]):
        for scheme in RewardScheme:
            direct = reformulation_residual_from_scores(np.array(scores), costs[0, 0], scheme)
            assert expectation_transfer_check(inst, np.array([scores]), scheme) == pytest.approx(direct, abs=1e-15)


def test_expected_deferral_loss_by_hand():
    inst = DiscreteInstance(
        np.array([0.25, 0.75]), np.array([[1.0, 0.0], [0.5, 0.5]]),
        np.array([[[0.2, 0.6], [0.0, 0.0]], [[1.0, 0.0], [0.0, 1.0]]]),
    )
    scores = np.array([[1.0, 0.0], [0.0, 1.0]])
    # point 1 picks expert 1 (cost 0.2); point 2 picks expert 2 (mean cost 0.5)
    assert expected_deferral_loss(inst, scores) == pytest.approx(0.25 * 0.2 + 0.75 * 0.5)
    direct = [deferral_loss_from_scores(np.tile(scores[i], (2, 1)), inst.costs[i]) @ inst.label_dist[i] for i in range(2)]
    assert expected_deferral_loss(inst, scores) == pytest.approx(inst.marginals @ direct)


def test_score_grid_budget_guard():
    assert score_grid_points(2, (-1, 1, 1)).shape == (9, 2)
    with pytest.raises(BudgetExceededError):
        score_grid_points(5)
    with pytest.raises(BudgetExceededError) as err:
        score_grid_points(3, (-3, 3, 0.1))
    assert err.value.n_points == 61**3


def test_symmetric_point_has_zero_lhs():
    chk = consistency_bound_grid(np.array([0.5, 0.5]), 1.0, np.ones(2))
    assert np.all(chk.lhs == 0) and chk.holds


def test_skewed_point_worst_choice():
    probs, big_c = np.array([0.9, 0.1]), 0.7
    chk = consistency_bound_grid(probs, big_c, np.ones(2), infimum="exact")
    grid = score_grid_points(2)
    picks_second = grid[:, 1] >= grid[:, 0]
    assert np.allclose(chk.lhs[picks_second], 0.8 * big_c)
    assert np.allclose(chk.lhs[~picks_second], 0.0)
    assert chk.holds and chk.max_violation <= 0.0


def test_surrogate_infimum_matches_closed_form():
    # with unit margins the minimum of C sum p_k ell_k is C times the entropy of p
    probs = np.array([0.6, 0.3, 0.1])
    entropy = -float(probs @ np.log(probs))
    assert surrogate_infimum(probs, 0.5, np.ones(3)) == pytest.approx(0.5 * entropy, abs=1e-9)


def test_uniform_margins_bound_holds_with_zero_slack():
    rng = np.random.default_rng(3)
    for _ in range(40):
        p = int(rng.integers(2, 4))
        probs = rng.dirichlet(np.ones(p))
        rho = np.full(p, rng.uniform(0.1, 1.0))
        chk = consistency_bound_grid(probs, float(rng.uniform(1e-3, 1)), rho, slack=0.0, infimum="exact")
        assert chk.max_violation <= 1e-9


def test_unequal_margins_can_break_the_pointwise_bound():
    # documented counterexample: unequal margins shift the surrogate minimizer
    # away from the Bayes choice, so the square-root bound fails at f = 0
    probs, big_c, rho = np.array([0.86, 0.14]), 0.908, np.array([0.62, 0.14])
    chk = consistency_bound_grid(probs, big_c, rho, slack=0.0, infimum="exact")
    zero = np.where(np.all(score_grid_points(2) == 0, axis=1))[0][0]
    lhs = big_c * (0.86 - 0.14)
    surrogate_at_zero = float(mild_surrogate(np.zeros(2), big_c * probs, rho))
    rhs = math.sqrt(2) * math.sqrt(surrogate_at_zero - surrogate_infimum(probs, big_c, rho))
    assert chk.lhs[zero] == pytest.approx(lhs) and chk.rhs[zero] == pytest.approx(rhs)
    assert lhs > rhs + 0.5
    assert not chk.holds
    assert consistency_bound_grid(probs, big_c, rho).holds  # the two-step slack absorbs it


def test_single_point_multi_check_reduces_to_pointwise():
    rng = np.random.default_rng(4)
    for _ in range(10):
        inst = random_instance(rng, 1, int(rng.integers(2, 4)), 3)
        rho = rng.uniform(0.1, 1, inst.n_experts)
        single = check_consistency_bound(inst, rho, infimum="exact")
        multi = check_excess_error_bound(inst, rho, infimum="exact")
        assert multi.max_violation == pytest.approx(single.max_violation, abs=1e-12)
        assert multi.holds == single.holds


def test_pointwise_bayes_choices_have_zero_target_gap():
    rng = np.random.default_rng(5)
    inst = random_instance(rng, 3, 3, 3)
    probs, big_c = inst.expert_distributions()
    bayes = bayes_router(inst).choices
    grid = score_grid_points(3)
    for i in range(3):
        chk = consistency_bound_grid(probs[i], big_c[i], np.ones(3))
        picks = np.argmax(grid + 1e-9 * np.arange(3), axis=1) == bayes[i]
        assert np.allclose(chk.lhs[picks], 0.0, atol=1e-15)
    chk = check_excess_error_bound(inst, np.ones(3), infimum="exact")
    assert chk.holds and chk.n_routers == 13**9


def test_random_multi_point_instance_holds():
    rng = np.random.default_rng(6)
    inst = random_instance(rng, 3, 3, 3)
    assert check_excess_error_bound(inst, rng.uniform(0.1, 1, 3)).holds
    assert check_excess_error_bound(inst, np.full(3, 0.5), slack=0.0, infimum="exact").max_violation <= 1e-9


def test_multi_point_check_against_direct_enumeration():
    # small grid: enumerate every per-point pair of grid vectors
    rng = np.random.default_rng(7)
    inst = random_instance(rng, 2, 2, 2, score_grid=(-1, 1, 1))
    rho = np.array([0.3, 0.8])
    probs, big_c = inst.expert_distributions()
    grid = score_grid_points(2, inst.score_grid)
    per_point = []
    for i in range(2):
        chk = consistency_bound_grid(probs[i], big_c[i], rho, inst.score_grid)
        per_point.append((chk.lhs, (chk.rhs / math.sqrt(2)) ** 2))
    worst = -np.inf
    for a, b in itertools.product(range(len(grid)), repeat=2):
        lhs = inst.marginals @ [per_point[0][0][a], per_point[1][0][b]]
        excess = inst.marginals @ [per_point[0][1][a], per_point[1][1][b]]
        worst = max(worst, lhs - math.sqrt(2 * excess))
    assert check_excess_error_bound(inst, rho).max_violation == pytest.approx(worst, abs=1e-12)


def test_rademacher_zero_norm_bound():
    est = mc_class_sensitive_rademacher([np.ones((3, 2)), np.ones((2, 2))], [1, 1], F=0.0)
    assert est.estimate == 0.0 and est.bound == 0.0


def test_rademacher_homogeneity():
    rng = np.random.default_rng(8)
    groups = [rng.normal(size=(5, 3)), rng.normal(size=(2, 3))]
    rho = np.array([0.4, 0.9])
    a = mc_class_sensitive_rademacher(groups, rho, 1.5, trials=100, seed=2)
    b = mc_class_sensitive_rademacher(groups, rho / 2, 1.5, trials=100, seed=2)
    assert b.estimate == pytest.approx(2 * a.estimate, rel=1e-12)
    assert b.bound == pytest.approx(2 * a.bound, rel=1e-12)


def test_rademacher_single_sample_every_draw_below_bound():
    x = np.array([[3.0, -4.0]])
    rho, F = np.array([0.5, 1.0]), 2.0
    est = mc_class_sensitive_rademacher([x, np.zeros((0, 2))], rho, F, trials=100)
    bound = rademacher_upper_bound(BoundInputs(np.array([1.0, 0.0]), np.array([5.0, 5.0]), F, 1, 2), rho)
    # every draw has the same value: F * ||x|| / rho_1 * sqrt(p)
    assert est.stderr == pytest.approx(0.0, abs=1e-12)
    assert est.estimate == pytest.approx(F * 5.0 / 0.5 * math.sqrt(2))
    assert est.estimate <= bound + 1e-12


def test_rademacher_needs_enough_trials():
    with pytest.raises(InvalidInputError):
        mc_class_sensitive_rademacher([np.ones((1, 1))], [1.0], trials=10)
