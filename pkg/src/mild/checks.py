"""Randomized verification suites shared by the ``check`` command and the tests.

Every suite draws its cases from a seeded generator and returns a
:class:`SuiteResult` whose failures carry the inputs needed to replay them.
"""

import itertools
import time
from dataclasses import dataclass, field
from typing import List

import numpy as np

from . import losses
from .core import RewardScheme, reformulation_residual_from_scores, rewards_from_costs
from .oracle import (
    check_excess_error_bound,
    consistency_bound_grid,
    expectation_transfer_check,
    mc_class_sensitive_rademacher,
    random_instance,
)
from .train import BoundInputs, bound_second_term, objective, objective_and_grad, objective_grad, optimal_rho

TIERS = ("fast", "full")


@dataclass
class SuiteResult:
    name: str
    total: int = 0
    failures: List[dict] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self):
        return self.total - len(self.failures)

    @property
    def ok(self):
        return not self.failures

    def record(self, ok, **case):
        self.total += 1
        if not ok:
            self.failures.append(case)


def _tied_scores(rng, shape):
    """Scores on a coarse lattice so that exact ties show up often."""
    return rng.integers(-2, 3, size=shape).astype(float) * rng.choice([1.0, 0.5])


def reformulation_suite(n_cases=1000, seed=0, tol=1e-12):
    res = SuiteResult("lemma-equivalence")
    rng = np.random.default_rng(seed)
    for case in range(n_cases):
        p = int(rng.integers(2, 7))
        costs = rng.random(p)
        scores = _tied_scores(rng, p) if case % 2 else rng.normal(size=p)
        for scheme in RewardScheme:
            r = float(reformulation_residual_from_scores(scores, costs, scheme))
            res.record(r <= tol, scheme=scheme.value, costs=costs.tolist(), scores=scores.tolist(), residual=r)
    return res


def expectation_transfer_suite(n_cases=100, seed=1, tol=1e-12):
    res = SuiteResult("expectation-transfer")
    rng = np.random.default_rng(seed)
    for case in range(n_cases):
        inst = random_instance(
            rng, int(rng.integers(1, 6)), int(rng.integers(2, 6)), int(rng.integers(1, 5))
        )
        shape = (inst.n_points, inst.n_experts)
        scores = _tied_scores(rng, shape) if case % 2 else rng.normal(size=shape)
        for scheme in RewardScheme:
            r = expectation_transfer_check(inst, scores, scheme)
            res.record(r < tol, case=case, scheme=scheme.value, residual=r)
    return res


def chain_suite(n_cases=1000, seed=2, tol=1e-12):
    res = SuiteResult("upper-bound-chain")
    rng = np.random.default_rng(seed)
    for _ in range(n_cases):
        p = int(rng.integers(2, 7))
        scores = 3.0 * rng.normal(size=p)
        k = int(rng.integers(p))
        big_c = float(rng.random())
        rhos = rng.uniform(0.1, 2.0, size=p)
        lm, lx, ls = losses.surrogate_upper_chain(scores, k, big_c, rhos)
        ok = lx - lm >= -tol and ls - lx >= -tol
        res.record(ok, scores=scores.tolist(), k=k, big_c=big_c, rhos=rhos.tolist(), chain=(lm, lx, ls))
    return res


def _relative_error(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-8))


def gradient_suite(n_cases=200, seed=3, tol=1e-4, h=1e-5):
    """Analytic gradients of the regularized objective against central differences."""
    res = SuiteResult("gradient")
    rng = np.random.default_rng(seed)
    for case in range(n_cases):
        p, n, D = int(rng.integers(2, 6)), int(rng.integers(1, 9)), int(rng.integers(1, 6))
        Phi = rng.normal(size=(n, D))
        W = rng.uniform(-1.5, 1.5, size=(p, D))
        scheme = RewardScheme.LEMMA1 if case % 2 == 0 else RewardScheme.LEMMA2
        rewards = rewards_from_costs(rng.random((n, p)), scheme)
        rhos = rng.uniform(0.1, 1.0, size=p)
        lam = float(rng.choice([0.0, rng.uniform(0.0, 0.1)]))
        fd = np.zeros_like(W)
        for idx in np.ndindex(*W.shape):
            E = np.zeros_like(W)
            E[idx] = h
            fd[idx] = (objective(W + E, Phi, rewards, rhos, lam) - objective(W - E, Phi, rewards, rhos, lam)) / (2 * h)
        g = objective_grad(W, Phi, rewards, rhos, lam)
        _, g_fused = objective_and_grad(W, Phi, rewards, rhos, lam)
        err = max(_relative_error(g, fd), _relative_error(g_fused, fd))
        res.record(err < tol, case=case, p=p, n=n, D=D, relative_error=err)
    return res


def _simplex_grid(p, n_steps):
    """Positive compositions of ``n_steps`` into ``p`` parts, as fractions."""
    cuts = np.array(list(itertools.combinations(range(1, n_steps), p - 1)))
    edges = np.hstack([np.zeros((len(cuts), 1)), cuts, np.full((len(cuts), 1), n_steps)])
    return np.diff(edges, axis=1) / n_steps


def rho_optimality_suite(n_cases=100, seed=4, rel_tol=0.01, n_steps=50):
    res = SuiteResult("rho-optimality")
    rng = np.random.default_rng(seed)
    grids = {}
    for case in range(n_cases):
        p = int(rng.integers(2, 6))
        m_j = rng.integers(1, 200, size=p).astype(float)
        X_j = rng.uniform(0.2, 3.0, size=p)
        rho_bar = float(rng.uniform(0.5, 5.0))
        inputs = BoundInputs(m_j, X_j, 1.0, int(m_j.sum()), p)
        at_formula = bound_second_term(inputs, optimal_rho(m_j, X_j, rho_bar))
        if p not in grids:
            grids[p] = _simplex_grid(p, n_steps)
        R = rho_bar * grids[p]
        # bound_second_term over the whole grid at once
        s = np.sqrt((m_j * X_j**2 / R**2).sum(axis=1))
        grid_min = float((4.0 * np.sqrt(2.0) * p / inputs.m * s).min())
        res.record(
            at_formula <= grid_min * (1 + rel_tol),
            case=case, m_j=m_j.tolist(), X_j=X_j.tolist(), rho_bar=rho_bar,
            formula=at_formula, grid_min=grid_min,
        )
    return res


def consistency_suite(n_single=100, n_multi=100, seed=5):
    res = SuiteResult("consistency-bound")
    rng = np.random.default_rng(seed)
    for case in range(n_single):
        p = int(rng.integers(2, 4))
        probs = rng.dirichlet(np.ones(p))
        big_c = float(rng.uniform(1e-3, 1.0))
        rhos = rng.uniform(0.1, 1.0, size=p)
        chk = consistency_bound_grid(probs, big_c, rhos)
        res.record(chk.holds, kind="single", case=case, probs=probs.tolist(), big_c=big_c,
                   rhos=rhos.tolist(), max_violation=chk.max_violation)
    for case in range(n_multi):
        inst = random_instance(rng, int(rng.integers(2, 4)), int(rng.integers(2, 4)), int(rng.integers(1, 4)))
        rhos = rng.uniform(0.1, 1.0, size=inst.n_experts)
        scheme = RewardScheme.LEMMA1 if case % 2 == 0 else RewardScheme.LEMMA2
        chk = check_excess_error_bound(inst, rhos, scheme)
        res.record(chk.holds, kind="multi", case=case, scheme=scheme.value,
                   rhos=rhos.tolist(), max_violation=chk.max_violation)
    return res


def rademacher_suite(n_cases=50, seed=6, trials=200):
    res = SuiteResult("rademacher")
    rng = np.random.default_rng(seed)
    for case in range(n_cases):
        p, D = int(rng.integers(2, 5)), int(rng.integers(1, 7))
        groups = [rng.normal(size=(int(rng.integers(1, 30)), D)) * rng.uniform(0.2, 2.0) for _ in range(p)]
        rhos = rng.uniform(0.1, 1.0, size=p)
        F = float(rng.uniform(0.5, 2.0))
        est = mc_class_sensitive_rademacher(groups, rhos, F, trials, seed=case)
        res.record(est.estimate <= est.bound + 3 * est.stderr, case=case, estimate=est.estimate,
                   stderr=est.stderr, bound=est.bound)
    return res


def run_suites(tier="fast"):
    if tier not in TIERS:
        raise ValueError(f"tier must be one of {TIERS}")
    full = tier == "full"
    plan = [
        (reformulation_suite, {}),
        (expectation_transfer_suite, {}),
        (chain_suite, {}),
        (consistency_suite, {} if full else {"n_single": 20, "n_multi": 20}),
        (rademacher_suite, {} if full else {"n_cases": 10}),
        (gradient_suite, {}),
        (rho_optimality_suite, {} if full else {"n_cases": 20}),
    ]
    results = []
    for fn, kwargs in plan:
        t0 = time.perf_counter()
        r = fn(**kwargs)
        r.seconds = time.perf_counter() - t0
        results.append(r)
    return results
