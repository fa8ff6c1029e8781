"""Reference LP solve, cross-checked by exhaustive vertex enumeration.

The enumeration is the oracle's own oracle: every vertex of the feasible
polytope (simplex intersected with the l1 ball) lies at n linearly
independent active constraints, so for tiny n all candidate systems can be
solved directly and the best feasible vertex is the global optimum.
"""

from itertools import combinations, product

import numpy as np
import pytest

from gradshield.simplex_redirect import (
    Budget,
    Posterior,
    ValueVector,
    lp_oracle,
    objective,
    redirect,
)


def enumerate_optimum(c, y, eps):
    """Brute-force LP optimum by vertex enumeration (n <= 4)."""
    n = len(y)
    rows = []
    rhs = []
    for i in range(n):  # v_i = 0 facets
        e = np.zeros(n)
        e[i] = 1.0
        rows.append(e)
        rhs.append(0.0)
    for signs in product((-1.0, 1.0), repeat=n):  # l1-ball facets
        s = np.array(signs)
        rows.append(s)
        rhs.append(eps + float(s @ y))
    best = None
    ones = np.ones(n)
    for combo in combinations(range(len(rows)), n - 1):
        a = np.vstack([ones] + [rows[i] for i in combo])
        b = np.array([1.0] + [rhs[i] for i in combo])
        if abs(np.linalg.det(a)) < 1e-10:
            continue
        v = np.linalg.solve(a, b)
        if v.min() < -1e-9 or np.abs(v - y).sum() > eps + 1e-9:
            continue
        val = float(v @ c)
        if best is None or val > best:
            best = val
    assert best is not None  # y itself is always feasible
    return best


def test_forced_example_objective():
    out = lp_oracle(ValueVector([0, 1]), Posterior([0.5, 0.5]), Budget(0.4))
    assert objective(ValueVector([0, 1]), out) == pytest.approx(0.7, abs=1e-12)


def test_zero_budget_objective_is_dot_product():
    rng = np.random.default_rng(0)
    for _ in range(10):
        n = int(rng.integers(2, 9))
        c = ValueVector(rng.standard_normal(n))
        y = Posterior(rng.dirichlet(np.ones(n)))
        assert objective(c, lp_oracle(c, y, Budget(0.0))) == pytest.approx(
            objective(c, y), abs=1e-12
        )


def test_oracle_matches_vertex_enumeration():
    rng = np.random.default_rng(1)
    for _ in range(60):
        n = int(rng.integers(2, 5))
        c_arr = rng.standard_normal(n)
        y_arr = rng.dirichlet(np.ones(n))
        eps = float(rng.choice([0.1, 0.5, 1.0, 1.9]))
        got = objective(
            ValueVector(c_arr), lp_oracle(ValueVector(c_arr), Posterior(y_arr), Budget(eps))
        )
        want = enumerate_optimum(c_arr, y_arr, eps)
        assert got == pytest.approx(want, abs=1e-9)


def test_greedy_matches_oracle_on_random_instances():
    rng = np.random.default_rng(2)
    for _ in range(200):
        n = int(rng.integers(2, 9))
        c = ValueVector(rng.standard_normal(n))
        y = Posterior(rng.dirichlet(np.ones(n)))
        eps = Budget(float(rng.choice([0.1, 0.5, 1.0, 1.9])))
        assert objective(c, redirect(c, y, eps)) == pytest.approx(
            objective(c, lp_oracle(c, y, eps)), abs=1e-9
        )


def test_greedy_matches_enumeration_directly():
    # both routes against the brute force, independent of one another
    rng = np.random.default_rng(3)
    for _ in range(40):
        n = int(rng.integers(2, 5))
        c_arr = rng.standard_normal(n)
        y_arr = rng.dirichlet(np.ones(n))
        eps = float(rng.uniform(0.05, 1.95))
        got = objective(
            ValueVector(c_arr), redirect(ValueVector(c_arr), Posterior(y_arr), Budget(eps))
        )
        assert got == pytest.approx(enumerate_optimum(c_arr, y_arr, eps), abs=1e-9)


def test_oracle_rejects_large_n():
    n = 65
    with pytest.raises(ValueError):
        lp_oracle(
            ValueVector(np.zeros(n)), Posterior(np.full(n, 1.0 / n)), Budget(0.5)
        )
