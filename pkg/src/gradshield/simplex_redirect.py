"""Exact solver for budgeted posterior steering on the probability simplex.

Given a value vector ``c`` pricing each class label, a clean posterior ``y``
and an l1 budget ``eps``, the solver maximizes the linear objective
``c . y_tilde`` over the feasible set

    { y_tilde : y_tilde >= 0,  sum(y_tilde) = 1,  ||y_tilde - y||_1 <= eps }

with a single greedy mass-trading pass: the highest-valued index receives as
much probability mass as the budget and the simplex cap allow, paid for by
draining the lowest-valued indices first.  The pass is a fractional-knapsack
style greedy and returns a global optimum in O(n log n).

``lp_oracle`` solves the same program with a generic dense LP method and
exists only so tests can cross-check the greedy solver against an
independent route.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Posterior",
    "ValueVector",
    "Budget",
    "RedirectTrace",
    "FeasibilityReport",
    "NumericalError",
    "redirect",
    "redirect_with_trace",
    "redirect_values",
    "objective",
    "lp_oracle",
    "feasibility_report",
]

# Absolute tolerance on sum(probs) == 1 at construction and after a solve.
SUM_TOL = 1e-12


class NumericalError(RuntimeError):
    """Internal numerical failure (drifted sum, LP non-convergence)."""


def _as_float_vector(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class Posterior:
    """A probability distribution over n >= 2 class labels.

    Entries must be nonnegative and sum to 1 within ``SUM_TOL``.  The backing
    array is defensively copied and frozen.
    """

    probs: np.ndarray

    def __post_init__(self):
        p = _as_float_vector(self.probs, "probs")
        if p.size < 2:
            raise ValueError(f"posterior needs at least 2 entries, got {p.size}")
        if not np.all(np.isfinite(p)):
            raise ValueError("posterior entries must be finite")
        if np.any(p < 0.0):
            raise ValueError(f"posterior entries must be nonnegative, min={p.min()}")
        total = float(p.sum())
        if abs(total - 1.0) > SUM_TOL:
            raise ValueError(f"posterior must sum to 1 within {SUM_TOL}, got {total!r}")
        p.flags.writeable = False
        object.__setattr__(self, "probs", p)

    def __len__(self) -> int:
        return self.probs.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probs, dtype=dtype)


@dataclass(frozen=True)
class ValueVector:
    """Per-label objective prices, one finite value per class."""

    values: np.ndarray

    def __post_init__(self):
        v = _as_float_vector(self.values, "values")
        if not np.all(np.isfinite(v)):
            raise ValueError("value vector entries must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


@dataclass(frozen=True)
class Budget:
    """An l1 perturbation radius in [0, 2); 2 is the simplex diameter."""

    epsilon: float

    def __post_init__(self):
        eps = float(self.epsilon)
        if not 0.0 <= eps < 2.0:
            raise ValueError(f"epsilon must lie in [0, 2), got {eps!r}")
        object.__setattr__(self, "epsilon", eps)


@dataclass(frozen=True)
class RedirectTrace:
    """Observable internal state of one greedy solve.

    ``sorted_order`` is the permutation used by the pass, ascending by
    (value, index).  ``removed_mass_per_step`` holds the per-donor removals in
    drain order (increments of the running removed-mass accumulator), so its
    sum is the total mass moved, bounded by eps/2.  ``stop_reason`` is
    ``budget_hit`` when the in-loop early return fired, ``simplex_cap`` when
    the receiving entry was clipped to 1, and ``exhausted`` when the pass ran
    out of donors without either; cap takes priority when reasons coincide.
    """

    sorted_order: np.ndarray
    mass_added: float
    removed_mass_per_step: np.ndarray
    stop_reason: str


@dataclass(frozen=True)
class FeasibilityReport:
    l1: float
    sum: float
    min_entry: float
    feasible: bool


def _check_pair(c: ValueVector, y: Posterior) -> None:
    if len(c) != len(y):
        raise ValueError(f"length mismatch: c has {len(c)} entries, y has {len(y)}")


def _greedy_trade(c: np.ndarray, y: np.ndarray, eps: float):
    """One greedy pass on raw float64 arrays; returns (y_tilde, trace fields)."""
    order = np.argsort(c, kind="stable")  # ascending value, ties by ascending index
    recv = order[-1]
    half = 0.5 * eps

    out = y.copy()
    out[recv] = min(y[recv] + half, 1.0)
    mass_added = float(out[recv] - y[recv])

    donors = order[:-1]
    masses = y[donors]
    running = np.cumsum(masses)
    over = np.nonzero(running > half)[0]
    if over.size:
        # Budget exhausted mid-pass: donors before t give everything, donor t
        # gives only the remainder (evaluated in the same order as the
        # per-step update so the boundary arithmetic is reproducible).
        t = int(over[0])
        lam = float(running[t - 1]) if t > 0 else 0.0
        out[donors[:t]] = 0.0
        out[donors[t]] = max(masses[t] - (half - lam), 0.0)
        removed = np.append(masses[:t], masses[t] - out[donors[t]])
        stop = "simplex_cap" if out[recv] == 1.0 else "budget_hit"
    else:
        # All donors drained; the receiver was capped (or the budget exactly
        # covers the removable mass).
        out[donors] = 0.0
        removed = masses.copy()
        stop = "simplex_cap" if out[recv] == 1.0 else "exhausted"

    np.clip(out, 0.0, 1.0, out=out)
    total = float(out.sum())
    if abs(total - 1.0) > SUM_TOL:
        raise NumericalError(
            f"steered posterior drifted off the simplex: sum={total!r}, n={y.size}"
        )
    return out, order, mass_added, removed, stop


def redirect_values(c: np.ndarray, y: np.ndarray, eps: float) -> np.ndarray:
    """Low-level solve on raw float64 arrays.  No input validation."""
    if eps == 0.0:
        return y.copy()
    out, _, _, _, _ = _greedy_trade(c, y, eps)
    return out


def redirect(c: ValueVector, y: Posterior, eps: Budget) -> Posterior:
    """Maximize ``c . y_tilde`` over the budgeted simplex neighborhood of y.

    Deterministic: ties in ``c`` are broken by ascending index through the
    stable sort.  Runs in O(n log n).  A zero budget short-circuits to a copy
    of ``y`` without sorting.
    """
    _check_pair(c, y)
    if eps.epsilon == 0.0:
        return Posterior(y.probs)
    out, _, _, _, _ = _greedy_trade(c.values, y.probs, eps.epsilon)
    return Posterior(out)


def redirect_with_trace(c: ValueVector, y: Posterior, eps: Budget):
    """Like ``redirect`` but also reports the pass internals for tests."""
    _check_pair(c, y)
    out, order, added, removed, stop = _greedy_trade(c.values, y.probs, eps.epsilon)
    trace = RedirectTrace(
        sorted_order=order,
        mass_added=added,
        removed_mass_per_step=np.asarray(removed, dtype=np.float64),
        stop_reason=stop,
    )
    return Posterior(out), trace


def objective(c: ValueVector, p: Posterior) -> float:
    """The solver objective: the dot product ``c . p``."""
    _check_pair(c, p)
    return float(np.dot(c.values, p.probs))


def feasibility_report(y, y_tilde, eps: Budget) -> FeasibilityReport:
    """Check a candidate against the solver's constraint set.

    ``y_tilde`` is accepted as a raw array on purpose: infeasible candidates
    (off-simplex sums, negative entries) must be reportable, not rejected at
    construction.
    """
    y_arr = np.asarray(y, dtype=np.float64)
    t_arr = np.asarray(y_tilde, dtype=np.float64)
    if y_arr.shape != t_arr.shape:
        raise ValueError(f"shape mismatch: {y_arr.shape} vs {t_arr.shape}")
    l1 = float(np.abs(t_arr - y_arr).sum())
    total = float(t_arr.sum())
    min_entry = float(t_arr.min())
    feasible = (
        l1 <= eps.epsilon + 1e-9
        and abs(total - 1.0) <= SUM_TOL
        and min_entry >= -1e-15
    )
    return FeasibilityReport(l1=l1, sum=total, min_entry=min_entry, feasible=feasible)


# Maximum problem size accepted by the reference LP solve (tests run well
# below this; the greedy solver itself has no such cap).
LP_ORACLE_MAX_N = 64


def lp_oracle(c: ValueVector, y: Posterior, eps: Budget) -> Posterior:
    """Reference solve of the same linear program by an independent route.

    The perturbation is split into nonnegative up/down variables,
    ``y_tilde = y + u_plus - u_minus``, and the resulting dense LP is handed
    to a generic simplex-method solver.  Only used to cross-check
    ``redirect`` in tests; limited to small n.
    """
    from scipy.optimize import linprog

    _check_pair(c, y)
    n = len(y)
    if n > LP_ORACLE_MAX_N:
        raise ValueError(f"lp_oracle is a test oracle; n={n} exceeds {LP_ORACLE_MAX_N}")
    if eps.epsilon == 0.0:
        return Posterior(y.probs)

    c_arr, y_arr = c.values, y.probs
    # Variables: [u_plus (n), u_minus (n)].  maximize c.(u_plus - u_minus)
    cost = np.concatenate([-c_arr, c_arr])
    a_eq = np.concatenate([np.ones(n), -np.ones(n)])[None, :]
    b_eq = np.array([0.0])
    a_ub = np.ones((1, 2 * n))
    b_ub = np.array([eps.epsilon])
    bounds = [(0.0, None)] * n + [(0.0, float(yi)) for yi in y_arr]
    res = linprog(
        cost,
        A_ub=a_ub,
        b_ub=b_ub,
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=bounds,
        method="highs",
    )
    if not res.success:
        raise NumericalError(
            f"reference LP failed (status={res.status}): {res.message}"
        )
    out = y_arr + res.x[:n] - res.x[n:]
    if out.min() < -1e-9 or abs(out.sum() - 1.0) > 1e-9:
        raise NumericalError(
            f"reference LP returned an off-simplex point: "
            f"min={out.min()!r}, sum={out.sum()!r}"
        )
    # Scrub solver residue so the result constructs as a Posterior; the
    # objective moves by O(1e-12), far inside the 1e-9 comparison tolerance.
    out = np.clip(out, 0.0, 1.0)
    out /= out.sum()
    return Posterior(out)
