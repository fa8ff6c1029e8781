"""Evaluation metrics and result emission.

The two defender budget axes are the mean l1 distortion over the query set
and the increase in the defender's own classification error; the attack axis
is the clone's error on the defender's test set.  ``transfer_performance``
is the diagnostic for whether perturbations designed on a surrogate actually
bend an adversary network's gradients toward the target direction.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .defense_engine import (
    DefendedOracle,
    TargetStrategy,
    argmax_lowest,
    make_target,
)
from .diffnet import DiffNet, forward_batch, gz_double_backprop, update_gradient
from .ioutil import atomic_write_text
from .simplex_redirect import Budget, redirect_values

__all__ = [
    "BudgetReport",
    "CurvePoint",
    "DefenseCurve",
    "TransferPerformance",
    "budget_report",
    "delta_clf_err",
    "transfer_performance",
    "emit_curve",
    "read_curve",
    "CSV_HEADER",
]

CSV_HEADER = "budget,adv_err,mean_l1,delta_clf_err,seed"

# Queries whose gradient norm falls below this are excluded from cosine
# statistics (cosine is undefined at zero) and counted in the report.
ZERO_GRAD_TOL = 1e-12


def _fmt(v: float) -> str:
    return f"{float(v):.17g}"


@dataclass(frozen=True)
class BudgetReport:
    mean_l1: float
    delta_clf_err: float
    per_query_l1: np.ndarray

    def __post_init__(self):
        per = np.asarray(self.per_query_l1, dtype=np.float64)
        object.__setattr__(self, "per_query_l1", per)
        mean = float(per.mean()) if per.size else 0.0
        if abs(mean - self.mean_l1) > 1e-12:
            raise ValueError("mean_l1 does not match per-query values")
        if not 0.0 <= self.mean_l1 < 2.0:
            raise ValueError(f"mean_l1 out of range: {self.mean_l1!r}")


def budget_report(y_clean, y_defended, delta_err: float) -> BudgetReport:
    clean = np.asarray(y_clean, dtype=np.float64)
    defended = np.asarray(y_defended, dtype=np.float64)
    per = np.abs(defended - clean).sum(axis=1)
    return BudgetReport(
        mean_l1=float(per.mean()), delta_clf_err=float(delta_err), per_query_l1=per
    )


@dataclass(frozen=True)
class CurvePoint:
    budget: float
    adv_err: float
    mean_l1: float
    delta_clf_err: float
    seed: int


@dataclass
class DefenseCurve:
    points: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = sorted(self.points, key=lambda p: (p.budget, p.seed))

    def add(self, point: CurvePoint) -> None:
        self.points.append(point)
        self.points.sort(key=lambda p: (p.budget, p.seed))


def delta_clf_err(defender: DiffNet, oracle: DefendedOracle, test) -> float:
    """Defender utility cost in percentage points: error of the tie-broken
    argmax of defended posteriors minus the clean error, both on the test
    set, with the defense applied exactly as it is to queries."""
    clean = np.stack([forward_batch(defender, xi[None, :])[0] for xi in test.x])
    defended = oracle.respond_batch(test.x)
    clean_pred = np.array([argmax_lowest(r) for r in clean])
    defended_pred = np.array([argmax_lowest(r) for r in defended])
    clean_err = float((clean_pred != test.labels).mean())
    defended_err = float((defended_pred != test.labels).mean())
    return (defended_err - clean_err) * 100.0


@dataclass(frozen=True)
class TransferPerformance:
    """Per-query transfer diagnostics against an adversary snapshot.

    ``mean_delta`` is the mean cosine gain of the steered update over the
    clean update against the target direction; positive means the
    perturbation transfers.  The raw inner products are kept because only
    the inner-product improvement is solver-guaranteed (the solver optimizes
    the inner product, not the cosine).
    """

    mean_delta: float
    n_used: int
    n_excluded: int
    cosine_delta: np.ndarray
    inner_clean: np.ndarray
    inner_steered: np.ndarray

    def __float__(self) -> float:
        return self.mean_delta


def transfer_performance(
    surrogate: DiffNet,
    adversary_snapshot: DiffNet,
    queries,
    defender: DiffNet,
    eps: Budget,
    z_strategy: TargetStrategy,
) -> TransferPerformance:
    if z_strategy.kind not in ("all_ones", "custom"):
        raise ValueError("transfer diagnostics need a fixed (query-independent) target")
    x = np.asarray(queries, dtype=np.float64)
    z = make_target(z_strategy, surrogate).values
    z_adv = z
    if adversary_snapshot.n_params != surrogate.n_params:
        if z_strategy.kind != "all_ones":
            raise ValueError(
                "custom targets need surrogate and adversary of equal size"
            )
        z_adv = np.ones(adversary_snapshot.n_params)
    z_norm = float(np.linalg.norm(z_adv))

    clean_posteriors = forward_batch(defender, x)
    deltas, inner_clean, inner_steered = [], [], []
    excluded = 0
    for xi, yi in zip(x, clean_posteriors):
        c = gz_double_backprop(surrogate, xi, yi, z).values
        steered = redirect_values(c, yi, eps.epsilon)
        g_clean = update_gradient(adversary_snapshot, xi, yi).values
        g_steered = update_gradient(adversary_snapshot, xi, steered).values
        n_clean = float(np.linalg.norm(g_clean))
        n_steered = float(np.linalg.norm(g_steered))
        if min(n_clean, n_steered, z_norm) < ZERO_GRAD_TOL:
            excluded += 1
            continue
        ic = float(np.dot(g_clean, z_adv))
        it = float(np.dot(g_steered, z_adv))
        inner_clean.append(ic)
        inner_steered.append(it)
        deltas.append(it / (n_steered * z_norm) - ic / (n_clean * z_norm))
    deltas = np.asarray(deltas)
    return TransferPerformance(
        mean_delta=float(deltas.mean()) if deltas.size else 0.0,
        n_used=int(deltas.size),
        n_excluded=excluded,
        cosine_delta=deltas,
        inner_clean=np.asarray(inner_clean),
        inner_steered=np.asarray(inner_steered),
    )


def emit_curve(curve: DefenseCurve, path) -> None:
    """Write a curve as CSV (17 significant digits) plus a JSON sidecar."""
    lines = [CSV_HEADER]
    for p in curve.points:
        lines.append(
            ",".join(
                [_fmt(p.budget), _fmt(p.adv_err), _fmt(p.mean_l1), _fmt(p.delta_clf_err), str(int(p.seed))]
            )
        )
    atomic_write_text(path, "\n".join(lines) + "\n")
    sidecar = {
        "columns": CSV_HEADER.split(","),
        "n_points": len(curve.points),
        "metadata": curve.metadata,
    }
    atomic_write_text(
        os.fspath(path) + ".json", json.dumps(sidecar, sort_keys=True, indent=1) + "\n"
    )


def read_curve(path) -> DefenseCurve:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        if header != CSV_HEADER:
            raise ValueError(f"unexpected curve header {header!r}")
        points = []
        for line in f:
            line = line.strip()
            if not line:
                continue
            b, e, l1, d, seed = line.split(",")
            points.append(
                CurvePoint(
                    budget=float(b),
                    adv_err=float(e),
                    mean_l1=float(l1),
                    delta_clf_err=float(d),
                    seed=int(seed),
                )
            )
    metadata = {}
    sidecar_path = os.fspath(path) + ".json"
    if os.path.exists(sidecar_path):
        with open(sidecar_path, "r", encoding="utf-8") as f:
            metadata = json.load(f).get("metadata", {})
    return DefenseCurve(points=points, metadata=metadata)
