"""Operator entry point.

Subcommands: ``verify`` (run the oracle suites), ``gen-data``,
``train-defender``, ``run`` (the staged defense-vs-attack pipeline),
``watermark``, and ``bench`` (solver timing across problem sizes).

Exit codes: 0 success, 2 config error, 3 verification failure, 4 runtime
numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import diffnet
from . import simplex_redirect as sr
from .diffnet import TrainingDivergedError
from .pipeline import (
    ConfigError,
    ExperimentConfig,
    config_hash,
    run_experiment,
    run_watermark,
    train_defenders,
    write_datasets,
)

__all__ = ["main", "run_verify", "run_bench", "VerifyReport"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VERIFY = 3
EXIT_NUMERICAL = 4


# ---------------------------------------------------------------------------
# verify: the oracle suites.
# ---------------------------------------------------------------------------


@dataclass
class SuiteResult:
    """`cases` counts instances (the --cases contract); one instance may
    contribute several recorded checks."""

    name: str
    cases: int = 0
    checks: int = 0
    failures: int = 0
    max_error: float = 0.0
    notes: list = field(default_factory=list)

    def begin_case(self) -> None:
        self.cases += 1

    def record(self, error: float, tol: float, note: str) -> None:
        self.checks += 1
        self.max_error = max(self.max_error, error)
        if not error <= tol:  # also catches nan
            self.failures += 1
            if len(self.notes) < 10:
                self.notes.append(f"{note}: error {error!r} > {tol!r}")


@dataclass
class VerifyReport:
    suites: dict

    @property
    def ok(self) -> bool:
        return all(s.failures == 0 for s in self.suites.values())

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "suites": {
                name: {
                    "cases": s.cases,
                    "checks": s.checks,
                    "failures": s.failures,
                    "max_error": s.max_error,
                    "notes": s.notes,
                }
                for name, s in self.suites.items()
            },
        }


def _verify_solver(cases: int, n_max: int, seed: int) -> SuiteResult:
    """Greedy solver vs the independent LP route, plus feasibility and the
    greedy-choice spot check, on seeded random instances."""
    result = SuiteResult("solver")
    rng = np.random.default_rng(seed)
    eps_grid = (0.1, 0.5, 1.0, 1.9)
    for i in range(cases):
        result.begin_case()
        n = int(rng.integers(2, n_max + 1))
        c = sr.ValueVector(rng.standard_normal(n))
        y = sr.Posterior(rng.dirichlet(np.ones(n)))
        eps = sr.Budget(eps_grid[i % len(eps_grid)])
        steered = sr.redirect(c, y, eps)
        got = sr.objective(c, steered)
        want = sr.objective(c, sr.lp_oracle(c, y, eps))
        result.record(abs(got - want), 1e-9, f"case {i} (n={n}, eps={eps.epsilon})")

        rep = sr.feasibility_report(y, steered, eps)
        result.record(0.0 if rep.feasible else 1.0, 0.5, f"case {i} feasibility")

        receiver = int(np.argsort(c.values, kind="stable")[-1])
        expected_top = min(y.probs[receiver] + eps.epsilon / 2.0, 1.0)
        exact = steered.probs[receiver] == expected_top
        result.record(0.0 if exact else 1.0, 0.5, f"case {i} greedy choice")
    return result


def _verify_gz(cases: int, seed: int) -> SuiteResult:
    """Double-backward value vectors vs the explicit Jacobian product."""
    result = SuiteResult("gz")
    rng = np.random.default_rng(seed)
    for i in range(cases):
        result.begin_case()
        n = int(rng.integers(2, 11))
        hidden = int(rng.integers(4, 24))
        in_w = int(rng.integers(2, 10))
        net = DiffNetFactory.random(rng, in_w, hidden, n)
        x = rng.standard_normal(in_w)
        y = rng.dirichlet(np.ones(n))
        z = rng.standard_normal(net.n_params)
        got = diffnet.gz_double_backprop(net, x, y, z).values
        want = diffnet.log_posterior_jacobian(net, x).rows @ z
        err = float(np.max(np.abs(got - want) / (1.0 + np.abs(want))))
        result.record(err, 1e-8, f"case {i} (n={n}, d={net.n_params})")
    return result


def _verify_gradient(cases: int, seed: int) -> SuiteResult:
    """Update gradients vs central finite differences and the y'G identity."""
    result = SuiteResult("gradient")
    rng = np.random.default_rng(seed)
    for i in range(cases):
        result.begin_case()
        n = int(rng.integers(2, 7))
        hidden = int(rng.integers(4, 16))
        in_w = int(rng.integers(2, 8))
        net = DiffNetFactory.random(rng, in_w, hidden, n)
        x = rng.standard_normal(in_w)
        y = rng.dirichlet(np.ones(n))
        ug = diffnet.update_gradient(net, x, y).values
        fd = diffnet.finite_diff_gradient(net, x, y, 1e-6).values
        scale = max(1.0, float(np.abs(ug).max()))
        result.record(float(np.abs(fd - ug).max()) / scale, 1e-6, f"case {i} fd")
        yg = y @ diffnet.log_posterior_jacobian(net, x).rows
        result.record(float(np.abs(ug - yg).max()), 1e-10, f"case {i} identity")
    return result


class DiffNetFactory:
    """Seeded random small nets for the verification suites."""

    @staticmethod
    def random(rng: np.random.Generator, in_w: int, hidden: int, n: int):
        net = diffnet.DiffNet.initialized(
            [(in_w, hidden, "relu"), (hidden, n, "identity")],
            seed=int(rng.integers(2**31)),
        )
        return net


def run_verify(suite: str = "all", n_max: int = 8, cases: int = 200, seed: int = 0) -> VerifyReport:
    suites = {}
    if suite in ("all", "solver"):
        suites["solver"] = _verify_solver(cases, n_max, seed)
    if suite in ("all", "gz"):
        suites["gz"] = _verify_gz(cases, seed + 1)
    if suite in ("all", "gradient"):
        suites["gradient"] = _verify_gradient(cases, seed + 2)
    return VerifyReport(suites=suites)


def _cmd_verify(args) -> int:
    report = run_verify(args.suite, args.n, args.cases, args.seed)
    for name, s in report.suites.items():
        status = "ok" if s.failures == 0 else "FAIL"
        print(f"[{status}] suite={name} cases={s.cases} checks={s.checks} "
              f"failures={s.failures} max_error={s.max_error:.3e}")
        for note in s.notes:
            print(f"       {note}")
    if args.report:
        from .ioutil import atomic_write_text

        atomic_write_text(args.report, json.dumps(report.to_dict(), indent=1) + "\n")
    if not report.ok:
        print(json.dumps(report.to_dict()))
        return EXIT_VERIFY
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench: solver timing across problem sizes.
# ---------------------------------------------------------------------------


def run_bench(sizes=(1_000, 10_000, 100_000), repeats: int = 25, seed: int = 0) -> dict:
    """Median per-solve wall time and the n*log(n)-normalized ratio per size.

    The value vector is prepared outside the timed region, matching the
    deployment shape where it comes from the differentiation engine.
    """
    rng = np.random.default_rng(seed)
    rows = {}
    for n in sizes:
        c = rng.standard_normal(n)
        y = rng.dirichlet(np.ones(n))
        eps = 0.5
        sr.redirect_values(c, y, eps)  # warm up
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            sr.redirect_values(c, y, eps)
            times.append(time.perf_counter() - t0)
        median = float(np.median(times))
        rows[int(n)] = {
            "median_seconds": median,
            "normalized": median / (n * math.log(n)),
        }
    return rows


def _cmd_bench(args) -> int:
    sizes = tuple(int(s) for s in args.sizes.split(","))
    rows = run_bench(sizes, args.repeats, args.seed)
    print(f"{'n':>10} {'median_ms':>12} {'per n*log(n)':>14}")
    for n, row in rows.items():
        print(f"{n:>10} {row['median_seconds'] * 1e3:>12.3f} {row['normalized']:>14.3e}")
    norms = [row["normalized"] for row in rows.values()]
    spread = max(norms) / min(norms)
    print(f"normalized spread across sizes: {spread:.2f}x")
    if args.csv:
        from .ioutil import atomic_write_text

        lines = ["n,median_seconds,normalized"]
        for n, row in rows.items():
            lines.append(f"{n},{row['median_seconds']:.17g},{row['normalized']:.17g}")
        atomic_write_text(args.csv, "\n".join(lines) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# config-driven commands.
# ---------------------------------------------------------------------------


def _load_config(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("--config", "a config file is required")
    cfg = ExperimentConfig.from_json_file(args.config)
    if getattr(args, "seed", None) is not None:
        # narrow the run to one seed; outputs are keyed per (hash, seed), so
        # this composes with earlier runs of the full list
        cfg = dataclasses.replace(cfg, seeds=(int(args.seed),))
    return cfg


def _cmd_run(args) -> int:
    cfg = _load_config(args)
    written = run_experiment(
        cfg, force=args.force, jobs=args.jobs, output_dir=args.output_dir
    )
    print(f"config_hash={config_hash(cfg)}")
    if written:
        for path in written:
            print(f"wrote {path}")
    else:
        print("all outputs up to date (use --force to recompute)")
    return EXIT_OK


def _cmd_watermark(args) -> int:
    cfg = _load_config(args)
    report = run_watermark(cfg, force=args.force, output_dir=args.output_dir)
    for seed, by_eps in report.items():
        for eps, stats in by_eps.items():
            print(
                f"seed={seed} eps={eps:g} wm_posterior mean={stats['mean']:.4f} "
                f"min={stats['min']:.4f}"
            )
    return EXIT_OK


def _cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    for path in write_datasets(cfg, output_dir=args.output_dir, force=args.force):
        print(f"wrote {path}")
    return EXIT_OK


def _cmd_train_defender(args) -> int:
    cfg = _load_config(args)
    for path in train_defenders(cfg, output_dir=args.output_dir, force=args.force):
        print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gradshield",
        description="Perturbation-based model-stealing defense laboratory",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run the oracle verification suites")
    p.add_argument("--suite", choices=("all", "solver", "gz", "gradient"), default="all")
    p.add_argument("--n", type=int, default=8, help="max problem size for solver cases")
    p.add_argument("--cases", type=int, default=200, help="cases per suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", default=None, help="write a JSON report here")
    p.set_defaults(func=_cmd_verify)

    for name, func in (
        ("run", _cmd_run),
        ("watermark", _cmd_watermark),
        ("gen-data", _cmd_gen_data),
        ("train-defender", _cmd_train_defender),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--force", action="store_true")
        p.add_argument("--output-dir", default=None)
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--seed", type=int, default=None,
                       help="run only this seed instead of the config's list")
        p.set_defaults(func=func)

    p = sub.add_parser("bench", help="solver timing across problem sizes")
    p.add_argument("--sizes", default="1000,10000,100000")
    p.add_argument("--repeats", type=int, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (sr.NumericalError, TrainingDivergedError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
