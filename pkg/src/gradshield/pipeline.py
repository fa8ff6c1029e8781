"""Configuration-driven experiment pipeline.

One experiment = a seeded synthetic task, a defender trained on it, a grid
of (defense, budget) cells whose defended responses train adversary clones,
and the resulting defense curves.  Everything derives from the JSON config
and the per-run seed, so reruns are bit-identical; finished outputs are
skipped unless forced.

Stage seeds are derived from the run seed through numpy's SeedSequence with
fixed stage tags, so e.g. the attacker's shuffle never depends on which
defense produced its labels.
"""

from __future__ import annotations

import hashlib
import json
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .defense_engine import (
    DEFENSE_METHODS,
    DefendedOracle,
    DefenseConfig,
    SurrogateConfig,
    TargetStrategy,
)
from .diffnet import (
    DiffNet,
    TrainerConfig,
    forward_batch,
    save_checkpoint,
    sgd_train,
    examples_from_arrays,
)
from .extraction_sim import (
    AttackConfig,
    SyntheticTaskSpec,
    TaskData,
    evaluate_error,
    gen_task,
    train_clone_on_labels,
    watermark_reprogram,
)
from .ioutil import atomic_write_text
from .metrics_report import CurvePoint, DefenseCurve, delta_clf_err, emit_curve
from .simplex_redirect import Budget

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "DefenseEntry",
    "WatermarkSettings",
    "config_hash",
    "derive_seed",
    "run_experiment",
    "run_watermark",
    "write_datasets",
    "train_defenders",
]

SCHEMA_VERSION = 1

# Stage tags for seed derivation (fixed; part of the reproducibility contract).
STAGE_TASK = 0
STAGE_DEFENDER_INIT = 1
STAGE_DEFENDER_TRAIN = 2
STAGE_SURROGATE = 3
STAGE_ATTACK_INIT = 4
STAGE_ATTACK_TRAIN = 5
STAGE_DEFENSE = 6
STAGE_WATERMARK = 7


class ConfigError(ValueError):
    """Invalid experiment configuration; message names the offending field."""

    def __init__(self, field_path: str, message: str):
        self.field_path = field_path
        super().__init__(f"{field_path}: {message}")


def derive_seed(seed: int, *tags: int) -> int:
    return int(np.random.SeedSequence([int(seed), *map(int, tags)]).generate_state(1)[0])


def _require(mapping: dict, key: str, where: str):
    if key not in mapping:
        raise ConfigError(f"{where}.{key}" if where else key, "missing required field")
    return mapping[key]


def _layer_spec_from(obj, where: str):
    try:
        return tuple((int(i), int(o), str(a)) for i, o, a in obj)
    except (TypeError, ValueError) as exc:
        raise ConfigError(where, f"not a valid layer spec: {exc}") from exc


def _trainer_dict(obj, where: str) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(where, "trainer settings must be an object")
    allowed = {
        "lr",
        "epochs",
        "batch_size",
        "momentum",
        "weight_decay",
        "lr_schedule",
        "schedule_epochs",
    }
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(where, f"unknown trainer fields: {sorted(unknown)}")
    for key in ("lr", "epochs", "batch_size"):
        if key not in obj:
            raise ConfigError(f"{where}.{key}", "missing required field")
    return dict(obj)


def _trainer_config(settings: dict, seed: int) -> TrainerConfig:
    return TrainerConfig(seed=seed, **settings)


@dataclass(frozen=True)
class DefenseEntry:
    """One row of the defense grid: a method plus its budget axis.

    ``name`` labels the output subdirectory; it defaults to the method and
    must be unique across entries (two grad2 rows with different targets
    need distinct names).
    """

    method: str
    name: str = ""
    budgets: tuple = ()
    k: int | None = None
    target: str = "all_ones"
    surrogate: dict | None = None

    def __post_init__(self):
        if not self.name:
            object.__setattr__(self, "name", self.method)

    def budget_axis(self):
        if self.method == "none":
            return (0.0,)
        if self.method == "topk_truncate":
            return (float(self.k),)
        return self.budgets

    def make_defense_config(self, budget: float, run_seed: int) -> DefenseConfig:
        if self.method == "none":
            return DefenseConfig(method="none")
        if self.method == "topk_truncate":
            return DefenseConfig(method="topk_truncate", k=self.k)
        if self.method == "random_interp":
            return DefenseConfig(
                method="random_interp",
                eps=budget,
                seed=derive_seed(run_seed, STAGE_DEFENSE),
            )
        surrogate = SurrogateConfig(
            layer_spec=_layer_spec_from(self.surrogate["layer_spec"], "surrogate.layer_spec"),
            distill_epochs=int(self.surrogate.get("distill_epochs", 10)),
            early_stop_epoch=int(self.surrogate.get("early_stop_epoch", 10)),
            train_source=str(self.surrogate.get("train_source", "query_set")),
            seed=derive_seed(run_seed, STAGE_SURROGATE),
            trainer=(
                _trainer_config(
                    self.surrogate["trainer"], derive_seed(run_seed, STAGE_SURROGATE, 1)
                )
                if "trainer" in self.surrogate
                else None
            ),
        )
        return DefenseConfig(
            method="grad2",
            eps=budget,
            surrogate=surrogate,
            target=TargetStrategy(kind=self.target),
        )


@dataclass(frozen=True)
class WatermarkSettings:
    eps_grid: tuple = (0.0, 0.5, 1.0)
    n_pairs: int = 3
    clone_layer_spec: tuple = ()
    trainer: dict = field(default_factory=dict)
    rand_eval_samples: int = 500
    query_size: int | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    schema_version: int
    experiment_id: str
    output_dir: str
    seeds: tuple
    task: SyntheticTaskSpec
    defender_layer_spec: tuple
    defender_trainer: dict
    attack_layer_spec: tuple
    attack_trainer: dict
    attack_label_mode: str = "full_posterior"
    query_distribution: str = "aware"
    defenses: tuple = ()
    watermark: WatermarkSettings | None = None

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        version = _require(raw, "schema_version", "")
        if version != SCHEMA_VERSION:
            raise ConfigError("schema_version", f"expected {SCHEMA_VERSION}, got {version!r}")

        seeds = tuple(int(s) for s in _require(raw, "seeds", ""))
        if len(set(seeds)) != len(seeds):
            raise ConfigError("seeds", "seeds must be distinct")
        if not seeds:
            raise ConfigError("seeds", "need at least one seed")

        task_raw = dict(_require(raw, "task", ""))
        task_raw.pop("seed", None)  # per-run task seeds are derived
        try:
            task = SyntheticTaskSpec(**task_raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError("task", str(exc)) from exc

        defender = _require(raw, "defender", "")
        attack = _require(raw, "attack", "")
        label_mode = str(attack.get("label_mode", "full_posterior"))
        if label_mode not in ("full_posterior", "argmax_onehot"):
            raise ConfigError("attack.label_mode", f"unknown mode {label_mode!r}")
        distribution = str(attack.get("query_distribution", "aware"))
        if distribution not in ("aware", "limited"):
            raise ConfigError("attack.query_distribution", f"unknown value {distribution!r}")

        entries = []
        for i, entry in enumerate(raw.get("defenses", [])):
            where = f"defenses[{i}]"
            method = str(_require(entry, "method", where))
            if method not in DEFENSE_METHODS:
                raise ConfigError(f"{where}.method", f"unknown method {method!r}")
            budgets = tuple(float(b) for b in entry.get("budgets", ()))
            if method in ("grad2", "random_interp"):
                if not budgets:
                    raise ConfigError(f"{where}.budgets", "budget sweep must be nonempty")
                if any(b2 <= b1 for b1, b2 in zip(budgets, budgets[1:])):
                    raise ConfigError(f"{where}.budgets", "budgets must be strictly increasing")
                if any(not 0.0 <= b < 2.0 for b in budgets):
                    raise ConfigError(f"{where}.budgets", "budgets must lie in [0, 2)")
            elif budgets:
                raise ConfigError(f"{where}.budgets", f"{method} takes no budget sweep")
            k = entry.get("k")
            if (method == "topk_truncate") != (k is not None):
                raise ConfigError(f"{where}.k", "k is required exactly for topk_truncate")
            surrogate = entry.get("surrogate")
            if (method == "grad2") != (surrogate is not None):
                raise ConfigError(f"{where}.surrogate", "surrogate is required exactly for grad2")
            if surrogate is not None:
                _require(surrogate, "layer_spec", f"{where}.surrogate")
            target = str(entry.get("target", "all_ones"))
            if method == "grad2" and target not in ("all_ones", "min_inner_product"):
                raise ConfigError(f"{where}.target", f"unsupported sweep target {target!r}")
            entries.append(
                DefenseEntry(
                    method=method,
                    name=str(entry.get("name", method)),
                    budgets=budgets,
                    k=int(k) if k is not None else None,
                    target=target,
                    surrogate=dict(surrogate) if surrogate is not None else None,
                )
            )

        names = [e.name for e in entries]
        if len(set(names)) != len(names):
            raise ConfigError("defenses", f"entry names must be unique, got {names}")

        watermark = None
        if "watermark" in raw:
            wm = raw["watermark"]
            watermark = WatermarkSettings(
                eps_grid=tuple(float(e) for e in wm.get("eps_grid", (0.0, 0.5, 1.0))),
                n_pairs=int(wm.get("n_pairs", 3)),
                clone_layer_spec=_layer_spec_from(
                    wm.get("clone_layer_spec", attack["layer_spec"]),
                    "watermark.clone_layer_spec",
                ),
                trainer=_trainer_dict(
                    wm.get("trainer", attack["trainer"]), "watermark.trainer"
                ),
                rand_eval_samples=int(wm.get("rand_eval_samples", 500)),
                query_size=int(wm["query_size"]) if "query_size" in wm else None,
            )

        return cls(
            schema_version=int(version),
            experiment_id=str(_require(raw, "experiment_id", "")),
            output_dir=str(_require(raw, "output_dir", "")),
            seeds=seeds,
            task=task,
            defender_layer_spec=_layer_spec_from(
                _require(defender, "layer_spec", "defender"), "defender.layer_spec"
            ),
            defender_trainer=_trainer_dict(
                _require(defender, "trainer", "defender"), "defender.trainer"
            ),
            attack_layer_spec=_layer_spec_from(
                _require(attack, "layer_spec", "attack"), "attack.layer_spec"
            ),
            attack_trainer=_trainer_dict(
                _require(attack, "trainer", "attack"), "attack.trainer"
            ),
            attack_label_mode=label_mode,
            query_distribution=distribution,
            defenses=tuple(entries),
            watermark=watermark,
        )

    @classmethod
    def from_json_file(cls, path) -> "ExperimentConfig":
        try:
            with open(path, "r", encoding="utf-8") as f:
                raw = json.load(f)
        except OSError as exc:
            raise ConfigError("<file>", f"cannot read {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON in {path}: {exc}") from exc
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        task = asdict(self.task)
        task.pop("seed")
        out = {
            "schema_version": self.schema_version,
            "experiment_id": self.experiment_id,
            "output_dir": self.output_dir,
            "seeds": list(self.seeds),
            "task": task,
            "defender": {
                "layer_spec": [list(l) for l in self.defender_layer_spec],
                "trainer": dict(self.defender_trainer),
            },
            "attack": {
                "layer_spec": [list(l) for l in self.attack_layer_spec],
                "trainer": dict(self.attack_trainer),
                "label_mode": self.attack_label_mode,
                "query_distribution": self.query_distribution,
            },
            "defenses": [
                {
                    "method": e.method,
                    **({"name": e.name} if e.name != e.method else {}),
                    **({"budgets": list(e.budgets)} if e.budgets else {}),
                    **({"k": e.k} if e.k is not None else {}),
                    **({"target": e.target} if e.method == "grad2" else {}),
                    **({"surrogate": e.surrogate} if e.surrogate is not None else {}),
                }
                for e in self.defenses
            ],
        }
        if self.watermark is not None:
            out["watermark"] = {
                "eps_grid": list(self.watermark.eps_grid),
                "n_pairs": self.watermark.n_pairs,
                "clone_layer_spec": [list(l) for l in self.watermark.clone_layer_spec],
                "trainer": dict(self.watermark.trainer),
                "rand_eval_samples": self.watermark.rand_eval_samples,
                **(
                    {"query_size": self.watermark.query_size}
                    if self.watermark.query_size is not None
                    else {}
                ),
            }
        return out


def config_hash(cfg: ExperimentConfig) -> str:
    """Stable digest of the experiment semantics.

    The output location and the seed list are excluded: outputs are keyed
    per (hash, seed), so extending the seed list must not invalidate the
    seeds already computed.
    """
    payload = cfg.to_dict()
    payload.pop("output_dir")
    payload.pop("seeds")
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Staged execution.
# ---------------------------------------------------------------------------


def _task_for_seed(cfg: ExperimentConfig, seed: int) -> TaskData:
    return gen_task(replace(cfg.task, seed=derive_seed(seed, STAGE_TASK)))


def _train_defender(cfg: ExperimentConfig, task: TaskData, seed: int) -> DiffNet:
    init = DiffNet.initialized(cfg.defender_layer_spec, derive_seed(seed, STAGE_DEFENDER_INIT))
    trainer = _trainer_config(cfg.defender_trainer, derive_seed(seed, STAGE_DEFENDER_TRAIN))
    n = cfg.task.n_classes
    labels = np.eye(n)[task.defender_train.labels]
    return sgd_train(init, examples_from_arrays(task.defender_train.x, labels), trainer)


def _attack_config(cfg: ExperimentConfig, seed: int) -> AttackConfig:
    return AttackConfig(
        layer_spec=cfg.attack_layer_spec,
        trainer=_trainer_config(cfg.attack_trainer, derive_seed(seed, STAGE_ATTACK_TRAIN)),
        label_mode=cfg.attack_label_mode,
        seed=derive_seed(seed, STAGE_ATTACK_INIT),
    )


def _queries(cfg: ExperimentConfig, task: TaskData):
    return task.queries_aware if cfg.query_distribution == "aware" else task.queries_limited


def _curve_path(outdir: str, cfg: ExperimentConfig, method: str, seed: int) -> str:
    return os.path.join(outdir, cfg.experiment_id, method, f"{seed}.csv")


def _finished(path: str, chash: str) -> bool:
    sidecar = path + ".json"
    if not (os.path.exists(path) and os.path.exists(sidecar)):
        return False
    try:
        with open(sidecar, "r", encoding="utf-8") as f:
            meta = json.load(f).get("metadata", {})
    except (OSError, json.JSONDecodeError):
        return False
    return meta.get("config_hash") == chash


def _labels_path(outdir, cfg, method, seed, budget) -> str:
    return os.path.join(
        outdir, cfg.experiment_id, method, f"labels_seed{seed}_budget{budget:g}.csv"
    )


def _dump_labels(path: str, defended: np.ndarray) -> None:
    n = defended.shape[1]
    lines = [",".join(["query_index"] + [f"y_{j}" for j in range(n)])]
    for i, row in enumerate(defended):
        lines.append(str(i) + "," + ",".join(f"{v:.17g}" for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def run_seed(cfg: ExperimentConfig, seed: int, outdir: str, force: bool = False) -> list:
    """All pipeline stages for one seed; returns the curve files written."""
    chash = config_hash(cfg)
    pending = [
        entry
        for entry in cfg.defenses
        if force or not _finished(_curve_path(outdir, cfg, entry.name, seed), chash)
    ]
    if not pending:
        return []

    written = []
    try:
        task = _task_for_seed(cfg, seed)
        defender = _train_defender(cfg, task, seed)
        defender_err = evaluate_error(defender, task.defender_test)
        save_checkpoint(
            defender, os.path.join(outdir, cfg.experiment_id, "defender", f"{seed}.ckpt")
        )
        queries = _queries(cfg, task)
        # same per-example arithmetic as the serving oracle, so budget
        # accounting is exact (an undefended run reports mean_l1 == 0.0)
        clean_q = np.stack(
            [forward_batch(defender, xi[None, :])[0] for xi in queries.x]
        )
        attack_cfg = _attack_config(cfg, seed)

        for entry in pending:
            points = []
            for budget in entry.budget_axis():
                dcfg = entry.make_defense_config(budget, seed)
                oracle = DefendedOracle.build(
                    defender, dcfg, queries=queries.x, defender_train=task.defender_train.x
                )
                defended = oracle.respond_batch(queries.x)
                _dump_labels(
                    _labels_path(outdir, cfg, entry.name, seed, budget), defended
                )
                clone = train_clone_on_labels(queries.x, defended, attack_cfg)
                save_checkpoint(
                    clone,
                    os.path.join(
                        outdir,
                        cfg.experiment_id,
                        entry.name,
                        f"clone_seed{seed}_budget{budget:g}.ckpt",
                    ),
                )
                points.append(
                    CurvePoint(
                        budget=float(budget),
                        adv_err=evaluate_error(clone, task.defender_test),
                        mean_l1=float(np.abs(defended - clean_q).sum(axis=1).mean()),
                        delta_clf_err=delta_clf_err(defender, oracle, task.defender_test),
                        seed=seed,
                    )
                )
            curve = DefenseCurve(
                points=points,
                metadata={
                    "config_hash": chash,
                    "experiment_id": cfg.experiment_id,
                    "method": entry.method,
                    "name": entry.name,
                    "seeds": [seed],
                    "defender_err": defender_err,
                },
            )
            path = _curve_path(outdir, cfg, entry.name, seed)
            emit_curve(curve, path)
            written.append(path)
    except Exception as exc:
        marker = os.path.join(outdir, cfg.experiment_id, f"FAILED_seed{seed}.json")
        atomic_write_text(
            marker,
            json.dumps(
                {"seed": seed, "error": str(exc), "type": type(exc).__name__,
                 "trace": traceback.format_exc()},
                indent=1,
            ),
        )
        raise
    return written


def run_experiment(
    cfg: ExperimentConfig, force: bool = False, jobs: int = 1, output_dir=None
) -> list:
    outdir = os.fspath(output_dir) if output_dir else cfg.output_dir
    if jobs <= 1 or len(cfg.seeds) <= 1:
        written = []
        for seed in cfg.seeds:
            written.extend(run_seed(cfg, seed, outdir, force))
        return written
    written = []
    with ProcessPoolExecutor(max_workers=min(jobs, len(cfg.seeds))) as pool:
        futures = [pool.submit(run_seed, cfg, seed, outdir, force) for seed in cfg.seeds]
        for fut in futures:
            written.extend(fut.result())
    return written


# ---------------------------------------------------------------------------
# Watermark stage.
# ---------------------------------------------------------------------------


def _pick_pair(task: TaskData, seed: int, pair_id: int):
    """A watermark input from the defender's test set and a random wrong label."""
    rng = np.random.default_rng([seed, STAGE_WATERMARK, pair_id])
    idx = int(rng.integers(len(task.defender_test)))
    x_w = task.defender_test.x[idx]
    true = int(task.defender_test.labels[idx])
    wrong = [l for l in range(task.spec.n_classes) if l != true]
    y_w = int(wrong[rng.integers(len(wrong))])
    return x_w, y_w


def run_watermark(cfg: ExperimentConfig, force: bool = False, output_dir=None) -> dict:
    """Watermark reprogramming over the configured budget grid and pairs.

    Returns {seed: {eps: {"mean": ..., "min": ...}}} summaries over pairs and
    writes one CSV per seed with columns
    eps,pair_id,wm_posterior,rand_x_posterior,rand_xy_posterior.
    """
    if cfg.watermark is None:
        raise ConfigError("watermark", "config has no watermark section")
    wm = cfg.watermark
    outdir = os.fspath(output_dir) if output_dir else cfg.output_dir
    chash = config_hash(cfg)
    report: dict = {}

    for seed in cfg.seeds:
        path = os.path.join(outdir, cfg.experiment_id, "watermark", f"{seed}.csv")
        if not force and _finished_watermark(path, chash):
            report[seed] = _summarize_watermark_csv(path)
            continue
        task = _task_for_seed(cfg, seed)
        defender = _train_defender(cfg, task, seed)
        queries = _queries(cfg, task).x
        if wm.query_size is not None:
            queries = queries[: wm.query_size]
        trainer = _trainer_config(wm.trainer, derive_seed(seed, STAGE_ATTACK_TRAIN))
        rows = []
        for pair_id in range(wm.n_pairs):
            x_w, y_w = _pick_pair(task, seed, pair_id)
            for eps in wm.eps_grid:
                init = DiffNet.initialized(
                    wm.clone_layer_spec, derive_seed(seed, STAGE_ATTACK_INIT)
                )
                clone = watermark_reprogram(
                    init, defender, queries, (x_w, y_w), Budget(eps), trainer
                )
                wm_post = float(forward_batch(clone, x_w[None, :])[0][y_w])
                eval_rng = np.random.default_rng([seed, STAGE_WATERMARK, pair_id, 1])
                sample = eval_rng.choice(
                    len(task.defender_test),
                    size=min(wm.rand_eval_samples, len(task.defender_test)),
                    replace=False,
                )
                posts = forward_batch(clone, task.defender_test.x[sample])
                rand_x = float(posts[:, y_w].mean())
                rand_labels = eval_rng.integers(task.spec.n_classes, size=len(sample))
                rand_xy = float(posts[np.arange(len(sample)), rand_labels].mean())
                rows.append((eps, pair_id, wm_post, rand_x, rand_xy))
        _emit_watermark_csv(path, rows, chash, cfg.experiment_id, seed)
        report[seed] = _summarize_rows(rows)
    return report


def _emit_watermark_csv(path, rows, chash, experiment_id, seed) -> None:
    lines = ["eps,pair_id,wm_posterior,rand_x_posterior,rand_xy_posterior"]
    for eps, pair_id, wm_post, rand_x, rand_xy in rows:
        lines.append(
            f"{eps:.17g},{pair_id},{wm_post:.17g},{rand_x:.17g},{rand_xy:.17g}"
        )
    atomic_write_text(path, "\n".join(lines) + "\n")
    atomic_write_text(
        path + ".json",
        json.dumps(
            {
                "metadata": {
                    "config_hash": chash,
                    "experiment_id": experiment_id,
                    "seeds": [seed],
                }
            },
            sort_keys=True,
            indent=1,
        )
        + "\n",
    )


def _finished_watermark(path, chash) -> bool:
    return _finished(path, chash)


def _summarize_rows(rows) -> dict:
    by_eps: dict = {}
    for eps, _, wm_post, _, _ in rows:
        by_eps.setdefault(eps, []).append(wm_post)
    return {
        eps: {"mean": float(np.mean(v)), "min": float(np.min(v))}
        for eps, v in sorted(by_eps.items())
    }


def _summarize_watermark_csv(path) -> dict:
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        f.readline()
        for line in f:
            if not line.strip():
                continue
            eps, pair_id, wm_post, rand_x, rand_xy = line.strip().split(",")
            rows.append((float(eps), int(pair_id), float(wm_post), float(rand_x), float(rand_xy)))
    return _summarize_rows(rows)


# ---------------------------------------------------------------------------
# Data and defender stages exposed as their own commands.
# ---------------------------------------------------------------------------


def write_datasets(cfg: ExperimentConfig, output_dir=None, force: bool = False) -> list:
    from .extraction_sim import dump_dataset

    outdir = os.fspath(output_dir) if output_dir else cfg.output_dir
    written = []
    for seed in cfg.seeds:
        task = _task_for_seed(cfg, seed)
        base = os.path.join(outdir, cfg.experiment_id, "data", str(seed))
        for name in ("defender_train", "defender_test", "queries_aware", "queries_limited"):
            path = os.path.join(base, f"{name}.csv")
            if os.path.exists(path) and not force:
                continue
            dump_dataset(getattr(task, name), path, task.spec, name)
            written.append(path)
    return written


def train_defenders(cfg: ExperimentConfig, output_dir=None, force: bool = False) -> list:
    outdir = os.fspath(output_dir) if output_dir else cfg.output_dir
    written = []
    for seed in cfg.seeds:
        path = os.path.join(outdir, cfg.experiment_id, "defender", f"{seed}.ckpt")
        if os.path.exists(path) and not force:
            continue
        task = _task_for_seed(cfg, seed)
        defender = _train_defender(cfg, task, seed)
        save_checkpoint(defender, path)
        written.append(path)
    return written
