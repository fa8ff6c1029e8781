"""Acceptance suite: one test per criterion, one printed pass/fail line each.

Run with `pytest tests/test_acceptance.py -v -s`.  Full-pipeline criteria
drive the same staged runner the CLI uses; numeric criteria state their
tolerances inline.  Everything is seeded, so results are reproducible.
"""

import time

import numpy as np
import pytest

from gradshield import simplex_redirect as sr
from gradshield.cli import run_bench
from gradshield.defense_engine import (
    DefendedOracle,
    DefenseConfig,
    SurrogateConfig,
    TargetStrategy,
    defend_query,
    make_target,
    train_surrogate,
)
from gradshield.diffnet import (
    DiffNet,
    TrainerConfig,
    examples_from_arrays,
    forward,
    gz_double_backprop,
    log_posterior_jacobian,
    reset_traversal_count,
    sgd_train_with_snapshots,
    traversal_count,
    update_gradient,
    finite_diff_gradient,
)
from gradshield.extraction_sim import SyntheticTaskSpec, gen_task
from gradshield.metrics_report import read_curve, transfer_performance
from gradshield.pipeline import ExperimentConfig, run_experiment, run_watermark
from gradshield.simplex_redirect import Budget, Posterior, ValueVector


def criterion(number, description, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    suffix = f" [{detail}]" if detail else ""
    print(f"\n[criterion {number:02d}] {status}: {description}{suffix}")
    assert ok, f"criterion {number}: {description}{suffix}"


# ---------------------------------------------------------------------------
# Shared experiment configurations (frozen; every number in the suite flows
# from these plus the seeds).
# ---------------------------------------------------------------------------

SEEDS = [0, 1, 2, 3, 4]

FOUR_CLASS_TASK = {
    "n_classes": 4, "input_dim": 6, "train_size": 2000, "test_size": 2000,
    "query_size": 2000, "center_scale": 1.6, "cluster_std": 1.0,
    "shift_angle": 0.9, "shift_offset": 2.0,
}
DEFENDER_4 = {
    "layer_spec": [[6, 32, "relu"], [32, 4, "identity"]],
    "trainer": {"lr": 0.1, "epochs": 50, "batch_size": 64, "momentum": 0.9,
                "weight_decay": 0.005, "lr_schedule": "cosine"},
}
ATTACK_4 = {
    "layer_spec": [[6, 48, "relu"], [48, 4, "identity"]],
    "trainer": {"lr": 0.1, "epochs": 50, "batch_size": 64, "momentum": 0.9,
                "weight_decay": 0.0005, "lr_schedule": "cosine"},
    "label_mode": "full_posterior",
    "query_distribution": "aware",
}
SURROGATE_4 = {
    "layer_spec": [[6, 32, "relu"], [32, 4, "identity"]],
    "distill_epochs": 10, "early_stop_epoch": 10, "train_source": "query_set",
}


def main_config(output_dir):
    return {
        "schema_version": 1,
        "experiment_id": "acceptance_main",
        "output_dir": str(output_dir),
        "seeds": SEEDS,
        "task": FOUR_CLASS_TASK,
        "defender": DEFENDER_4,
        "attack": ATTACK_4,
        "defenses": [
            {"method": "none"},
            {"method": "grad2", "budgets": [0.5, 1.0], "target": "all_ones",
             "surrogate": SURROGATE_4},
            {"method": "random_interp", "budgets": [0.5, 1.0]},
        ],
    }


def argmax_config(output_dir):
    cfg = main_config(output_dir)
    cfg["experiment_id"] = "acceptance_argmax"
    cfg["attack"] = dict(ATTACK_4, label_mode="argmax_onehot")
    cfg["defenses"] = [
        {"method": "none"},
        {"method": "grad2", "budgets": [0.5, 1.0], "target": "all_ones",
         "surrogate": SURROGATE_4},
    ]
    return cfg


def coordination_config(output_dir):
    # ten classes: enough label diversity for uncoordinated per-query
    # targets to cancel, which is the effect under test
    surrogate = {
        "layer_spec": [[8, 32, "relu"], [32, 10, "identity"]],
        "distill_epochs": 10, "early_stop_epoch": 10, "train_source": "query_set",
    }
    return {
        "schema_version": 1,
        "experiment_id": "acceptance_coord",
        "output_dir": str(output_dir),
        "seeds": SEEDS,
        "task": {"n_classes": 10, "input_dim": 8, "train_size": 2000,
                 "test_size": 2000, "query_size": 4000, "center_scale": 1.4,
                 "cluster_std": 1.0, "shift_angle": 0.9, "shift_offset": 2.0},
        "defender": {"layer_spec": [[8, 32, "relu"], [32, 10, "identity"]],
                     "trainer": DEFENDER_4["trainer"]},
        "attack": {"layer_spec": [[8, 48, "relu"], [48, 10, "identity"]],
                   "trainer": ATTACK_4["trainer"],
                   "label_mode": "full_posterior", "query_distribution": "aware"},
        "defenses": [
            {"method": "none"},
            {"method": "grad2", "name": "grad2_all_ones", "budgets": [0.5],
             "target": "all_ones", "surrogate": surrogate},
            {"method": "grad2", "name": "grad2_min_inner", "budgets": [0.5],
             "target": "min_inner_product", "surrogate": surrogate},
        ],
    }


def watermark_config(output_dir):
    return {
        "schema_version": 1,
        "experiment_id": "acceptance_watermark",
        "output_dir": str(output_dir),
        "seeds": [0],
        "task": FOUR_CLASS_TASK,
        "defender": DEFENDER_4,
        "attack": ATTACK_4,
        "defenses": [],
        "watermark": {
            "eps_grid": [0.0, 0.5, 1.0],
            "n_pairs": 3,
            "clone_layer_spec": [[6, 48, "relu"], [48, 4, "identity"]],
            "trainer": {"lr": 0.1, "epochs": 30, "batch_size": 64, "momentum": 0.9,
                        "weight_decay": 0.0005, "lr_schedule": "cosine"},
            "rand_eval_samples": 500,
            "query_size": 1000,
        },
    }


def collect(outdir, experiment_id, name, seeds):
    points, meta = [], []
    for seed in seeds:
        curve = read_curve(f"{outdir}/{experiment_id}/{name}/{seed}.csv")
        points.extend(curve.points)
        meta.append(curve.metadata)
    return points, meta


@pytest.fixture(scope="module")
def main_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("main")
    start = time.perf_counter()
    cfg = ExperimentConfig.from_dict(main_config(out))
    run_experiment(cfg)
    return out, time.perf_counter() - start


@pytest.fixture(scope="module")
def argmax_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("argmax")
    cfg = ExperimentConfig.from_dict(argmax_config(out))
    run_experiment(cfg)
    return out


@pytest.fixture(scope="module")
def coord_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("coord")
    cfg = ExperimentConfig.from_dict(coordination_config(out))
    run_experiment(cfg)
    return out


def seeded_instances(count, seed=0):
    rng = np.random.default_rng(seed)
    eps_grid = (0.1, 0.5, 1.0, 1.9)
    for i in range(count):
        n = int(rng.integers(2, 9))
        yield (
            ValueVector(rng.standard_normal(n)),
            Posterior(rng.dirichlet(np.ones(n))),
            Budget(eps_grid[i % 4]),
        )


def test_criterion_1_solver_optimality_and_feasibility():
    start = time.perf_counter()
    worst = 0.0
    for c, y, eps in seeded_instances(1000):
        steered = sr.redirect(c, y, eps)
        gap = abs(sr.objective(c, steered) - sr.objective(c, sr.lp_oracle(c, y, eps)))
        worst = max(worst, gap)
        assert gap <= 1e-9
        assert abs(steered.probs.sum() - 1.0) <= 1e-12
        assert steered.probs.min() >= -1e-15
        assert np.abs(steered.probs - y.probs).sum() <= eps.epsilon + 1e-9
    elapsed = time.perf_counter() - start
    criterion(
        1,
        "solver matches the independent LP optimum within 1e-9 on 1000 instances",
        worst <= 1e-9 and elapsed < 30.0,
        f"max gap {worst:.2e}, {elapsed:.1f}s",
    )


def test_criterion_2_greedy_choice_spot_checks():
    exact = True
    for c, y, eps in seeded_instances(1000):
        steered = sr.redirect(c, y, eps)
        receiver = int(np.argsort(c.values, kind="stable")[-1])
        if steered.probs[receiver] != min(y.probs[receiver] + eps.epsilon / 2.0, 1.0):
            exact = False
            break
    criterion(2, "receiving entry equals min(y + eps/2, 1) exactly on every instance", exact)


def test_criterion_3_complexity():
    rows = run_bench(sizes=(1_000, 10_000, 100_000), repeats=25, seed=0)
    median_10k_ms = rows[10_000]["median_seconds"] * 1e3
    norms = [row["normalized"] for row in rows.values()]
    spread = max(norms) / min(norms)
    criterion(
        3,
        "n=10,000 solve under 10 ms and n*log(n)-normalized spread under 4x",
        median_10k_ms < 10.0 and spread < 4.0,
        f"median {median_10k_ms:.2f} ms, spread {spread:.2f}x",
    )


def test_criterion_4_double_backprop_identity_and_cost():
    rng = np.random.default_rng(1)
    worst = 0.0
    cost_ok = True
    for _ in range(100):
        n = int(rng.integers(2, 11))
        hidden = int(rng.integers(4, 40))
        in_w = int(rng.integers(2, 12))
        net = DiffNet.initialized(
            [(in_w, hidden, "relu"), (hidden, n, "identity")], seed=int(rng.integers(2**31))
        )
        assert net.n_params <= 5000
        x = rng.standard_normal(in_w)
        y = rng.dirichlet(np.ones(n))
        z = rng.standard_normal(net.n_params)
        reset_traversal_count()
        got = gz_double_backprop(net, x, y, z).values
        gz_walks = traversal_count()
        reset_traversal_count()
        want = log_posterior_jacobian(net, x).rows @ z
        explicit_walks = traversal_count()
        worst = max(worst, float(np.max(np.abs(got - want) / (1.0 + np.abs(want)))))
        cost_ok = cost_ok and gz_walks <= 4 and explicit_walks == n + 1
    criterion(
        4,
        "double-backward value vectors match the explicit Jacobian within 1e-8; "
        "<=4 graph walks versus n+1",
        worst < 1e-8 and cost_ok,
        f"max rel err {worst:.2e}",
    )


def test_criterion_5_gradient_correctness():
    rng = np.random.default_rng(2)
    worst_fd = 0.0
    worst_identity = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 7))
        hidden = int(rng.integers(4, 16))
        in_w = int(rng.integers(2, 8))
        net = DiffNet.initialized(
            [(in_w, hidden, "relu"), (hidden, n, "identity")], seed=int(rng.integers(2**31))
        )
        x = rng.standard_normal(in_w)
        y = rng.dirichlet(np.ones(n))
        ug = update_gradient(net, x, y).values
        fd = finite_diff_gradient(net, x, y, 1e-6).values
        worst_fd = max(worst_fd, float(np.abs(fd - ug).max()) / max(1.0, float(np.abs(ug).max())))
        yg = y @ log_posterior_jacobian(net, x).rows
        worst_identity = max(worst_identity, float(np.abs(ug - yg).max()))
    criterion(
        5,
        "update gradients match finite differences within 1e-6 and the y'G identity within 1e-10",
        worst_fd < 1e-6 and worst_identity < 1e-10,
        f"fd {worst_fd:.2e}, identity {worst_identity:.2e}",
    )


def test_criterion_6_defense_pipeline_optimality():
    from gradshield.diffnet import sgd_train

    task = gen_task(SyntheticTaskSpec(seed=0))
    defender_cfg = TrainerConfig(lr=0.1, epochs=30, batch_size=64, seed=1, weight_decay=5e-3)
    defender = sgd_train(
        DiffNet.initialized([(6, 32, "relu"), (32, 4, "identity")], seed=2),
        examples_from_arrays(task.defender_train.x, np.eye(4)[task.defender_train.labels]),
        defender_cfg,
    )
    surrogate = train_surrogate(
        defender, task.queries_aware.x, SurrogateConfig(layer_spec=[(6, 32, "relu"), (32, 4, "identity")], seed=3)
    )
    cfg = DefenseConfig(
        method="grad2", eps=0.8,
        surrogate=SurrogateConfig(layer_spec=[(6, 32, "relu"), (32, 4, "identity")], seed=3),
        target=TargetStrategy(kind="all_ones"),
    )
    z = make_target(cfg.target, surrogate)
    rng = np.random.default_rng(4)
    dominated = True
    for i in range(100):
        x = task.queries_aware.x[i]
        y = forward(defender, x)
        out = defend_query(cfg, surrogate, x, y)
        c = gz_double_backprop(surrogate, x, y.probs, z.values).values
        w = rng.dirichlet(np.ones(4), size=10_000)
        dist = np.abs(w - y.probs).sum(axis=1)
        scale = np.minimum(cfg.eps / np.where(dist == 0.0, 1.0, dist), 1.0)
        scale *= rng.uniform(0.0, 1.0, size=10_000)
        candidates = y.probs + (scale * (dist > 0))[:, None] * (w - y.probs)
        if float(out.probs @ c) < float((candidates @ c).max()) - 1e-12:
            dominated = False
            break
    criterion(
        6,
        "steered output beats 10,000 random feasible perturbations on every of 100 cases",
        dominated,
    )


def test_criterion_7_end_to_end_directional(main_run):
    outdir, elapsed = main_run
    none_pts, none_meta = collect(outdir, "acceptance_main", "none", SEEDS)
    grad_pts, _ = collect(outdir, "acceptance_main", "grad2", SEEDS)
    rand_pts, _ = collect(outdir, "acceptance_main", "random_interp", SEEDS)

    defender_err = float(np.mean([m["defender_err"] for m in none_meta]))
    clone_err = float(np.mean([p.adv_err for p in none_pts]))
    gap_pts = abs(clone_err - defender_err) * 100.0

    # the grad2 sweep row whose measured l1 lands at ~0.5 (nominal eps 1.0
    # spends about half its budget after simplex caps)
    grad_row = [p for p in grad_pts if p.budget == 1.0]
    grad_l1 = float(np.mean([p.mean_l1 for p in grad_row]))
    grad_gain = (float(np.mean([p.adv_err for p in grad_row])) - clone_err) * 100.0

    # random_interp at matched *measured* l1: its nominal 0.5 budget is spent
    # in full, landing next to grad2's measured ~0.43
    rand_row = [p for p in rand_pts if p.budget == 0.5]
    rand_l1 = float(np.mean([p.mean_l1 for p in rand_row]))
    rand_gain = (float(np.mean([p.adv_err for p in rand_row])) - clone_err) * 100.0

    ok = (
        gap_pts <= 3.0
        and 0.35 <= grad_l1 <= 0.65  # "approximately 0.5"
        and grad_gain >= 5.0
        and abs(grad_l1 - rand_l1) <= 0.1  # matched measured budgets
        and grad_gain >= rand_gain
        and elapsed < 600.0
    )
    criterion(
        7,
        "undefended clone within 3 points of defender; steering at measured l1~0.5 "
        "adds >=5 points and dominates the random baseline at matched l1",
        ok,
        f"gap {gap_pts:.2f}, grad +{grad_gain:.1f} @ l1 {grad_l1:.2f}, "
        f"random +{rand_gain:.1f} @ l1 {rand_l1:.2f}, {elapsed:.0f}s",
    )


def test_criterion_8_coordination(coord_run):
    outdir = coord_run
    none_pts, _ = collect(outdir, "acceptance_coord", "none", SEEDS)
    ones_pts, _ = collect(outdir, "acceptance_coord", "grad2_all_ones", SEEDS)
    mip_pts, _ = collect(outdir, "acceptance_coord", "grad2_min_inner", SEEDS)
    base = {p.seed: p.adv_err for p in none_pts}
    ones_gain = float(np.mean([(p.adv_err - base[p.seed]) * 100 for p in ones_pts]))
    mip_gain = float(np.mean([(p.adv_err - base[p.seed]) * 100 for p in mip_pts]))
    criterion(
        8,
        "constant all-ones target degrades the clone at least as much as "
        "per-query anti-update targets at eps=0.5",
        ones_gain >= mip_gain,
        f"all_ones +{ones_gain:.2f} vs min_inner +{mip_gain:.2f}",
    )


def test_criterion_9_surrogate_transfer():
    layer = [(6, 32, "relu"), (32, 4, "identity")]
    clone_layer = [(6, 48, "relu"), (48, 4, "identity")]
    strat = TargetStrategy(kind="all_ones")
    trained_means, random_means = [], []
    whitebox_ok = True
    from gradshield.diffnet import sgd_train

    for seed in (0, 1):
        task = gen_task(SyntheticTaskSpec(query_size=1000, seed=seed))
        defender = sgd_train(
            DiffNet.initialized(layer, seed=seed + 1),
            examples_from_arrays(task.defender_train.x, np.eye(4)[task.defender_train.labels]),
            TrainerConfig(lr=0.1, epochs=50, batch_size=64, seed=seed + 11, weight_decay=5e-3),
        )
        x = task.queries_aware.x
        clean = np.stack([forward(defender, xi).probs for xi in x])
        _, snapshots = sgd_train_with_snapshots(
            DiffNet.initialized(clone_layer, seed=seed + 22),
            examples_from_arrays(x, clean),
            TrainerConfig(lr=0.1, epochs=50, batch_size=64, seed=seed + 21, weight_decay=5e-4),
            (1, 5, 20, 50),
        )
        surro_q = train_surrogate(defender, x, SurrogateConfig(layer_spec=layer, seed=seed + 31))
        surro_r = train_surrogate(
            defender, x, SurrogateConfig(layer_spec=layer, seed=seed + 31, train_source="random_init")
        )
        queries = x[:200]
        for surro, bucket in ((surro_q, trained_means), (surro_r, random_means)):
            per_snapshot = [
                transfer_performance(surro, snap, queries, defender, Budget(0.5), strat).mean_delta
                for snap in snapshots.values()
            ]
            bucket.append(float(np.mean(per_snapshot)))
        for snap in snapshots.values():
            tp = transfer_performance(snap, snap, queries, defender, Budget(0.5), strat)
            whitebox_ok = whitebox_ok and bool(np.all(tp.inner_steered >= tp.inner_clean))
    trained, untrained = float(np.mean(trained_means)), float(np.mean(random_means))
    criterion(
        9,
        "query-distilled surrogates transfer better than random ones; white-box "
        "inner-product improvement holds on 100% of queries",
        trained > untrained and whitebox_ok,
        f"trained {trained:+.4f} vs random {untrained:+.4f}",
    )


def test_criterion_10_watermark(tmp_path):
    cfg = ExperimentConfig.from_dict(watermark_config(tmp_path))
    report = run_watermark(cfg)
    by_eps = report[0]
    means = [by_eps[eps]["mean"] for eps in (0.0, 0.5, 1.0)]
    rows = (tmp_path / "acceptance_watermark" / "watermark" / "0.csv").read_text().splitlines()[1:]
    rand_xy = [float(r.split(",")[4]) for r in rows if float(r.split(",")[0]) == 1.0]
    rand_xy_mean = float(np.mean(rand_xy))
    ok = means[2] >= 2.0 * rand_xy_mean and means[0] <= means[1] + 1e-12 and means[1] <= means[2] + 1e-12
    criterion(
        10,
        "watermark posterior at eps=1.0 at least doubles the random baseline and "
        "is non-decreasing in eps",
        ok,
        f"means {means[0]:.3f}/{means[1]:.3f}/{means[2]:.3f} vs random {rand_xy_mean:.3f}",
    )


def test_criterion_11_argmax_countermeasure(argmax_run):
    outdir = argmax_run
    none_pts, _ = collect(outdir, "acceptance_argmax", "none", SEEDS)
    grad_pts, _ = collect(outdir, "acceptance_argmax", "grad2", SEEDS)
    base = float(np.mean([p.adv_err for p in none_pts]))
    gains = {}
    for budget in (0.5, 1.0):
        row = [p for p in grad_pts if p.budget == budget]
        assert len(row) == len(SEEDS)  # the attack completed across budgets
        gains[budget] = (float(np.mean([p.adv_err for p in row])) - base) * 100.0
    ok = all(g > 0.0 for g in gains.values())
    criterion(
        11,
        "argmax-label attack completes and steering still degrades it at every eps >= 0.5",
        ok,
        f"+{gains[0.5]:.2f} @ 0.5, +{gains[1.0]:.2f} @ 1.0",
    )


def test_criterion_12_reproducibility(tmp_path):
    raw = {
        "schema_version": 1,
        "experiment_id": "repro",
        "output_dir": "",
        "seeds": [0],
        "task": {"n_classes": 4, "input_dim": 4, "train_size": 300, "test_size": 300,
                 "query_size": 200, "center_scale": 1.8, "cluster_std": 1.0,
                 "shift_angle": 0.9, "shift_offset": 2.0},
        "defender": {"layer_spec": [[4, 16, "relu"], [16, 4, "identity"]],
                     "trainer": {"lr": 0.1, "epochs": 10, "batch_size": 32, "momentum": 0.9,
                                 "weight_decay": 0.005, "lr_schedule": "cosine"}},
        "attack": {"layer_spec": [[4, 24, "relu"], [24, 4, "identity"]],
                   "trainer": {"lr": 0.1, "epochs": 10, "batch_size": 32, "momentum": 0.9,
                               "weight_decay": 0.0005, "lr_schedule": "cosine"},
                   "label_mode": "full_posterior", "query_distribution": "aware"},
        "defenses": [
            {"method": "none"},
            {"method": "grad2", "budgets": [0.5], "target": "all_ones",
             "surrogate": {"layer_spec": [[4, 16, "relu"], [16, 4, "identity"]],
                           "distill_epochs": 5, "early_stop_epoch": 5,
                           "train_source": "query_set"}},
            {"method": "random_interp", "budgets": [0.5]},
            {"method": "topk_truncate", "k": 1},
        ],
    }
    outputs = []
    for run_dir in ("a", "b"):
        cfg_raw = dict(raw, output_dir=str(tmp_path / run_dir))
        files = run_experiment(ExperimentConfig.from_dict(cfg_raw))
        outputs.append({
            f.replace(str(tmp_path / run_dir), ""): open(f, "rb").read() for f in sorted(files)
        })
    identical = outputs[0] == outputs[1] and len(outputs[0]) == 4
    criterion(12, "rerunning a config with identical seeds reproduces CSVs bit for bit", identical)
