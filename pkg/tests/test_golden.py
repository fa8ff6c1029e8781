"""Golden-file regression: a frozen seeded run must reproduce bit for bit.

The reference CSV in tests/data was frozen from a verified run of the
config stored next to it.  Any drift in task generation, training, the
defense path, or result rendering shows up as a byte difference here.
"""

import json
import os

from gradshield.metrics_report import read_curve
from gradshield.pipeline import ExperimentConfig, run_experiment

DATA = os.path.join(os.path.dirname(__file__), "data")


def test_golden_run_reproduces_frozen_curve(tmp_path):
    raw = json.loads(open(os.path.join(DATA, "golden_config.json")).read())
    raw["output_dir"] = str(tmp_path)
    files = run_experiment(ExperimentConfig.from_dict(raw))
    assert len(files) == 1
    produced = open(files[0], "rb").read()
    frozen = open(os.path.join(DATA, "golden_grad2_seed0.csv"), "rb").read()
    assert produced == frozen


def test_golden_utility_cost_is_nonnegative():
    curve = read_curve(os.path.join(DATA, "golden_grad2_seed0.csv"))
    (point,) = curve.points
    assert point.budget == 0.5
    assert point.delta_clf_err >= 0.0
