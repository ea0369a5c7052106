"""Experiment harness: configs, bundles, determinism, and studies.

Runs here use tiny networks and budgets; they exercise plumbing and
structural invariants, not learning quality.
"""

import hashlib
import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from clfd.datasets import DatasetFile, DatasetTask, gen_synthetic
from clfd.errors import ValidationError
from clfd.experiment import (
    EVAL_COLUMNS,
    ExperimentConfig,
    compare_metrics,
    evaluate_bundle,
    load_bundle,
    robustness_start,
    run_experiment,
    run_task_order_study,
    validate_task_order,
)


def two_loop_dataset(seed=7, t=12, sigma=0.01):
    spec = dict(name="mini", seed=seed, tasks=[
        dict(shape="arc", task_name="big", T=t, demos=3, sigma=sigma,
             params=dict(center=[0, 0], radius=1.0, sweep_degrees=360,
                         direction=1.0)),
        dict(shape="arc", task_name="small", T=t, demos=3, sigma=sigma,
             params=dict(center=[0, 0], radius=0.6, sweep_degrees=360,
                         direction=1.0)),
    ])
    return gen_synthetic(spec)


def tiny_config(**kw):
    base = dict(method="FT", hidden=(12, 12), train_iterations=25,
                embedding_dim=4, seeds=(0,), subsample_T=None)
    base.update(kw)
    return ExperimentConfig(**base)


def quaternion_dataset():
    def qtraj(T, span):
        ang = np.linspace(0.0, span, T)
        return np.stack([np.cos(ang / 2), np.sin(ang / 2),
                         np.zeros(T), np.zeros(T)], axis=1)

    demos = np.stack([qtraj(10, 0.7 + 0.05 * j) for j in range(3)])
    return DatasetFile(name="spin", kind="quaternion", dim=4,
                       tasks=[DatasetTask("tilt", demos)],
                       recording_frequency=25.0)


def sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class TestExperimentConfig:
    def test_roundtrips_through_dict(self):
        cfg = tiny_config(task_order=(1, 0), seeds=(3, 1), te_timing="wall_clock")
        again = ExperimentConfig.from_dict(cfg.to_dict())
        assert again == cfg

    def test_rejects_unknown_method(self):
        with pytest.raises(ValidationError, match="method"):
            ExperimentConfig(method="XX")

    def test_rejects_empty_and_duplicate_seeds(self):
        with pytest.raises(ValidationError, match="seeds"):
            tiny_config(seeds=())
        with pytest.raises(ValidationError, match="unique"):
            tiny_config(seeds=(1, 1))

    def test_rejects_bad_te_timing_and_multiplier(self):
        with pytest.raises(ValidationError, match="te_timing"):
            tiny_config(te_timing="cpu")
        with pytest.raises(ValidationError, match="dtw_multiplier"):
            tiny_config(dtw_multiplier=0.0)

    def test_rejects_unknown_keys(self):
        with pytest.raises(ValidationError, match="unknown"):
            ExperimentConfig.from_dict({"method": "SG", "momentum": 0.9})

    def test_task_order_validation(self):
        assert validate_task_order((2, 0, 1), 3) == (2, 0, 1)
        with pytest.raises(ValidationError, match="permutation"):
            validate_task_order((0, 0, 1), 3)
        with pytest.raises(ValidationError, match="permutation"):
            validate_task_order((0, 1), 3)


class TestRunExperiment:
    def test_bundle_layout_and_shapes(self, tmp_path):
        ds = two_loop_dataset()
        res = run_experiment(tiny_config(), ds, tmp_path / "b")
        root = tmp_path / "b"
        for name in ("config.json", "dataset.json", "metrics.json"):
            assert (root / name).is_file()
        seed_dir = root / "seed_0"
        for name in ("config.json", "eval_matrix.csv", "ledger.json",
                     "metrics.json"):
            assert (seed_dir / name).is_file()
        assert (seed_dir / "state").is_dir()
        lines = (seed_dir / "eval_matrix.csv").read_text().splitlines()
        assert lines[0] == ",".join(EVAL_COLUMNS)
        # 2 tasks, 3 demos: after task 0 -> 3 rows, after task 1 -> 6 rows
        assert len(lines) == 1 + 3 + 6
        # one prediction file per evaluation row
        assert len(list((seed_dir / "predictions").glob("*.csv"))) == 9
        assert set(res["median"]) == {"acc", "rem", "ms", "te", "fs", "sss",
                                      "cl_score", "cl_score_sum", "cl_stability"}

    def test_single_task_run_gives_one_by_one_matrix(self, tmp_path):
        ds = two_loop_dataset()
        one = DatasetFile(name="one", kind="position", dim=2, tasks=[ds.tasks[0]])
        res = run_experiment(tiny_config(method="SG"), one, tmp_path / "b")
        assert res["per_seed"][0]["accuracy_matrix"] == [[pytest.approx(
            res["per_seed"][0]["accuracy_matrix"][0][0])]]
        assert len(res["per_seed"][0]["accuracy_matrix"]) == 1

    def test_requires_an_output_directory(self):
        with pytest.raises(ValidationError, match="output directory"):
            run_experiment(tiny_config(), two_loop_dataset())

    def test_byte_identical_reruns(self, tmp_path):
        ds = two_loop_dataset()
        cfg = tiny_config(method="REP", seeds=(0, 1))
        run_experiment(cfg, ds, tmp_path / "a")
        run_experiment(cfg, ds, tmp_path / "b")
        for rel in ("metrics.json", "seed_0/eval_matrix.csv",
                    "seed_0/metrics.json", "seed_1/eval_matrix.csv"):
            assert sha(tmp_path / "a" / rel) == sha(tmp_path / "b" / rel)

    def test_ledger_param_sizes_match_strategy_growth(self, tmp_path):
        ds = two_loop_dataset()
        run_experiment(tiny_config(embedding_dim=5), ds, tmp_path / "b")
        ledger = json.loads((tmp_path / "b/seed_0/ledger.json").read_text())
        sizes = ledger["param_sizes"]
        # shared network is constant; each task adds exactly one embedding
        assert sizes[1] - sizes[0] == 5
        assert ledger["train_work_units"] == [
            s["work_units"] for s in ledger["per_task"]]

    def test_task_order_reorders_learning_sequence(self, tmp_path):
        ds = two_loop_dataset()
        res = run_experiment(tiny_config(task_order=(1, 0)), ds, tmp_path / "b")
        echo = json.loads((tmp_path / "b/config.json").read_text())
        assert echo["task_names"] == ["small", "big"]
        assert echo["resolved_task_order"] == [1, 0]
        assert res["method"] == "FT"

    def test_subsample_truncates_long_tasks(self, tmp_path):
        ds = two_loop_dataset(t=30)
        run_experiment(tiny_config(subsample_T=10), ds, tmp_path / "b")
        pred = next((tmp_path / "b/seed_0/predictions").glob("after00*demo00.csv"))
        assert len(pred.read_text().splitlines()) == 1 + 10

    def test_wall_clock_te_timing_changes_ledger_source(self, tmp_path):
        ds = two_loop_dataset()
        cfg = tiny_config(te_timing="wall_clock")
        res = run_experiment(cfg, ds, tmp_path / "b")
        assert 0.0 < res["per_seed"][0]["metrics"]["te"] <= 1.0


class TestEvaluateBundle:
    def test_reproduces_training_time_evaluation(self, tmp_path):
        ds = two_loop_dataset()
        res = run_experiment(tiny_config(method="SG"), ds, tmp_path / "b")
        before = sha(tmp_path / "b/seed_0/eval_matrix.csv")
        again = evaluate_bundle(tmp_path / "b")
        assert sha(tmp_path / "b/seed_0/eval_matrix.csv") == before
        assert again["median"] == res["median"]

    def test_load_bundle_rejects_non_bundles(self, tmp_path):
        with pytest.raises(ValidationError, match="not a result bundle"):
            load_bundle(tmp_path)


class TestQuaternionPipeline:
    def test_eval_matrix_reports_rotation_error(self, tmp_path):
        ds = quaternion_dataset()
        cfg = tiny_config(method="SG", orientation_threshold_degrees=45.0)
        res = run_experiment(cfg, ds, tmp_path / "b")
        lines = (tmp_path / "b/seed_0/eval_matrix.csv").read_text().splitlines()
        header = lines[0].split(",")
        row = dict(zip(header, lines[1].split(",")))
        assert row["swept_area"] == ""
        assert float(row["quat_error"]) > 0.0
        assert float(row["dtw"]) > 0.0
        assert res["threshold"] == pytest.approx(np.pi / 4)

    def test_predictions_are_unit_quaternions(self, tmp_path):
        ds = quaternion_dataset()
        run_experiment(tiny_config(method="SG"), ds, tmp_path / "b")
        pred = next((tmp_path / "b/seed_0/predictions").glob("*.csv"))
        rows = [line.split(",") for line in pred.read_text().splitlines()[1:]]
        quats = np.array([[float(v) for v in r[1:]] for r in rows])
        assert quats.shape[1] == 4
        assert np.max(np.abs(np.linalg.norm(quats, axis=1) - 1.0)) < 1e-9


class TestRobustness:
    def test_samples_stay_within_radius(self, tmp_path):
        ds = two_loop_dataset()
        run_experiment(tiny_config(method="SG"), ds, tmp_path / "b")
        rep = robustness_start(tmp_path / "b", task_id=0, n_samples=25,
                               radius=0.3)
        deltas = [s["start_delta"] for s in rep["samples"]]
        assert max(deltas) <= 0.3 + 1e-12
        assert min(deltas) >= 0.0
        assert Path(rep["csv_path"]).is_file()

    def test_radius_zero_reproduces_nominal_goal_error(self, tmp_path):
        ds = two_loop_dataset()
        run_experiment(tiny_config(method="SG"), ds, tmp_path / "b")
        rep = robustness_start(tmp_path / "b", task_id=1, n_samples=3,
                               radius=0.0)
        for sample in rep["samples"]:
            assert sample["start_delta"] == 0.0
            assert sample["end_delta"] == pytest.approx(
                rep["nominal_end_delta"], abs=1e-12)

    def test_probe_is_deterministic(self, tmp_path):
        ds = two_loop_dataset()
        run_experiment(tiny_config(method="SG"), ds, tmp_path / "b")
        a = robustness_start(tmp_path / "b", task_id=0, n_samples=5, radius=0.2)
        b = robustness_start(tmp_path / "b", task_id=0, n_samples=5, radius=0.2)
        assert a["samples"] == b["samples"]

    def test_rejects_unknown_task_and_foreign_seed(self, tmp_path):
        ds = two_loop_dataset()
        run_experiment(tiny_config(method="SG"), ds, tmp_path / "b")
        with pytest.raises(ValidationError, match="task_id"):
            robustness_start(tmp_path / "b", task_id=5, n_samples=2, radius=0.1)
        with pytest.raises(ValidationError, match="seed"):
            robustness_start(tmp_path / "b", task_id=0, n_samples=2,
                             radius=0.1, seed=99)


class TestTaskOrderStudy:
    def test_single_order_degenerates_to_run_experiment(self, tmp_path):
        ds = two_loop_dataset()
        cfg = tiny_config(method="SG")
        direct = run_experiment(cfg, ds, tmp_path / "direct")
        report = run_task_order_study(cfg, ds, [(0, 1)], tmp_path / "study")
        assert len(report) == 1
        assert report[0]["acc"] == direct["per_seed"][0]["metrics"]["acc"]
        assert report[0]["mean_final_dtw"] == direct["per_seed"][0]["mean_final_dtw"]

    def test_one_row_per_order_method_seed(self, tmp_path):
        ds = two_loop_dataset()
        cfg = tiny_config(seeds=(0, 1))
        report = run_task_order_study(cfg, ds, [(0, 1), (1, 0)],
                                      tmp_path / "study")
        assert len(report) == 4
        keys = {(r["order"], r["method"], r["seed"]) for r in report}
        assert keys == {("0-1", "FT", 0), ("0-1", "FT", 1),
                        ("1-0", "FT", 0), ("1-0", "FT", 1)}
        csv_lines = (tmp_path / "study/task_order_report.csv").read_text().splitlines()
        assert len(csv_lines) == 5
        assert csv_lines[0].startswith("order_index,order,method,seed,acc")

    def test_diagonal_errors_within_factor_two_across_orders(self, tmp_path):
        ds = two_loop_dataset(t=16)
        cfg = tiny_config(method="SG", train_iterations=1500,
                          learning_rate=3e-3, hidden=(24, 24))
        run_task_order_study(cfg, ds, [(0, 1), (1, 0)], tmp_path / "study")
        diag = {}
        for k, order in enumerate([(0, 1), (1, 0)]):
            lines = (tmp_path / f"study/order{k:02d}/seed_0/eval_matrix.csv"
                     ).read_text().splitlines()[1:]
            for line in lines:
                after, ev, demo, dtw_err = line.split(",")[:4]
                if after == ev:
                    task_name = order[int(ev)]
                    diag.setdefault((k, task_name), []).append(float(dtw_err))
        for name in (0, 1):
            a = np.mean(diag[(0, name)])
            b = np.mean(diag[(1, name)])
            assert max(a, b) / min(a, b) < 2.0

    def test_rejects_empty_orders(self, tmp_path):
        with pytest.raises(ValidationError, match="at least one order"):
            run_task_order_study(tiny_config(), two_loop_dataset(), [],
                                 tmp_path / "study")


class TestCompareMetrics:
    def test_shared_normalizer_spans_bundles(self, tmp_path):
        ds = two_loop_dataset()
        run_experiment(tiny_config(method="SG", hidden=(24, 24)), ds,
                       tmp_path / "sg")
        run_experiment(tiny_config(method="FT"), ds, tmp_path / "ft")
        out = compare_metrics([tmp_path / "sg", tmp_path / "ft"])
        by_method = {b["method"]: b for b in out["bundles"]}
        # the largest model (two per-task nets) pins FS to 0 for itself
        assert by_method["SG"]["median"]["fs"] == 0.0
        assert by_method["FT"]["median"]["fs"] > 0.0
        sg_final = json.loads((tmp_path / "sg/seed_0/ledger.json").read_text()
                              )["param_sizes"][-1]
        assert out["largest_model_size"] == sg_final

    def test_requires_at_least_one_bundle(self):
        with pytest.raises(ValidationError, match="at least one bundle"):
            compare_metrics([])
