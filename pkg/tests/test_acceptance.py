"""Release acceptance suite: nine pinned criteria, one verdict line each.

Criteria 1-5 are instant-to-seconds structural and numerical checks.
Criteria 6, 8 and 9 share one scaled three-task training suite (four
strategies, three seeds, a few minutes of CPU); criterion 7 trains the
figure-eight comparison.  Every test prints a single
``CRITERION <n> PASS/FAIL - <detail>`` line, collected again in the
terminal summary.
"""

import json
import math
import statistics
import time
from pathlib import Path

import numpy as np
import pytest

from clfd.autodiff import (
    Architecture,
    ParamVector,
    Tape,
    count_params,
    init_params,
    mlp_forward,
    tape_layers,
)
from clfd.cl_metrics import RunLedger, compute_metrics
from clfd.datasets import gen_synthetic
from clfd.experiment import ExperimentConfig, run_experiment
from clfd.node import DemonstrationSet, Trajectory, integrate, time_values, unrolled_loss_on_tape
from clfd.so3 import (
    QuaternionTrajectory,
    UnitQuaternion,
    exp_map,
    from_tangent_trajectory,
    log_map,
    quat_conjugate,
    quat_multiply,
    quat_traj_error,
    to_tangent_trajectory,
)
from clfd.strategies import Strategy, StrategyConfig
from clfd.traj_metrics import discrete_frechet, dtw, swept_area

from _oracles import brute_dtw, brute_frechet, brute_swept_area
from conftest import record_verdict

PRESET_DIR = Path(__file__).resolve().parents[1] / "src" / "clfd" / "presets"
DESK_METHODS = ("SG", "FT", "REP", "HN")
DESK_SEEDS = (1, 2, 3)


def _verdict(criterion: int, ok: bool, detail: str) -> None:
    line = f"CRITERION {criterion} {'PASS' if ok else 'FAIL'} - {detail}"
    record_verdict(line)
    assert ok, line


def _preset(name: str) -> dict:
    return json.loads((PRESET_DIR / name).read_text())


def _run_desk_method(method: str, seed: int, dataset, out_dir: Path) -> dict:
    raw = _preset(f"desk_{method}.json")
    config = ExperimentConfig.from_dict({**raw, "seeds": [seed]})
    return run_experiment(config, dataset, out_dir)


@pytest.fixture(scope="session")
def desk_suite(tmp_path_factory):
    """Train the scaled three-task suite: four strategies across three seeds.

    The dataset is regenerated per seed (dataset seed = run seed) so each
    seed is a fully independent draw of demonstrations and initializations.
    """
    root = tmp_path_factory.mktemp("desk_suite")
    spec = _preset("desk_dataset.json")
    runs = {}
    t0 = time.perf_counter()
    for seed in DESK_SEEDS:
        dataset = gen_synthetic({**spec, "seed": seed})
        for method in DESK_METHODS:
            out = root / f"{method}_s{seed}"
            result = _run_desk_method(method, seed, dataset, out)
            runs[(method, seed)] = {"bundle": out, **result["per_seed"][0]}
    elapsed = time.perf_counter() - t0
    return {"runs": runs, "elapsed": elapsed}


def _median_metric(runs: dict, method: str, key: str) -> float:
    return statistics.median(runs[(method, s)]["metrics"][key] for s in DESK_SEEDS)


# -- criterion 1: parameter counts ---------------------------------------------------


def _tiny_growth_demos(offset: float) -> DemonstrationSet:
    ts = np.linspace(0.0, 1.0, 5)
    demos = [
        Trajectory(np.linspace([offset, 0.0], [offset + 1.0, 1.0], 5) + 0.01 * k, ts)
        for k in range(2)
    ]
    return DemonstrationSet(demos, name=f"tiny-{offset:g}")


def test_criterion_1_parameter_counts():
    sg = StrategyConfig(variant="SG", data_dim=2, hidden=(1000, 1000, 1000))
    sg_per_task = count_params(sg.node_architecture())
    fleet = 26 * sg_per_task

    hn = StrategyConfig(variant="HN", data_dim=2, hidden=(100, 100, 100),
                        embedding_dim=256, hn_hidden=(200, 200, 200))
    hn_cfg = hn.hypernet_config()
    hn_body = count_params(hn_cfg.hn_architecture)
    hn_total = hn_body + 26 * hn.embedding_dim

    chn = StrategyConfig(variant="CHN", data_dim=2, hidden=(1000, 1000, 1000),
                         embedding_dim=256, hn_hidden=(200, 200, 200),
                         chunk_dim=8192, chunk_embedding_dim=256)
    chn_cfg = chn.hypernet_config()
    chn_body = count_params(chn_cfg.hn_architecture)
    chn_total = (chn_body + chn_cfg.num_chunks * chn.chunk_embedding_dim
                 + 26 * chn.embedding_dim)

    growth = {}
    growth_kwargs = dict(data_dim=2, hidden=(4,), embedding_dim=256, hn_hidden=(4,),
                         train_iterations=1, learning_rate=1e-3,
                         chunk_dim=8, chunk_embedding_dim=8)
    first, second = _tiny_growth_demos(0.0), _tiny_growth_demos(2.0)
    for variant in ("FT", "REP", "SI", "MAS", "HN", "CHN"):
        strategy = Strategy(StrategyConfig(variant=variant, **growth_kwargs))
        strategy.learn_task(first)
        before = strategy.total_param_count()
        strategy.learn_task(second)
        growth[variant] = strategy.total_param_count() - before

    ok = (
        sg_per_task == 2_008_002
        and abs(fleet - 52.2e6) / 52.2e6 < 0.01
        and count_params(hn_cfg.target_architecture) == 20_802
        and hn_body == 4_313_002
        and abs(hn_total - 4.31e6) / 4.31e6 < 0.01
        and chn_cfg.num_chunks == 246
        and chn_total == 1_899_224
        and abs(chn_total - 1.9e6) / 1.9e6 < 0.03
        and all(g == 256 for g in growth.values())
    )
    _verdict(1, ok,
             f"SG per-task {sg_per_task:,} (26 tasks {fleet:,}), HN {hn_total:,}, "
             f"CHN {chn_total:,}, per-task growth {sorted(set(growth.values()))}")


# -- criterion 2: metric formula fixtures --------------------------------------------


def test_criterion_2_metric_fixtures():
    targets = {26: (0.15, 0.48), 7: (0.37, 0.43), 4: (0.52, 0.38)}
    details = []
    ok = True
    for m, (ms_target, sss_target) in targets.items():
        unit = 10.0
        accuracy = [[1.0] * (i + 1) for i in range(m)]
        ledger = RunLedger.from_lists(
            train_times=[1.0] * m,
            param_sizes=[unit * (i + 1) for i in range(m)],
            stored_sample_sizes=[unit * (i + 1) for i in range(m)],
            dataset_size=unit * m,
            largest_model_size=unit * m,
        )
        rec = compute_metrics(accuracy, ledger)
        ms_exact = sum(1.0 / (i + 1) for i in range(m)) / m
        sss_exact = 1.0 - (m + 1) / (2.0 * m)
        ok = ok and rec.ms == pytest.approx(ms_exact, rel=1e-12)
        ok = ok and rec.sss == pytest.approx(sss_exact, rel=1e-12)
        ok = ok and abs(round(rec.ms, 2) - ms_target) <= 0.005 + 1e-9
        ok = ok and abs(round(rec.sss, 2) - sss_target) <= 0.005 + 1e-9
        details.append(f"M={m}: MS={rec.ms:.3f}->{ms_target} SSS={rec.sss:.3f}->{sss_target}")
    _verdict(2, ok, "; ".join(details))


# -- criterion 3: gradients vs finite differences ------------------------------------


def _finite_diff(f, x, eps=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        x[i] += eps
        hi = f(x)
        x[i] -= 2 * eps
        lo = f(x)
        x[i] += eps
        g[i] = (hi - lo) / (2 * eps)
    return g


def _rel_err(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def test_criterion_3_numerical_core():
    rng = np.random.default_rng(314159)
    worst_net = 0.0
    for trial in range(20):
        arch = Architecture(
            int(rng.integers(1, 5)),
            tuple(int(v) for v in rng.integers(2, 7, size=int(rng.integers(1, 3)))),
            int(rng.integers(1, 4)),
            activation="elu" if trial % 2 == 0 else "relu",
        )
        pv = init_params(arch, seed=trial)
        x = rng.normal(size=(4, arch.input_dim))

        tape = Tape()
        out = mlp_forward(pv, x, tape=tape)
        loss = tape.sqsum(out)
        tape.backward(loss)
        grad = mlp_forward.last_theta.grad

        def f(values):
            return float((mlp_forward(ParamVector(values, arch), x) ** 2).sum())

        worst_net = max(worst_net, _rel_err(grad, _finite_diff(f, pv.values.copy())))

    d = 1
    arch = Architecture(d + 1, (3,), d)
    pv = init_params(arch, seed=7)
    ts = np.linspace(0.0, 1.0, 5)
    obs = rng.normal(size=(5, 2, d))
    tape = Tape()
    theta = tape.leaf(pv.values)
    layers = tape_layers(tape, theta, arch)
    loss = unrolled_loss_on_tape(tape, layers, arch.activation, obs, np.diff(ts),
                                 time_values(ts, None), None, "euler")
    tape.backward(loss)

    def f_ode(values):
        total = 0.0
        for k in range(obs.shape[1]):
            pred = integrate(ParamVector(values, arch), obs[0, k], ts, time_input=True)
            diff = pred.points - obs[:, k]
            total += 0.5 * float((diff * diff).sum())
        return total

    ode_rel = _rel_err(theta.grad, _finite_diff(f_ode, pv.values.copy()))
    ok = worst_net < 1e-4 and ode_rel < 1e-3
    _verdict(3, ok,
             f"20 random nets worst rel err {worst_net:.2e} < 1e-4; "
             f"5-step unrolled integrator rel err {ode_rel:.2e} < 1e-3")


# -- criterion 4: rotation-space suite -----------------------------------------------


def test_criterion_4_rotation_suite():
    rng = np.random.default_rng(27182818)

    worst_quat = 0.0
    for _ in range(500):
        q = UnitQuaternion.from_array(rng.normal(size=4))
        if q.v < 0:
            q = UnitQuaternion.from_array(-q.array)
        back = exp_map(log_map(q))
        worst_quat = max(worst_quat, float(np.abs(back.array - q.array).max()))

    worst_vec = 0.0
    for _ in range(500):
        r = rng.normal(size=3)
        norm = np.linalg.norm(r)
        if norm > 0:
            r = r / norm * float(rng.uniform(0.0, 1.5))
        worst_vec = max(worst_vec, float(np.abs(log_map(exp_map(r)) - r).max()))

    steps = [exp_map(rng.normal(scale=0.08, size=3)) for _ in range(10)]
    quats = [steps[0].array]
    for step in steps[1:]:
        quats.append(quat_multiply(UnitQuaternion.from_array(quats[-1]), step).array)
    qt = QuaternionTrajectory(np.array(quats), np.linspace(0.0, 1.0, 10))
    back = from_tangent_trajectory(to_tangent_trajectory(qt), qt.goal)
    roundtrip_err = quat_traj_error(qt, back)

    offset = exp_map([math.pi / 4.0, 0.0, 0.0])
    pred = np.array([
        quat_multiply(quat_conjugate(offset), UnitQuaternion.from_array(q)).array
        for q in qt.quats
    ])
    e_q = quat_traj_error(qt, QuaternionTrajectory(pred, qt.timestamps))

    ok = (
        worst_quat < 1e-9
        and worst_vec < 1e-9
        and roundtrip_err < 1e-9
        and abs(e_q - math.pi / 6.0) < 1e-12
    )
    _verdict(4, ok,
             f"1000 Log/Exp roundtrips worst {max(worst_quat, worst_vec):.1e} < 1e-9; "
             f"tangent roundtrip {roundtrip_err:.1e} < 1e-9; "
             f"constant-offset E_q {e_q:.12f} == pi/6")


# -- criterion 5: trajectory metrics vs brute force ----------------------------------


def test_criterion_5_metric_oracles():
    rng = np.random.default_rng(1618033)
    worst_dtw = worst_frechet = 0.0
    for _ in range(200):
        a = rng.normal(size=(int(rng.integers(1, 8)), 2))
        b = rng.normal(size=(int(rng.integers(1, 8)), 2))
        worst_dtw = max(worst_dtw, abs(dtw(a, b) - brute_dtw(a, b)))
        worst_frechet = max(worst_frechet, abs(discrete_frechet(a, b) - brute_frechet(a, b)))

    worst_area = 0.0
    for _ in range(50):
        t = int(rng.integers(2, 8))
        a = rng.normal(size=(t, 2))
        b = rng.normal(size=(t, 2))
        worst_area = max(worst_area, abs(swept_area(a, b) - brute_swept_area(a, b)))

    ok = worst_dtw < 1e-9 and worst_frechet < 1e-9 and worst_area < 1e-9
    _verdict(5, ok,
             f"200 instances T<=7: DTW dev {worst_dtw:.1e}, Frechet dev "
             f"{worst_frechet:.1e}; 50 swept-area dev {worst_area:.1e} vs shoelace")


# -- criterion 6: forgetting demonstration -------------------------------------------


def test_criterion_6_forgetting_demonstration(desk_suite):
    runs = desk_suite["runs"]
    acc = {m: _median_metric(runs, m, "acc") for m in DESK_METHODS}
    rem_sg_seeds = [runs[("SG", s)]["metrics"]["rem"] for s in DESK_SEEDS]
    rem_hn = _median_metric(runs, "HN", "rem")
    elapsed = desk_suite["elapsed"]

    ok = (
        acc["FT"] < 0.5 < acc["HN"]
        and acc["SG"] >= 0.9
        and acc["REP"] >= 0.8
        and all(r == 1.0 for r in rem_sg_seeds)
        and rem_hn >= 0.9
        and elapsed < 900.0
    )
    _verdict(6, ok,
             f"median ACC SG={acc['SG']:.3f} FT={acc['FT']:.3f} REP={acc['REP']:.3f} "
             f"HN={acc['HN']:.3f}; REM(SG)={statistics.median(rem_sg_seeds):.1f} exact, "
             f"REM(HN)={rem_hn:.3f}; suite {elapsed:.0f}s < 900s")


# -- criterion 7: time-input advantage on the figure-eight loop ----------------------


def test_criterion_7_time_input_advantage(tmp_path):
    spec = {
        "name": "figure-eight",
        "seed": 11,
        "tasks": [{"task_name": "eight", "shape": "figure-eight",
                   "T": 40, "demos": 3, "sigma": 0.01}],
    }
    dataset = gen_synthetic(spec)
    base = dict(method="SG", hidden=[64, 64], activation="elu",
                train_iterations=2000, learning_rate=3e-3, integrator="euler",
                seeds=list(DESK_SEEDS))
    medians = {}
    for label, time_input in (("NODE-T", True), ("NODE-I", False)):
        config = ExperimentConfig.from_dict({**base, "time_input": time_input})
        result = run_experiment(config, dataset, tmp_path / label)
        medians[label] = statistics.median(
            r["mean_final_dtw"] for r in result["per_seed"])

    ok = medians["NODE-T"] < medians["NODE-I"]
    _verdict(7, ok,
             f"median mean-final-DTW with time input {medians['NODE-T']:.3f} < "
             f"{medians['NODE-I']:.3f} without, over seeds {list(DESK_SEEDS)}")


# -- criterion 8: time-efficiency fixed point and trend ------------------------------


def test_criterion_8_time_efficiency(desk_suite):
    accuracy = [[1.0] * (i + 1) for i in range(3)]
    ledger = RunLedger.from_lists([7.0, 7.0, 7.0], [50.0] * 3, [0.0] * 3,
                                  dataset_size=9.0, largest_model_size=50.0)
    fixed_point = compute_metrics(accuracy, ledger).te

    runs = desk_suite["runs"]
    te_hn = _median_metric(runs, "HN", "te")
    te_ft = _median_metric(runs, "FT", "te")
    trend = "holds" if te_hn < te_ft else "violated"

    ok = fixed_point == 1.0
    _verdict(8, ok,
             f"constant task times give TE={fixed_point:.1f} exactly; report-only "
             f"trend TE(HN)={te_hn:.3f} vs TE(FT)={te_ft:.3f} ({trend})")


# -- criterion 9: byte determinism ---------------------------------------------------


def test_criterion_9_determinism(desk_suite, tmp_path):
    seed = 1
    dataset = gen_synthetic({**_preset("desk_dataset.json"), "seed": seed})
    matched = 0
    compared = 0
    for method in DESK_METHODS:
        rerun_dir = tmp_path / f"{method}_s{seed}"
        _run_desk_method(method, seed, dataset, rerun_dir)
        first_dir = desk_suite["runs"][(method, seed)]["bundle"]
        for fname in ("eval_matrix.csv", "metrics.json"):
            compared += 1
            a = (first_dir / f"seed_{seed}" / fname).read_bytes()
            b = (rerun_dir / f"seed_{seed}" / fname).read_bytes()
            matched += int(a == b)

    ok = compared == 8 and matched == compared
    _verdict(9, ok,
             f"{matched}/{compared} result files byte-identical across independent "
             f"reruns (4 strategies, eval_matrix.csv + metrics.json)")
