"""HTTP service exposing dataset generation, runs, and reports.

The service is a thin layer over the library: every endpoint validates its
request with a pydantic model, calls the corresponding library function, and
returns JSON.  Artifacts (datasets, result bundles) live on the service's
filesystem and are addressed by path, so the command-line client can run the
same app in process and share the working directory.
"""

from __future__ import annotations

import json
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .datasets import gen_synthetic, load_dataset, save_dataset
from .errors import ClfdError
from .experiment import (
    ExperimentConfig,
    compare_metrics,
    evaluate_bundle,
    load_bundle,
    robustness_start,
    run_experiment,
    run_task_order_study,
)

try:
    _VERSION = version("clfd")
except PackageNotFoundError:
    _VERSION = "0.0.0"

app = FastAPI(title="clfd", version=_VERSION)


# -- schemas ----------------------------------------------------------------


class GenSyntheticRequest(BaseModel):
    spec: dict
    out_path: str = Field(min_length=1)


class DatasetSummary(BaseModel):
    path: str
    name: str
    kind: str
    dim: int
    num_tasks: int
    task_names: list[str]


class TrainRequest(BaseModel):
    config: dict
    dataset_path: str = Field(min_length=1)
    out_dir: str = Field(min_length=1)


class SeedResult(BaseModel):
    seed: int
    metrics: dict[str, float]
    accuracy_matrix: list[list[float]]
    mean_final_dtw: float
    mean_final_error: float


class RunSummary(BaseModel):
    out_dir: str
    method: str
    threshold: float
    median: dict[str, float]
    per_seed: list[SeedResult]


class BundleRequest(BaseModel):
    bundle_dir: str = Field(min_length=1)


class MetricsRequest(BaseModel):
    bundle_dir: str = Field(min_length=1)
    compare: list[str] = []


class RobustnessRequest(BaseModel):
    bundle_dir: str = Field(min_length=1)
    task_id: int
    n_samples: int = 100
    radius: float = 0.0
    seed: int | None = None


class RobustnessSample(BaseModel):
    sample_idx: int
    start_delta: float
    end_delta: float


class RobustnessReport(BaseModel):
    csv_path: str
    task_id: int
    seed: int
    radius: float
    samples: list[RobustnessSample]
    median_end_delta: float
    nominal_end_delta: float


class TaskOrderRequest(BaseModel):
    config: dict
    dataset_path: str = Field(min_length=1)
    orders: list[list[int]] = Field(min_length=1)
    out_dir: str = Field(min_length=1)


# -- error mapping ----------------------------------------------------------------


@app.exception_handler(ClfdError)
async def _clfd_error(request: Request, exc: ClfdError) -> JSONResponse:
    return JSONResponse(
        status_code=400,
        content={"error": type(exc).__name__, "detail": str(exc)})


@app.exception_handler(FileNotFoundError)
async def _not_found(request: Request, exc: FileNotFoundError) -> JSONResponse:
    return JSONResponse(
        status_code=404,
        content={"error": "FileNotFoundError", "detail": str(exc)})


# -- endpoints ----------------------------------------------------------------


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": _VERSION}


@app.post("/datasets/synthetic", response_model=DatasetSummary)
def datasets_synthetic(req: GenSyntheticRequest) -> DatasetSummary:
    ds = gen_synthetic(req.spec)
    save_dataset(ds, req.out_path)
    return DatasetSummary(
        path=req.out_path, name=ds.name, kind=ds.kind, dim=ds.dim,
        num_tasks=ds.num_tasks, task_names=ds.task_names())


@app.post("/runs/train", response_model=RunSummary)
def runs_train(req: TrainRequest) -> RunSummary:
    config = ExperimentConfig.from_dict(req.config)
    dataset = load_dataset(req.dataset_path)
    return RunSummary(**run_experiment(config, dataset, req.out_dir))


@app.post("/runs/evaluate", response_model=RunSummary)
def runs_evaluate(req: BundleRequest) -> RunSummary:
    return RunSummary(**evaluate_bundle(req.bundle_dir))


@app.post("/runs/metrics")
def runs_metrics(req: MetricsRequest) -> dict:
    if req.compare:
        return compare_metrics([req.bundle_dir, *req.compare])
    bundle = Path(req.bundle_dir)
    load_bundle(bundle)  # validates the directory shape
    return json.loads((bundle / "metrics.json").read_text())


@app.post("/runs/robustness", response_model=RobustnessReport)
def runs_robustness(req: RobustnessRequest) -> RobustnessReport:
    report = robustness_start(req.bundle_dir, req.task_id, req.n_samples,
                              req.radius, seed=req.seed)
    return RobustnessReport(**report)


@app.post("/runs/task-order")
def runs_task_order(req: TaskOrderRequest) -> dict:
    config = ExperimentConfig.from_dict(req.config)
    dataset = load_dataset(req.dataset_path)
    report = run_task_order_study(config, dataset, req.orders, req.out_dir)
    return {"csv_path": str(f"{req.out_dir}/task_order_report.csv"),
            "rows": report}
