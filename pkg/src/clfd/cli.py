"""Command-line client for the clfd service.

Each command posts to the HTTP service and prints the JSON response.  By
default the service app runs in process over an ASGI transport, so no server
needs to be started; pass ``--server`` to talk to a remote instance instead.
Commands exit 0 on success and 1 with a one-line ``error <type>: <detail>``
message on stderr otherwise.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import httpx


@click.group()
@click.option("--server", default=None, metavar="URL",
              help="Base URL of a running service; default runs in process.")
@click.pass_context
def main(ctx, server):
    """Continual learning from demonstration: datasets, runs, and reports."""
    ctx.obj = server


def _request(server: str | None, method: str, path: str, payload):
    if server:
        with httpx.Client(base_url=server, timeout=None) as client:
            return client.request(method, path, json=payload)
    import asyncio

    from .service import app

    async def go():
        transport = httpx.ASGITransport(app=app)
        async with httpx.AsyncClient(transport=transport,
                                     base_url="http://clfd.internal",
                                     timeout=None) as client:
            return await client.request(method, path, json=payload)

    return asyncio.run(go())


def _fail(kind: str, detail) -> None:
    detail = " ".join(str(detail).split())
    click.echo(f"error {kind}: {detail}", err=True)
    sys.exit(1)


def _call(server: str | None, method: str, path: str, payload=None) -> None:
    try:
        resp = _request(server, method, path, payload)
    except httpx.HTTPError as exc:
        _fail(type(exc).__name__, exc)
    try:
        data = resp.json()
    except ValueError:
        data = {"error": "BadResponse", "detail": resp.text}
    if resp.status_code != 200:
        if isinstance(data, dict):
            _fail(data.get("error", f"HTTP{resp.status_code}"),
                  data.get("detail", data))
        _fail(f"HTTP{resp.status_code}", data)
    click.echo(json.dumps(data, indent=2, sort_keys=True))


def _load_json_file(path: str, what: str) -> dict | list:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        _fail("FileNotFoundError", f"{what} file not found: {path}")
    except json.JSONDecodeError as exc:
        _fail("JSONDecodeError", f"{what} file {path}: {exc}")


@main.command()
@click.pass_obj
def health(server):
    """Check that the service responds."""
    _call(server, "GET", "/health")


@main.command(name="gen-synthetic")
@click.option("--spec", "spec_path", required=True, metavar="FILE",
              help="JSON generation spec (name, seed, tasks).")
@click.option("--out", "out_path", required=True, metavar="FILE",
              help="Where to write the dataset JSON.")
@click.pass_obj
def gen_synthetic_cmd(server, spec_path, out_path):
    """Generate a synthetic dataset from a spec file."""
    spec = _load_json_file(spec_path, "spec")
    _call(server, "POST", "/datasets/synthetic",
          {"spec": spec, "out_path": out_path})


@main.command()
@click.option("--config", "config_path", required=True, metavar="FILE",
              help="Experiment config JSON.")
@click.option("--dataset", "dataset_path", required=True, metavar="FILE",
              help="Dataset JSON produced by gen-synthetic or by hand.")
@click.option("--out", "out_dir", required=True, metavar="DIR",
              help="Bundle directory to write.")
@click.pass_obj
def train(server, config_path, dataset_path, out_dir):
    """Run the sequential experiment and write a result bundle."""
    config = _load_json_file(config_path, "config")
    _call(server, "POST", "/runs/train",
          {"config": config, "dataset_path": dataset_path, "out_dir": out_dir})


@main.command(name="eval")
@click.option("--bundle", "bundle_dir", required=True, metavar="DIR",
              help="Result bundle produced by train.")
@click.pass_obj
def eval_cmd(server, bundle_dir):
    """Re-evaluate a bundle from its saved learner states."""
    _call(server, "POST", "/runs/evaluate", {"bundle_dir": bundle_dir})


@main.command()
@click.option("--bundle", "bundle_dir", required=True, metavar="DIR",
              help="Result bundle to report.")
@click.option("--compare", "compare_dirs", multiple=True, metavar="DIR",
              help="Additional bundles; final-size uses the shared largest model.")
@click.pass_obj
def metrics(server, bundle_dir, compare_dirs):
    """Print a bundle's metrics, optionally compared across bundles."""
    _call(server, "POST", "/runs/metrics",
          {"bundle_dir": bundle_dir, "compare": list(compare_dirs)})


@main.command()
@click.option("--bundle", "bundle_dir", required=True, metavar="DIR")
@click.option("--task", "task_id", required=True, type=int,
              help="Task position in the learned sequence.")
@click.option("--samples", "n_samples", default=100, show_default=True, type=int)
@click.option("--radius", default=0.0, show_default=True, type=float)
@click.option("--seed", default=None, type=int,
              help="Which of the bundle's seeds to probe; default: first.")
@click.pass_obj
def robustness(server, bundle_dir, task_id, n_samples, radius, seed):
    """Roll out from perturbed starts and report endpoint errors."""
    _call(server, "POST", "/runs/robustness",
          {"bundle_dir": bundle_dir, "task_id": task_id,
           "n_samples": n_samples, "radius": radius, "seed": seed})


@main.command(name="task-order")
@click.option("--config", "config_path", required=True, metavar="FILE")
@click.option("--orders", "orders_path", required=True, metavar="FILE",
              help="JSON list of task-index permutations.")
@click.option("--dataset", "dataset_path", required=True, metavar="FILE")
@click.option("--out", "out_dir", required=True, metavar="DIR")
@click.pass_obj
def task_order(server, config_path, orders_path, dataset_path, out_dir):
    """Run the experiment once per task order and tabulate the results."""
    config = _load_json_file(config_path, "config")
    orders = _load_json_file(orders_path, "orders")
    _call(server, "POST", "/runs/task-order",
          {"config": config, "dataset_path": dataset_path,
           "orders": orders, "out_dir": out_dir})


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
def serve(host, port):
    """Run the HTTP service with uvicorn."""
    import uvicorn

    from .service import app

    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
