"""``unisvm`` command line: train, predict, eval, synth and bench."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    Dataset,
    evaluate,
    flip_labels,
    gen_checkerboard,
    gen_sinc,
    read_libsvm,
    split,
    write_libsvm,
)
from .errors import UniSVMError
from .kernels import KernelSpec
from .losses import CLASSIFICATION, normalize_task, parse_loss
from .modelio import load_model, save_model
from .solver import STRATEGIES, TrainConfig, predict, train

log = logging.getLogger("unisvm")

BENCH_COLUMNS = ("loss", "seed", "m", "r", "iterations", "train_seconds",
                 "metric", "metric_name", "converged", "error")


def fmt_num(x) -> str:
    """17 significant digits, enough to round-trip a double."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def _csv_field(value) -> str:
    # fields never contain commas, so the files need no quoting
    text = value if isinstance(value, str) else fmt_num(value)
    return text.replace(",", ";").replace("\n", " ").replace("\r", " ")


def append_csv_row(path, row: dict) -> None:
    """Append ``row``; write the header first when the file is new or empty."""
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(row.keys())
        w.writerow([_csv_field(v) for v in row.values()])


# --- shared flag groups -----------------------------------------------------

def _add_model_flags(p):
    p.add_argument("--task", default="class", help="class or reg (default: class)")
    p.add_argument("--loss", required=True, help="loss name, optionally with inline params: name:k=v,k=v")
    p.add_argument("--loss-params", default=None, help="extra loss params as k=v,k=v")
    p.add_argument("--lambda", dest="lam", type=float, required=True, help="regularization weight")
    p.add_argument("--gamma", type=float, required=True, help="Gaussian kernel width")
    p.add_argument("--A", dest="A", type=float, default=None,
                   help="LS-DC constant (default: the loss's lower bound; may only raise it)")


def _add_solver_flags(p, defaults=True):
    d = (lambda v: v) if defaults else (lambda v: None)
    p.add_argument("--solver", choices=STRATEGIES, default=d("auto"))
    p.add_argument("--rank", type=int, default=None, help="pivoted-Cholesky rank budget")
    p.add_argument("--approx-tol", type=float, default=None,
                   help="stop factorizing once trace(K - PP^T) < tol * m")
    p.add_argument("--tol", type=float, default=d(1e-6), help="relative change of v that stops DCA")
    p.add_argument("--max-iter", type=int, default=d(100))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="unisvm", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a LIBSVM file")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, help="output model path")
    _add_model_flags(p)
    _add_solver_flags(p)
    p.add_argument("--seed", type=int, default=0, help="accepted for uniformity; training is deterministic")
    p.add_argument("--format", choices=("binary", "text"), default="binary")
    p.add_argument("--metrics", default=None, help="append a CSV row of run statistics")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="write per-sample scores")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None, help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="accuracy or RMSE of a model on a labelled file")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--metrics", default=None, help="append a CSV row of the metrics")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic LIBSVM dataset")
    p.add_argument("generator", choices=("checkerboard", "sinc"))
    p.add_argument("--out", required=True, help="output path; with --split, .train/.test are inserted")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=800, help="checkerboard sample count")
    p.add_argument("--grid", type=int, default=2, help="checkerboard tiles per axis")
    p.add_argument("--noise", type=float, default=0.05, help="sinc noise standard deviation")
    p.add_argument("--x-min", type=float, default=-4 * math.pi)
    p.add_argument("--x-max", type=float, default=4 * math.pi)
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("--split", type=float, default=None, help="train fraction of a seeded shuffle split")
    p.add_argument("--flip", type=float, default=0.0, help="fraction of (train) labels to negate")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="run a sweep of losses x seeds x sizes")
    p.add_argument("--sweep", default=None,
                   help="sweep JSON path or bundled name (classification, regression)")
    p.add_argument("--losses", nargs="+", default=None)
    p.add_argument("--seeds", nargs="+", type=int, default=None)
    p.add_argument("--sizes", nargs="+", type=int, default=None)
    p.add_argument("--task", default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--A", dest="A", type=float, default=None)
    _add_solver_flags(p, defaults=False)
    p.add_argument("--generator", choices=("checkerboard", "sinc"), default=None)
    p.add_argument("--data", default=None, help="train LIBSVM file instead of a generator")
    p.add_argument("--test-data", default=None, help="test LIBSVM file paired with --data")
    p.add_argument("--flip", type=float, default=None)
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--out", default=None, help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_bench)
    return parser


# --- train / predict / eval ----------------------------------------------------

def _config(args) -> TrainConfig:
    return TrainConfig(
        lam=args.lam,
        tol=args.tol,
        max_iter=args.max_iter,
        strategy=args.solver,
        rank_budget=args.rank,
        trace_tol=args.approx_tol,
    )


def cmd_train(args) -> int:
    task = normalize_task(args.task)
    loss = parse_loss(args.loss, task, A=args.A, extra=args.loss_params)
    kernel = KernelSpec(gamma=args.gamma)
    config = _config(args)
    data = read_libsvm(args.data, task)
    model, report = train(config, data, loss, kernel)
    save_model(model, args.model, fmt=args.format)
    print(
        f"iterations={report.iterations} objective={fmt_num(report.final_objective)} "
        f"train_seconds={report.train_seconds:.4f} rank={report.rank} "
        f"strategy={report.strategy} converged={str(report.converged).lower()}"
    )
    if args.metrics:
        append_csv_row(args.metrics, {
            "data": args.data,
            "loss": loss.name,
            "lambda": config.lam,
            "gamma": kernel.gamma,
            "A": loss.A,
            "strategy": report.strategy,
            "m": data.m,
            "r": report.rank,
            "iterations": report.iterations,
            "converged": report.converged,
            "objective": report.final_objective,
            "train_seconds": report.train_seconds,
        })
    return 0


def _read_for_model(model, path) -> Dataset:
    return read_libsvm(path, model.task)


def cmd_predict(args) -> int:
    model = load_model(args.model)
    data = _read_for_model(model, args.data)
    scores = predict(model, data.X)
    lines = ["index,score,label" if model.task == CLASSIFICATION else "index,score"]
    for i, s in enumerate(scores):
        if model.task == CLASSIFICATION:
            lines.append(f"{i},{fmt_num(s)},{1 if s >= 0 else -1}")
        else:
            lines.append(f"{i},{fmt_num(s)}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.model)
    data = _read_for_model(model, args.data)
    met = evaluate(model, data)
    if model.task == CLASSIFICATION:
        row = {"accuracy": met.accuracy}
    else:
        row = {"rmse": met.rmse, "mse": met.mse}
    row["support_size"] = met.support_size
    print(" ".join(f"{k}={fmt_num(v)}" for k, v in row.items()))
    if args.metrics:
        append_csv_row(args.metrics, {"data": args.data, "model": args.model, "m": data.m, **row})
    return 0


# --- synth -------------------------------------------------------------------

def _split_paths(out: str) -> tuple[Path, Path]:
    p = Path(out)
    suffix = p.suffix or ".libsvm"
    stem = p.with_suffix("") if p.suffix else p
    return (stem.parent / f"{stem.name}.train{suffix}", stem.parent / f"{stem.name}.test{suffix}")


def cmd_synth(args) -> int:
    gen_seed, split_seed, flip_seed = np.random.SeedSequence(args.seed).spawn(3)
    if args.generator == "checkerboard":
        pool = gen_checkerboard(args.n, grid=args.grid, seed=gen_seed)
    else:
        pool = gen_sinc(args.x_min, args.x_max, args.step, args.noise, seed=gen_seed)
    if args.flip and pool.task != CLASSIFICATION:
        raise UniSVMError("--flip only applies to classification generators")

    if args.split is None:
        out = flip_labels(pool, args.flip, seed=flip_seed) if args.flip else pool
        write_libsvm(out, args.out)
        print(f"wrote {out.m} samples to {args.out}")
        return 0
    tr, te = split(pool, args.split, seed=split_seed)
    if args.flip:
        tr = flip_labels(tr, args.flip, seed=flip_seed)
    tr_path, te_path = _split_paths(args.out)
    write_libsvm(tr, tr_path)
    write_libsvm(te, te_path)
    print(f"wrote {tr.m} samples to {tr_path} and {te.m} samples to {te_path}")
    return 0


# --- bench -------------------------------------------------------------------

BUNDLED_SWEEPS = ("classification", "regression")


def load_sweep(name_or_path: str) -> dict:
    """Read a sweep JSON file, or one of the bundled sweeps by name."""
    if name_or_path in BUNDLED_SWEEPS and not os.path.exists(name_or_path):
        text = resources.files("unisvm").joinpath("sweeps", f"{name_or_path}.json").read_text("utf-8")
    else:
        with open(name_or_path, encoding="utf-8") as fh:
            text = fh.read()
    try:
        sweep = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UniSVMError(f"sweep file {name_or_path!r} is not valid JSON: {exc}") from None
    if not isinstance(sweep, dict):
        raise UniSVMError("a sweep file must hold a JSON object")
    return sweep


def _merge_sweep(args) -> dict:
    sweep = load_sweep(args.sweep) if args.sweep else {}
    data = dict(sweep.get("data", {}))
    overrides = {
        "losses": args.losses, "seeds": args.seeds, "sizes": args.sizes, "task": args.task,
        "lambda": args.lam, "gamma": args.gamma, "A": args.A, "solver": args.solver,
        "rank": args.rank, "approx_tol": args.approx_tol, "tol": args.tol, "max_iter": args.max_iter,
    }
    sweep.update({k: v for k, v in overrides.items() if v is not None})
    if args.generator:
        data = {"generator": args.generator}
    if args.data:
        data = {"train": args.data, "test": args.test_data}
    if args.flip is not None:
        data["flip"] = args.flip
    sweep["data"] = data

    for key in ("losses", "lambda", "gamma"):
        if sweep.get(key) in (None, []):
            raise UniSVMError(f"the sweep needs {key!r} (from --sweep or a flag)")
    if not data:
        raise UniSVMError("the sweep needs a data source: --generator, --data or a sweep file")
    sweep.setdefault("task", "class")
    sweep.setdefault("seeds", [0])
    sweep.setdefault("sizes", [None])
    return sweep


def _bench_data(sweep: dict, seed: int, m):
    """Train/test pair for one (seed, size); shared by every loss."""
    task = normalize_task(sweep["task"])
    spec = sweep["data"]
    ss = np.random.SeedSequence([int(seed), int(m or 0)])
    s_train, s_test, s_flip = ss.spawn(3)
    if "train" in spec:
        tr = read_libsvm(spec["train"], task)
        te = read_libsvm(spec["test"], task) if spec.get("test") else tr
        if m is not None and m < tr.m:
            tr = tr.subset(np.sort(np.random.default_rng(s_train).choice(tr.m, m, replace=False)))
    elif spec.get("generator") == "checkerboard":
        grid = int(spec.get("grid", 2))
        n = int(m or 400)
        n_test = spec.get("test_size", "same")
        n_test = n if n_test == "same" else int(n_test)
        tr = gen_checkerboard(n, grid=grid, seed=s_train)
        te = gen_checkerboard(n_test, grid=grid, seed=s_test)
    elif spec.get("generator") == "sinc":
        pool = gen_sinc(noise_std=float(spec.get("noise", 0.05)), seed=s_train)
        n = int(m or 1500)
        tr, te = split(pool, n / pool.m, seed=s_test)
    else:
        raise UniSVMError(f"unknown data source in sweep: {spec!r}")
    flip = float(spec.get("flip", 0.0))
    if flip:
        tr = flip_labels(tr, flip, seed=s_flip)
    return tr, te


def run_bench_job(job: dict) -> dict:
    """One (loss, seed, size) run; failures become an ``error`` entry."""
    sweep, loss_text, seed, m = job["sweep"], job["loss"], job["seed"], job["m"]
    row = dict.fromkeys(BENCH_COLUMNS, "")
    row.update(loss=loss_text, seed=seed, m=m if m is not None else "")
    try:
        task = normalize_task(sweep["task"])
        loss = parse_loss(loss_text, task, A=sweep.get("A"))
        row["loss"] = loss.name
        tr, te = _bench_data(sweep, seed, m)
        config = TrainConfig(
            lam=float(sweep["lambda"]),
            tol=float(sweep.get("tol", 1e-6)),
            max_iter=int(sweep.get("max_iter", 100)),
            strategy=sweep.get("solver", "auto"),
            rank_budget=sweep.get("rank"),
            trace_tol=sweep.get("approx_tol"),
        )
        model, report = train(config, tr, loss, KernelSpec(gamma=float(sweep["gamma"])))
        met = evaluate(model, te)
        row.update(
            m=tr.m, r=report.rank, iterations=report.iterations,
            train_seconds=report.train_seconds, metric=met.value,
            metric_name="accuracy" if task == CLASSIFICATION else "rmse",
            converged=report.converged,
        )
    except Exception as exc:  # a failed sub-run must not stop the sweep
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def bench_jobs(sweep: dict) -> list[dict]:
    """Cross-product in a fixed order: sizes, then seeds, then losses."""
    return [
        {"sweep": sweep, "loss": loss, "seed": seed, "m": m}
        for m in sweep["sizes"]
        for seed in sweep["seeds"]
        for loss in sweep["losses"]
    ]


def cmd_bench(args) -> int:
    sweep = _merge_sweep(args)
    jobs = bench_jobs(sweep)
    if args.jobs < 1:
        raise UniSVMError("--jobs must be at least 1")
    # max_iter warnings would flood the terminal; the CSV has a converged column
    solver_log = logging.getLogger("unisvm.solver")
    saved_level = solver_log.level
    solver_log.setLevel(logging.ERROR)

    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    failures = 0
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(BENCH_COLUMNS)
        if args.jobs == 1:
            rows = map(run_bench_job, jobs)
            pool = None
        else:
            pool = ProcessPoolExecutor(max_workers=args.jobs)
            rows = pool.map(run_bench_job, jobs)
        try:
            for row in rows:  # map keeps submission order, so output is deterministic
                failures += bool(row["error"])
                w.writerow([_csv_field(row[c]) for c in BENCH_COLUMNS])
                out.flush()
        finally:
            if pool is not None:
                pool.shutdown()
    finally:
        solver_log.setLevel(saved_level)
        if out is not sys.stdout:
            out.close()
    if failures:
        print(f"{failures} of {len(jobs)} runs failed", file=sys.stderr)
    return 1 if jobs and failures == len(jobs) else 0


# --- entry point ---------------------------------------------------------------

def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
    )
    try:
        return args.func(args)
    except (UniSVMError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
