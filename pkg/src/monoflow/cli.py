"""Command-line interface: fit / predict / streamlines / benchmark / sweep.

Every artifact embeds the config digest and master seed, and every
subcommand is deterministic given them.  Exit codes: 0 success, 1 usage or
I/O error, 2 partial benchmark failure, 3 numerical/training failure.
``MONOFLOW_LOG={error,info,debug}`` controls verbosity (stderr).
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import bench, checkpoint
from .data import Dataset, read_dataset_csv
from .errors import NumericalError, TrainingError
from .flow import predict as flow_predict
from .flow import streamlines as flow_streamlines
from .kernels import MATERN32, SQUARED_EXPONENTIAL
from .train import OptimizerConfig, fit, init_model

log = logging.getLogger("monoflow")

_EXIT_OK = 0
_EXIT_USAGE = 1
_EXIT_PARTIAL = 2
_EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the CLI contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


class _UsageError(Exception):
    pass


def _setup_logging():
    level = os.environ.get("MONOFLOW_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO,
              "debug": logging.DEBUG}
    if level not in levels:
        level = "error"
    logging.basicConfig(stream=sys.stderr, level=levels[level],
                        format="%(levelname)s %(name)s: %(message)s")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="monoflow",
                     description="Monotonic regression with GP-flow SDEs")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a flow model to a CSV dataset")
    p_fit.add_argument("--data", required=True, help="CSV with header x,y")
    _common_fit_flags(p_fit)
    _common_out_flags(p_fit)

    p_pred = sub.add_parser("predict", help="posterior predictive from a checkpoint")
    p_pred.add_argument("--checkpoint", required=True)
    p_pred.add_argument("--grid", help="evaluation grid start:stop:count")
    p_pred.add_argument("--x-csv", help="CSV with column x (header required)")
    p_pred.add_argument("--samples", type=int, default=500)
    p_pred.add_argument("--samples-out", action="store_true",
                        help="also write raw terminal samples CSV")
    _common_out_flags(p_pred)

    p_str = sub.add_parser("streamlines", help="full trajectories for plotting")
    p_str.add_argument("--checkpoint", required=True)
    p_str.add_argument("--x0-grid", help="initial conditions start:stop:count")
    p_str.add_argument("--x0-csv", help="CSV with column x")
    p_str.add_argument("--draws", type=int, default=1)
    _common_out_flags(p_str)

    p_bench = sub.add_parser("benchmark", help="multi-trial benchmark protocol")
    p_bench.add_argument("--functions", nargs="+", default=list(bench.FUNCTION_IDS),
                         choices=list(bench.FUNCTION_IDS))
    p_bench.add_argument("--trials", type=int, default=20)
    p_bench.add_argument("--N", type=int, default=100)
    p_bench.add_argument("--noise-sd", type=float, default=1.0)
    p_bench.add_argument("--grid-T", default="1,5",
                         help="comma-separated flow times searched per trial")
    p_bench.add_argument("--kernels", default="se,matern32",
                         help="comma-separated kernel variants searched")
    p_bench.add_argument("--jobs", type=int, default=0,
                         help="concurrent trials (0 = available parallelism)")
    p_bench.add_argument("--resume", action="store_true",
                         help="reuse per-trial results already on disk")
    p_bench.add_argument("--standardize", action="store_true")
    _common_fit_flags(p_bench, fit_defaults=False)
    _common_out_flags(p_bench)

    p_sweep = sub.add_parser("sweep", help="uncertainty sweep over M and T")
    p_sweep.add_argument("--M-list", default="5,50,100")
    p_sweep.add_argument("--T-list", default="1,2,5,10")
    p_sweep.add_argument("--samples", type=int, default=400)
    p_sweep.add_argument("--data", help="CSV dataset (default: built-in sinc data)")
    _common_fit_flags(p_sweep, fit_defaults=False)
    _common_out_flags(p_sweep)
    return parser


def _common_fit_flags(p, fit_defaults=True):
    p.add_argument("--iters", type=int, default=10_000)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--M", type=int, default=40, help="number of inducing points")
    p.add_argument("--steps", type=int, default=20, help="solver steps")
    p.add_argument("--precision", choices=["float64", "float32"],
                   default="float64" if fit_defaults else "float32")
    if fit_defaults:
        p.add_argument("--T", type=float, default=1.0, help="flow time")
        p.add_argument("--kernel", choices=[SQUARED_EXPONENTIAL, MATERN32],
                       default=SQUARED_EXPONENTIAL)
        p.add_argument("--samples", type=int, default=3,
                       help="ELBO samples per iteration")


def _common_out_flags(p):
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _parse_grid(spec: str) -> np.ndarray:
    try:
        start, stop, count = spec.split(":")
        start, stop, count = float(start), float(stop), int(count)
    except ValueError:
        raise _UsageError(f"bad grid spec {spec!r}; expected start:stop:count")
    if count < 1:
        raise _UsageError("grid count must be >= 1")
    return np.linspace(start, stop, count)


def _load_x(grid_spec, csv_path, flag_names) -> np.ndarray:
    if (grid_spec is None) == (csv_path is None):
        raise _UsageError(f"exactly one of {flag_names} is required")
    if grid_spec is not None:
        return _parse_grid(grid_spec)
    return read_dataset_csv_x(csv_path)


def read_dataset_csv_x(path) -> np.ndarray:
    """Read the x column of a CSV whose header starts with 'x'."""
    path = Path(path)
    xs = []
    with path.open(newline="") as fh:
        header = None
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            if header is None:
                header = [c.strip().lower() for c in row]
                if header[0] != "x":
                    raise ValueError(f"{path}: line {lineno}: first column must be 'x'")
                continue
            try:
                xs.append(float(row[0]))
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: non-numeric value ({exc})") from None
    if not xs:
        raise ValueError(f"{path}: no data rows")
    return np.array(xs)


def _fmt(v) -> str:
    return repr(float(v))


def _write_csv(path, header, rows, digest, seed):
    with Path(path).open("w", newline="") as fh:
        fh.write(f"# config_digest={digest} seed={seed}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _resolve_checkpoint(path):
    try:
        return checkpoint.read_checkpoint(path)
    except FileNotFoundError:
        raise _UsageError(f"checkpoint not found: {path}")
    except (ValueError, KeyError) as exc:
        raise _UsageError(f"cannot read checkpoint: {exc}")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_fit(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = read_dataset_csv(args.data)
    config = {
        "command": "fit", "data": str(args.data), "seed": args.seed,
        "iters": args.iters, "lr": args.lr, "M": args.M, "T": args.T,
        "kernel": args.kernel, "steps": args.steps, "samples": args.samples,
        "precision": args.precision,
    }
    cfg = OptimizerConfig(learning_rate=args.lr, max_iters=args.iters,
                          n_elbo_samples=args.samples, seed=args.seed,
                          precision=args.precision)
    model0 = init_model(data, args.M, args.T, kernel_variant=args.kernel,
                        seed=args.seed, n_steps=args.steps)
    model, trace = fit(data, model0, cfg)
    trace_summary = {
        "iterations": trace.iterations,
        "best_val_elbo": trace.best_val_elbo,
        "final_elbo": float(trace.elbo[-1]),
        "final_lr": float(trace.learning_rate[-1]),
        "n_lr_drops": trace.n_lr_drops,
    }
    digest = checkpoint.write_checkpoint(
        out / "checkpoint.json", model, config=config,
        trace_summary=trace_summary, master_seed=args.seed)
    report = io.StringIO()
    report.write("monoflow fit report\n")
    report.write(f"config_digest: {digest}\nseed: {args.seed}\n")
    report.write(f"iterations: {trace.iterations}\n")
    report.write(f"best_val_elbo: {trace.best_val_elbo!r}\n")
    report.write(f"final_elbo: {trace_summary['final_elbo']!r}\n")
    report.write(f"noise_variance: {model.noise_variance!r}\n")
    report.write(f"signal_variance: {model.kernel.signal_variance!r}\n")
    report.write(f"lengthscales: {model.kernel.lengthscales.tolist()!r}\n")
    report.write(f"wall_time_s: {float(trace.wall_time[-1]):.2f}\n")
    (out / "fit_report.txt").write_text(report.getvalue())
    log.info("checkpoint written to %s", out / "checkpoint.json")
    return _EXIT_OK


def cmd_predict(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = _resolve_checkpoint(args.checkpoint)
    model = doc["model_obj"]
    x_star = _load_x(args.grid, args.x_csv, "--grid/--x-csv")
    config = {"command": "predict", "checkpoint_digest": doc["config_digest"],
              "samples": args.samples, "seed": args.seed,
              "x_spec": args.grid or str(args.x_csv)}
    digest = checkpoint.config_digest(config)
    pred = flow_predict(model, x_star, args.samples,
                        np.random.default_rng(args.seed))
    order = np.argsort(x_star, kind="stable")
    rows = [[_fmt(x_star[i]), _fmt(pred.mean[i]), _fmt(pred.lower[i]),
             _fmt(pred.upper[i])] for i in order]
    _write_csv(out / "predictions.csv", ["x", "mean", "q2.5", "q97.5"],
               rows, digest, args.seed)
    if args.samples_out:
        sample_rows = [[str(s), _fmt(x_star[i]), _fmt(pred.samples[s, i])]
                       for s in range(args.samples) for i in order]
        _write_csv(out / "samples.csv", ["sample", "x", "value"],
                   sample_rows, digest, args.seed)
    log.info("predictions written to %s", out / "predictions.csv")
    return _EXIT_OK


def cmd_streamlines(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    doc = _resolve_checkpoint(args.checkpoint)
    model = doc["model_obj"]
    x0 = _load_x(args.x0_grid, args.x0_csv, "--x0-grid/--x0-csv")
    config = {"command": "streamlines", "checkpoint_digest": doc["config_digest"],
              "draws": args.draws, "seed": args.seed,
              "x0_spec": args.x0_grid or str(args.x0_csv)}
    digest = checkpoint.config_digest(config)
    draws = flow_streamlines(model, x0, args.draws,
                             np.random.default_rng(args.seed))
    dt = model.flow_time / model.n_steps
    rows = []
    for d, sample in enumerate(draws):
        for k in range(model.n_steps + 1):
            for p in range(x0.size):
                rows.append([str(d), str(k), str(p),
                             _fmt(sample.trajectory[k, p]), _fmt(k * dt)])
    _write_csv(out / "streamlines.csv",
               ["draw", "step", "particle", "position", "time"],
               rows, digest, args.seed)
    # Inducing-point markers for the plotting layer: variational mean and
    # variance at each inducing input.
    s_diag = np.sum(model.s_factor ** 2, axis=1)
    marker_rows = [[_fmt(model.z[j, 0]), _fmt(model.z[j, 1]),
                    _fmt(model.m[j]), _fmt(s_diag[j])]
                   for j in range(model.n_inducing)]
    _write_csv(out / "inducing.csv", ["space", "time", "mean", "variance"],
               marker_rows, digest, args.seed)
    log.info("streamlines written to %s", out / "streamlines.csv")
    return _EXIT_OK


def cmd_benchmark(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        grid_t = [float(v) for v in args.grid_T.split(",") if v]
        kernels = [v.strip() for v in args.kernels.split(",") if v]
    except ValueError:
        raise _UsageError("bad --grid-T / --kernels")
    for k in kernels:
        if k not in (SQUARED_EXPONENTIAL, MATERN32):
            raise _UsageError(f"unknown kernel {k!r}")
    grid = tuple((t, k) for t in grid_t for k in kernels)
    cfg = OptimizerConfig(learning_rate=args.lr, max_iters=args.iters,
                          seed=args.seed, precision=args.precision)
    jobs = args.jobs if args.jobs > 0 else (os.cpu_count() or 1)

    def progress(fn, trial, row):
        log.info("trial %s/%d done (failed=%s)", fn, trial, row.failed)

    report = bench.run_benchmark(
        args.functions, args.N, args.trials, cfg, grid=grid,
        n_inducing=args.M, noise_sd=args.noise_sd, master_seed=args.seed,
        standardize=args.standardize, out_dir=out, resume=args.resume,
        store_models=True, n_jobs=jobs, progress=progress)
    sys.stdout.write(report.aggregate_csv_text())
    return benchmark_exit_code(report)


def benchmark_exit_code(report) -> int:
    """0 when at least 80% of trials succeeded, else 2."""
    n_failed = sum(1 for r in report.rows if r.failed)
    if n_failed and n_failed > 0.2 * len(report.rows):
        return _EXIT_PARTIAL
    return _EXIT_OK


def cmd_sweep(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        m_values = [int(v) for v in args.M_list.split(",") if v]
        t_values = [float(v) for v in args.T_list.split(",") if v]
    except ValueError:
        raise _UsageError("bad --M-list / --T-list")
    if args.data:
        data = read_dataset_csv(args.data)
    else:
        data = bench.make_sinc_dataset(seed=args.seed)
    cfg = OptimizerConfig(learning_rate=args.lr, max_iters=args.iters,
                          seed=args.seed, precision=args.precision)
    config = {"command": "sweep", "M_list": m_values, "T_list": t_values,
              "iters": args.iters, "seed": args.seed, "samples": args.samples,
              "precision": args.precision, "data": args.data or "sinc"}
    digest = checkpoint.config_digest(config)

    def progress(sweep, value):
        log.info("sweep %s=%g done", sweep, value)

    bands = bench.uncertainty_sweep(data, m_values, t_values, cfg,
                                    n_samples=args.samples,
                                    master_seed=args.seed, progress=progress)
    (out / "sweep.csv").write_text(
        bench.sweep_csv_text(bands, digest=digest, seed=args.seed))
    log.info("sweep written to %s", out / "sweep.csv")
    return _EXIT_OK


_COMMANDS = {
    "fit": cmd_fit,
    "predict": cmd_predict,
    "streamlines": cmd_streamlines,
    "benchmark": cmd_benchmark,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_USAGE
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_USAGE
    except (NumericalError, TrainingError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return _EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
