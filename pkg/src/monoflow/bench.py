"""Benchmark protocol: the six monotone test functions, synthetic data,
RMSE/ELPD metrics, the multi-trial harness, and the inducing-point /
flow-time uncertainty sweep.

Reference results from the literature for the same functions are kept here
so benchmark reports can print them alongside; they are quoted for context,
never recomputed.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .checkpoint import (canonical_json, config_digest, model_from_jsonable,
                         model_to_jsonable)
from .data import Dataset, DatasetMeta
from .errors import NumericalError, TrainingError
from .flow import FlowModel, ordering_violations, predict
from .kernels import MATERN32, SQUARED_EXPONENTIAL
from .train import OptimizerConfig, fit, init_model

# ---------------------------------------------------------------------------
# Benchmark functions (all nondecreasing on (0, 10])
# ---------------------------------------------------------------------------

DOMAIN = (0.0, 10.0)

_FUNCTIONS = {
    "flat": lambda x: np.full_like(x, 3.0),
    "sinusoidal": lambda x: 0.32 * (x + np.sin(x)),
    "step": lambda x: np.where(x <= 8.0, 3.0, 6.0),
    "linear": lambda x: 0.3 * x,
    "exponential": lambda x: 0.15 * np.exp(0.6 * x - 3.0),
    "logistic": lambda x: 3.0 / (1.0 + np.exp(-2.0 * x + 10.0)),
}

FUNCTION_IDS = tuple(_FUNCTIONS)

# Published RMSE x100 (mean, SD over 20 trials) and ELPD for these functions,
# N = 100 and N = 15, quoted for report footers and acceptance bands.
PUBLISHED_FLOW_RMSE_N100 = {
    "flat": (6.8, 3.2), "sinusoidal": (17.9, 4.2), "step": (20.5, 5.0),
    "linear": (13.2, 6.7), "exponential": (14.4, 4.8), "logistic": (18.1, 5.0),
}
PUBLISHED_GP_RMSE_N100 = {
    "flat": 15.1, "sinusoidal": 21.9, "step": 27.1,
    "linear": 16.7, "exponential": 19.7, "logistic": 25.5,
}
PUBLISHED_FLOW_RMSE_N15 = {
    "flat": (21.7, 15.0), "sinusoidal": (39.1, 13.0), "step": (64.5, 10.7),
    "linear": (30.8, 12.0), "exponential": (32.8, 17.9), "logistic": (43.2, 15.2),
}
PUBLISHED_FLOW_ELPD_N100 = {
    "flat": (-1.39, 0.05), "sinusoidal": (-1.42, 0.05), "step": (-1.41, 0.08),
    "linear": (-1.39, 0.05), "exponential": (-1.40, 0.07), "logistic": (-1.43, 0.07),
}

# Hyperparameter grid searched per trial: T in {1, 5} x both kernels, M = 40.
DEFAULT_GRID = ((1.0, SQUARED_EXPONENTIAL), (1.0, MATERN32),
                (5.0, SQUARED_EXPONENTIAL), (5.0, MATERN32))
DEFAULT_N_INDUCING = 40


def eval_function(function_id: str, x) -> np.ndarray:
    """Evaluate a benchmark function; inputs must lie in (0, 10]."""
    if function_id not in _FUNCTIONS:
        raise ValueError(f"unknown benchmark function {function_id!r}; "
                         f"expected one of {FUNCTION_IDS}")
    x = np.asarray(x, dtype=float)
    if np.any(x <= DOMAIN[0]) or np.any(x > DOMAIN[1]):
        raise ValueError(f"inputs must lie in ({DOMAIN[0]:g}, {DOMAIN[1]:g}]")
    return _FUNCTIONS[function_id](x)


def make_dataset(function_id: str, n: int, noise_sd: float, seed: int) -> Dataset:
    """Noisy evaluations on the equally spaced grid x_i = 10 i / n, i=1..n."""
    if n < 2:
        raise ValueError("n must be >= 2")
    x = DOMAIN[1] * np.arange(1, n + 1) / n
    rng = np.random.default_rng(seed)
    y = eval_function(function_id, x) + noise_sd * rng.standard_normal(n)
    return Dataset(x=x, y=y, meta=DatasetMeta(function_id=function_id,
                                              noise_sd=float(noise_sd),
                                              seed=int(seed), n=int(n)))


def make_sinc_dataset(seed: int, n: int = 50) -> Dataset:
    """The non-monotone sweep dataset: y = sinc(pi x) + eps, eps ~ N(0, 0.02),
    on n equally spaced points in [-1, 1]."""
    x = np.linspace(-1.0, 1.0, n)
    rng = np.random.default_rng(seed)
    y = np.sinc(x) + np.sqrt(0.02) * rng.standard_normal(n)
    return Dataset(x=x, y=y, meta=DatasetMeta(function_id="sinc",
                                              noise_sd=float(np.sqrt(0.02)),
                                              seed=int(seed), n=int(n)))


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def rmse(pred_mean, truth) -> float:
    """Root-mean-square error between a prediction and the noiseless truth."""
    pred_mean = np.asarray(pred_mean, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if pred_mean.shape != truth.shape:
        raise ValueError("pred_mean and truth must have equal length")
    return float(np.sqrt(np.mean((pred_mean - truth) ** 2)))


def elpd(model: FlowModel, test: Dataset, n_samples: int, rng) -> float:
    """Expected log posterior predictive density over the test points.

    For each point, log[(1/S) sum_s N(y* | f*_s, sigma^2)] with f*_s terminal
    flow samples at the test inputs, averaged in log-sum-exp form.
    """
    if n_samples < 100:
        raise ValueError("n_samples must be >= 100")
    samples = predict(model, test.x, n_samples, rng).samples
    nv = model.noise_variance
    log_pdf = (-0.5 * np.log(2.0 * np.pi * nv)
               - (test.y[None, :] - samples) ** 2 / (2.0 * nv))
    per_point = logsumexp(log_pdf, axis=0) - np.log(n_samples)
    return float(np.mean(per_point))


# ---------------------------------------------------------------------------
# Trial seed derivation (documented, stable)
# ---------------------------------------------------------------------------
# Every (function, trial) pair owns a SeedSequence keyed by
# (master_seed, function_index, trial); its children, in fixed order, seed
# the data noise, the per-grid-entry fits, the RMSE prediction sampling and
# the ELPD test set + sampling.  numpy's SeedSequence spawning is stable
# across platforms and releases, which makes every artifact regenerable.

def trial_seeds(master_seed: int, function_id: str, trial: int, n_grid: int) -> dict:
    fn_idx = FUNCTION_IDS.index(function_id)
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(fn_idx, trial))
    children = ss.spawn(4 + n_grid)

    def as_int(child):
        return int(child.generate_state(1)[0])

    return {
        "data": as_int(children[0]),
        "predict": as_int(children[1]),
        "elpd_data": as_int(children[2]),
        "elpd_sampling": as_int(children[3]),
        "fits": [as_int(c) for c in children[4:]],
    }


# ---------------------------------------------------------------------------
# Report types
# ---------------------------------------------------------------------------

@dataclass
class TrialResult:
    function_id: str
    trial: int
    seeds: dict
    selected_flow_time: float | None
    selected_kernel: str | None
    rmse_x100: float | None
    rmse_x100_best_grid: float | None
    elpd: float | None
    val_elbo: float | None
    grid_val_elbos: list | None
    grid_rmse_x100: list | None
    wall_time: float
    failed: bool = False
    error: str | None = None

    def canonical_dict(self) -> dict:
        """Deterministic row content (timing excluded by design)."""
        return {
            "function_id": self.function_id,
            "trial": self.trial,
            "seeds": self.seeds,
            "selected_flow_time": self.selected_flow_time,
            "selected_kernel": self.selected_kernel,
            "rmse_x100": self.rmse_x100,
            "rmse_x100_best_grid": self.rmse_x100_best_grid,
            "elpd": self.elpd,
            "val_elbo": self.val_elbo,
            "grid_val_elbos": self.grid_val_elbos,
            "grid_rmse_x100": self.grid_rmse_x100,
            "failed": self.failed,
            "error": self.error,
        }


@dataclass
class BenchmarkReport:
    rows: list
    config: dict
    digest: str

    def aggregates(self) -> dict:
        """Per-function mean/SD over successful trials (recomputable)."""
        out = {}
        for fn in self.config["functions"]:
            ok = [r for r in self.rows if r.function_id == fn and not r.failed]
            n_failed = sum(1 for r in self.rows
                           if r.function_id == fn and r.failed)
            entry = {"n_trials": len(ok), "n_failed": n_failed}
            for key in ("rmse_x100", "rmse_x100_best_grid", "elpd"):
                vals = np.array([getattr(r, key) for r in ok], dtype=float)
                entry[f"{key}_mean"] = float(np.mean(vals)) if len(vals) else None
                entry[f"{key}_sd"] = (float(np.std(vals, ddof=1))
                                      if len(vals) > 1 else 0.0 if len(vals) else None)
            out[fn] = entry
        return out

    def to_json_text(self) -> str:
        doc = {
            "kind": "monoflow-benchmark-report",
            "schema_version": 1,
            "config": self.config,
            "config_digest": self.digest,
            "rows": [r.canonical_dict() for r in self.rows],
            "aggregates": self.aggregates(),
            "published_reference": {
                "flow_rmse_n100": PUBLISHED_FLOW_RMSE_N100,
                "flow_rmse_n15": PUBLISHED_FLOW_RMSE_N15,
                "flow_elpd_n100": PUBLISHED_FLOW_ELPD_N100,
                "gp_rmse_n100": PUBLISHED_GP_RMSE_N100,
            },
        }
        return canonical_json(doc) + "\n"

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        buf.write(f"# config_digest={self.digest} seed={self.config['master_seed']}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["function", "trial", "rmse_x100", "rmse_x100_best_grid",
                         "elpd", "val_elbo", "selected_T", "selected_kernel",
                         "failed"])
        for r in self.rows:
            writer.writerow([
                r.function_id, r.trial,
                _fmt(r.rmse_x100), _fmt(r.rmse_x100_best_grid), _fmt(r.elpd),
                _fmt(r.val_elbo), _fmt(r.selected_flow_time),
                r.selected_kernel or "", int(r.failed)])
        return buf.getvalue()

    def aggregate_csv_text(self) -> str:
        """Aggregate table with published reference numbers alongside."""
        published = (PUBLISHED_FLOW_RMSE_N15 if self.config["n"] == 15
                     else PUBLISHED_FLOW_RMSE_N100)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["function", "n_trials", "rmse_x100_mean", "rmse_x100_sd",
                         "published_mean", "published_sd", "elpd_mean", "elpd_sd",
                         "published_elpd_mean", "published_elpd_sd", "n_failed"])
        agg = self.aggregates()
        for fn, entry in agg.items():
            pub = published.get(fn, (None, None))
            pub_elpd = PUBLISHED_FLOW_ELPD_N100.get(fn, (None, None))
            writer.writerow([
                fn, entry["n_trials"],
                _fmt(entry["rmse_x100_mean"]), _fmt(entry["rmse_x100_sd"]),
                _fmt(pub[0]), _fmt(pub[1]),
                _fmt(entry["elpd_mean"]), _fmt(entry["elpd_sd"]),
                _fmt(pub_elpd[0]), _fmt(pub_elpd[1]),
                entry["n_failed"]])
        return buf.getvalue()


def _fmt(v):
    if v is None:
        return ""
    return repr(float(v))


# ---------------------------------------------------------------------------
# The trial harness
# ---------------------------------------------------------------------------

def _benchmark_config(functions, n, n_trials, noise_sd, grid, n_inducing,
                      cfg: OptimizerConfig, master_seed, rmse_samples,
                      elpd_samples, standardize) -> dict:
    return {
        "functions": list(functions),
        "n": int(n),
        "n_trials": int(n_trials),
        "noise_sd": float(noise_sd),
        "grid": [[float(t), k] for t, k in grid],
        "n_inducing": int(n_inducing),
        "optimizer": {
            "learning_rate": cfg.learning_rate,
            "max_iters": cfg.max_iters,
            "plateau_patience": cfg.plateau_patience,
            "decay_factor": cfg.decay_factor,
            "n_elbo_samples": cfg.n_elbo_samples,
        },
        "master_seed": int(master_seed),
        "rmse_samples": int(rmse_samples),
        "elpd_samples": int(elpd_samples),
        "standardize": bool(standardize),
    }


def run_trial(function_id: str, trial: int, config: dict,
              cfg: OptimizerConfig, store_model_path=None) -> TrialResult:
    """One (function, trial) cell of the protocol.  Pure given its seeds."""
    t_start = time.perf_counter()
    grid = [(float(t), k) for t, k in config["grid"]]
    seeds = trial_seeds(config["master_seed"], function_id, trial, len(grid))
    try:
        data = make_dataset(function_id, config["n"], config["noise_sd"],
                            seeds["data"])
        truth = eval_function(function_id, data.x)
        x_fit, y_fit = data.x, data.y
        y_loc, y_scale, x_loc, x_scale = 0.0, 1.0, 0.0, 1.0
        if config["standardize"]:
            x_loc, x_scale = float(np.mean(data.x)), float(np.std(data.x))
            y_loc, y_scale = float(np.mean(data.y)), float(np.std(data.y))
            x_fit = (data.x - x_loc) / x_scale
            y_fit = (data.y - y_loc) / y_scale
        fit_data = Dataset(x=x_fit, y=y_fit)

        fitted, val_elbos = [], []
        for entry_idx, (flow_time, variant) in enumerate(grid):
            entry_seed = seeds["fits"][entry_idx]
            model0 = init_model(fit_data, config["n_inducing"], flow_time,
                                kernel_variant=variant, seed=entry_seed)
            model, trace = fit(fit_data, model0, replace(cfg, seed=entry_seed))
            fitted.append(model)
            val_elbos.append(trace.best_val_elbo)

        grid_rmse = []
        pred_rng = np.random.default_rng(seeds["predict"])
        for model in fitted:
            mean_scaled = predict(model, x_fit, config["rmse_samples"],
                                  pred_rng).mean
            mean = mean_scaled * y_scale + y_loc
            grid_rmse.append(100.0 * rmse(mean, truth))

        best_idx = int(np.argmax(val_elbos))
        best_model = fitted[best_idx]

        test_rng = np.random.default_rng(seeds["elpd_data"])
        y_test = truth + config["noise_sd"] * test_rng.standard_normal(len(data))
        test = Dataset(x=x_fit, y=(y_test - y_loc) / y_scale)
        elpd_val = elpd(best_model, test, config["elpd_samples"],
                        np.random.default_rng(seeds["elpd_sampling"]))
        # Density change of variables back to the original y units.
        elpd_val -= np.log(y_scale)

        if store_model_path is not None:
            Path(store_model_path).write_text(
                canonical_json(model_to_jsonable(best_model)) + "\n")

        return TrialResult(
            function_id=function_id, trial=trial, seeds=seeds,
            selected_flow_time=grid[best_idx][0],
            selected_kernel=grid[best_idx][1],
            rmse_x100=grid_rmse[best_idx],
            rmse_x100_best_grid=min(grid_rmse),
            elpd=elpd_val, val_elbo=float(val_elbos[best_idx]),
            grid_val_elbos=[float(v) for v in val_elbos],
            grid_rmse_x100=[float(v) for v in grid_rmse],
            wall_time=time.perf_counter() - t_start)
    except (TrainingError, NumericalError) as exc:
        return TrialResult(
            function_id=function_id, trial=trial, seeds=seeds,
            selected_flow_time=None, selected_kernel=None, rmse_x100=None,
            rmse_x100_best_grid=None, elpd=None, val_elbo=None,
            grid_val_elbos=None, grid_rmse_x100=None,
            wall_time=time.perf_counter() - t_start,
            failed=True, error=f"{type(exc).__name__}: {exc}")


def run_benchmark(functions, n, n_trials, cfg: OptimizerConfig,
                  grid=DEFAULT_GRID, n_inducing=DEFAULT_N_INDUCING,
                  noise_sd=1.0, master_seed=None, rmse_samples=300,
                  elpd_samples=200, standardize=False, out_dir=None,
                  resume=False, store_models=False, n_jobs=1,
                  progress=None) -> BenchmarkReport:
    """Run the full (function x trial) protocol.

    With ``out_dir`` set, per-trial results are checkpointed as
    ``<out>/<function>/<trial>.json`` and ``resume=True`` reuses rows whose
    embedded digest matches, so a killed sweep finishes deterministically.
    Per-trial training failures are recorded and excluded from aggregates;
    they never abort the sweep.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    if master_seed is None:
        master_seed = cfg.seed
    config = _benchmark_config(functions, n, n_trials, noise_sd, grid,
                               n_inducing, cfg, master_seed, rmse_samples,
                               elpd_samples, standardize)
    digest = config_digest(config)
    out_path = Path(out_dir) if out_dir is not None else None

    cells = [(fn, t) for fn in functions for t in range(n_trials)]
    rows: dict = {}
    pending = []
    for fn, t in cells:
        if out_path is not None and resume:
            cached = _load_trial(out_path, fn, t, digest)
            if cached is not None:
                rows[(fn, t)] = cached
                continue
        pending.append((fn, t))

    if n_jobs > 1 and pending:
        import concurrent.futures as cf
        import multiprocessing as mp
        ctx = mp.get_context("spawn")
        with cf.ProcessPoolExecutor(max_workers=n_jobs, mp_context=ctx) as pool:
            futures = {
                pool.submit(_run_trial_task, fn, t, config,
                            _cfg_dict(cfg), digest,
                            str(out_path) if out_path else None,
                            store_models): (fn, t)
                for fn, t in pending}
            for fut in cf.as_completed(futures):
                fn, t = futures[fut]
                rows[(fn, t)] = fut.result()
                if progress is not None:
                    progress(fn, t, rows[(fn, t)])
    else:
        for fn, t in pending:
            rows[(fn, t)] = _run_trial_task(
                fn, t, config, _cfg_dict(cfg), digest,
                str(out_path) if out_path else None, store_models)
            if progress is not None:
                progress(fn, t, rows[(fn, t)])

    ordered = [rows[(fn, t)] for fn, t in cells]
    report = BenchmarkReport(rows=ordered, config=config, digest=digest)
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        (out_path / "report.json").write_text(report.to_json_text())
        (out_path / "report.csv").write_text(report.to_csv_text())
        timings = {f"{r.function_id}/{r.trial}": r.wall_time for r in ordered}
        (out_path / "timings.json").write_text(
            json.dumps(timings, sort_keys=True, indent=1) + "\n")
    return report


def _cfg_dict(cfg: OptimizerConfig) -> dict:
    return {
        "learning_rate": cfg.learning_rate, "max_iters": cfg.max_iters,
        "plateau_patience": cfg.plateau_patience,
        "decay_factor": cfg.decay_factor,
        "n_elbo_samples": cfg.n_elbo_samples, "seed": cfg.seed,
    }


def _run_trial_task(fn, trial, config, cfg_dict, digest, out_dir,
                    store_models) -> TrialResult:
    cfg = OptimizerConfig(**cfg_dict)
    model_path = None
    if out_dir is not None:
        fn_dir = Path(out_dir) / fn
        fn_dir.mkdir(parents=True, exist_ok=True)
        if store_models:
            model_path = fn_dir / f"{trial}_model.json"
    result = run_trial(fn, trial, config, cfg, store_model_path=model_path)
    if out_dir is not None:
        doc = {"config_digest": digest, "row": result.canonical_dict(),
               "wall_time": result.wall_time}
        (Path(out_dir) / fn / f"{trial}.json").write_text(
            json.dumps(doc, sort_keys=True, indent=1) + "\n")
    return result


def _load_trial(out_path: Path, fn: str, trial: int, digest: str):
    path = out_path / fn / f"{trial}.json"
    if not path.exists():
        return None
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError:
        return None
    if doc.get("config_digest") != digest:
        return None
    row = doc["row"]
    return TrialResult(wall_time=doc.get("wall_time", 0.0), **row)


def load_stored_model(out_dir, function_id: str, trial: int) -> FlowModel:
    path = Path(out_dir) / function_id / f"{trial}_model.json"
    return model_from_jsonable(json.loads(path.read_text()))


# ---------------------------------------------------------------------------
# Uncertainty sweep over M and T (sinc dataset, extrapolation to [-5, 5])
# ---------------------------------------------------------------------------

@dataclass
class SweepBand:
    sweep: str                  # "M" or "T"
    value: float
    x: np.ndarray
    mean: np.ndarray
    lower: np.ndarray           # mean - 2 SD
    upper: np.ndarray           # mean + 2 SD
    obs_mask: np.ndarray        # True where x is a training input
    n_order_violations: int

    def mean_width(self, at_obs=False) -> float:
        width = self.upper - self.lower
        if at_obs:
            width = width[self.obs_mask]
        return float(np.mean(width))


def uncertainty_sweep(data: Dataset, m_values, t_values, cfg: OptimizerConfig,
                      default_m=DEFAULT_N_INDUCING, default_t=1.0,
                      kernel_variant=SQUARED_EXPONENTIAL, n_samples=400,
                      x_range=(-5.0, 5.0), n_grid=81, master_seed=0,
                      progress=None) -> list[SweepBand]:
    """Fit one model per sweep setting and export +/-2-empirical-SD bands.

    The M sweep holds T at ``default_t``; the T sweep holds M at
    ``default_m``.  Bands are evaluated over ``x_range`` plus the training
    inputs, and every sampled curve is checked for ordering violations.
    """
    grid = np.linspace(x_range[0], x_range[1], n_grid)
    x_eval = np.unique(np.concatenate([grid, data.x]))
    obs_mask = np.isin(x_eval, data.x)
    settings = ([("M", float(m), int(m), float(default_t)) for m in m_values]
                + [("T", float(t), int(default_m), float(t)) for t in t_values])
    bands = []
    for idx, (sweep, value, n_inducing, flow_time) in enumerate(settings):
        ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(7, idx))
        fit_seed, sample_seed = (int(c.generate_state(1)[0]) for c in ss.spawn(2))
        model0 = init_model(data, n_inducing, flow_time,
                            kernel_variant=kernel_variant, seed=fit_seed)
        model, _ = fit(data, model0, replace(cfg, seed=fit_seed))
        pred = predict(model, x_eval, n_samples, np.random.default_rng(sample_seed))
        sd = pred.samples.std(axis=0)
        violations = sum(ordering_violations(x_eval, s) for s in pred.samples)
        bands.append(SweepBand(
            sweep=sweep, value=value, x=x_eval, mean=pred.mean,
            lower=pred.mean - 2.0 * sd, upper=pred.mean + 2.0 * sd,
            obs_mask=obs_mask, n_order_violations=int(violations)))
        if progress is not None:
            progress(sweep, value)
    return bands


def sweep_csv_text(bands: list[SweepBand], digest: str = "", seed: int = 0) -> str:
    buf = io.StringIO()
    if digest:
        buf.write(f"# config_digest={digest} seed={seed}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["sweep", "value", "x", "mean", "lo", "hi"])
    for band in bands:
        for i in range(len(band.x)):
            writer.writerow([band.sweep, _fmt(band.value), _fmt(band.x[i]),
                             _fmt(band.mean[i]), _fmt(band.lower[i]),
                             _fmt(band.upper[i])])
    return buf.getvalue()
