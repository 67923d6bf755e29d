"""Monte Carlo benchmarking of the cascade identification methods.

For every sample size and run index a dataset is generated from a seed
derived deterministically from (master seed, N, run), so all enabled methods
see identical data and any run can be replayed in isolation. Results go to
CSV, raw per run and aggregated per (N, method).
"""

from __future__ import annotations

import csv
import hashlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from time import perf_counter

import numpy as np
from threadpoolctl import threadpool_limits

from . import pem
from .errors import NumericalError, ParameterError
from .fir import estimate_fir
from .lti import TransferFunction
from .netsim import (
    CascadeModel,
    DataRecord,
    InputSpec,
    ThetaVector,
    generate_dataset,
)
from .wnsf import Variant, WnsfConfig, build_q_cascade, step2_ls, wnsf_identify

__all__ = [
    "ExperimentConfig",
    "ResultRow",
    "available_methods",
    "config_from_dict",
    "config_to_dict",
    "default_model",
    "emit_csv",
    "emit_summary",
    "load_results_csv",
    "run_monte_carlo",
    "theta_mse",
]

METHODS = ("wnsf1", "wnsf3", "pem_true", "pem_wnsf_init")

PEM_MAX_ITER = 200
PEM_TOL = 1e-6

RAW_HEADER = ["N", "method", "run", "mse", "time_s", "chosen_n", "converged"]
SUMMARY_HEADER = ["N", "method", "mse_mean", "mse_median", "time_mean", "fail_rate"]


def available_methods() -> tuple[str, ...]:
    return METHODS


def default_model() -> CascadeModel:
    """Built-in benchmark cascade: three second-order modules with noise
    variances 2 and 3 on the two measured outputs."""
    return CascadeModel(
        g1=TransferFunction(num=[0.7, 0.5], den=[1.0, -1.2, 0.5], n_k=1),
        g2=TransferFunction(num=[0.6, -0.2], den=[1.0, -1.3, 0.6]),
        g3=TransferFunction(num=[0.6, 0.8, -1.2], den=[1.0, -0.75, 0.56]),
        lambda1=2.0,
        lambda2=3.0,
    )


# the benchmark sample-size grid: seven sizes log-spaced from 300 to 60000
FULL_N_GRID = (300, 725, 1754, 4243, 10260, 24811, 60000)


@dataclass(frozen=True)
class ExperimentConfig:
    model: CascadeModel = field(default_factory=default_model)
    input_spec: InputSpec = field(default_factory=InputSpec)
    n_list: tuple[int, ...] = FULL_N_GRID
    runs: int = 1000
    methods: tuple[str, ...] = ("wnsf1", "wnsf3", "pem_true")
    wnsf: WnsfConfig = field(default_factory=WnsfConfig)
    seed: int = 0
    timing: bool = True
    debug_data_hash: bool = False

    def __post_init__(self):
        object.__setattr__(self, "n_list", tuple(int(n) for n in self.n_list))
        object.__setattr__(self, "methods", tuple(self.methods))
        if self.runs < 1:
            raise ParameterError("runs must be >= 1")
        if not self.n_list or list(self.n_list) != sorted(self.n_list):
            raise ParameterError("N list must be nonempty and sorted ascending")
        lo = 2 * max(self.wnsf.n_grid)
        if self.n_list[0] <= lo:
            raise ParameterError(
                f"every N must exceed 2*max(n_grid)={lo}, got N={self.n_list[0]}"
            )
        for m in self.methods:
            if m not in METHODS:
                raise ParameterError(f"unknown method {m!r}; choose from {METHODS}")


@dataclass(frozen=True)
class ResultRow:
    n_samples: int
    method: str
    run: int
    mse: float
    time_s: float
    chosen_n: int
    converged: bool
    data_hash: str | None = None


def theta_mse(theta_hat: ThetaVector, theta_true: ThetaVector) -> float:
    """Squared parameter error ||theta_hat - theta_true||^2."""
    diff = theta_hat.values - theta_true.values
    return float(diff @ diff)


def _run_seed(master: int, n: int, run: int) -> tuple:
    return (int(master), int(n), int(run))


def _data_hash(data: DataRecord) -> str:
    h = hashlib.sha256()
    for sig in (data.u1, data.u2, data.y1, data.y2):
        h.update(np.ascontiguousarray(sig).tobytes())
    return h.hexdigest()


def _identify(config: ExperimentConfig, method: str, data: DataRecord):
    """Run one method; returns (theta, chosen_n, converged)."""
    orders = config.model.orders
    if method in ("wnsf1", "wnsf3"):
        variant = Variant.WNSF1 if method == "wnsf1" else Variant.WNSF3
        report = wnsf_identify(data, orders, replace(config.wnsf, variant=variant))
        return report.theta, report.chosen_n, report.converged
    if method == "pem_true":
        result = pem.pem_minimize(
            data, config.model.theta(), max_iter=PEM_MAX_ITER, tol=PEM_TOL
        )
        return result.theta, 0, result.converged
    # pem_wnsf_init: cold start from the unweighted step-2 fit at the
    # largest FIR order in the grid
    n_init = max(config.wnsf.n_grid)
    est = estimate_fir(data, n_init)
    q = build_q_cascade(est.g_hat, orders, Variant.WNSF1)
    theta_ls = step2_ls(q, est.g_hat, orders)
    if not theta_ls.is_stable():
        return theta_ls, n_init, False
    result = pem.pem_minimize(data, theta_ls, max_iter=PEM_MAX_ITER, tol=PEM_TOL)
    return result.theta, n_init, result.converged


def _run_item(config: ExperimentConfig, n: int, run: int) -> list[ResultRow]:
    """All enabled methods on the dataset for one (N, run) cell."""
    theta_true = config.model.theta()
    with threadpool_limits(limits=1):
        data = generate_dataset(
            config.model, n, _run_seed(config.seed, n, run), config.input_spec
        )
        digest = _data_hash(data) if config.debug_data_hash else None
        rows = []
        for method in config.methods:
            start = perf_counter()
            try:
                theta, chosen_n, converged = _identify(config, method, data)
                mse = theta_mse(theta, theta_true)
            except NumericalError:
                mse, chosen_n, converged = float("nan"), 0, False
            elapsed = perf_counter() - start if config.timing else 0.0
            rows.append(
                ResultRow(
                    n_samples=n,
                    method=method,
                    run=run,
                    mse=mse,
                    time_s=elapsed,
                    chosen_n=chosen_n,
                    converged=converged,
                    data_hash=digest,
                )
            )
    return rows


def _sorted_rows(rows) -> list[ResultRow]:
    return sorted(rows, key=lambda r: (r.n_samples, r.method, r.run))


def run_monte_carlo(config: ExperimentConfig, jobs: int = 1) -> list[ResultRow]:
    """Execute the full study; ``jobs > 1`` distributes (N, run) work items
    over processes. Output is identical to the serial run."""
    items = [(n, run) for n in config.n_list for run in range(config.runs)]
    rows: list[ResultRow] = []
    if jobs <= 1:
        for n, run in items:
            rows.extend(_run_item(config, n, run))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_item, config, n, run) for n, run in items]
            for fut in futures:
                rows.extend(fut.result())
    return _sorted_rows(rows)


def _fmt(x: float) -> str:
    return format(x, ".17g")


def emit_csv(rows, path) -> None:
    """Raw per-run results, sorted by (N, method, run)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RAW_HEADER)
        for r in _sorted_rows(rows):
            writer.writerow(
                [
                    r.n_samples,
                    r.method,
                    r.run,
                    _fmt(r.mse),
                    _fmt(r.time_s),
                    r.chosen_n,
                    "true" if r.converged else "false",
                ]
            )


def load_results_csv(path) -> list[ResultRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != RAW_HEADER:
            raise ParameterError(f"unexpected results header {header!r}")
        rows = []
        for rec in reader:
            if not rec:
                continue
            rows.append(
                ResultRow(
                    n_samples=int(rec[0]),
                    method=rec[1],
                    run=int(rec[2]),
                    mse=float(rec[3]),
                    time_s=float(rec[4]),
                    chosen_n=int(rec[5]),
                    converged=rec[6] == "true",
                )
            )
    return rows


def emit_summary(rows, path) -> None:
    """Per (N, method) aggregates. Non-converged runs are excluded from the
    MSE statistics and counted in the failure rate; timings average all runs."""
    groups: dict[tuple[int, str], list[ResultRow]] = {}
    for r in rows:
        groups.setdefault((r.n_samples, r.method), []).append(r)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_HEADER)
        for (n, method) in sorted(groups):
            grp = groups[(n, method)]
            ok = [r.mse for r in grp if r.converged]
            mse_mean = float(np.mean(ok)) if ok else float("nan")
            mse_median = float(np.median(ok)) if ok else float("nan")
            time_mean = float(np.mean([r.time_s for r in grp]))
            fail_rate = 1.0 - len(ok) / len(grp)
            writer.writerow(
                [n, method, _fmt(mse_mean), _fmt(mse_median), _fmt(time_mean), _fmt(fail_rate)]
            )


def _tf_to_dict(tf: TransferFunction) -> dict:
    return {"num": list(tf.num), "den": list(tf.den), "delay": tf.n_k}


def _tf_from_dict(d: dict) -> TransferFunction:
    return TransferFunction(
        num=d["num"], den=d.get("den", [1.0]), n_k=int(d.get("delay", 0))
    )


def config_to_dict(config: ExperimentConfig) -> dict:
    return {
        "model": {
            "g1": _tf_to_dict(config.model.g1),
            "g2": _tf_to_dict(config.model.g2),
            "g3": _tf_to_dict(config.model.g3),
            "lambda1": config.model.lambda1,
            "lambda2": config.model.lambda2,
        },
        "input": _tf_to_dict(config.input_spec.shaping),
        "N_list": list(config.n_list),
        "runs": config.runs,
        "methods": list(config.methods),
        "wnsf": {
            "n_grid": list(config.wnsf.n_grid),
            "max_iter": config.wnsf.max_iter,
            "tol": config.wnsf.tol,
            "variant": config.wnsf.variant.value,
        },
        "seed": config.seed,
        "timing": config.timing,
    }


def config_from_dict(d: dict) -> ExperimentConfig:
    """Build a configuration from a JSON-style dict; missing keys fall back
    to the built-in benchmark defaults."""
    defaults = ExperimentConfig()
    model = defaults.model
    if "model" in d:
        md = d["model"]
        model = CascadeModel(
            g1=_tf_from_dict(md["g1"]),
            g2=_tf_from_dict(md["g2"]),
            g3=_tf_from_dict(md["g3"]),
            lambda1=float(md.get("lambda1", 2.0)),
            lambda2=float(md.get("lambda2", 3.0)),
        )
    input_spec = (
        InputSpec(shaping=_tf_from_dict(d["input"])) if "input" in d else InputSpec()
    )
    wnsf_cfg = WnsfConfig()
    if "wnsf" in d:
        wd = d["wnsf"]
        wnsf_cfg = WnsfConfig(
            n_grid=tuple(wd.get("n_grid", wnsf_cfg.n_grid)),
            max_iter=int(wd.get("max_iter", wnsf_cfg.max_iter)),
            tol=float(wd.get("tol", wnsf_cfg.tol)),
            variant=Variant(wd.get("variant", "wnsf1")),
        )
    return ExperimentConfig(
        model=model,
        input_spec=input_spec,
        n_list=tuple(d.get("N_list", defaults.n_list)),
        runs=int(d.get("runs", defaults.runs)),
        methods=tuple(d.get("methods", defaults.methods)),
        wnsf=wnsf_cfg,
        seed=int(d.get("seed", 0)),
        timing=bool(d.get("timing", True)),
    )
