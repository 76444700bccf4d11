"""Desk-scale experiment drivers that turn a config into CSV rows.

Each ``run_*`` function returns ``(columns, rows)`` with a column set fixed
per experiment.  Rows depend only on the config (never on wall-clock time or
thread count), so reruns produce byte-identical files.  Timing goes to the
log instead of the CSV for that reason.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from typing import Callable, Dict, List, Tuple

import numpy as np

from metastep import csvio
from metastep.config import Experiment, ExperimentConfig
from metastep.inner import Split, ls_empirical_loss, sgd_ls_truncated
from metastep.ls_meta import (
    GridScale,
    GridSpec,
    Inner,
    MetaObjectiveSpec,
    ObjectiveKind,
    evaluate_generalization,
    grid_search,
    sgd_tbt_max_eta,
    sgd_tbv_max_eta,
    task_losses,
)
from metastep.quad_meta import (
    Method,
    log_objective_grid,
    meta_gd,
    optimal_eta,
    quad_optimal_eta_bracket,
)
from metastep.tasks import derive_seed, sample_quadratic_task

log = logging.getLogger(__name__)

STREAM_QUAD_TASK = 0
STREAM_SPREAD = 5

Rows = List[Dict[str, object]]


def quad_task_for(cfg: ExperimentConfig):
    return sample_quadratic_task(cfg["dim"], derive_seed(cfg.master_seed, STREAM_QUAD_TASK, 0))


# -- quadratic ---------------------------------------------------------------

QUAD_META_TRAIN_COLUMNS = [
    "experiment", "record", "seed", "dim", "unroll", "eta0", "step_const", "method",
    "k", "eta", "grad", "status", "eta_grid", "rel_err", "eta_lo", "eta_hi",
]


def run_quad_meta_train(cfg: ExperimentConfig) -> Tuple[List[str], Rows]:
    """Meta-GD trace (one row per step) plus a summary row against the grid argmin."""
    task = quad_task_for(cfg)
    t, steps = cfg["unroll"], cfg["steps"]
    trace = meta_gd(task, t, cfg["eta0"], steps, cfg["step_const"], Method(cfg["method"]))
    base = {
        "experiment": cfg.experiment.value,
        "seed": cfg.master_seed,
        "dim": task.dim,
        "unroll": t,
        "eta0": float(cfg["eta0"]),
        "step_const": float(cfg["step_const"]),
        "method": cfg["method"],
    }
    rows: Rows = []
    for k, g in enumerate(trace.grads, start=1):
        rows.append({**base, "record": "trace", "k": k, "eta": trace.etas[k], "grad": g, "status": "ok"})
    if trace.aborted:
        k = len(trace.grads) + 1
        rep = trace.reports[-1]
        rows.append({**base, "record": "trace", "k": k, "eta": trace.final_eta, "grad": rep.grad, "status": "overflow"})
    if steps == 0:
        return QUAD_META_TRAIN_COLUMNS, rows

    eta_grid, _, _ = log_objective_grid(task, t, cfg["grid_points"])
    lo, hi = quad_optimal_eta_bracket(task)
    rows.append({
        **base,
        "record": "summary",
        "k": len(trace.grads),
        "eta": trace.final_eta,
        "status": "overflow" if trace.aborted else "ok",
        "eta_grid": eta_grid,
        "rel_err": abs(trace.final_eta - eta_grid) / eta_grid,
        "eta_lo": lo,
        "eta_hi": hi,
    })
    if trace.aborted:
        log.warning("meta-GD aborted: %s", trace.error)
    return QUAD_META_TRAIN_COLUMNS, rows


QUAD_SWEEP_T_COLUMNS = [
    "experiment", "seed", "dim", "unroll", "grid_points", "eta_grid", "eta_root", "eta_lo", "eta_hi", "in_bracket",
]


def run_quad_sweep_t(cfg: ExperimentConfig) -> Tuple[List[str], Rows]:
    """Grid argmin of the log objective for each unroll length on one task."""
    task = quad_task_for(cfg)
    lo, hi = quad_optimal_eta_bracket(task)
    rows: Rows = []
    for t in cfg["unroll_list"]:
        eta_grid, _, _ = log_objective_grid(task, t, cfg["grid_points"])
        rows.append({
            "experiment": cfg.experiment.value,
            "seed": cfg.master_seed,
            "dim": task.dim,
            "unroll": t,
            "grid_points": cfg["grid_points"],
            "eta_grid": eta_grid,
            "eta_root": optimal_eta(task, t),
            "eta_lo": lo,
            "eta_hi": hi,
            "in_bracket": lo <= eta_grid <= hi,
        })
    return QUAD_SWEEP_T_COLUMNS, rows


# -- least squares -------------------------------------------------------------

LS_COLUMNS = [
    "experiment", "record", "seed", "dim", "n", "sigma", "objective", "n_train", "n_valid",
    "unroll", "num_tasks", "eta", "meta_value", "test_tasks", "mean_excess_risk", "excess_se",
    "train_rmse", "train_rmse_se", "test_rmse", "test_rmse_se", "test_rmse_min", "test_rmse_max",
    "truncated_fraction", "reference", "warning",
]

LS_SGD_COLUMNS = LS_COLUMNS[:11] + ["replicas"] + LS_COLUMNS[11:] + ["se_r1", "se_rR", "se_ratio"]


def _grid(cfg: ExperimentConfig, lo=None, hi=None) -> GridSpec:
    return GridSpec(
        cfg["grid_lo"] if lo is None else lo,
        cfg["grid_hi"] if hi is None else hi,
        cfg["grid_points"],
        GridScale(cfg["grid_scale"]),
    )


def _split(n: int, fraction: float) -> Tuple[int, int]:
    n2 = int(round(fraction * n))
    n1 = n - n2
    if n1 < 1 or n2 < 1:
        raise ValueError(f"cannot split n={n} with valid_fraction={fraction} into two nonempty parts")
    return n1, n2


def _objective_rows(spec: MetaObjectiveSpec, grid: GridSpec, cfg: ExperimentConfig, base: dict, replicas=1):
    """Curve rows over the grid, then one summary row evaluated on fresh tasks."""
    eta_star, values = grid_search(spec, grid)
    objective = spec.kind.value
    common = {
        **base,
        "objective": objective,
        "n_train": spec.n_train,
        "n_valid": spec.n_valid,
        "unroll": spec.unroll,
        "num_tasks": spec.num_tasks,
    }
    rows: Rows = [
        {**common, "record": "curve", "eta": float(e), "meta_value": float(v)}
        for e, v in zip(grid.etas(), values)
    ]
    rep = evaluate_generalization(
        eta_star,
        spec.dim,
        spec.n_train,
        spec.sigma,
        spec.unroll,
        cfg["test_tasks"],
        inner=spec.inner,
        seed=cfg.master_seed,
        replicas=replicas,
        trunc_multiplier=spec.trunc_multiplier,
        threads=cfg.threads,
    )
    rows.append({
        **common,
        "record": "summary",
        "eta": eta_star,
        "meta_value": float(np.min(values)),
        "test_tasks": rep.num_test_tasks,
        "mean_excess_risk": rep.mean_excess_risk,
        "excess_se": rep.std_err,
        "train_rmse": rep.mean_train_rmse,
        "train_rmse_se": rep.train_rmse_se,
        "test_rmse": rep.mean_test_rmse,
        "test_rmse_se": rep.test_rmse_se,
        "test_rmse_min": rep.test_rmse_min,
        "test_rmse_max": rep.test_rmse_max,
        "truncated_fraction": rep.truncated_fraction,
    })
    return rows


def _ls_spec_kw(cfg: ExperimentConfig) -> dict:
    return dict(master_seed=cfg.master_seed, trunc_multiplier=cfg["trunc_multiplier"], threads=cfg.threads)


def run_ls_compare(cfg: ExperimentConfig) -> Tuple[List[str], Rows]:
    """TbT (all n samples) against TbV (n split in two) at every (n, sigma) point.

    Every sweep point reuses the same master seed, so the settings share
    their random designs (common random numbers) and differences between
    them are not swamped by task-to-task noise.
    """
    d, t, m = cfg["dim"], cfg["unroll"], cfg["num_tasks"]
    grid = _grid(cfg)
    rows: Rows = []
    for n in cfg["n_list"]:
        n1, n2 = _split(n, cfg["valid_fraction"])
        for sigma in cfg["sigma_list"]:
            base = {"experiment": cfg.experiment.value, "seed": cfg.master_seed, "dim": d, "n": n, "sigma": sigma}
            tbt = MetaObjectiveSpec.tbt(d, n, sigma, t, m, **_ls_spec_kw(cfg))
            tbv = MetaObjectiveSpec.tbv(d, n1, n2, sigma, t, m, **_ls_spec_kw(cfg))
            rows += _objective_rows(tbt, grid, cfg, base)
            rows += _objective_rows(tbv, grid, cfg, base)
    return LS_COLUMNS, rows


def run_ls_large_sample(cfg: ExperimentConfig) -> Tuple[List[str], Rows]:
    """TbT pipeline with n >> d; ``reference`` carries d sigma^2 / n."""
    d, n, sigma = cfg["dim"], cfg["n"], cfg["sigma"]
    base = {"experiment": cfg.experiment.value, "seed": cfg.master_seed, "dim": d, "n": n, "sigma": sigma}
    spec = MetaObjectiveSpec.tbt(d, n, sigma, cfg["unroll"], cfg["num_tasks"], **_ls_spec_kw(cfg))
    rows = _objective_rows(spec, _grid(cfg), cfg, base)
    warning = "n<=d: not in the large-sample regime" if n <= d else ""
    for r in rows:
        r["reference"] = d * sigma**2 / n
        r["warning"] = warning
    if warning:
        log.warning("%s (n=%d, d=%d)", warning, n, d)
    return LS_COLUMNS, rows


def _spread_row(spec: MetaObjectiveSpec, eta: float, groups: int, base: dict) -> dict:
    """Spread of the per-task SGD loss estimate with 1 and with R replicas."""
    task = spec.task(0)
    cfg_t = spec.trajectory_config(eta)
    split = Split.TRAIN if spec.kind is ObjectiveKind.TBT else Split.VALID
    r = spec.replicas
    losses = np.array([
        [
            ls_empirical_loss(task, split, sgd_ls_truncated(task, cfg_t, derive_seed(spec.master_seed, STREAM_SPREAD, g, i)).w_final)
            for i in range(r)
        ]
        for g in range(groups)
    ])
    se1 = float(np.std(losses.ravel(), ddof=1))
    se_r = float(np.std(losses.mean(axis=1), ddof=1))
    return {
        **base,
        "record": "spread",
        "objective": spec.kind.value,
        "n_train": spec.n_train,
        "n_valid": spec.n_valid,
        "unroll": spec.unroll,
        "num_tasks": 1,
        "replicas": r,
        "eta": eta,
        "se_r1": se1,
        "se_rR": se_r,
        "se_ratio": se1 / se_r if se_r > 0 else math.inf,
    }


def _parity_row(spec: MetaObjectiveSpec, eta: float, base: dict) -> dict:
    """n = 1 SGD against GD on the same tasks; the two must agree exactly."""
    one = dataclasses.replace(spec, n_train=1)
    sgd = float(task_losses(one, [eta]).mean())
    gd = float(task_losses(dataclasses.replace(one, inner=Inner.GD), [eta]).mean())
    return {
        **base,
        "record": "parity",
        "objective": spec.kind.value,
        "n_train": 1,
        "n_valid": one.n_valid,
        "unroll": spec.unroll,
        "num_tasks": spec.num_tasks,
        "replicas": spec.replicas,
        "eta": eta,
        "meta_value": sgd,
        "reference": gd,
        "warning": "" if sgd == gd else "n=1 SGD differs from GD",
    }


def run_ls_sgd_compare(cfg: ExperimentConfig) -> Tuple[List[str], Rows]:
    """SGD-inner TbT vs TbV on grids capped at each objective's feasible step size."""
    d, n, sigma, t, m, reps = cfg["dim"], cfg["n"], cfg["sigma"], cfg["unroll"], cfg["num_tasks"], cfg["replicas"]
    n1, n2 = _split(n, cfg["valid_fraction"])
    base = {"experiment": cfg.experiment.value, "seed": cfg.master_seed, "dim": d, "n": n, "sigma": sigma}
    kw = dict(inner=Inner.SGD, replicas=reps, c5=cfg["c5"], **_ls_spec_kw(cfg))
    specs = [
        MetaObjectiveSpec.tbt(d, n, sigma, t, m, **kw),
        MetaObjectiveSpec.tbv(d, n1, n2, sigma, t, m, **kw),
    ]
    caps = [sgd_tbt_max_eta(d), sgd_tbv_max_eta(d, cfg["c5"])]
    rows: Rows = []
    for spec, cap in zip(specs, caps):
        if cfg["feasible_grid"]:
            grid = _grid(cfg, lo=cap * cfg["grid_span"], hi=cap)
        else:
            grid = _grid(cfg)
        obj_rows = _objective_rows(spec, grid, cfg, base, replicas=reps)
        for r in obj_rows:
            r["replicas"] = reps
        rows += obj_rows
        eta_star = float(obj_rows[-1]["eta"])
        rows.append(_parity_row(spec, eta_star, base))
        rows.append(_spread_row(spec, eta_star, cfg["variance_draws"], base))
    return LS_SGD_COLUMNS, rows


RUNNERS: Dict[Experiment, Callable[[ExperimentConfig], Tuple[List[str], Rows]]] = {
    Experiment.QUAD_META_TRAIN: run_quad_meta_train,
    Experiment.QUAD_SWEEP_T: run_quad_sweep_t,
    Experiment.LS_COMPARE: run_ls_compare,
    Experiment.LS_LARGE_SAMPLE: run_ls_large_sample,
    Experiment.LS_SGD_COMPARE: run_ls_sgd_compare,
}


def run_experiment(cfg: ExperimentConfig, path=None) -> Tuple[List[str], Rows]:
    """Run ``cfg`` and write its CSV to ``path`` (default ``cfg.output_path``)."""
    start = time.perf_counter()
    columns, rows = RUNNERS[cfg.experiment](cfg)
    path = path if path is not None else cfg.output_path
    if path is not None:
        csvio.write_csv(path, columns, rows)
    log.info("%s: %d rows in %.2f s", cfg.experiment.value, len(rows), time.perf_counter() - start)
    return columns, rows
