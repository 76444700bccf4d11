"""Train-by-train and train-by-validation meta-objectives for least squares.

A meta-objective averages a per-task meta-loss over ``m`` sampled tasks.
Train-by-train (TbT) scores the final iterate on the training split it was
fit on; train-by-validation (TbV) scores it on a held-out split.  With an SGD
inner loop the per-task loss is the mean over ``R`` independent trajectories,
a Monte Carlo stand-in for the expectation over sampling noise.

Task seeds come from :func:`metastep.tasks.derive_seed` keyed by
``(master_seed, stream, index)``, so every number here is a pure function of
its arguments and does not depend on the thread count.
"""

from __future__ import annotations

import dataclasses
import enum
import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from metastep.inner import (
    DEFAULT_TRUNC_MULTIPLIER,
    FreezePolicy,
    Split,
    TrajectoryConfig,
    TrajectoryResult,
    gd_ls_truncated,
    ls_empirical_loss,
    sgd_ls_truncated,
)
from metastep.parallel import pmap
from metastep.tasks import GOOD_EVENT_L, RegressionTask, derive_seed, sample_regression_task

STREAM_TRAIN_TASKS = 1
STREAM_TRAIN_SGD = 2
STREAM_TEST_TASKS = 3
STREAM_TEST_SGD = 4


class ObjectiveKind(enum.Enum):
    TBT = "tbt"
    TBV = "tbv"


class Inner(enum.Enum):
    GD = "gd"
    SGD = "sgd"


class GridScale(enum.Enum):
    LOG = "log"
    LINEAR = "linear"


class FeasibleRangeWarning(UserWarning):
    """SGD step size outside the range the SGD analysis restricts to."""


def sgd_tbt_max_eta(dim: int, scale: float = GOOD_EVENT_L) -> float:
    return 1.0 / (2.0 * scale**3 * dim)


def sgd_tbv_max_eta(dim: int, c5: float = 1.0) -> float:
    logd = math.log(dim)
    if logd == 0.0:
        return math.inf
    return 1.0 / (c5 * dim**2 * logd**2)


@dataclass(frozen=True)
class MetaObjectiveSpec:
    kind: ObjectiveKind
    dim: int
    sigma: float
    unroll: int
    num_tasks: int
    n_train: int
    n_valid: int = 0
    inner: Inner = Inner.GD
    replicas: int = 64
    master_seed: int = 0
    trunc_multiplier: float = DEFAULT_TRUNC_MULTIPLIER
    freeze_policy: FreezePolicy = FreezePolicy.FIRST_CROSSING
    c5: float = 1.0
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", ObjectiveKind(self.kind))
        object.__setattr__(self, "inner", Inner(self.inner))
        if self.n_train < 1:
            raise ValueError("n_train must be >= 1")
        if self.kind is ObjectiveKind.TBV and self.n_valid < 1:
            raise ValueError("train-by-validation needs n_valid >= 1")
        if self.inner is Inner.SGD and self.replicas < 1:
            raise ValueError("SGD inner loop needs replicas >= 1")
        if self.num_tasks < 1 or self.dim < 1 or self.unroll < 0 or not self.sigma >= 0:
            raise ValueError("invalid dimensions, unroll length, task count or sigma")

    @classmethod
    def tbt(cls, dim, n, sigma, unroll, num_tasks, **kw) -> "MetaObjectiveSpec":
        return cls(ObjectiveKind.TBT, dim, sigma, unroll, num_tasks, n_train=n, n_valid=0, **kw)

    @classmethod
    def tbv(cls, dim, n1, n2, sigma, unroll, num_tasks, **kw) -> "MetaObjectiveSpec":
        return cls(ObjectiveKind.TBV, dim, sigma, unroll, num_tasks, n_train=n1, n_valid=n2, **kw)

    def trajectory_config(self, eta: float) -> TrajectoryConfig:
        return TrajectoryConfig(self.unroll, eta, self.trunc_multiplier, self.freeze_policy)

    def task(self, k: int) -> RegressionTask:
        n_valid = self.n_valid if self.kind is ObjectiveKind.TBV else 0
        seed = derive_seed(self.master_seed, STREAM_TRAIN_TASKS, k)
        return sample_regression_task(self.dim, self.n_train, n_valid, self.sigma, seed)

    def sgd_seeds(self, k: int) -> Optional[list]:
        if self.inner is not Inner.SGD:
            return None
        return [derive_seed(self.master_seed, STREAM_TRAIN_SGD, k, r) for r in range(self.replicas)]

    def feasible_max_eta(self) -> float:
        if self.inner is not Inner.SGD:
            return math.inf
        if self.kind is ObjectiveKind.TBT:
            return sgd_tbt_max_eta(self.dim)
        return sgd_tbv_max_eta(self.dim, self.c5)


@dataclass(frozen=True)
class GridSpec:
    lo: float = 1e-6
    hi: float = 1.0
    points: int = 25
    scale: GridScale = GridScale.LOG

    def __post_init__(self):
        object.__setattr__(self, "scale", GridScale(self.scale))
        if self.points < 2:
            raise ValueError("grid needs at least two points")
        if self.scale is GridScale.LOG and not 0 < self.lo < self.hi:
            raise ValueError(f"log grid needs 0 < lo < hi, got [{self.lo}, {self.hi}]")
        if self.scale is GridScale.LINEAR and not 0 <= self.lo < self.hi:
            raise ValueError(f"linear grid needs 0 <= lo < hi, got [{self.lo}, {self.hi}]")

    def etas(self) -> np.ndarray:
        if self.scale is GridScale.LOG:
            g = np.geomspace(self.lo, self.hi, self.points)
        else:
            g = np.linspace(self.lo, self.hi, self.points)
        g[0], g[-1] = self.lo, self.hi
        return g


def _run(task: RegressionTask, cfg: TrajectoryConfig, sgd_seeds: Optional[Sequence[int]]):
    if sgd_seeds is None:
        return [gd_ls_truncated(task, cfg)]
    return [sgd_ls_truncated(task, cfg, s) for s in sgd_seeds]


def _meta_loss(task, eta, cfg, split, sgd_seeds) -> float:
    cfg = dataclasses.replace(cfg, step_size=float(eta))
    runs = _run(task, cfg, sgd_seeds)
    return _replica_mean([ls_empirical_loss(task, split, r.w_final) for r in runs])


def _replica_mean(values) -> float:
    # Shifted by the first value so identical replicas average to that value
    # exactly (n = 1 SGD must reproduce GD bit for bit).
    v = np.asarray(values, dtype=float)
    return float(v[0] + np.mean(v - v[0]))


def tbt_meta_loss(
    task: RegressionTask, eta: float, cfg: TrajectoryConfig, sgd_seeds: Optional[Sequence[int]] = None
) -> float:
    """Training loss of the (truncated) inner iterate.

    With ``sgd_seeds`` the inner loop is SGD and the loss is averaged over one
    trajectory per seed.
    """
    return _meta_loss(task, eta, cfg, Split.TRAIN, sgd_seeds)


def tbv_meta_loss(
    task: RegressionTask, eta: float, cfg: TrajectoryConfig, sgd_seeds: Optional[Sequence[int]] = None
) -> float:
    """Validation loss of an iterate trained on the training split only."""
    if task.n_valid < 1:
        raise ValueError("task has no validation split")
    return _meta_loss(task, eta, cfg, Split.VALID, sgd_seeds)


def _warn_feasible(spec: MetaObjectiveSpec, etas) -> None:
    cap = spec.feasible_max_eta()
    worst = float(np.max(etas))
    if worst > cap:
        warnings.warn(
            f"SGD {spec.kind.value} step size {worst:.3g} exceeds the analysed range {cap:.3g}",
            FeasibleRangeWarning,
            stacklevel=3,
        )


def task_losses(spec: MetaObjectiveSpec, etas) -> np.ndarray:
    """Per-task meta-losses, shape ``(num_tasks, len(etas))``."""
    etas = np.atleast_1d(np.asarray(etas, dtype=float))
    _warn_feasible(spec, etas)
    split = Split.TRAIN if spec.kind is ObjectiveKind.TBT else Split.VALID
    base = spec.trajectory_config(0.0)

    def one(k: int) -> np.ndarray:
        task = spec.task(k)
        seeds = spec.sgd_seeds(k)
        return np.array([_meta_loss(task, e, base, split, seeds) for e in etas])

    return np.array(pmap(one, range(spec.num_tasks), spec.threads))


def meta_objective_curve(spec: MetaObjectiveSpec, etas) -> np.ndarray:
    return task_losses(spec, etas).mean(axis=0)


def empirical_meta_objective(spec: MetaObjectiveSpec, eta: float) -> float:
    return float(meta_objective_curve(spec, [eta])[0])


def grid_search(spec: MetaObjectiveSpec, grid: GridSpec = GridSpec()):
    """Evaluate the meta-objective on every grid point.

    Returns ``(eta_star, values)``; ``values`` is aligned with ``grid.etas()``
    and ties go to the smallest step size.
    """
    etas = grid.etas()
    values = meta_objective_curve(spec, etas)
    return float(etas[int(np.argmin(values))]), values


@dataclass(frozen=True)
class GeneralizationReport:
    eta: float
    mean_excess_risk: float
    std_err: float
    num_test_tasks: int
    mean_train_rmse: float
    mean_test_rmse: float
    train_rmse_se: float = 0.0
    test_rmse_se: float = 0.0
    test_rmse_min: float = 0.0
    test_rmse_max: float = 0.0
    truncated_fraction: float = 0.0
    excess_risks: tuple = ()


def _se(x: np.ndarray) -> float:
    return float(np.std(x, ddof=1) / np.sqrt(x.size)) if x.size > 1 else 0.0


def evaluate_generalization(
    eta: float,
    dim: int,
    n_train: int,
    sigma: float,
    t: int,
    num_test_tasks: int = 200,
    inner: Inner = Inner.GD,
    seed: int = 0,
    replicas: int = 1,
    trunc_multiplier: float = DEFAULT_TRUNC_MULTIPLIER,
    threads: int = 1,
) -> GeneralizationReport:
    """Apply a fixed step size to fresh tasks and measure ``||w_t - w*||^2``.

    Each test task also gets an independent held-out set of ``n_train``
    samples from the same ``w*``; RMSE on it is the test RMSE.
    """
    if num_test_tasks < 2:
        raise ValueError("need at least two test tasks for a standard error")
    inner = Inner(inner)
    cfg = TrajectoryConfig(t, float(eta), trunc_multiplier)

    def one(k: int):
        task = sample_regression_task(dim, n_train, n_train, sigma, derive_seed(seed, STREAM_TEST_TASKS, k))
        seeds = None
        if inner is Inner.SGD:
            seeds = [derive_seed(seed, STREAM_TEST_SGD, k, r) for r in range(replicas)]
        runs: list[TrajectoryResult] = _run(task, cfg, seeds)
        ex = _replica_mean([np.sum((r.w_final - task.w_star) ** 2) for r in runs])
        tr = _replica_mean([math.sqrt(2 * ls_empirical_loss(task, Split.TRAIN, r.w_final)) for r in runs])
        te = _replica_mean([math.sqrt(2 * ls_empirical_loss(task, Split.VALID, r.w_final)) for r in runs])
        trunc = np.mean([r.truncated for r in runs])
        return ex, tr, te, trunc

    rows = np.array(pmap(one, range(num_test_tasks), threads))
    ex, tr, te, trunc = rows.T
    return GeneralizationReport(
        eta=float(eta),
        mean_excess_risk=float(ex.mean()),
        std_err=_se(ex),
        num_test_tasks=num_test_tasks,
        mean_train_rmse=float(tr.mean()),
        mean_test_rmse=float(te.mean()),
        train_rmse_se=_se(tr),
        test_rmse_se=_se(te),
        test_rmse_min=float(te.min()),
        test_rmse_max=float(te.max()),
        truncated_fraction=float(trunc.mean()),
        excess_risks=tuple(float(v) for v in ex),
    )
