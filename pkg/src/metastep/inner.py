"""Inner-optimization trajectories.

Quadratic tasks run plain GD from ``w0`` (closed form in the eigenbasis, or a
literal loop).  Least-squares tasks run full-batch GD or single-sample SGD
from zero with the norm-based freeze: once ``||w_tau|| >= 40 sigma`` the
iterate is replaced by ``40 sigma * u`` and held for the rest of the run.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from metastep.tasks import QuadraticTask, RegressionTask

DEFAULT_TRUNC_MULTIPLIER = 40.0
_RANK_TOL = 1e-10


class FreezePolicy(enum.Enum):
    FIRST_CROSSING = "first-crossing"  # u = w_tau / ||w_tau|| at the crossing step
    FIXED_AXIS = "fixed-axis"  # u = e_1


class Split(enum.Enum):
    TRAIN = "train"
    VALID = "valid"


class OracleUnavailableError(ValueError):
    """The closed-form oracle needs a design of full rank min(n, d)."""


@dataclass(frozen=True)
class TrajectoryConfig:
    unroll_len: int
    step_size: float
    trunc_multiplier: float = DEFAULT_TRUNC_MULTIPLIER
    freeze_policy: FreezePolicy = FreezePolicy.FIRST_CROSSING
    record_norms: bool = False

    def __post_init__(self):
        if int(self.unroll_len) != self.unroll_len or self.unroll_len < 0:
            raise ValueError(f"unroll_len must be a nonnegative integer, got {self.unroll_len}")
        if not self.step_size >= 0:
            raise ValueError(f"step_size must be >= 0, got {self.step_size}")
        if not self.trunc_multiplier > 0:
            raise ValueError(f"trunc_multiplier must be > 0, got {self.trunc_multiplier}")

    def threshold(self, sigma: float) -> float:
        # sigma = 0 would freeze at the first step; treat it as "never freeze".
        if sigma <= 0:
            return np.inf
        return self.trunc_multiplier * sigma


@dataclass(frozen=True, eq=False)
class TrajectoryResult:
    w_final: np.ndarray
    truncated: bool
    trunc_step: Optional[int] = None
    iterate_norms: Optional[np.ndarray] = None


def gd_quadratic_closed_form(task: QuadraticTask, eta: float, t: int) -> np.ndarray:
    """w_t = (I - eta H)^t w0 evaluated coordinate-wise in the eigenbasis.

    Non-finite components are returned as-is when the iteration diverges.
    """
    if eta < 0 or t < 0:
        raise ValueError("eta and t must be nonnegative")
    with np.errstate(over="ignore", invalid="ignore"):
        coords = task.coeffs * (1.0 - eta * task.eigvals) ** t
        return task.eigvecs @ coords


def gd_quadratic_iterative(task: QuadraticTask, eta: float, t: int) -> np.ndarray:
    """Literal loop ``w <- w - eta * H w`` repeated t times."""
    if eta < 0 or t < 0:
        raise ValueError("eta and t must be nonnegative")
    w = np.array(task.w0)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(t):
            w = w - eta * (task.h @ w)
    return w


def _split_arrays(task: RegressionTask, split: Split):
    if split is Split.TRAIN:
        return task.x_train, task.y_train
    return task.x_valid, task.y_valid


def ls_empirical_loss(task: RegressionTask, split: Split, w) -> float:
    """(1/2n) * sum_i (y_i - <w, x_i>)^2 on the chosen split."""
    x, y = _split_arrays(task, Split(split))
    if y.size == 0:
        raise ValueError(f"{Split(split).value} split is empty")
    r = y - x @ np.asarray(w, dtype=float)
    return float(0.5 * np.mean(r * r))


def _ls_grad(x: np.ndarray, y: np.ndarray, w: np.ndarray) -> np.ndarray:
    # Shared by GD (all rows) and SGD (one row) so that n = 1 runs coincide bitwise.
    return x.T @ (x @ w - y) / y.size


def _run_truncated(
    step: Callable[[int, np.ndarray], np.ndarray], dim: int, sigma: float, cfg: TrajectoryConfig
) -> TrajectoryResult:
    thr = cfg.threshold(sigma)
    w = np.zeros(dim)
    norms = np.empty(cfg.unroll_len) if cfg.record_norms else None
    for tau in range(1, cfg.unroll_len + 1):
        w = step(tau, w)
        nrm = float(np.linalg.norm(w))
        if nrm >= thr:
            if cfg.freeze_policy is FreezePolicy.FIRST_CROSSING and np.isfinite(nrm):
                u = w / nrm
            else:
                u = np.zeros(dim)
                u[0] = 1.0
            w = thr * u
            if norms is not None:
                norms[tau - 1 :] = thr
            return TrajectoryResult(w, True, tau, norms)
        if norms is not None:
            norms[tau - 1] = nrm
    return TrajectoryResult(w, False, None, norms)


def gd_ls_truncated(task: RegressionTask, cfg: TrajectoryConfig) -> TrajectoryResult:
    """Full-batch GD on the training loss from w = 0 with the norm freeze."""
    x, y, eta = task.x_train, task.y_train, cfg.step_size

    def step(_tau, w):
        return w - eta * _ls_grad(x, y, w)

    return _run_truncated(step, task.dim, task.sigma, cfg)


def sgd_ls_truncated(task: RegressionTask, cfg: TrajectoryConfig, rng_seed: int) -> TrajectoryResult:
    """Single-sample SGD from w = 0; the index at each step is uniform on [n]."""
    x, y, eta = task.x_train, task.y_train, cfg.step_size
    idx = np.random.default_rng(rng_seed).integers(0, task.n_train, size=cfg.unroll_len)

    def step(tau, w):
        i = idx[tau - 1]
        return w - eta * _ls_grad(x[i : i + 1], y[i : i + 1], w)

    return _run_truncated(step, task.dim, task.sigma, cfg)


def train_interpolant(task: RegressionTask):
    """SVD pieces of the training design and the min-norm solution w_train.

    Returns ``(v, lam, coords)`` with ``w_train = v @ coords`` and ``lam`` the
    nonzero eigenvalues of H_train = X^T X / n along the columns of ``v``.
    """
    x = task.x_train
    u, s, vt = np.linalg.svd(x, full_matrices=False)
    if s.size == 0 or s[-1] <= _RANK_TOL * s[0]:
        raise OracleUnavailableError(
            f"training design is rank deficient (s_min/s_max = {s[-1] / s[0] if s.size else 0:.3e})"
        )
    # w_train = Proj_{row(X)} w* + X^+ xi, expressed in the right singular basis.
    coords = vt @ task.w_star + (u.T @ task.xi_train) / s
    return vt.T, s**2 / task.n_train, coords


def untruncated_gd_oracle(task: RegressionTask, eta: float, t: int) -> np.ndarray:
    """B_{t,eta} w_train with B_{t,eta} = I - (I - eta H_train)^t."""
    if eta < 0 or t < 0:
        raise ValueError("eta and t must be nonnegative")
    v, lam, coords = train_interpolant(task)
    with np.errstate(over="ignore", invalid="ignore"):
        return v @ ((1.0 - (1.0 - eta * lam) ** t) * coords)


def w_train(task: RegressionTask) -> np.ndarray:
    v, _, coords = train_interpolant(task)
    return v @ coords
