"""Task generation: quadratic inner problems and least-squares episodes.

Every sampler takes an integer seed and draws from its own ``numpy`` PCG64
stream, so a task depends only on ``(parameters, seed)``.  Ensembles derive
per-task seeds with :func:`derive_seed`, which keeps results independent of
the order (or thread) in which tasks are built.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Constant of the high-probability design event used throughout the
# least-squares analysis.
GOOD_EVENT_L = 100.0

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100

_DEGENERATE_GAP = 1e-10
_DEGENERATE_CMIN = 1e-12
_MAX_RESAMPLES = 1000


class EigenDecompositionError(RuntimeError):
    """Jacobi iteration did not reach the off-diagonal tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (off-diagonal norm {residual:.3e})")
        self.residual = residual


def derive_seed(master_seed: int, *keys: int) -> int:
    """Hash a master seed and integer keys into an independent 64-bit seed."""
    ss = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF, *(int(k) for k in keys)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


def jacobi_eigh(a: np.ndarray, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns ``(eigvals, eigvecs)`` sorted by descending eigenvalue (stable with
    respect to the original diagonal position).  Iteration stops once the
    Frobenius norm of the off-diagonal part falls below ``tol * ||a||_F``.

    Raises
    ------
    EigenDecompositionError
        If ``max_sweeps`` sweeps do not reach the tolerance.
    """
    a = np.array(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    n = a.shape[0]
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    scale = np.linalg.norm(a)
    target = tol * scale if scale > 0 else 0.0

    def off_norm(m):
        off_diag = m - np.diag(np.diag(m))
        return float(np.linalg.norm(off_diag))

    off = off_norm(a)
    sweeps = 0
    while off > target:
        if sweeps >= max_sweeps:
            raise EigenDecompositionError(f"Jacobi did not converge in {max_sweeps} sweeps", off)
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                diff = a[q, q] - a[p, p]
                if abs(diff) * 1e-300 > abs(apq):
                    t = apq / diff  # theta would overflow; t ~ 1 / (2 theta)
                else:
                    theta = diff / (2.0 * apq)
                    t = 1.0 / (abs(theta) + np.hypot(theta, 1.0))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / np.hypot(t, 1.0)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
        sweeps += 1
        off = off_norm(a)

    vals = np.diag(a).copy()
    order = np.argsort(-vals, kind="stable")
    return vals[order], v[:, order]


@dataclass(frozen=True, eq=False)
class QuadraticTask:
    """Inner problem f(w) = w^T H w / 2 with a fixed unit-norm start w0.

    ``eigvals`` are sorted descending and ``coeffs[i] = <w0, eigvecs[:, i]>``.
    """

    dim: int
    h: np.ndarray
    w0: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray
    coeffs: np.ndarray

    @property
    def l_max(self) -> float:
        return float(self.eigvals[0])

    @property
    def alpha_min(self) -> float:
        return float(self.eigvals[-1])

    @property
    def c_min(self) -> float:
        return float(min(abs(self.coeffs[0]), abs(self.coeffs[-1])))

    @classmethod
    def from_matrix(cls, h, w0) -> "QuadraticTask":
        """Build a task from an explicit PSD matrix and starting point.

        ``w0`` is normalized to unit length.
        """
        h = np.asarray(h, dtype=float)
        w0 = np.asarray(w0, dtype=float)
        if h.shape != (w0.size, w0.size):
            raise ValueError(f"h has shape {h.shape}, w0 has length {w0.size}")
        norm = np.linalg.norm(w0)
        if norm == 0.0:
            raise ValueError("w0 must be nonzero")
        w0 = w0 / norm
        h = 0.5 * (h + h.T)
        vals, vecs = jacobi_eigh(h)
        if vals[-1] <= 0.0:
            raise ValueError(f"h must be positive definite (smallest eigenvalue {vals[-1]:.3e})")
        coeffs = vecs.T @ w0
        return cls(
            dim=w0.size,
            h=_frozen(h),
            w0=_frozen(w0),
            eigvals=_frozen(vals),
            eigvecs=_frozen(vecs),
            coeffs=_frozen(coeffs),
        )

    @classmethod
    def from_spectrum(cls, eigvals, coeffs) -> "QuadraticTask":
        """Diagonal task with H = diag(eigvals) and w0 = coeffs (normalized)."""
        eigvals = np.asarray(eigvals, dtype=float)
        coeffs = np.asarray(coeffs, dtype=float)
        return cls.from_matrix(np.diag(eigvals), coeffs)

    def is_degenerate(self) -> bool:
        if self.dim > 1 and (self.l_max - self.alpha_min) / self.l_max < _DEGENERATE_GAP:
            return True
        return self.c_min < _DEGENERATE_CMIN


def sample_quadratic_task(dim: int, rng_seed: int) -> QuadraticTask:
    """H = X^T X for a dim x dim standard Gaussian X, w0 uniform on the sphere.

    Draws again (from the same stream) when the sample has L == alpha or a
    vanishing extreme coefficient; both are probability-zero events.  For
    ``dim == 1`` the eigen-gap condition is vacuous and not enforced.
    """
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    rng = np.random.default_rng(rng_seed)
    for _ in range(_MAX_RESAMPLES):
        x = rng.standard_normal((dim, dim))
        w0 = rng.standard_normal(dim)
        if np.linalg.norm(w0) == 0.0:
            continue
        task = QuadraticTask.from_matrix(x.T @ x, w0)
        if not task.is_degenerate():
            return task
    raise RuntimeError("could not draw a non-degenerate quadratic task")


@dataclass(frozen=True, eq=False)
class RegressionTask:
    """One least-squares episode y = X w* + xi, with an optional validation split."""

    dim: int
    n_train: int
    n_valid: int
    w_star: np.ndarray
    x_train: np.ndarray
    xi_train: np.ndarray
    y_train: np.ndarray
    x_valid: np.ndarray
    xi_valid: np.ndarray
    y_valid: np.ndarray
    sigma: float

    @classmethod
    def from_arrays(cls, w_star, x_train, xi_train, x_valid=None, xi_valid=None, sigma=1.0):
        w_star = np.asarray(w_star, dtype=float)
        d = w_star.size
        x_train = np.asarray(x_train, dtype=float).reshape(-1, d)
        xi_train = np.asarray(xi_train, dtype=float)
        if x_valid is None:
            x_valid = np.zeros((0, d))
            xi_valid = np.zeros(0)
        x_valid = np.asarray(x_valid, dtype=float).reshape(-1, d)
        xi_valid = np.asarray(xi_valid, dtype=float)
        if xi_train.shape != (x_train.shape[0],) or xi_valid.shape != (x_valid.shape[0],):
            raise ValueError("noise vectors must match the number of rows of each design")
        return cls(
            dim=d,
            n_train=x_train.shape[0],
            n_valid=x_valid.shape[0],
            w_star=_frozen(w_star),
            x_train=_frozen(x_train),
            xi_train=_frozen(xi_train),
            y_train=_frozen(x_train @ w_star + xi_train),
            x_valid=_frozen(x_valid),
            xi_valid=_frozen(xi_valid),
            y_valid=_frozen(x_valid @ w_star + xi_valid),
            sigma=float(sigma),
        )


def sample_regression_task(
    dim: int, n_train: int, n_valid: int, sigma: float, rng_seed: int
) -> RegressionTask:
    """Draw w* uniform on the unit sphere, Gaussian designs and N(0, sigma^2) noise."""
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if n_train < 1:
        raise ValueError(f"n_train must be >= 1, got {n_train}")
    if n_valid < 0:
        raise ValueError(f"n_valid must be >= 0, got {n_valid}")
    if not sigma >= 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    rng = np.random.default_rng(rng_seed)
    w = rng.standard_normal(dim)
    while np.linalg.norm(w) == 0.0:
        w = rng.standard_normal(dim)
    w = w / np.linalg.norm(w)
    x_tr = rng.standard_normal((n_train, dim))
    xi_tr = sigma * rng.standard_normal(n_train)
    x_va = rng.standard_normal((n_valid, dim))
    xi_va = sigma * rng.standard_normal(n_valid)
    return RegressionTask.from_arrays(w, x_tr, xi_tr, x_va, xi_va, sigma=sigma)


@dataclass(frozen=True)
class TaskDiagnostics:
    singular_values: np.ndarray  # of X_train, descending
    h_eig_min: float  # smallest nonzero eigenvalue of X^T X / n
    h_eig_max: float
    noise_norm: float
    noise_ratio: float  # ||xi|| / sqrt(n)
    good_event: bool
    scale: float = GOOD_EVENT_L


def diagnose_task(task: RegressionTask, scale: float = GOOD_EVENT_L) -> TaskDiagnostics:
    """Check the design/noise event used by the least-squares analysis.

    The event requires, with ``L = scale``: every nonzero singular value of
    X_train in ``[sqrt(d/L), sqrt(L d)]``, every nonzero eigenvalue of
    H_train = X^T X / n in ``[1/L, L]`` and ``||xi||`` in
    ``[sqrt(d) sigma / 4, sqrt(d) sigma]``.
    """
    d, n = task.dim, task.n_train
    sv = np.linalg.svd(task.x_train, compute_uv=False)
    eig = sv**2 / n
    noise = float(np.linalg.norm(task.xi_train))
    sd = np.sqrt(d)
    ok = (
        bool(np.all((sv >= np.sqrt(d / scale)) & (sv <= np.sqrt(scale * d))))
        and bool(np.all((eig >= 1.0 / scale) & (eig <= scale)))
        and sd * task.sigma / 4.0 <= noise <= sd * task.sigma
    )
    return TaskDiagnostics(
        singular_values=sv,
        h_eig_min=float(eig.min()),
        h_eig_max=float(eig.max()),
        noise_norm=noise,
        noise_ratio=noise / np.sqrt(n),
        good_event=ok,
        scale=scale,
    )
