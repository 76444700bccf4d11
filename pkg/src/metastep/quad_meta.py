"""Meta-objectives and meta-gradients for a single quadratic task.

With ``r_i = 1 - eta * lambda_i`` the loss after t GD steps is
``f(w_t) = 1/2 sum_i c_i^2 lambda_i r_i^(2t)``.  The plain meta-objective is
``f(w_t)`` itself; the log meta-objective is ``log(f(w_t)) / t``, whose
derivative is a ratio of two sums that are each exponentially large or small
in t.  The stable evaluator divides both sums by ``m^(2t)`` with
``m = max_i |r_i|`` so that every term stays in ``[-1, 1]``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from metastep.tasks import QuadraticTask

# log10 of the largest finite double, rounded down as in the usual "1e308" rule.
OVERFLOW_LOG10 = 308.0


class Method(enum.Enum):
    PLAIN_CLOSED = "plain-closed"
    LOG_STABLE = "log-stable"
    LOG_NAIVE_BACKPROP = "log-naive-backprop"


@dataclass(frozen=True)
class MetaGradReport:
    value: float
    grad: float
    method: Method
    overflow_flag: bool = False
    max_intermediate_log10: float = math.nan


def _check(eta: float, t: int) -> None:
    if not eta >= 0:
        raise ValueError(f"eta must be >= 0, got {eta}")
    if t < 1:
        raise ValueError(f"t must be >= 1, got {t}")


def plain_meta_value_grad(task: QuadraticTask, eta: float, t: int) -> MetaGradReport:
    """Value and derivative of f(w_t) with direct powers; no rescaling."""
    _check(eta, t)
    lam, c2 = task.eigvals, task.coeffs**2
    r = 1.0 - eta * lam
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        value_terms = c2 * lam * r ** (2 * t)
        grad_terms = t * c2 * lam**2 * r ** (2 * t - 1)
        value = 0.5 * float(np.sum(value_terms))
        grad = -float(np.sum(grad_terms))
    overflow = not (
        np.all(np.isfinite(value_terms)) and np.all(np.isfinite(grad_terms))
        and math.isfinite(value) and math.isfinite(grad)
    )
    return MetaGradReport(value, grad, Method.PLAIN_CLOSED, overflow)


def _scaled(task: QuadraticTask, eta: float):
    r = 1.0 - eta * task.eigvals
    m = float(np.max(np.abs(r)))
    if m == 0.0:
        raise ValueError(f"w_t vanishes identically at eta={eta}; log objective undefined")
    return r / m, m


def log_meta_value(task: QuadraticTask, eta: float, t: int) -> float:
    """log(f(w_t)) / t computed without forming f(w_t)."""
    _check(eta, t)
    q, m = _scaled(task, eta)
    lam, c2 = task.eigvals, task.coeffs**2
    with np.errstate(under="ignore"):
        s = float(np.sum(c2 * lam * q ** (2 * t)))
    return (math.log(0.5) + 2 * t * math.log(m) + math.log(s)) / t


def log_meta_value_grad_stable(task: QuadraticTask, eta: float, t: int) -> MetaGradReport:
    """Closed-form derivative of log(f(w_t)) / t, rescaled to stay finite.

    ``grad = -2 * sum(c^2 lam^2 q^(2t-1)) / (m * sum(c^2 lam q^(2t)))`` where
    ``q = r / m``; the largest |q| equals one so neither sum under- or
    overflows as a whole.
    """
    _check(eta, t)
    q, m = _scaled(task, eta)
    lam, c2 = task.eigvals, task.coeffs**2
    with np.errstate(under="ignore"):
        num = float(np.sum(c2 * lam**2 * q ** (2 * t - 1)))
        den = float(np.sum(c2 * lam * q ** (2 * t)))
    value = (math.log(0.5) + 2 * t * math.log(m) + math.log(den)) / t
    return MetaGradReport(value, -2.0 * num / (m * den), Method.LOG_STABLE, False)


def log_meta_grad_naive_backprop(task: QuadraticTask, eta: float, t: int) -> MetaGradReport:
    """Reverse-mode derivative of log(f(w_t)) / t through the unrolled GD steps.

    Mirrors what an autodiff tool computes: a forward pass storing every
    iterate, the upstream seed ``1 / (t f(w_t))``, then a backward sweep that
    accumulates ``dF/deta = sum_tau <adj_tau, -H w_{tau-1}>``.  The report
    carries log10 of the largest-magnitude intermediate and flags overflow
    when any intermediate is non-finite or exceeds the double range.
    """
    _check(eta, t)
    h = task.h
    big = 0.0
    finite = True

    def track(x) -> None:
        nonlocal big, finite
        a = np.abs(np.asarray(x, dtype=float))
        if not np.all(np.isfinite(a)):
            finite = False
        elif a.size:
            big = max(big, float(a.max()))

    with np.errstate(over="ignore", under="ignore", invalid="ignore", divide="ignore"):
        ws = [np.array(task.w0)]
        hws = []
        for _ in range(t):
            hw = h @ ws[-1]
            hws.append(hw)
            ws.append(ws[-1] - eta * hw)
            track(hw)
            track(ws[-1])
        hwt = h @ ws[-1]
        f = 0.5 * float(ws[-1] @ hwt)
        track(hwt)
        track(f)
        value = math.log(f) / t if f > 0 and math.isfinite(f) else (math.inf if f > 0 else -math.inf)
        seed = 1.0 / (t * f) if f != 0 else math.inf
        track(seed)
        adj = seed * hwt  # d F / d w_t
        track(adj)
        grad = 0.0
        for tau in range(t, 0, -1):
            contrib = -float(adj @ hws[tau - 1])
            grad += contrib
            track(contrib)
            track(grad)
            adj = adj - eta * (h @ adj)
            track(adj)

    # Seeds below the subnormal range print as finite but mean f underflowed.
    seed_log10 = -math.log10(t) - math.log10(f) if 0 < f < math.inf else math.inf
    max_log10 = math.log10(big) if finite and big > 0 else (math.inf if not finite else -math.inf)
    overflow = (not finite) or max_log10 > OVERFLOW_LOG10 or seed_log10 > OVERFLOW_LOG10
    return MetaGradReport(value, grad, Method.LOG_NAIVE_BACKPROP, bool(overflow), max_log10)


_METHODS = {
    Method.PLAIN_CLOSED: plain_meta_value_grad,
    Method.LOG_STABLE: log_meta_value_grad_stable,
    Method.LOG_NAIVE_BACKPROP: log_meta_grad_naive_backprop,
}


def meta_value_grad(task: QuadraticTask, eta: float, t: int, method: Method) -> MetaGradReport:
    return _METHODS[Method(method)](task, eta, t)


@dataclass
class MetaGDTrace:
    etas: List[float]
    grads: List[float]
    step_const: float
    method: Method
    resets: int = 0
    aborted: bool = False
    error: Optional[str] = None
    reports: List[MetaGradReport] = field(default_factory=list, repr=False)

    @property
    def step_rule(self) -> str:
        return f"mu_k = {self.step_const!r} / sqrt(k), k >= 1"

    @property
    def final_eta(self) -> float:
        return self.etas[-1]


def meta_gd(
    task: QuadraticTask,
    t: int,
    eta0: float,
    steps: int,
    step_const: float,
    method: Method = Method.LOG_STABLE,
) -> MetaGDTrace:
    """Meta-gradient descent on eta with steps ``step_const / sqrt(k)``.

    Negative iterates are reset to zero.  A non-finite gradient, or an
    overflow flag from the chosen method, stops the run; the trace up to that
    point is returned with ``aborted=True``.
    """
    if not eta0 >= 0:
        raise ValueError(f"eta0 must be >= 0, got {eta0}")
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    if not step_const > 0:
        raise ValueError(f"step_const must be > 0, got {step_const}")
    method = Method(method)
    trace = MetaGDTrace(etas=[float(eta0)], grads=[], step_const=step_const, method=method)
    eta = float(eta0)
    for k in range(1, steps + 1):
        rep = meta_value_grad(task, eta, t, method)
        if rep.overflow_flag or not math.isfinite(rep.grad):
            trace.aborted = True
            trace.error = (
                f"overflow at meta-step {k} (eta={eta!r}, grad={rep.grad!r}, "
                f"max log10 intermediate={rep.max_intermediate_log10!r})"
            )
            trace.reports.append(rep)
            break
        eta = eta - step_const / math.sqrt(k) * rep.grad
        if eta < 0:
            eta = 0.0
            trace.resets += 1
        trace.grads.append(rep.grad)
        trace.reports.append(rep)
        trace.etas.append(eta)
    return trace


def quad_optimal_eta_bracket(task: QuadraticTask):
    """The minimizer of the log objective lies in [1/L, 1/alpha]."""
    return 1.0 / task.l_max, 1.0 / task.alpha_min


def gradient_bound(task: QuadraticTask) -> float:
    """Uniform bound 4 L^3 / (c_min^2 alpha (L - alpha)) on the log meta-gradient."""
    L, a = task.l_max, task.alpha_min
    return 4.0 * L**3 / (task.c_min**2 * a * (L - a))


def _numerator_sign_term(task: QuadraticTask, eta: float, t: int) -> float:
    q, _ = _scaled(task, eta)
    with np.errstate(under="ignore"):
        return float(np.sum(task.coeffs**2 * task.eigvals**2 * q ** (2 * t - 1)))


def optimal_eta(task: QuadraticTask, t: int, tol: float = 1e-12) -> float:
    """Root of the (increasing) meta-gradient numerator, found by bisection."""
    lo, hi = quad_optimal_eta_bracket(task)
    if lo >= hi:  # single distinct eigenvalue: w_t vanishes at eta = 1/lambda
        return lo
    if _numerator_sign_term(task, lo, t) <= 0:
        return lo
    if _numerator_sign_term(task, hi, t) >= 0:
        return hi
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _numerator_sign_term(task, mid, t) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def log_objective_grid(task: QuadraticTask, t: int, points: int = 10_000, widen: float = 2.0):
    """Log-spaced grid over the minimizer bracket widened by ``widen`` on each side.

    Returns ``(eta_star, etas, values)`` with the argmin taken over the grid
    (ties resolve to the smallest eta).
    """
    lo, hi = quad_optimal_eta_bracket(task)
    etas = np.geomspace(lo / widen, hi * widen, points)
    values = np.array([log_meta_value(task, e, t) for e in etas])
    return float(etas[int(np.argmin(values))]), etas, values
