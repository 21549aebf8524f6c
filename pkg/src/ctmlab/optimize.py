"""Limited-memory BFGS with a strong Wolfe line search.

Works on flat numpy vectors under an arbitrary inner product, so the
gradient passed in must be the Riesz representer for that inner product
(for the transport problems, the adjoint field under the area-weighted L2
product).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MinimizerSpec:
    max_iters: int = 99
    memory: int = 8
    c1: float = 1e-4
    c2: float = 0.9
    grad_tol: float = 1e-12
    cost_tol: float = 1e-16
    max_line_evals: int = 20
    initial_step: float = 1.0

    def __post_init__(self):
        if not 0 < self.c1 < self.c2 < 1:
            raise ConfigError(f"need 0 < c1 < c2 < 1, got c1={self.c1}, c2={self.c2}")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be at least 1")
        if self.memory < 1:
            raise ConfigError("memory must be at least 1")


@dataclass(frozen=True)
class HistoryRow:
    iter: int
    cost: float
    normalized_cost: float
    grad_norm: float
    step_length: float


@dataclass
class OptimizeResult:
    x: np.ndarray
    cost: float
    grad: np.ndarray
    history: list = field(default_factory=list)
    iterations: int = 0
    termination: str = "max_iters"
    evaluations: int = 0


class _LineSearchFailure(Exception):
    pass


def _cubic_min(a, fa, da, b, fb, db):
    """Minimizer of the cubic matching values and slopes at a and b, or None."""
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    rad = d1 * d1 - da * db
    if rad < 0:
        return None
    d2 = math.copysign(math.sqrt(rad), b - a)
    denom = db - da + 2.0 * d2
    if denom == 0:
        return None
    return b - (b - a) * (db + d2 - d1) / denom


def strong_wolfe(phi, f0, d0, alpha, c1, c2, max_evals, alpha_max=1e10):
    """Find a step satisfying the strong Wolfe conditions.

    ``phi(alpha)`` must return ``(value, slope, payload)``. Returns
    ``(alpha, value, payload, evaluations)``; raises ``_LineSearchFailure``.
    """
    evals = 0
    a_prev, f_prev, d_prev = 0.0, f0, d0

    def zoom(lo, f_lo, d_lo, hi, f_hi, d_hi):
        nonlocal evals
        while evals < max_evals:
            width = hi - lo
            a = _cubic_min(lo, f_lo, d_lo, hi, f_hi, d_hi)
            lo_edge, hi_edge = min(lo, hi), max(lo, hi)
            margin = 0.1 * abs(width)
            if a is None or not (lo_edge + margin <= a <= hi_edge - margin):
                a = lo + 0.5 * width
            if abs(width) <= 1e-14 * max(abs(lo), abs(hi), 1e-300):
                break
            fa, da, payload = phi(a)
            evals += 1
            if fa > f0 + c1 * a * d0 or fa >= f_lo:
                hi, f_hi, d_hi = a, fa, da
            else:
                if abs(da) <= -c2 * d0:
                    return a, fa, payload
                if da * (hi - lo) >= 0:
                    hi, f_hi, d_hi = lo, f_lo, d_lo
                lo, f_lo, d_lo = a, fa, da
        raise _LineSearchFailure("zoom did not converge")

    while evals < max_evals:
        fa, da, payload = phi(alpha)
        evals += 1
        if not np.isfinite(fa):
            alpha = 0.5 * (a_prev + alpha)
            continue
        if fa > f0 + c1 * alpha * d0 or (evals > 1 and fa >= f_prev):
            a, fz, pz = zoom(a_prev, f_prev, d_prev, alpha, fa, da)
            return a, fz, pz, evals
        if abs(da) <= -c2 * d0:
            return alpha, fa, payload, evals
        if da >= 0:
            a, fz, pz = zoom(alpha, fa, da, a_prev, f_prev, d_prev)
            return a, fz, pz, evals
        a_prev, f_prev, d_prev = alpha, fa, da
        alpha = min(2.0 * alpha, alpha_max)
    raise _LineSearchFailure("no acceptable step within the evaluation budget")


def _two_loop(g, pairs, inner):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * inner(s, q)
        alphas.append(a)
        q = q - a * y
    if pairs:
        s, y, _ = pairs[-1]
        q = q * (inner(s, y) / inner(y, y))
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * inner(y, q)
        q = q + (a - b) * s
    return -q


def lbfgs(fun, x0, spec=MinimizerSpec(), inner=np.dot, callback=None):
    """Minimize ``fun(x) -> (f, g)`` from ``x0``.

    Termination reasons: ``cost_tol`` (f/f0 below tolerance), ``grad_tol``
    (|g|/|g0| below tolerance), ``max_iters`` and ``line_search_failure``.
    The returned point is always the last accepted iterate, so the cost
    history never increases.
    """
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    evals = 1
    f0 = f
    gnorm0 = math.sqrt(inner(g, g))

    def norm_cost(val):
        return val / f0 if f0 else 0.0

    res = OptimizeResult(x=x, cost=f, grad=g)
    res.history.append(HistoryRow(0, f, norm_cost(f), gnorm0, 0.0))
    pairs = []

    def converged(fv, gv):
        if f0 == 0 or norm_cost(fv) <= spec.cost_tol:
            return "cost_tol"
        if math.sqrt(inner(gv, gv)) <= spec.grad_tol * gnorm0:
            return "grad_tol"
        return None

    reason = converged(f, g)
    it = 0
    while reason is None and it < spec.max_iters:
        d = _two_loop(g, pairs, inner)
        slope = inner(g, d)
        if not slope < 0:
            pairs.clear()
            d = -g
            slope = inner(g, d)

        def phi(a, d=d):
            xa = x + a * d
            fa, ga = fun(xa)
            return fa, inner(ga, d), (xa, ga)

        try:
            alpha, f_new, (x_new, g_new), n = strong_wolfe(
                phi, f, slope, spec.initial_step, spec.c1, spec.c2, spec.max_line_evals)
        except _LineSearchFailure as exc:
            evals += spec.max_line_evals
            if pairs:
                log.debug("iteration %d: line search failed (%s); restarting from steepest descent", it + 1, exc)
                pairs.clear()
                continue
            reason = "line_search_failure"
            break
        evals += n
        if not f_new <= f:
            reason = "line_search_failure"
            break
        s = x_new - x
        y = g_new - g
        sy = inner(s, y)
        if sy > 1e-12 * math.sqrt(inner(s, s) * inner(y, y)):
            pairs.append((s, y, 1.0 / sy))
            if len(pairs) > spec.memory:
                pairs.pop(0)
        x, f, g = x_new, f_new, g_new
        it += 1
        res.history.append(HistoryRow(it, f, norm_cost(f), math.sqrt(inner(g, g)), alpha))
        if callback is not None:
            callback(it, x, f)
        reason = converged(f, g)
    res.x, res.cost, res.grad = x, f, g
    res.iterations = it
    res.termination = reason or "max_iters"
    res.evaluations = evals
    return res
