"""Limited-memory BFGS with a strong-Wolfe line search (Nocedal & Wright,
Algorithms 3.5, 3.6 and 7.4)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import LineSearchFailed, ValidationError


@dataclass
class LbfgsSettings:
    history: int = 10
    max_iter: int = 200
    gtol: float = 1e-8  # on the infinity norm of the gradient
    ftol: float = 0.0  # optional relative decrease tolerance; 0 disables
    c1: float = 1e-4
    c2: float = 0.9
    max_ls: int = 30

    def __post_init__(self):
        if not 0 < self.c1 < self.c2 < 1:
            raise ValidationError("Wolfe constants need 0 < c1 < c2 < 1")
        if self.history < 1 or self.max_iter < 0:
            raise ValidationError("history must be >= 1 and max_iter >= 0")


@dataclass
class LbfgsResult:
    x: np.ndarray
    f: float
    grad: np.ndarray
    iterations: int
    converged: bool
    status: str
    trace: list = field(default_factory=list)  # objective after each accepted step, trace[0] = f(x0)
    n_evals: int = 0


def _cubic_min(a, fa, ga, b, fb, gb):
    """Minimizer of the cubic interpolating (a, fa, ga) and (b, fb, gb), or None."""
    d1 = ga + gb - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - ga * gb
    if disc < 0:
        return None
    d2 = np.sign(b - a) * np.sqrt(disc)
    denom = gb - ga + 2.0 * d2
    if denom == 0:
        return None
    return b - (b - a) * (gb + d2 - d1) / denom


def _zoom(phi, lo, hi, f0, g0, c1, c2, max_iter):
    a_lo, f_lo, g_lo = lo
    a_hi, f_hi, g_hi = hi
    for _ in range(max_iter):
        a = _cubic_min(a_lo, f_lo, g_lo, a_hi, f_hi, g_hi)
        span = abs(a_hi - a_lo)
        left, right = min(a_lo, a_hi), max(a_lo, a_hi)
        if a is None or not np.isfinite(a) or a < left + 0.1 * span or a > right - 0.1 * span:
            a = 0.5 * (a_lo + a_hi)
        fa, ga, payload = phi(a)
        if fa > f0 + c1 * a * g0 or fa >= f_lo:
            a_hi, f_hi, g_hi = a, fa, ga
        else:
            if abs(ga) <= -c2 * g0:
                return a, fa, payload
            if ga * (a_hi - a_lo) >= 0:
                a_hi, f_hi, g_hi = a_lo, f_lo, g_lo
            a_lo, f_lo, g_lo = a, fa, ga
        if abs(a_hi - a_lo) < 1e-16 * max(1.0, abs(a_lo)):
            break
    raise LineSearchFailed("zoom did not find a strong-Wolfe step")


def strong_wolfe(phi, f0, g0, a1=1.0, c1=1e-4, c2=0.9, max_iter=30, a_max=1e10):
    """phi(a) -> (f, directional derivative, payload).  Returns (a, f, payload)."""
    if g0 >= 0:
        raise LineSearchFailed("not a descent direction")
    a_prev, f_prev, g_prev = 0.0, f0, g0
    a = a1
    for i in range(max_iter):
        fa, ga, payload = phi(a)
        if not np.isfinite(fa):
            # shrink back into the region where the objective is defined
            a = 0.5 * (a_prev + a)
            continue
        if fa > f0 + c1 * a * g0 or (i > 0 and fa >= f_prev):
            return _zoom(phi, (a_prev, f_prev, g_prev), (a, fa, ga), f0, g0, c1, c2, max_iter)
        if abs(ga) <= -c2 * g0:
            return a, fa, payload
        if ga >= 0:
            return _zoom(phi, (a, fa, ga), (a_prev, f_prev, g_prev), f0, g0, c1, c2, max_iter)
        a_prev, f_prev, g_prev = a, fa, ga
        a = min(2.0 * a, a_max)
    raise LineSearchFailed("line search exceeded its iteration budget")


def lbfgs_minimize(fun, x0, settings: LbfgsSettings | None = None, callback=None) -> LbfgsResult:
    """Minimize ``fun(x) -> (f, grad)``.

    A failed line search ends the run and returns the best iterate with
    ``converged=False`` and ``status='line_search_failed'``.
    """
    s = settings or LbfgsSettings()
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    n_evals = 1
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise ValidationError("objective is not finite at the starting point")
    trace = [float(f)]
    pairs: list[tuple[np.ndarray, np.ndarray, float]] = []
    if np.max(np.abs(g), initial=0.0) < s.gtol:
        return LbfgsResult(x, float(f), g, 0, True, "gtol", trace, n_evals)
    status, converged, it = "max_iter", False, 0
    for it in range(1, s.max_iter + 1):
        q = g.copy()
        alphas = []
        for sv, yv, rho in reversed(pairs):
            a = rho * (sv @ q)
            alphas.append(a)
            q -= a * yv
        if pairs:
            sv, yv, _ = pairs[-1]
            q *= (sv @ yv) / (yv @ yv)
        for (sv, yv, rho), a in zip(pairs, reversed(alphas)):
            b = rho * (yv @ q)
            q += sv * (a - b)
        d = -q
        gd = g @ d
        if gd >= 0:  # lost descent; restart from steepest descent
            pairs.clear()
            d = -g
            gd = g @ d
        a1 = 1.0 if pairs else min(1.0, 1.0 / max(np.sum(np.abs(g)), 1e-300))

        def phi(a, d=d):
            nonlocal n_evals
            xa = x + a * d
            fa, ga = fun(xa)
            n_evals += 1
            return fa, ga @ d, (xa, ga)

        try:
            a, f_new, (x_new, g_new) = strong_wolfe(phi, f, gd, a1, s.c1, s.c2, s.max_ls)
        except LineSearchFailed:
            status, it = "line_search_failed", it - 1
            break
        sv, yv = x_new - x, g_new - g
        sy = sv @ yv
        if sy > 1e-12 * np.sqrt((sv @ sv) * (yv @ yv)):
            pairs.append((sv, yv, 1.0 / sy))
            if len(pairs) > s.history:
                pairs.pop(0)
        f_old = f
        x, f, g = x_new, f_new, g_new
        trace.append(float(f))
        if callback is not None:
            callback(x, f)
        if np.max(np.abs(g)) < s.gtol:
            status, converged = "gtol", True
            break
        if s.ftol > 0 and (f_old - f) <= s.ftol * max(abs(f_old), abs(f), 1.0):
            status, converged = "ftol", True
            break
    return LbfgsResult(x, float(f), g, it, converged, status, trace, n_evals)
