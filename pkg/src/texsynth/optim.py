"""Limited-memory BFGS minimizer with a strong Wolfe line search.

Works on arrays of any shape; the objective callable returns
(value, gradient) with the gradient shaped like the iterate. The inverse
Hessian is held as up to `history` curvature pairs combined by the
two-loop recursion; the line search brackets then zooms with cubic
interpolation. The iterates are unconstrained: box bounds are nobody's
business here, image values get clamped at export time only.

Termination is one of max_iter, grad_tol (max-norm), or
line_search_failure (after one steepest-descent restart). A NaN objective
value, or Inf at an accepted point, aborts with NonFiniteObjective
carrying the last good iterate; Inf probed during bracketing is treated
as an infinitely bad point and the search shrinks away from it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class NonFiniteObjective(Exception):
    """Objective or gradient went NaN/Inf; carries the last good iterate."""

    def __init__(self, message, x=None, trace=None):
        super().__init__(message)
        self.x = x
        self.trace = trace


@dataclass
class LbfgsConfig:
    max_iter: int = 2000
    history: int = 10
    grad_tol: float = 1e-8  # max-norm of the gradient
    c1: float = 1e-4
    c2: float = 0.9
    step_init: float = 1.0
    max_ls: int = 25  # evaluations per bracketing or zoom phase


@dataclass
class OptTrace:
    """Loss at the start point and after every accepted step."""

    values: list[float] = field(default_factory=list)
    termination: str = ""
    iterations: int = 0
    n_evals: int = 0
    grad_norm: float = np.inf

    def to_dict(self) -> dict:
        return {
            "values": [float(v) for v in self.values],
            "termination": self.termination,
            "iterations": self.iterations,
            "n_evals": self.n_evals,
            "grad_norm": float(self.grad_norm),
        }


def _dot(a, b) -> float:
    return float(np.vdot(a, b))


def two_loop_direction(grad, pairs, gamma: float):
    """Search direction -H g from curvature pairs [(s, y, rho), ...].

    Oldest pair first; H0 = gamma * I. This is the standard two-loop
    recursion and is exposed so it can be checked against a densely
    assembled inverse Hessian.
    """
    q = np.array(grad, dtype=np.float64, copy=True)
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * _dot(s, q)
        q -= a * y
        alphas.append(a)
    r = gamma * q
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * _dot(y, r)
        r += (a - b) * s
    return -r


def _is_good(value, grad) -> bool:
    return bool(np.isfinite(value)) and bool(np.all(np.isfinite(grad)))


def _cubic_step(alo, flo, dlo, ahi, fhi, dhi):
    """Minimizer of the cubic Hermite fit; None when degenerate."""
    if not (np.isfinite(fhi) and np.isfinite(dhi)):
        # one-sided data: quadratic through (alo, flo, dlo) and fhi if finite
        if np.isfinite(fhi):
            denom = 2.0 * (fhi - flo - dlo * (ahi - alo))
            if denom != 0:
                a = alo - dlo * (ahi - alo) ** 2 / denom
                return a if np.isfinite(a) else None
        return None
    d1 = dlo + dhi - 3.0 * (flo - fhi) / (alo - ahi)
    disc = d1 * d1 - dlo * dhi
    if disc < 0:
        return None
    d2 = np.sqrt(disc) * np.sign(ahi - alo)
    denom = dhi - dlo + 2.0 * d2
    if denom == 0:
        return None
    a = ahi - (ahi - alo) * (dhi + d2 - d1) / denom
    return a if np.isfinite(a) else None


class _LineSearch:
    """One strong Wolfe search along p from x; tracks evaluation count and
    whether any probe came back non-finite."""

    def __init__(self, fun, x, p, f0, g0, cfg):
        self.fun = fun
        self.x = x
        self.p = p
        self.phi0 = f0
        self.dphi0 = _dot(g0, p)
        self.cfg = cfg
        self.n_evals = 0
        self.saw_nonfinite = False

    def _eval(self, a):
        value, grad = self.fun(self.x + a * self.p)
        self.n_evals += 1
        if not _is_good(value, grad):
            self.saw_nonfinite = True
            return np.inf, None, np.nan
        return value, grad, _dot(grad, self.p)

    def run(self):
        """Returns (alpha, value, grad) or None."""
        cfg = self.cfg
        if self.dphi0 >= 0:
            return None
        a_prev, f_prev, d_prev = 0.0, self.phi0, self.dphi0
        a = cfg.step_init
        for i in range(cfg.max_ls):
            f_a, g_a, d_a = self._eval(a)
            armijo = self.phi0 + cfg.c1 * a * self.dphi0
            if f_a > armijo or (i > 0 and f_a >= f_prev):
                return self._zoom(a_prev, f_prev, d_prev, a, f_a, d_a)
            if abs(d_a) <= -cfg.c2 * self.dphi0:
                return (a, f_a, g_a) if f_a < self.phi0 else None
            if d_a >= 0:
                return self._zoom(a, f_a, d_a, a_prev, f_prev, d_prev)
            a_prev, f_prev, d_prev = a, f_a, d_a
            a = min(2.0 * a, 1e10)
        return None

    def _zoom(self, alo, flo, dlo, ahi, fhi, dhi):
        cfg = self.cfg
        for _ in range(cfg.max_ls):
            width = abs(ahi - alo)
            if width < 1e-16 * max(1.0, abs(alo)):
                return None
            a = _cubic_step(alo, flo, dlo, ahi, fhi, dhi)
            lo, hi = min(alo, ahi), max(alo, ahi)
            margin = 0.1 * width
            if a is None or not (lo + margin <= a <= hi - margin):
                a = 0.5 * (alo + ahi)
            f_a, g_a, d_a = self._eval(a)
            if f_a > self.phi0 + cfg.c1 * a * self.dphi0 or f_a >= flo:
                ahi, fhi, dhi = a, f_a, d_a
            else:
                if abs(d_a) <= -cfg.c2 * self.dphi0:
                    return (a, f_a, g_a) if f_a < self.phi0 else None
                if d_a * (ahi - alo) >= 0:
                    ahi, fhi, dhi = alo, flo, dlo
                alo, flo, dlo = a, f_a, d_a
        return None


def minimize(fun, x0, cfg: LbfgsConfig | None = None):
    """Minimize fun(x) -> (value, grad) from x0; returns (x, OptTrace)."""
    cfg = cfg or LbfgsConfig()
    x = np.array(x0, dtype=np.float64, copy=True)
    trace = OptTrace()
    fx, gx = fun(x)
    trace.n_evals = 1
    if not _is_good(fx, gx):
        raise NonFiniteObjective("objective non-finite at the start point", x, trace)
    fx = float(fx)
    gx = np.asarray(gx, dtype=np.float64)
    trace.values.append(fx)
    pairs = []  # (s, y, rho), oldest first
    gamma = 1.0

    while True:
        trace.grad_norm = float(np.max(np.abs(gx))) if gx.size else 0.0
        if trace.grad_norm <= cfg.grad_tol:
            trace.termination = "grad_tol"
            break
        if trace.iterations >= cfg.max_iter:
            trace.termination = "max_iter"
            break

        p = two_loop_direction(gx, pairs, gamma)
        if _dot(p, gx) >= 0:
            # curvature information went stale; fall back to steepest descent
            p = -gx
        search = _LineSearch(fun, x, p, fx, gx, cfg)
        result = search.run()
        trace.n_evals += search.n_evals
        saw_nonfinite = search.saw_nonfinite
        if result is None:
            # one steepest-descent restart, then give up
            pairs.clear()
            gamma = 1.0
            search = _LineSearch(fun, x, -gx, fx, gx, cfg)
            result = search.run()
            trace.n_evals += search.n_evals
            saw_nonfinite = saw_nonfinite or search.saw_nonfinite
            if result is None:
                if saw_nonfinite:
                    raise NonFiniteObjective(
                        "objective non-finite along every probed step", x, trace
                    )
                trace.termination = "line_search_failure"
                break
            p = -gx
        alpha, f_new, g_new = result
        s = alpha * p
        y = g_new - gx
        ys = _dot(y, s)
        if ys > 1e-10 * np.linalg.norm(y.ravel()) * np.linalg.norm(s.ravel()):
            pairs.append((s, y, 1.0 / ys))
            if len(pairs) > cfg.history:
                pairs.pop(0)
            gamma = ys / _dot(y, y)
        x = x + s
        fx, gx = float(f_new), g_new
        trace.values.append(fx)
        trace.iterations += 1

    return x, trace
