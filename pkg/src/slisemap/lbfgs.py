"""Limited-memory quasi-Newton minimizer with a strong Wolfe line search.

A self-contained L-BFGS over flat float64 vectors: two-loop recursion for
the search direction, bracketing + zoom line search with cubic
interpolation enforcing the strong Wolfe conditions (c1 = 1e-4, c2 = 0.9),
and curvature-guarded history updates.

Termination: gradient sup-norm below ``grad_tol``, relative loss
improvement below ``rel_tol``, the iteration cap, or a failed line search.
A failed line search is not an error; the best point seen so far is
returned and the caller keeps going.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_C1 = 1e-4
_C2 = 0.9


@dataclass
class MinimizeResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    n_iters: int
    n_evals: int
    converged: bool
    reason: str


def _cubic_min(a, fa, da, b, fb, db):
    """Minimizer of the cubic through (a, fa, da) and (b, fb, db).

    Returns None when the interpolant has no usable minimum.
    """
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - da * db
    if disc < 0.0:
        return None
    d2 = np.sqrt(disc)
    if a > b:
        d2 = -d2
    denom = db - da + 2.0 * d2
    if denom == 0.0:
        return None
    t = b - (b - a) * (db + d2 - d1) / denom
    if not np.isfinite(t):
        return None
    return t


class _Tracker:
    """Remembers the best finite point evaluated during a line search."""

    def __init__(self, f0):
        self.alpha = 0.0
        self.f = f0
        self.g = None

    def update(self, alpha, f, g):
        if np.isfinite(f) and f < self.f:
            self.alpha, self.f, self.g = alpha, f, g


def _strong_wolfe(fg, x, p, f0, g0, alpha0, max_evals=30):
    """Find a step along ``p`` satisfying the strong Wolfe conditions.

    Returns (alpha, f, g, n_evals, ok).  On failure ok is False and the
    best point evaluated is returned instead (alpha may be 0).
    """
    dphi0 = float(g0 @ p)
    phi0 = f0
    best = _Tracker(f0)
    evals = 0

    def phi(a):
        nonlocal evals
        f, g = fg(x + a * p)
        evals += 1
        best.update(a, f, g)
        return f, g

    def wolfe2(dphi):
        return abs(dphi) <= -_C2 * dphi0

    def zoom(lo, f_lo, d_lo, hi, f_hi, d_hi):
        # Invariant: lo satisfies the sufficient-decrease condition and has
        # the lowest such value; the minimizer lies between lo and hi.
        for _ in range(max_evals - evals):
            a = _cubic_min(lo, f_lo, d_lo, hi, f_hi, d_hi)
            span = abs(hi - lo)
            left, right = min(lo, hi), max(lo, hi)
            if a is None or not (left + 0.1 * span <= a <= right - 0.1 * span):
                a = 0.5 * (lo + hi)
            f, g = phi(a)
            d = float(g @ p)
            if not np.isfinite(f) or f > phi0 + _C1 * a * dphi0 or f >= f_lo:
                hi, f_hi, d_hi = a, f, d
            else:
                if wolfe2(d):
                    return a, f, g, True
                if d * (hi - lo) >= 0.0:
                    hi, f_hi, d_hi = lo, f_lo, d_lo
                lo, f_lo, d_lo = a, f, d
            if span <= 1e-14 * max(1.0, abs(lo)):
                break
        return None, None, None, False

    prev_a, prev_f, prev_d = 0.0, phi0, dphi0
    a = alpha0
    first = True
    while evals < max_evals:
        f, g = phi(a)
        d = float(g @ p)
        if not np.isfinite(f) or f > phi0 + _C1 * a * dphi0 or (f >= prev_f and not first):
            res = zoom(prev_a, prev_f, prev_d, a, f, d)
            break
        if wolfe2(d):
            res = (a, f, g, True)
            break
        if d >= 0.0:
            res = zoom(a, f, d, prev_a, prev_f, prev_d)
            break
        prev_a, prev_f, prev_d = a, f, d
        a = min(2.0 * a, 1e10)
        first = False
    else:
        res = (None, None, None, False)

    if res[3]:
        a, f, g = res[:3]
        return a, f, g, evals, True
    # Salvage whatever decreased the loss the most.
    if best.alpha > 0.0 and best.f < f0:
        return best.alpha, best.f, best.g, evals, False
    return 0.0, f0, g0, evals, False


def _two_loop(g, s_list, y_list, rho_list, gamma):
    q = -g
    alphas = []
    for s, y, rho in zip(reversed(s_list), reversed(y_list), reversed(rho_list)):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    q *= gamma
    for (s, y, rho), a in zip(zip(s_list, y_list, rho_list), reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q


def minimize(fun_and_grad, x0, *, history=10, max_iters=500, rel_tol=1e-6,
             grad_tol=1e-9, max_ls_evals=30) -> MinimizeResult:
    """Minimize ``fun_and_grad`` starting from ``x0``.

    ``fun_and_grad(x)`` must return ``(float, ndarray)``.  The returned
    point is always the best one evaluated, so ``result.fun <= f(x0)``.
    """
    x = np.asarray(x0, dtype=float).copy()
    f, g = fun_and_grad(x)
    n_evals = 1
    best_x, best_f, best_g = x.copy(), f, g
    s_list, y_list, rho_list = [], [], []
    gamma = 1.0
    reason = "max-iters"
    converged = False
    stalls = 0
    it = 0

    while it < max_iters:
        gnorm = float(np.abs(g).max(initial=0.0))
        if gnorm < grad_tol:
            reason, converged = "gradient", True
            break
        it += 1
        p = _two_loop(g, s_list, y_list, rho_list, gamma)
        dphi0 = float(g @ p)
        if not np.isfinite(dphi0) or dphi0 >= 0.0:
            # Defective curvature memory: restart from steepest descent.
            s_list, y_list, rho_list = [], [], []
            gamma = 1.0
            p = -g
            dphi0 = -float(g @ g)
        if s_list:
            alpha0 = 1.0
        else:
            alpha0 = min(1.0, 1.0 / max(1.0, float(np.abs(g).sum())))
        a, f_new, g_new, evals, ok = _strong_wolfe(
            fun_and_grad, x, p, f, g, alpha0, max_ls_evals)
        n_evals += evals
        if not ok and (f_new >= f or a == 0.0):
            reason = "line-search"
            break
        s = a * p
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-10 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            s_list.append(s)
            y_list.append(y)
            rho_list.append(1.0 / sy)
            gamma = sy / float(y @ y)
            if len(s_list) > history:
                s_list.pop(0)
                y_list.pop(0)
                rho_list.pop(0)
        x = x + s
        improvement = f - f_new
        stall_bar = rel_tol * max(abs(f), abs(f_new), 1.0)
        f, g = f_new, g_new
        if f < best_f:
            best_x, best_f, best_g = x.copy(), f, g
        if not ok:
            reason = "line-search"
            break
        # Two consecutive sub-tolerance improvements are required: one slow
        # step right after a badly scaled curvature update is common on
        # stiff instances and does not mean convergence.
        if improvement <= stall_bar:
            stalls += 1
            if stalls >= 2:
                reason, converged = "f-rel", True
                break
        else:
            stalls = 0

    return MinimizeResult(x=best_x, fun=best_f, grad=best_g, n_iters=it,
                          n_evals=n_evals, converged=converged, reason=reason)
