"""Unconstrained minimization and square nonlinear-system solving.

`minimize` is a limited-memory quasi-Newton (L-BFGS) loop with a strong-Wolfe
line search; a fixed-step gradient-descent fallback sits behind the same
contract for debugging. `solve_system` is a trust-region dogleg iteration
with a forward-difference Jacobian. Both are deterministic given identical
inputs and options.
"""

from __future__ import annotations

from collections import deque

import numpy as np

from .errors import ContractViolation, NoConvergenceError, NumericalError


class OptimResult:
    def __init__(self, params, loss, iterations, converged, grad_norm):
        self.params = params
        self.loss = loss
        self.iterations = iterations
        self.converged = converged
        self.grad_norm = grad_norm

    def __repr__(self):
        return (
            f"OptimResult(loss={self.loss:.6g}, iterations={self.iterations}, "
            f"converged={self.converged}, grad_norm={self.grad_norm:.3g})"
        )


def _eval(f, x):
    fx, g = f(x)
    g = np.asarray(g, dtype=float)
    return float(fx), g


def _wolfe_search(f, x, fx, g, d, c1=1e-4, c2=0.9, max_brackets=20, max_zoom=30):
    """Strong-Wolfe line search along d. Returns (step, f, g, x) or None.

    Non-finite trial values are treated as infinitely bad so the bracket
    shrinks away from them instead of aborting.
    """
    phi0 = fx
    dphi0 = float(g @ d)
    if dphi0 >= 0.0:
        return None

    def trial(a):
        xa = x + a * d
        fa, ga = f(xa)
        fa = float(fa)
        if not np.isfinite(fa) or not np.all(np.isfinite(ga)):
            return np.inf, ga, xa
        return fa, ga, xa

    def zoom(a_lo, a_hi, phi_lo, g_lo, x_lo):
        for _ in range(max_zoom):
            a = 0.5 * (a_lo + a_hi)
            phi_a, g_a, x_a = trial(a)
            if phi_a > phi0 + c1 * a * dphi0 or phi_a >= phi_lo:
                a_hi = a
            else:
                dphi_a = float(g_a @ d)
                if abs(dphi_a) <= -c2 * dphi0:
                    return a, phi_a, g_a, x_a
                if dphi_a * (a_hi - a_lo) >= 0.0:
                    a_hi = a_lo
                a_lo, phi_lo, g_lo, x_lo = a, phi_a, g_a, x_a
            if abs(a_hi - a_lo) < 1e-16 * max(1.0, abs(a_lo)):
                break
        # Settle for the best sufficient-decrease point found, if any.
        if phi_lo <= phi0 + c1 * a_lo * dphi0 and a_lo > 0.0 and np.isfinite(phi_lo):
            return a_lo, phi_lo, g_lo, x_lo
        return None

    a_prev, phi_prev, g_prev, x_prev = 0.0, phi0, g, x
    a = 1.0
    for i in range(max_brackets):
        phi_a, g_a, x_a = trial(a)
        if phi_a > phi0 + c1 * a * dphi0 or (i > 0 and phi_a >= phi_prev):
            return zoom(a_prev, a, phi_prev, g_prev, x_prev)
        dphi_a = float(g_a @ d)
        if abs(dphi_a) <= -c2 * dphi0:
            return a, phi_a, g_a, x_a
        if dphi_a >= 0.0:
            return zoom(a, a_prev, phi_a, g_a, x_a)
        a_prev, phi_prev, g_prev, x_prev = a, phi_a, g_a, x_a
        a *= 2.0
    return None


def _two_loop(g, hist):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(hist):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    if hist:
        s, y, _ = hist[-1]
        gamma = float(s @ y) / float(y @ y)
    else:
        gamma = 1.0
    r = gamma * q
    for (s, y, rho), a in zip(hist, reversed(alphas)):
        b = rho * float(y @ r)
        r += s * (a - b)
    return -r


def minimize(f, x0, *, max_iter=2000, grad_tol=1e-6, memory=10,
             method="lbfgs", step_size=1e-2, project=None,
             f_tol=0.0) -> OptimResult:
    """Minimize f(x) -> (value, gradient) from x0.

    method "lbfgs" (default) keeps `memory` curvature pairs and takes
    strong-Wolfe steps (c1=1e-4, c2=0.9); "gd" takes fixed steps of
    `step_size` along the negative gradient. When `project` is given it is
    applied to every accepted iterate (and the objective re-evaluated there),
    which turns the loop into a projected method; monotonicity is then no
    longer guaranteed. A nonzero f_tol adds a relative function-change
    stopping rule, |f_k - f_{k-1}| <= f_tol*(1+|f_k|), the loose criterion
    typical of packaged quasi-Newton routines; it is off by default.
    Line-search failure returns the best iterate with converged=False; a
    non-finite objective at an accepted point raises NumericalError.
    """
    x = np.asarray(x0, dtype=float).copy()
    if not np.all(np.isfinite(x)):
        raise ContractViolation("x0 must be finite")
    if project is not None:
        x = project(x.copy())
    fx, g = _eval(f, x)
    if not np.isfinite(fx) or not np.all(np.isfinite(g)):
        raise NumericalError("objective is not finite at the starting point")

    if method == "gd":
        return _gradient_descent(f, x, fx, g, max_iter, grad_tol, step_size, project)
    if method != "lbfgs":
        raise ContractViolation(f"unknown optimizer method {method!r}")

    hist: deque = deque(maxlen=memory)
    iterations = 0
    for k in range(max_iter):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= grad_tol:
            break
        d = _two_loop(g, list(hist))
        if float(d @ g) >= 0.0:
            d = -g
            hist.clear()
        ls = _wolfe_search(f, x, fx, g, d)
        if ls is None and hist:
            # Retry once along steepest descent before giving up.
            hist.clear()
            ls = _wolfe_search(f, x, fx, g, -g)
        if ls is None:
            break
        _, fx_new, g_new, x_new = ls
        if project is not None:
            x_new = project(x_new.copy())
            fx_new, g_new = _eval(f, x_new)
            if not np.isfinite(fx_new) or not np.all(np.isfinite(g_new)):
                raise NumericalError("objective is not finite at a projected iterate")
        s = x_new - x
        yv = g_new - g
        sy = float(s @ yv)
        if sy > 1e-10 * float(np.linalg.norm(s)) * float(np.linalg.norm(yv)):
            hist.append((s, yv, 1.0 / sy))
        f_change = abs(fx - fx_new)
        x, fx, g = x_new, fx_new, g_new
        iterations = k + 1
        if f_tol > 0.0 and f_change <= f_tol * (1.0 + abs(fx)):
            break

    gnorm = float(np.linalg.norm(g))
    return OptimResult(x, fx, iterations, gnorm <= grad_tol, gnorm)


def _gradient_descent(f, x, fx, g, max_iter, grad_tol, step_size, project):
    iterations = 0
    for k in range(max_iter):
        if float(np.linalg.norm(g)) <= grad_tol:
            break
        x_new = x - step_size * g
        if project is not None:
            x_new = project(x_new.copy())
        fx_new, g_new = _eval(f, x_new)
        if not np.isfinite(fx_new) or not np.all(np.isfinite(g_new)):
            raise NumericalError("objective is not finite at a gradient-descent iterate")
        x, fx, g = x_new, fx_new, g_new
        iterations = k + 1
    gnorm = float(np.linalg.norm(g))
    return OptimResult(x, fx, iterations, gnorm <= grad_tol, gnorm)


def _fd_jacobian(f, x, r, fd_step):
    n = x.size
    jac = np.empty((r.size, n))
    for j in range(n):
        h = fd_step * (1.0 + abs(x[j]))
        xp = x.copy()
        xp[j] += h
        jac[:, j] = (np.asarray(f(xp), dtype=float) - r) / h
    return jac


def solve_system(f, x0, *, max_iter=200, resid_tol=1e-10, fd_step=1e-7,
                 radius0=1.0) -> np.ndarray:
    """Solve the square system f(x) = 0 by trust-region dogleg steps.

    The Jacobian comes from forward differences with step fd_step*(1+|x_j|).
    The trust radius starts at radius0, doubling on successful steps and
    shrinking by 4x on poor ones. Returns x with ||f(x)|| <= resid_tol or
    raises NoConvergenceError carrying the best iterate seen.
    """
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    if not np.all(np.isfinite(x)):
        raise ContractViolation("x0 must be finite")
    r = np.atleast_1d(np.asarray(f(x), dtype=float))
    if r.size != x.size:
        raise ContractViolation(
            f"system is not square: {r.size} residuals for {x.size} unknowns"
        )

    def norm(v):
        return float(np.linalg.norm(v))

    best_x, best_rn = x.copy(), norm(r)
    if best_rn <= resid_tol:
        return x
    jac = _fd_jacobian(f, x, r, fd_step)
    delta = float(radius0)

    for _ in range(max_iter):
        rn = norm(r)
        if rn <= resid_tol:
            return x
        g = jac.T @ r
        gn2 = float(g @ g)
        if gn2 <= 1e-300:
            raise NoConvergenceError(
                "stalled at a stationary point that is not a root",
                best_x=best_x, best_residual_norm=best_rn,
            )
        try:
            p_newton = np.linalg.solve(jac, -r)
            if not np.all(np.isfinite(p_newton)):
                raise np.linalg.LinAlgError("non-finite newton step")
        except np.linalg.LinAlgError:
            p_newton = np.linalg.lstsq(jac, -r, rcond=None)[0]
        jg = jac @ g
        jg2 = float(jg @ jg)
        if jg2 <= 1e-300:
            raise NoConvergenceError(
                "model Jacobian is effectively zero",
                best_x=best_x, best_residual_norm=best_rn,
            )
        t = gn2 / jg2
        p_cauchy = -t * g

        if norm(p_newton) <= delta:
            p = p_newton
        elif norm(p_cauchy) >= delta:
            p = -(delta / np.sqrt(gn2)) * g
        else:
            # Walk from the Cauchy point toward the Newton point to the boundary.
            dp = p_newton - p_cauchy
            a = float(dp @ dp)
            b = 2.0 * float(p_cauchy @ dp)
            c = float(p_cauchy @ p_cauchy) - delta * delta
            tau = (-b + np.sqrt(max(b * b - 4.0 * a * c, 0.0))) / (2.0 * a)
            p = p_cauchy + tau * dp

        r_model = r + jac @ p
        pred_red = 0.5 * (rn * rn - float(r_model @ r_model))
        r_trial = np.atleast_1d(np.asarray(f(x + p), dtype=float))
        if np.all(np.isfinite(r_trial)) and pred_red > 0.0:
            act_red = 0.5 * (rn * rn - norm(r_trial) ** 2)
            rho = act_red / pred_red
        else:
            rho = -1.0

        if rho >= 0.5 and norm(p) >= 0.8 * delta:
            delta = min(2.0 * delta, 1e8)
        elif rho < 0.1:
            delta *= 0.25

        if rho > 1e-4:
            x = x + p
            r = r_trial
            jac = _fd_jacobian(f, x, r, fd_step)
            if norm(r) < best_rn:
                best_x, best_rn = x.copy(), norm(r)

        if delta < 1e-14:
            raise NoConvergenceError(
                "trust region collapsed before reaching the residual tolerance",
                best_x=best_x, best_residual_norm=best_rn,
            )

    if norm(r) <= resid_tol:
        return x
    raise NoConvergenceError(
        f"no convergence after {max_iter} iterations "
        f"(best residual norm {best_rn:.3e})",
        best_x=best_x, best_residual_norm=best_rn,
    )


def check_gradient(f, x, h=1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    The per-coordinate error is |analytic - fd| / (|analytic| + h), so the
    result is meaningful even where single components vanish.
    """
    if h <= 0.0:
        raise ContractViolation("h must be positive")
    x = np.asarray(x, dtype=float)
    _, g = _eval(f, x)
    worst = 0.0
    for i in range(x.size):
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        fd = (float(f(xp)[0]) - float(f(xm)[0])) / (2.0 * h)
        err = abs(g[i] - fd) / (abs(g[i]) + h)
        worst = max(worst, err)
    return worst
