"""Damped Newton minimization and finite-difference derivatives.

The optimizer is deliberately small: Cholesky-based Newton directions with a
Levenberg shift when the Hessian is not positive definite, Armijo backtracking,
and optional projection of trial points onto a box. It is used to locate MAP
points of scaled posteriors, so the objectives are smooth and low dimensional.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_EPS = float(np.finfo(float).eps)
GRAD_STEP_SCALE = _EPS ** (1.0 / 3.0)
HESS_STEP_SCALE = _EPS ** (1.0 / 4.0)
ARMIJO_C = 1e-4
LEVENBERG_START = 1e-6


class EvaluationError(RuntimeError):
    """Objective or derivative evaluation produced a non-finite value."""


class OptimizationError(RuntimeError):
    """No start converged; carries the best attempt in ``best``."""

    def __init__(self, message: str, best: "MinResult | None" = None):
        super().__init__(message)
        self.best = best


@dataclass
class MinResult:
    """Outcome of a minimization run."""

    x: np.ndarray
    value: float
    grad_norm: float
    iterations: int
    converged: bool
    hessian: np.ndarray | None = None
    boundary_active: bool = False


def fd_gradient(f, x, scale=None):
    """Central-difference gradient with per-coordinate steps h_j = scale*(1+|x_j|).

    If ``f`` is non-finite at a probe point the step is reduced once by a
    factor of 10; a second failure raises :class:`EvaluationError`.
    """
    x = np.asarray(x, dtype=float)
    scale = GRAD_STEP_SCALE if scale is None else float(scale)
    g = np.empty(x.size)
    for j in range(x.size):
        g[j] = _central_difference(f, x, j, scale * (1.0 + abs(x[j])))
    return g


def _central_difference(f, x, j, h):
    e = np.zeros_like(x)
    for _ in range(2):
        e[j] = h
        fp = float(f(x + e))
        fm = float(f(x - e))
        if np.isfinite(fp) and np.isfinite(fm):
            return (fp - fm) / (2.0 * h)
        h /= 10.0
    raise EvaluationError(
        f"objective non-finite near component {j} at x={x!r} even after step reduction"
    )


def fd_hessian(f, x, scale=None):
    """Symmetrized central-difference Hessian with steps h_j = scale*(1+|x_j|)."""
    x = np.asarray(x, dtype=float)
    d = x.size
    scale = HESS_STEP_SCALE if scale is None else float(scale)
    h = scale * (1.0 + np.abs(x))
    for _ in range(2):
        H, ok = _hessian_attempt(f, x, h, d)
        if ok:
            return 0.5 * (H + H.T)
        h = h / 10.0
    raise EvaluationError(f"objective non-finite while probing the Hessian at x={x!r}")


def _hessian_attempt(f, x, h, d):
    f0 = float(f(x))
    if not np.isfinite(f0):
        return None, False
    H = np.empty((d, d))
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = h[i]
        fp = float(f(x + ei))
        fm = float(f(x - ei))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            return None, False
        H[i, i] = (fp - 2.0 * f0 + fm) / (h[i] * h[i])
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = h[j]
            fpp = float(f(x + ei + ej))
            fpm = float(f(x + ei - ej))
            fmp = float(f(x - ei + ej))
            fmm = float(f(x - ei - ej))
            if not all(np.isfinite(v) for v in (fpp, fpm, fmp, fmm)):
                return None, False
            H[i, j] = H[j, i] = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j])
    return H, True


def _newton_direction(H, g):
    """Solve H p = -g, adding a doubling Levenberg shift until Cholesky succeeds."""
    if not np.all(np.isfinite(H)):
        raise EvaluationError("Hessian contains non-finite entries")
    d = g.size
    lam = 0.0
    for _ in range(64):
        try:
            L = np.linalg.cholesky(H + lam * np.eye(d))
        except np.linalg.LinAlgError:
            lam = LEVENBERG_START if lam == 0.0 else 2.0 * lam
            continue
        y = np.linalg.solve(L, -g)
        return np.linalg.solve(L.T, y)
    raise EvaluationError("Levenberg shift failed to produce an SPD system")


def minimize_newton(f, grad, hess, x0, tol=1e-9, max_iter=100, project=None):
    """Damped Newton descent with Armijo backtracking.

    Parameters
    ----------
    f, grad, hess : callables
        Objective value, gradient and Hessian at a point.
    x0 : array_like
        Starting point; projected onto the feasible box if ``project`` is given.
    tol : float
        Convergence threshold on the Euclidean gradient norm.
    max_iter : int
        Iteration cap; exhausting it returns ``converged=False``.
    project : callable or None
        Maps trial points onto the feasible set (used for box priors).

    Returns
    -------
    MinResult
        ``converged`` is True iff the final gradient norm is below ``tol``.
        Infinite trial values shrink the step (out-of-support probes);
        NaN raises :class:`EvaluationError`.
    """
    x = np.asarray(x0, dtype=float).copy()
    if project is not None:
        x = project(x)
    fx = float(f(x))
    if not np.isfinite(fx):
        raise EvaluationError(f"objective not finite at the start point {x0!r}")
    g = np.asarray(grad(x), dtype=float)
    iterations = 0
    while True:
        grad_norm = float(np.linalg.norm(g))
        if grad_norm < tol or iterations >= max_iter:
            break
        H = np.asarray(hess(x), dtype=float)
        p = _newton_direction(H, g)
        t = 1.0
        accepted = False
        for _ in range(60):
            trial = x + t * p
            if project is not None:
                trial = project(trial)
            step = trial - x
            ft = float(f(trial))
            if np.isnan(ft):
                raise EvaluationError(f"objective NaN at trial point {trial!r}")
            if ft <= fx + ARMIJO_C * float(g @ step) and np.isfinite(ft):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break  # line search stalled; the gradient test decides the flag
        x, fx = trial, ft
        g = np.asarray(grad(x), dtype=float)
        iterations += 1
    grad_norm = float(np.linalg.norm(g))
    return MinResult(
        x=x,
        value=fx,
        grad_norm=grad_norm,
        iterations=iterations,
        converged=bool(grad_norm < tol),
    )


def find_map(posterior, starts=4, seed=0, tol=1e-9, max_iter=100):
    """Multistart MAP search for a scaled posterior; calibrates iota_n on success.

    Starts from the prior center (mean or box midpoint) plus ``starts - 1``
    prior draws, each drawn from an independent stream keyed by
    ``(seed, start_index)``. Ties are broken by objective value, then by start
    index. Raises :class:`OptimizationError` carrying the best attempt when no
    start converges.
    """
    if starts < 1:
        raise ValueError("starts must be >= 1")
    prior = posterior.prior
    points = [np.asarray(prior.center, dtype=float)]
    for k in range(1, starts):
        rng = np.random.default_rng((seed, k))
        points.append(prior.sample(1, rng)[0])
    project = prior.projection()

    best = None
    best_key = None
    failures = []
    for idx, x0 in enumerate(points):
        try:
            res = minimize_newton(
                posterior.objective,
                posterior.grad_neg_log_post,
                posterior.hess_neg_log_post,
                x0,
                tol=tol,
                max_iter=max_iter,
                project=project,
            )
        except EvaluationError as err:
            failures.append(f"start {idx}: {err}")
            continue
        key = (not res.converged, res.value, idx)
        if best_key is None or key < best_key:
            best, best_key = res, key
    if best is None:
        raise OptimizationError(
            "all starts failed to evaluate: " + "; ".join(failures), best=None
        )
    if not best.converged:
        raise OptimizationError(
            f"no start converged within {max_iter} iterations "
            f"(best gradient norm {best.grad_norm:.3e})",
            best=best,
        )
    best.hessian = posterior.hess_neg_log_post(best.x)
    if prior.kind == "UniformBox":
        gap = np.minimum(best.x - prior.lower, prior.upper - best.x)
        best.boundary_active = bool(np.any(gap <= 1e-12 * (1.0 + np.abs(best.x))))
    posterior.calibrate(best.x)
    return best
