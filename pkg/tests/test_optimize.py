"""Newton minimizer and finite-difference derivative checks."""
import numpy as np
import pytest

from lapmc.experiments import build_family, quadratic_misfit
from lapmc.metrics import fit_rate
from lapmc.model import GaussianPrior, ScaledPosterior
from lapmc.optimize import (
    EvaluationError,
    OptimizationError,
    fd_gradient,
    fd_hessian,
    find_map,
    minimize_newton,
)


def _quadratic(H, a):
    H = np.asarray(H, dtype=float)
    a = np.asarray(a, dtype=float)
    f = lambda x: 0.5 * float((x - a) @ H @ (x - a))
    grad = lambda x: H @ (x - a)
    hess = lambda x: H.copy()
    return f, grad, hess


def test_newton_solves_quadratic_in_one_step():
    H = np.array([[4.0, 1.0], [1.0, 3.0]])
    a = np.array([2.0, -1.0])
    f, grad, hess = _quadratic(H, a)
    res = minimize_newton(f, grad, hess, x0=[10.0, 10.0])
    assert res.converged
    assert res.iterations == 1
    np.testing.assert_allclose(res.x, a, atol=1e-12)
    assert res.grad_norm < 1e-12


def test_newton_handles_indefinite_hessian_via_shift():
    # start on the concave side of a quartic; H(x0) is negative
    f = lambda x: float(0.25 * x[0] ** 4 - x[0] ** 2)
    grad = lambda x: np.array([x[0] ** 3 - 2.0 * x[0]])
    hess = lambda x: np.array([[3.0 * x[0] ** 2 - 2.0]])
    res = minimize_newton(f, grad, hess, x0=[0.1], tol=1e-10)
    assert res.converged
    assert abs(abs(res.x[0]) - np.sqrt(2.0)) < 1e-8


def test_newton_respects_projection():
    H = np.eye(2)
    a = np.array([0.2, 0.3])
    f, grad, hess = _quadratic(H, a)
    seen = []

    def project(x):
        seen.append(x.copy())
        return np.clip(x, -0.5, 0.5)

    res = minimize_newton(f, grad, hess, x0=[5.0, -5.0], project=project)
    assert res.converged
    np.testing.assert_allclose(res.x, a, atol=1e-10)
    assert all(np.all(np.abs(s) <= 0.5) for s in seen[1:])


def test_newton_nan_objective_raises():
    f = lambda x: float("nan")
    grad = lambda x: np.array([1.0])
    hess = lambda x: np.array([[1.0]])
    with pytest.raises(EvaluationError):
        minimize_newton(f, grad, hess, x0=[0.0])


def test_newton_infinite_start_raises():
    f = lambda x: float("inf")
    with pytest.raises(EvaluationError):
        minimize_newton(f, lambda x: np.zeros(1), lambda x: np.eye(1), x0=[0.0])


def test_newton_shrinks_step_out_of_support():
    # objective is +inf left of zero; full Newton steps overshoot into it
    def f(x):
        return float(x[0] - np.log(x[0])) if x[0] > 0 else float("inf")

    grad = lambda x: np.array([1.0 - 1.0 / x[0]])
    hess = lambda x: np.array([[1.0 / x[0] ** 2]])
    res = minimize_newton(f, grad, hess, x0=[0.05], tol=1e-10)
    assert res.converged
    assert abs(res.x[0] - 1.0) < 1e-8


def test_fd_gradient_matches_analytic():
    rng = np.random.default_rng(7)
    H = np.array([[2.0, 0.4, 0.0], [0.4, 1.5, -0.2], [0.0, -0.2, 3.0]])
    a = np.array([0.3, -0.6, 1.1])
    f, grad, _ = _quadratic(H, a)
    for _ in range(5):
        x = rng.normal(size=3)
        np.testing.assert_allclose(fd_gradient(f, x), grad(x), rtol=1e-7, atol=1e-9)


def test_fd_hessian_matches_analytic():
    f = lambda x: float(np.sin(x[0]) * np.cos(x[1]) + x[0] ** 2 * x[1])
    x = np.array([0.4, -0.7])
    H = np.array(
        [
            [-np.sin(x[0]) * np.cos(x[1]) + 2.0 * x[1], -np.cos(x[0]) * np.sin(x[1]) + 2.0 * x[0]],
            [-np.cos(x[0]) * np.sin(x[1]) + 2.0 * x[0], -np.sin(x[0]) * np.cos(x[1])],
        ]
    )
    np.testing.assert_allclose(fd_hessian(f, x), H, rtol=1e-5, atol=1e-7)


def test_fd_gradient_retries_with_smaller_step():
    calls = []

    def narrow(x):
        calls.append(float(x[0]))
        # finite only within 1e-6 of the origin, well under the default step
        return x[0] ** 2 if abs(x[0]) < 1e-6 else float("inf")

    g = fd_gradient(narrow, np.array([0.0]))
    assert abs(g[0]) < 1e-6
    assert len(calls) == 4  # first probe pair fails, reduced pair succeeds


def test_fd_gradient_gives_up_after_one_retry():
    always_bad = lambda x: float("inf")
    with pytest.raises(EvaluationError):
        fd_gradient(always_bad, np.array([0.0]))
    with pytest.raises(EvaluationError):
        fd_hessian(always_bad, np.array([0.0, 0.0]))


def test_find_map_is_deterministic():
    fam = build_family("cubic")
    xs = []
    for _ in range(2):
        post = ScaledPosterior(fam.likelihood, fam.prior, 64.0)
        xs.append(find_map(post).x.copy())
    np.testing.assert_array_equal(xs[0], xs[1])


def test_find_map_calibrates_and_stores_hessian():
    fam = build_family("conjugate")
    post = ScaledPosterior(fam.likelihood, fam.prior, 4.0)
    res = find_map(post)
    assert res.converged
    assert post.iota is not None
    assert res.hessian is not None
    assert abs(post.neg_log_post(res.x)) == 0.0
    # prior N(0,1) against Phi = (x-1)^2/2 makes the MAP n/(n+1)
    assert abs(res.x[0] - 0.8) < 1e-10


def test_map_error_decays_like_one_over_n():
    fam = build_family("conjugate")
    ns = [10.0, 100.0, 1000.0, 10000.0]
    errs = []
    for n in ns:
        post = ScaledPosterior(fam.likelihood, fam.prior, n)
        errs.append(abs(find_map(post).x[0] - 1.0))
    rep = fit_rate(ns, errs)
    assert abs(rep.slope + 1.0) < 0.02
    assert rep.r_squared > 0.999


def test_find_map_reports_boundary_contact():
    fam = build_family("algebraic", d=1)
    interior = ScaledPosterior(fam.likelihood, fam.prior, 100.0)
    assert not find_map(interior).boundary_active


def test_find_map_failure_carries_best_attempt():
    fam = build_family("cubic")
    post = ScaledPosterior(fam.likelihood, fam.prior, 64.0)
    with pytest.raises(OptimizationError) as exc:
        find_map(post, max_iter=0)
    assert exc.value.best is not None
    assert not exc.value.best.converged


def test_find_map_rejects_bad_start_count():
    fam = build_family("conjugate")
    post = ScaledPosterior(fam.likelihood, fam.prior, 4.0)
    with pytest.raises(ValueError):
        find_map(post, starts=0)


def test_multistart_beats_bad_center():
    # double well: the center start rolls into the shallow local minimum,
    # prior draws find the global one
    def phi(x):
        x = np.asarray(x, dtype=float)
        pts = np.atleast_2d(x)
        v = (pts[:, 0] ** 2 - 1.0) ** 2 + 0.3 * pts[:, 0]
        return float(v[0]) if x.ndim == 1 else v

    from lapmc.model import LogLikelihood

    lk = LogLikelihood(phi=phi, dim=1)
    post = ScaledPosterior(lk, GaussianPrior([0.0], [[4.0]]), 50.0)
    res = find_map(post, starts=6, seed=3)
    assert res.converged
    assert res.x[0] < 0  # the 0.3 x tilt favors the left well
