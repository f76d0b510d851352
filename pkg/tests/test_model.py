"""Priors, misfits, and the calibrated posterior density."""
import numpy as np
import pytest

from lapmc.forward import AlgebraicModel
from lapmc.model import (
    GaussianPrior,
    LogLikelihood,
    NotCalibratedError,
    ScaledPosterior,
    UniformBoxPrior,
    gaussian_misfit,
)
from lapmc.optimize import fd_gradient, fd_hessian, find_map


# ---------------------------------------------------------------------------
# priors


def test_box_prior_density_is_normalized():
    prior = UniformBoxPrior([-1.0, 0.0], [1.0, 4.0])
    assert prior.log_density(np.array([0.0, 2.0])) == pytest.approx(-np.log(8.0))
    assert prior.log_density(np.array([2.0, 2.0])) == -np.inf
    np.testing.assert_allclose(prior.center, [0.0, 2.0])


def test_box_prior_rejects_empty_box():
    with pytest.raises(ValueError):
        UniformBoxPrior([0.0, 0.0], [1.0, 0.0])
    with pytest.raises(ValueError):
        UniformBoxPrior([0.0], [1.0, 2.0])


def test_box_prior_contains_batches():
    prior = UniformBoxPrior([-0.5], [0.5])
    pts = np.array([[0.0], [0.5], [0.51]])
    np.testing.assert_array_equal(prior.contains(pts), [True, True, False])


def test_box_projection_clips():
    prior = UniformBoxPrior([-0.5, -0.5], [0.5, 0.5])
    proj = prior.projection()
    np.testing.assert_allclose(proj(np.array([3.0, -0.2])), [0.5, -0.2])


def test_box_sampling_stays_inside():
    prior = UniformBoxPrior([-2.0, 1.0], [-1.0, 3.0])
    draws = prior.sample(1000, np.random.default_rng(0))
    assert draws.shape == (1000, 2)
    assert np.all(prior.contains(draws))


def test_gaussian_prior_log_density_matches_formula():
    cov = np.array([[2.0, 0.5], [0.5, 1.0]])
    mean = np.array([1.0, -1.0])
    prior = GaussianPrior(mean, cov)
    x = np.array([0.3, 0.7])
    delta = x - mean
    expected = -0.5 * (
        2.0 * np.log(2.0 * np.pi)
        + np.log(np.linalg.det(cov))
        + delta @ np.linalg.solve(cov, delta)
    )
    assert prior.log_density(x) == pytest.approx(expected, rel=1e-13)
    batch = prior.log_density(np.stack([x, mean]))
    assert batch.shape == (2,)
    assert batch[0] == pytest.approx(expected, rel=1e-13)


def test_gaussian_prior_validates_covariance():
    with pytest.raises(ValueError):
        GaussianPrior([0.0, 0.0], [[1.0, 0.2], [0.3, 1.0]])  # not symmetric
    with pytest.raises(ValueError):
        GaussianPrior([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])  # indefinite
    with pytest.raises(ValueError):
        GaussianPrior([0.0], np.eye(2))


def test_gaussian_prior_sample_moments():
    cov = np.array([[1.0, 0.6], [0.6, 2.0]])
    prior = GaussianPrior([3.0, -2.0], cov)
    draws = prior.sample(200_000, np.random.default_rng(11))
    np.testing.assert_allclose(draws.mean(axis=0), [3.0, -2.0], atol=0.02)
    np.testing.assert_allclose(np.cov(draws.T), cov, atol=0.03)


def test_gaussian_prior_neg_log_derivatives():
    cov = np.array([[1.5, -0.3], [-0.3, 0.8]])
    prior = GaussianPrior([0.5, 0.5], cov)
    x = np.array([1.2, -0.4])
    np.testing.assert_allclose(
        prior.grad_neg_log(x), np.linalg.solve(cov, x - prior.mean), rtol=1e-12
    )
    np.testing.assert_allclose(prior.hess_neg_log(x), np.linalg.inv(cov), rtol=1e-12)


# ---------------------------------------------------------------------------
# gaussian_misfit


def test_misfit_value_is_half_squared_residual():
    model = AlgebraicModel(2)
    lk = gaussian_misfit(model, model.data(), model.noise_cov())
    x = np.array([0.1, -0.2])
    r = model.data() - model(x)
    assert lk.phi(x) == pytest.approx(0.5 * r @ r / 0.1, rel=1e-12)


def test_misfit_batch_matches_row_loop():
    model = AlgebraicModel(3)
    lk = gaussian_misfit(model, model.data(), model.noise_cov())
    pts = np.random.default_rng(5).uniform(-0.5, 0.5, size=(40, 3))
    batch = lk.phi(pts)
    rows = np.array([lk.phi(p) for p in pts])
    np.testing.assert_allclose(batch, rows, rtol=1e-14)


@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_misfit_analytic_derivatives_match_fd(d):
    model = AlgebraicModel(d)
    lk = gaussian_misfit(model, model.data(), model.noise_cov())
    rng = np.random.default_rng(d)
    for _ in range(5):
        x = rng.uniform(-0.4, 0.4, size=d)
        g_fd = fd_gradient(lk.phi, x)
        g = lk.gradient(x)
        assert np.linalg.norm(g - g_fd) <= 1e-5 * (1.0 + np.linalg.norm(g_fd))
        H_fd = fd_hessian(lk.phi, x)
        H = lk.hessian(x)
        assert np.max(np.abs(H - H_fd)) <= 1e-4 * (1.0 + np.max(np.abs(H_fd)))


def test_misfit_rejects_mismatched_noise_shape():
    model = AlgebraicModel(2)
    with pytest.raises(ValueError):
        gaussian_misfit(model, model.data(), np.eye(3))


# ---------------------------------------------------------------------------
# ScaledPosterior


def _calibrated(d=1, n=100.0):
    model = AlgebraicModel(d)
    lk = gaussian_misfit(model, model.data(), model.noise_cov())
    prior = UniformBoxPrior(np.full(d, -0.5), np.full(d, 0.5))
    post = ScaledPosterior(lk, prior, n)
    res = find_map(post)
    return post, res


def test_posterior_validates_inputs():
    model = AlgebraicModel(2)
    lk = gaussian_misfit(model, model.data(), model.noise_cov())
    with pytest.raises(ValueError):
        ScaledPosterior(lk, UniformBoxPrior([-0.5], [0.5]), 10.0)
    with pytest.raises(ValueError):
        ScaledPosterior(lk, UniformBoxPrior([-0.5] * 2, [0.5] * 2), 0.0)


def test_density_requires_calibration():
    model = AlgebraicModel(1)
    lk = gaussian_misfit(model, model.data(), model.noise_cov())
    post = ScaledPosterior(lk, UniformBoxPrior([-0.5], [0.5]), 10.0)
    with pytest.raises(NotCalibratedError):
        post.neg_log_post(np.array([0.0]))
    with pytest.raises(NotCalibratedError):
        post.log_unnorm_density(np.array([0.0]))


def test_density_peaks_at_one_at_the_map():
    post, res = _calibrated(d=2)
    assert abs(post.log_unnorm_density(res.x)) < 1e-10
    rng = np.random.default_rng(1)
    pts = rng.uniform(-0.5, 0.5, size=(200, 2))
    assert np.all(post.log_unnorm_density(pts) <= 1e-10)


def test_density_batch_matches_single_points():
    post, _ = _calibrated(d=2)
    pts = np.random.default_rng(2).uniform(-0.5, 0.5, size=(20, 2))
    batch = post.log_unnorm_density(pts)
    single = np.array([post.log_unnorm_density(p) for p in pts])
    np.testing.assert_allclose(batch, single, rtol=1e-12, atol=1e-12)


def test_density_vanishes_outside_support():
    post, _ = _calibrated(d=1)
    assert post.log_unnorm_density(np.array([0.7])) == -np.inf
    batch = post.log_unnorm_density(np.array([[0.0], [0.7]]))
    assert np.isfinite(batch[0]) and batch[1] == -np.inf
    assert post.objective(np.array([0.7])) == np.inf


def test_calibrated_density_ignores_constant_misfit_shift():
    """Adding a constant to Phi must not change the calibrated density."""
    model = AlgebraicModel(1)
    base = gaussian_misfit(model, model.data(), model.noise_cov())
    shifted = LogLikelihood(
        phi=lambda x: base.phi(x) + 17.0,
        dim=1,
        gradient=base.gradient,
        hessian=base.hessian,
    )
    prior = UniformBoxPrior([-0.5], [0.5])
    pts = np.linspace(-0.4, 0.4, 9)[:, None]
    out = []
    for lk in (base, shifted):
        post = ScaledPosterior(lk, prior, 50.0)
        find_map(post)
        out.append(post.log_unnorm_density(pts))
    np.testing.assert_allclose(out[0], out[1], atol=1e-9)


def test_fd_fallback_matches_analytic_derivatives():
    model = AlgebraicModel(2)
    full = gaussian_misfit(model, model.data(), model.noise_cov())
    bare = LogLikelihood(phi=full.phi, dim=2)  # no analytic derivatives
    prior = UniformBoxPrior([-0.5] * 2, [0.5] * 2)
    x = np.array([0.1, 0.2])
    pa = ScaledPosterior(full, prior, 30.0)
    pb = ScaledPosterior(bare, prior, 30.0)
    np.testing.assert_allclose(
        pa.grad_neg_log_post(x), pb.grad_neg_log_post(x), rtol=1e-6, atol=1e-8
    )
    np.testing.assert_allclose(
        pa.hess_neg_log_post(x), pb.hess_neg_log_post(x), rtol=1e-4, atol=1e-5
    )


def test_calibration_token_changes_each_time():
    post, res = _calibrated()
    first = post.calibration_token
    post.calibrate(res.x)
    assert post.calibration_token is not first


def test_calibrate_rejects_points_outside_support():
    model = AlgebraicModel(1)
    lk = gaussian_misfit(model, model.data(), model.noise_cov())
    post = ScaledPosterior(lk, UniformBoxPrior([-0.5], [0.5]), 10.0)
    with pytest.raises(ValueError):
        post.calibrate(np.array([0.9]))
