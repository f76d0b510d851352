"""Priors, misfit functionals, and the scaled posterior family.

The central object is :class:`ScaledPosterior`, the measure with unnormalized
density exp(-n * Phi(x)) against a prior. Everything downstream works with the
shifted rate functional

    I_n(x) = Phi(x) - (1/n) log pi_0(x) - iota_n,

where the constant iota_n is chosen so that I_n vanishes at the MAP point.
Calibrating iota_n requires the MAP point, so the posterior starts out
uncalibrated and is stamped by the optimizer.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))


class NotCalibratedError(RuntimeError):
    """Raised when a density is requested before the MAP calibration ran."""


def _as_point(x, dim):
    x = np.asarray(x, dtype=float)
    if x.shape != (dim,):
        raise ValueError(f"expected a point of shape ({dim},), got {x.shape}")
    return x


class UniformBoxPrior:
    """Uniform prior on a closed axis-aligned box.

    Parameters
    ----------
    lower, upper : array_like
        Box corners with ``lower < upper`` componentwise.
    """

    kind = "UniformBox"

    def __init__(self, lower, upper):
        self.lower = np.atleast_1d(np.asarray(lower, dtype=float))
        self.upper = np.atleast_1d(np.asarray(upper, dtype=float))
        if self.lower.shape != self.upper.shape or self.lower.ndim != 1:
            raise ValueError("lower and upper must be 1-d arrays of equal length")
        if not np.all(self.lower < self.upper):
            raise ValueError("box must have positive volume in every coordinate")
        self.dim = self.lower.size
        self._log_vol = float(np.sum(np.log(self.upper - self.lower)))

    @property
    def center(self):
        return 0.5 * (self.lower + self.upper)

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lower) & (x <= self.upper), axis=-1)

    def log_density(self, x):
        inside = self.contains(x)
        out = np.where(inside, -self._log_vol, -np.inf)
        return float(out) if np.ndim(out) == 0 else out

    def sample(self, count, rng):
        return rng.uniform(self.lower, self.upper, size=(count, self.dim))

    def projection(self):
        lo, hi = self.lower, self.upper
        return lambda x: np.clip(x, lo, hi)

    def grad_neg_log(self, x):
        # constant density inside the box; MAP search assumes interior points
        return np.zeros(self.dim)

    def hess_neg_log(self, x):
        return np.zeros((self.dim, self.dim))


class GaussianPrior:
    """Gaussian prior N(mean, cov) with an SPD covariance."""

    kind = "Gaussian"

    def __init__(self, mean, cov):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 0:
            cov = cov.reshape(1, 1)
        if cov.shape != (self.mean.size, self.mean.size):
            raise ValueError("covariance shape does not match the mean")
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-12):
            raise ValueError("covariance must be symmetric")
        self.cov = 0.5 * (cov + cov.T)
        try:
            self._chol = np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError as err:
            raise ValueError("covariance must be positive definite") from err
        self.dim = self.mean.size
        self._log_norm = -0.5 * (
            self.dim * LOG_2PI + 2.0 * float(np.sum(np.log(np.diag(self._chol))))
        )

    @property
    def center(self):
        return self.mean.copy()

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1]
        return np.ones(shape, dtype=bool) if shape else True

    def log_density(self, x):
        x = np.asarray(x, dtype=float)
        delta = x - self.mean
        w = np.linalg.solve(self._chol, np.atleast_2d(delta).T)
        q = np.sum(w * w, axis=0)
        out = self._log_norm - 0.5 * q
        return float(out[0]) if x.ndim == 1 else out

    def sample(self, count, rng):
        z = rng.standard_normal((count, self.dim))
        return self.mean + z @ self._chol.T

    def projection(self):
        return None

    def grad_neg_log(self, x):
        return np.linalg.solve(self.cov, np.asarray(x, dtype=float) - self.mean)

    def hess_neg_log(self, x):
        return np.linalg.inv(self.cov)


@dataclass(frozen=True)
class LogLikelihood:
    """Misfit functional Phi with optional analytic derivatives.

    ``phi`` maps a point of shape (d,) to a float; implementations may also
    accept stacked points of shape (N, d) and return shape (N,). Missing
    derivatives fall back to finite differences inside the posterior.
    """

    phi: Callable
    dim: int
    gradient: Callable | None = None
    hessian: Callable | None = None


def gaussian_misfit(forward, data, noise_cov, dim=None):
    """Build the misfit Phi(x) = 0.5 * ||data - forward(x)||^2 in the noise metric.

    If ``forward`` exposes ``jacobian(x)`` the gradient -J^T Gamma^{-1} r is
    analytic; if it additionally exposes ``component_hessians(x)`` the exact
    Hessian J^T Gamma^{-1} J - sum_i (Gamma^{-1} r)_i H_i is used.
    """
    data = np.atleast_1d(np.asarray(data, dtype=float))
    noise_cov = np.asarray(noise_cov, dtype=float)
    if noise_cov.ndim == 0:
        noise_cov = noise_cov.reshape(1, 1)
    if noise_cov.shape != (data.size, data.size):
        raise ValueError("noise covariance shape does not match the data")
    gamma_chol = np.linalg.cholesky(noise_cov)
    if dim is None:
        dim = getattr(forward, "dim")

    def phi(x):
        x = np.asarray(x, dtype=float)
        fx = np.asarray(forward(x), dtype=float)
        r = data - fx
        w = np.linalg.solve(gamma_chol, np.atleast_2d(r).T)
        q = 0.5 * np.sum(w * w, axis=0)
        return float(q[0]) if x.ndim == 1 else q

    gradient = None
    hessian = None
    jac = getattr(forward, "jacobian", None)
    if jac is not None:
        def gradient(x):
            r = data - np.asarray(forward(x), dtype=float)
            J = np.asarray(jac(x), dtype=float)
            s = np.linalg.solve(noise_cov, r)
            return -J.T @ s

        comp = getattr(forward, "component_hessians", None)
        if comp is not None:
            def hessian(x):
                r = data - np.asarray(forward(x), dtype=float)
                J = np.asarray(jac(x), dtype=float)
                s = np.linalg.solve(noise_cov, r)
                H = J.T @ np.linalg.solve(noise_cov, J)
                for i, Hi in enumerate(comp(x)):
                    H -= s[i] * np.asarray(Hi, dtype=float)
                return H

    return LogLikelihood(phi=phi, dim=int(dim), gradient=gradient, hessian=hessian)


@dataclass
class ScaledPosterior:
    """The measure proportional to exp(-n Phi) pi_0 at concentration level n."""

    likelihood: LogLikelihood
    prior: UniformBoxPrior | GaussianPrior
    n: float
    iota: float | None = None
    calibration_token: object | None = None
    _fd_scale: float = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self):
        if self.likelihood.dim != self.prior.dim:
            raise ValueError("likelihood and prior dimensions disagree")
        if not (self.n > 0):
            raise ValueError("concentration parameter n must be positive")
        self.n = float(self.n)

    @property
    def dim(self):
        return self.likelihood.dim

    def objective(self, x):
        """Uncalibrated rate functional Phi(x) - (1/n) log pi_0(x)."""
        x = _as_point(x, self.dim)
        lp = self.prior.log_density(x)
        if lp == -np.inf:
            return np.inf
        return float(self.likelihood.phi(x)) - lp / self.n

    def calibrate(self, x_map):
        """Fix iota_n = objective(x_map) so that I_n(x_map) = 0 exactly."""
        x_map = _as_point(x_map, self.dim)
        value = self.objective(x_map)
        if not np.isfinite(value):
            raise ValueError("calibration point has non-finite objective value")
        self.iota = float(value)
        self.calibration_token = object()
        return self.calibration_token

    def _require_calibrated(self):
        if self.iota is None:
            raise NotCalibratedError(
                "posterior is not calibrated; run find_map(posterior) first"
            )

    def neg_log_post(self, x):
        """Calibrated rate functional I_n(x); zero at the MAP point."""
        self._require_calibrated()
        return self.objective(x) - self.iota

    def grad_neg_log_post(self, x):
        """Gradient of I_n at a single point. Works before calibration."""
        x = _as_point(x, self.dim)
        lk = self.likelihood
        if lk.gradient is not None:
            g_phi = np.asarray(lk.gradient(x), dtype=float)
        else:
            from .optimize import fd_gradient

            g_phi = fd_gradient(lk.phi, x)
        return g_phi + self.prior.grad_neg_log(x) / self.n

    def hess_neg_log_post(self, x):
        """Hessian of I_n at a single point. Works before calibration."""
        x = _as_point(x, self.dim)
        lk = self.likelihood
        if lk.hessian is not None:
            H_phi = np.asarray(lk.hessian(x), dtype=float)
        else:
            from .optimize import fd_hessian

            H_phi = fd_hessian(lk.phi, x)
        return H_phi + self.prior.hess_neg_log(x) / self.n

    def log_unnorm_density(self, x):
        """log of exp(-n I_n(x)) for one point (d,) or a batch (N, d)."""
        self._require_calibrated()
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            v = self.neg_log_post(x)
            return -self.n * v if np.isfinite(v) else -np.inf
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ValueError(f"expected shape (N, {self.dim}), got {x.shape}")
        phi_vals = self._phi_batch(x)
        lp = self.prior.log_density(x)
        out = np.where(
            np.isneginf(lp),
            -np.inf,
            -self.n * (phi_vals - lp / self.n - self.iota),
        )
        return out

    def _phi_batch(self, x):
        try:
            vals = np.asarray(self.likelihood.phi(x), dtype=float)
            if vals.shape == (x.shape[0],):
                return vals
        except Exception:
            pass
        return np.array([float(self.likelihood.phi(row)) for row in x])
