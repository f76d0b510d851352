"""Gaussian (Laplace) approximation of a scaled posterior at its MAP point.

With A = Hess I_n(x_n) the approximation is N(x_n, (nA)^{-1}) and its
unnormalized density exp(-n T_n), T_n(x) = 0.5 (x - x_n)^T A (x - x_n),
integrates to tilde_Z = (2 pi / n)^{d/2} det(A)^{-1/2}.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .model import LOG_2PI, GaussianPrior, ScaledPosterior


class SingularHessian(RuntimeError):
    """MAP Hessian is not positive definite; carries ``smallest_eigenvalue``."""

    def __init__(self, message: str, smallest_eigenvalue: float):
        super().__init__(message)
        self.smallest_eigenvalue = smallest_eigenvalue


@dataclass(frozen=True)
class LaplaceApprox:
    """Frozen Gaussian approximation N(mean, precision^{-1} / n)."""

    mean: np.ndarray
    precision_factor: np.ndarray  # lower Cholesky factor L with A = L L^T
    n: float
    log_det_Cn: float
    log_tilde_Z: float
    calibration_token: object
    gaussian_identity_gap: float | None = None

    @property
    def dim(self):
        return self.mean.size

    @property
    def tilde_Z(self):
        return float(np.exp(self.log_tilde_Z))

    def _quadratic(self, x):
        """T_n(x) for one point (d,) or a batch (N, d)."""
        delta = np.asarray(x, dtype=float) - self.mean
        q = 0.5 * np.sum(np.square(np.atleast_2d(delta) @ self.precision_factor), axis=1)
        return float(q[0]) if np.ndim(x) == 1 else q

    def log_density(self, x):
        """Normalized Gaussian log-density of N(mean, (n A)^{-1})."""
        const = -0.5 * (self.dim * LOG_2PI + self.log_det_Cn - self.dim * np.log(self.n))
        return const - self.n * self._quadratic(x)

    def log_density_unnorm(self, x):
        """log exp(-n T_n(x)); integrates to tilde_Z over R^d."""
        return -self.n * self._quadratic(x)

    def sample(self, count, rng):
        xi = rng.standard_normal((self.dim, count))
        w = solve_triangular(self.precision_factor, xi, lower=True, trans="T")
        return self.mean + w.T / np.sqrt(self.n)

    def log_ratio_unnormalized(self, posterior, x):
        """log of [exp(-n I_n) / exp(-n T_n)] = -n R_n, elementwise over a batch.

        The posterior must carry the same calibration token this approximation
        was built from; a stale token means iota_n changed underneath us.
        """
        if posterior.calibration_token is not self.calibration_token:
            raise ValueError(
                "posterior calibration changed since this Laplace approximation "
                "was built; rebuild it from the current MAP result"
            )
        return posterior.log_unnorm_density(x) - self.log_density_unnorm(x)


def build_laplace(posterior: ScaledPosterior, map_result) -> LaplaceApprox:
    """Assemble the Laplace approximation from a converged MAP result.

    Raises :class:`SingularHessian` when Hess I_n(x_n) has no Cholesky factor.
    """
    posterior._require_calibrated()
    x_n = np.asarray(map_result.x, dtype=float)
    A = map_result.hessian
    if A is None:
        A = posterior.hess_neg_log_post(x_n)
    A = np.asarray(A, dtype=float)
    A = 0.5 * (A + A.T)
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        lam_min = float(np.linalg.eigvalsh(A)[0])
        raise SingularHessian(
            f"MAP Hessian is singular or indefinite (smallest eigenvalue "
            f"{lam_min:.3e}); the Gaussian approximation is undefined here",
            smallest_eigenvalue=lam_min,
        ) from None
    d = x_n.size
    log_det_Cn = -2.0 * float(np.sum(np.log(np.diag(L))))
    log_tilde_Z = -0.5 * d * np.log(posterior.n) + 0.5 * (d * LOG_2PI + log_det_Cn)

    gap = None
    if isinstance(posterior.prior, GaussianPrior) and posterior.likelihood.hessian is not None:
        expected = (
            np.asarray(posterior.likelihood.hessian(x_n), dtype=float)
            + np.linalg.inv(posterior.prior.cov) / posterior.n
        )
        gap = float(np.max(np.abs(A - 0.5 * (expected + expected.T))))

    return LaplaceApprox(
        mean=x_n.copy(),
        precision_factor=L,
        n=posterior.n,
        log_det_Cn=log_det_Cn,
        log_tilde_Z=float(log_tilde_Z),
        calibration_token=posterior.calibration_token,
        gaussian_identity_gap=gap,
    )


def concentration_probe(posterior, laplace, radius, count, seed=0):
    """Posterior mass outside the ball ||x - x_n|| > radius, by self-normalized IS.

    Samples the Laplace approximation and reweights to the posterior; the
    returned mass sits in [0, 1].
    """
    from .importance import laplace_proposal, snis

    rng = np.random.default_rng(seed)
    r2 = float(radius) ** 2

    def outside(x):
        return (np.sum(np.square(x - laplace.mean), axis=1) > r2).astype(float)

    res = snis(posterior, laplace_proposal(laplace), outside, count, rng)
    return float(min(max(res.estimate, 0.0), 1.0))
