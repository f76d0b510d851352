"""Forward models for the numerical experiments.

Two families: a closed-form algebraic map in up to four variables, and a 1-d
elliptic two-point boundary value problem with a log-expanded diffusion
coefficient, discretized by linear finite elements.
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import solveh_banded

ALGEBRAIC_TRUTH = 0.25
ALGEBRAIC_NOISE = 0.1
ELLIPTIC_NOISE = 0.01
ELLIPTIC_OBS_SMALL = (0.25, 0.75)
ELLIPTIC_OBS_LARGE = (0.125, 0.25, 0.375, 0.6125, 0.75, 0.875)


class AlgebraicModel:
    """Component map F(x) = (e^{x1/5}, x2 - x1^2, x3, 2 x4 + x1^2) truncated to d.

    The map is a diffeomorphism near the origin for every d <= 4, with
    analytic Jacobian and componentwise Hessians, so posteriors built on it
    exercise the exact-derivative code paths.
    """

    def __init__(self, d):
        if not (1 <= d <= 4):
            raise ValueError("the algebraic model is defined for d in {1, 2, 3, 4}")
        self.dim = int(d)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        pts = np.atleast_2d(x)
        if pts.shape[1] != self.dim:
            raise ValueError(f"expected points in R^{self.dim}")
        cols = [np.exp(pts[:, 0] / 5.0)]
        if self.dim >= 2:
            cols.append(pts[:, 1] - pts[:, 0] ** 2)
        if self.dim >= 3:
            cols.append(pts[:, 2])
        if self.dim >= 4:
            cols.append(2.0 * pts[:, 3] + pts[:, 0] ** 2)
        out = np.column_stack(cols)
        return out[0] if squeeze else out

    def jacobian(self, x):
        x = np.asarray(x, dtype=float)
        d = self.dim
        J = np.zeros((d, d))
        J[0, 0] = np.exp(x[0] / 5.0) / 5.0
        if d >= 2:
            J[1, 0] = -2.0 * x[0]
            J[1, 1] = 1.0
        if d >= 3:
            J[2, 2] = 1.0
        if d >= 4:
            J[3, 0] = 2.0 * x[0]
            J[3, 3] = 2.0
        return J

    def component_hessians(self, x):
        x = np.asarray(x, dtype=float)
        d = self.dim
        hs = [np.zeros((d, d)) for _ in range(d)]
        hs[0][0, 0] = np.exp(x[0] / 5.0) / 25.0
        if d >= 2:
            hs[1][0, 0] = -2.0
        if d >= 4:
            hs[3][0, 0] = 2.0
        return hs

    def truth(self):
        return np.full(self.dim, ALGEBRAIC_TRUTH)

    def data(self):
        """Noise-free observation at the reference point 0.25 * ones."""
        return self(self.truth())

    def noise_cov(self):
        return ALGEBRAIC_NOISE * np.eye(self.dim)


class EllipticModel:
    """P1 finite element solver for -(a(x,t) q'(t))' = 100 t on (0, 1), q(0)=q(1)=0.

    The diffusion coefficient is a(x, t) = exp(sum_k x_k psi_k(t)) with modes
    psi_k(t) = (0.1 / k) sin(k pi t). Observations are point values of q; the
    quantity of interest is q(1/2). The coefficient is sampled at element
    midpoints and the load integrals are exact for the linear source.
    """

    def __init__(self, d, mesh_size=1024):
        if d < 1:
            raise ValueError("need at least one coefficient")
        if mesh_size < 64:
            raise ValueError("mesh_size must be at least 64")
        self.dim = int(d)
        self.M = int(mesh_size)
        self.nodes = np.linspace(0.0, 1.0, self.M + 1)
        self._mid = 0.5 * (self.nodes[:-1] + self.nodes[1:])
        k = np.arange(1, self.dim + 1)[:, None]
        # rows: psi_k at element midpoints
        self._psi_mid = (0.1 / k) * np.sin(k * np.pi * self._mid[None, :])
        self.obs_points = np.asarray(
            ELLIPTIC_OBS_SMALL if self.dim <= 2 else ELLIPTIC_OBS_LARGE, dtype=float
        )
        self.out_dim = self.obs_points.size

    def solve(self, x):
        """Nodal solution values, shape (M + 1,)."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"expected a coefficient vector of shape ({self.dim},)")
        h = 1.0 / self.M
        a_mid = np.exp(x @ self._psi_mid)
        diag = (a_mid[:-1] + a_mid[1:]) / h
        off = -a_mid[1:-1] / h
        ab = np.zeros((2, self.M - 1))
        ab[0, 1:] = off
        ab[1, :] = diag
        load = 100.0 * self.nodes[1:-1] * h  # exact for the linear source
        interior = solveh_banded(ab, load, lower=False)
        q = np.zeros(self.M + 1)
        q[1:-1] = interior
        return q

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            return np.vstack([self(row) for row in x])
        q = self.solve(x)
        return np.interp(self.obs_points, self.nodes, q)

    def qoi(self, x):
        """Solution value q(1/2); a node for every even mesh size."""
        q = self.solve(np.asarray(x, dtype=float))
        return float(np.interp(0.5, self.nodes, q))

    def truth(self):
        return np.full(self.dim, ALGEBRAIC_TRUTH)

    def data(self):
        """Noise-free observation at the reference point 0.25 * ones."""
        return self(self.truth())

    def noise_cov(self):
        return ELLIPTIC_NOISE * np.eye(self.out_dim)
