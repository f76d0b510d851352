"""Experiment drivers and the command line interface.

Each experiment family bundles a misfit, a prior, a default integrand and,
where available, a deterministic high-accuracy reference for E_posterior[f].
The drivers sweep the concentration parameter n, write delimited rate tables
with a fitted slope footer, render a log-log figure next to each table, and
append a human-readable summary.
"""
from __future__ import annotations

import argparse
import configparser
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.special import ndtr

from .forward import AlgebraicModel, EllipticModel
from .importance import DegenerateWeightsError, run_is_sweep
from .laplace import LaplaceApprox, SingularHessian, build_laplace
from .metrics import (
    GridSpec,
    ZeroMassError,
    fit_rate,
    gaussian_hellinger,
    hellinger_numeric,
    write_rate_csv,
)
from .model import (
    GaussianPrior,
    LogLikelihood,
    ScaledPosterior,
    UniformBoxPrior,
    gaussian_misfit,
)
from .optimize import EvaluationError, OptimizationError, find_map
from .qmc import (
    UnsupportedPriorError,
    VectorFormatError,
    lattice_rule,
    load_generating_vector,
    qmc_gaussian_prior_estimate,
    qmc_laplace_estimate,
    qmc_prior_estimate,
    qmc_shift_rmse,
)

DEFAULT_VECTOR = Path(__file__).parent / "data" / "lattice_cbc_d8_m14.txt"


class ConfigError(ValueError):
    """Bad experiment configuration (unknown key, malformed value, ...)."""


# ---------------------------------------------------------------------------
# misfit builders


def quadratic_misfit(A, a) -> LogLikelihood:
    """Phi(x) = 0.5 (x - a)^T A (x - a) with exact derivatives."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    a = np.atleast_1d(np.asarray(a, dtype=float))

    def phi(x):
        delta = np.atleast_2d(np.asarray(x, dtype=float)) - a
        vals = 0.5 * np.sum((delta @ A) * delta, axis=1)
        return float(vals[0]) if np.ndim(x) == 1 else vals

    return LogLikelihood(
        phi=phi,
        dim=a.size,
        gradient=lambda x: A @ (np.asarray(x, dtype=float) - a),
        hessian=lambda x: A.copy(),
    )


def cubic_perturbed(curvature=1.0, eps=0.1, center=1.0):
    """Scalar map m(delta) = 0.5 k delta^2 + e delta^3, linearized where it bends.

    Below delta* = -k / (6 e) the cubic loses convexity, so the function is
    continued linearly (C^1) from that point; the minimum at delta = 0 and all
    derivatives near it are untouched.
    """
    k, e = float(curvature), float(eps)
    if k <= 0 or e <= 0:
        raise ValueError("curvature and eps must be positive")
    ds = -k / (6.0 * e)
    vs = 0.5 * k * ds * ds + e * ds**3
    ss = k * ds + 3.0 * e * ds * ds  # slope at the junction, negative

    def value(delta):
        delta = np.asarray(delta, dtype=float)
        return np.where(
            delta >= ds, 0.5 * k * delta**2 + e * delta**3, vs + ss * (delta - ds)
        )

    def deriv(delta):
        delta = np.asarray(delta, dtype=float)
        return np.where(delta >= ds, k * delta + 3.0 * e * delta**2, ss)

    def second(delta):
        delta = np.asarray(delta, dtype=float)
        return np.where(delta >= ds, k + 6.0 * e * delta, 0.0)

    c = float(center)
    return value, deriv, second, c


def cubic_misfit(curvatures, epsilons, centers) -> LogLikelihood:
    """Separable sum of convexified cubics, one per coordinate."""
    parts = [
        cubic_perturbed(k, e, c) for k, e, c in zip(curvatures, epsilons, centers)
    ]
    d = len(parts)

    def phi(x):
        x = np.asarray(x, dtype=float)
        pts = np.atleast_2d(x)
        total = np.zeros(pts.shape[0])
        for j, (value, _, _, c) in enumerate(parts):
            total += value(pts[:, j] - c)
        return float(total[0]) if x.ndim == 1 else total

    def gradient(x):
        x = np.asarray(x, dtype=float)
        return np.array([p[1](x[j] - p[3]) for j, p in enumerate(parts)], dtype=float)

    def hessian(x):
        x = np.asarray(x, dtype=float)
        return np.diag([float(p[2](x[j] - p[3])) for j, p in enumerate(parts)])

    return LogLikelihood(phi=phi, dim=d, gradient=gradient, hessian=hessian)


def _misfit_2d_parabola() -> LogLikelihood:
    """Phi(x) = (x2 - x1^2)^2; the zero set is a curve, so the MAP Hessian of
    the bare misfit is singular and only the prior term keeps it invertible."""

    def phi(x):
        x = np.asarray(x, dtype=float)
        pts = np.atleast_2d(x)
        r = pts[:, 1] - pts[:, 0] ** 2
        return float(r[0] ** 2) if x.ndim == 1 else r**2

    def gradient(x):
        x = np.asarray(x, dtype=float)
        r = x[1] - x[0] ** 2
        return np.array([-4.0 * x[0] * r, 2.0 * r])

    def hessian(x):
        x = np.asarray(x, dtype=float)
        r = x[1] - x[0] ** 2
        return np.array(
            [[8.0 * x[0] ** 2 - 4.0 * r, -4.0 * x[0]], [-4.0 * x[0], 2.0]]
        )

    return LogLikelihood(phi=phi, dim=2, gradient=gradient, hessian=hessian)


def _misfit_2d_ridge() -> LogLikelihood:
    """Phi(x) = (pi/2 - e^{s/5})^2 + (1/2 - sin s)^2 with s = x2 - x1.

    Constant along the diagonal, so the misfit Hessian has rank one; the
    Gaussian prior selects a unique minimizer on the ridge.
    """
    y1, y2 = 0.5 * np.pi, 0.5

    def parts(s):
        r1 = y1 - np.exp(s / 5.0)
        r2 = y2 - np.sin(s)
        return r1, r2

    def phi(x):
        x = np.asarray(x, dtype=float)
        pts = np.atleast_2d(x)
        r1, r2 = parts(pts[:, 1] - pts[:, 0])
        vals = r1**2 + r2**2
        return float(vals[0]) if x.ndim == 1 else vals

    def dphi_ds(s):
        r1, r2 = parts(s)
        return -0.4 * r1 * np.exp(s / 5.0) - 2.0 * r2 * np.cos(s)

    def d2phi_ds2(s):
        r1, r2 = parts(s)
        return (
            0.08 * np.exp(2.0 * s / 5.0)
            - 0.04 * r1 * np.exp(s / 5.0)
            + 2.0 * np.cos(s) ** 2
            + 2.0 * r2 * np.sin(s)
        )

    def gradient(x):
        s = float(x[1] - x[0])
        g = dphi_ds(s)
        return np.array([-g, g])

    def hessian(x):
        s = float(x[1] - x[0])
        h = d2phi_ds2(s)
        return np.array([[h, -h], [-h, h]])

    return LogLikelihood(phi=phi, dim=2, gradient=gradient, hessian=hessian)


# ---------------------------------------------------------------------------
# experiment families


@dataclass
class Family:
    name: str
    likelihood: LogLikelihood
    prior: UniformBoxPrior | GaussianPrior
    f: object = None
    reference: object = None  # callable n -> float
    n_default: tuple = (10.0, 100.0, 1000.0, 10000.0)
    grid_for: object = None  # callable (laplace) -> GridSpec
    wrong_cov: np.ndarray | None = None
    forward: object = None

    @property
    def dim(self):
        return self.likelihood.dim


def _sum_f(x):
    return np.sum(np.atleast_2d(np.asarray(x, dtype=float)), axis=1)


def _hellinger_axis(lo, hi, center, sigma, per_sigma=20, halfwidth=12.0, coarse=401):
    """Coarse cover of [lo, hi] refined around center at spacing sigma/per_sigma."""
    base = np.linspace(lo, hi, coarse)
    a = max(lo, center - halfwidth * sigma)
    b = min(hi, center + halfwidth * sigma)
    fine_n = int(np.ceil((b - a) / (sigma / per_sigma))) + 1
    return np.union1d(base, np.linspace(a, b, max(fine_n, 41)))


def _laplace_sigmas(laplace: LaplaceApprox):
    L = laplace.precision_factor
    cov = np.linalg.inv(L @ L.T) / laplace.n
    return np.sqrt(np.diag(cov))


def _default_grid(bounds, per_sigma=20, coarse=401):
    def build(laplace):
        sig = _laplace_sigmas(laplace)
        axes = [
            _hellinger_axis(lo, hi, laplace.mean[k], sig[k], per_sigma, coarse=coarse)
            for k, (lo, hi) in enumerate(bounds)
        ]
        return GridSpec(axes)

    return build


def algebraic_reference(d, n):
    """Posterior mean of sum(x) for the algebraic family, by 1-d quadrature.

    The misfit is separable given x1: each remaining coordinate is a Gaussian
    in one variable truncated to the box, so its mass and mean are normal-CDF
    expressions and only the x1 marginal needs numerical integration.
    """
    model = AlgebraicModel(d)
    y = model.data()
    n = float(n)
    t = np.linspace(-0.5, 0.5, 100_001)
    log_rho = -5.0 * n * (np.atleast_1d(y)[0] - np.exp(t / 5.0)) ** 2
    cond_mean = np.zeros_like(t)

    def trunc(m, var):
        s = np.sqrt(var)
        alpha, beta = (-0.5 - m) / s, (0.5 - m) / s
        mass = ndtr(beta) - ndtr(alpha)
        pdf = lambda z: np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)
        mean = m + s * (pdf(alpha) - pdf(beta)) / mass
        return mass, mean

    if d >= 2:
        mass, mean = trunc(y[1] + t**2, 1.0 / (10.0 * n))
        log_rho = log_rho + np.log(mass)
        cond_mean = cond_mean + mean
    if d >= 3:
        mass, mean = trunc(np.full_like(t, y[2]), 1.0 / (10.0 * n))
        log_rho = log_rho + np.log(mass)
        cond_mean = cond_mean + mean
    if d >= 4:
        mass, mean = trunc((y[3] - t**2) / 2.0, 1.0 / (40.0 * n))
        log_rho = log_rho + np.log(mass)
        cond_mean = cond_mean + mean
    rho = np.exp(log_rho - np.max(log_rho))
    z = np.trapezoid(rho, t)
    return float(np.trapezoid(rho * (t + cond_mean), t) / z)


def grid_reference(family, n, grid=None):
    """E_posterior[f] by tensor trapezoid quadrature on an adapted grid.

    The grid is refined around the MAP using the Laplace scales; if the MAP
    Hessian is singular (flat directions) a plain uniform grid over the prior
    box is used instead.
    """
    posterior = ScaledPosterior(family.likelihood, family.prior, n)
    map_result = find_map(posterior)
    if grid is None:
        try:
            laplace = build_laplace(posterior, map_result)
            grid = family.grid_for(laplace)
        except SingularHessian:
            if not isinstance(family.prior, UniformBoxPrior):
                raise
            grid = GridSpec(
                [
                    np.linspace(lo, hi, 2001)
                    for lo, hi in zip(family.prior.lower, family.prior.upper)
                ]
            )
    num = den = 0.0
    peak = -np.inf
    for pts, _ in grid.chunks():
        vals = posterior.log_unnorm_density(pts)
        if vals.size:
            peak = max(peak, float(np.max(vals)))
    for pts, w in grid.chunks():
        dens = np.exp(posterior.log_unnorm_density(pts) - peak)
        fv = np.asarray(family.f(pts), dtype=float)
        num += float(w @ (dens * fv))
        den += float(w @ dens)
    if den <= 0.0:
        raise ZeroMassError("posterior mass vanished on the reference grid")
    return num / den


def _gauss_hermite_reference(family, n, nodes=120):
    """E_posterior[f] by tensor Gauss-Hermite in Laplace-whitened coordinates."""
    d = family.dim
    if d > 3:
        raise ConfigError(f"quadrature reference unavailable for dimension {d}")
    posterior = ScaledPosterior(family.likelihood, family.prior, n)
    map_result = find_map(posterior)
    laplace = build_laplace(posterior, map_result)
    u, w = np.polynomial.hermite_e.hermegauss(nodes)
    grids = np.meshgrid(*([u] * d), indexing="ij")
    U = np.column_stack([g.ravel() for g in grids])
    logw = np.zeros(U.shape[0])
    for g in np.meshgrid(*([np.log(w)] * d), indexing="ij"):
        logw += g.ravel()
    from scipy.linalg import solve_triangular

    W = solve_triangular(laplace.precision_factor, U.T, lower=True, trans="T")
    X = laplace.mean + W.T / np.sqrt(laplace.n)
    lp = posterior.log_unnorm_density(X) + 0.5 * np.sum(U * U, axis=1) + logw
    lp -= np.max(lp)
    dens = np.exp(lp)
    fv = np.asarray(family.f(X), dtype=float)
    return float(np.sum(dens * fv) / np.sum(dens))


def build_family(name, d=None, mesh_size=1024) -> Family:
    """Construct a named experiment family; raises ConfigError on bad names."""
    if name == "conjugate":
        fam = Family(
            name=name,
            likelihood=quadratic_misfit([[1.0]], [1.0]),
            prior=GaussianPrior([0.0], [[1.0]]),
            f=_sum_f,
            n_default=(4.0, 16.0, 64.0, 256.0, 1024.0),
            grid_for=_default_grid([(-8.0, 8.0)], per_sigma=60, coarse=1201),
        )
        fam.reference = lambda n: n / (n + 1.0)
        return fam
    if name == "cubic":
        fam = Family(
            name=name,
            likelihood=cubic_misfit([1.0], [0.1], [1.0]),
            prior=GaussianPrior([0.0], [[1.0]]),
            f=_sum_f,
            n_default=tuple(float(4**k) for k in range(1, 6)),
            grid_for=_default_grid([(-10.0, 10.0)], per_sigma=60, coarse=1201),
        )
        fam.reference = lambda n: _gauss_hermite_reference(fam, n)
        return fam
    if name == "wrongcov":
        fam = Family(
            name=name,
            likelihood=cubic_misfit([2.0, 0.5], [0.1, 0.05], [1.0, 1.0]),
            prior=GaussianPrior([0.0, 0.0], 25.0 * np.eye(2)),
            f=_sum_f,
            n_default=(4.0, 16.0, 64.0, 256.0, 1024.0),
            grid_for=_default_grid([(-6.0, 8.0), (-6.0, 8.0)], per_sigma=24),
            wrong_cov=np.eye(2),
        )
        fam.reference = lambda n: _gauss_hermite_reference(fam, n, nodes=80)
        return fam
    if name == "example2d1":
        return Family(
            name=name,
            likelihood=_misfit_2d_parabola(),
            prior=GaussianPrior([0.0, 0.0], np.eye(2)),
            f=_sum_f,
            n_default=(4.0, 16.0, 64.0, 256.0, 1024.0),
            grid_for=_default_grid([(-5.5, 5.5), (-2.0, 10.0)], per_sigma=24),
        )
    if name == "example2d2":
        return Family(
            name=name,
            likelihood=_misfit_2d_ridge(),
            prior=GaussianPrior([0.0, 0.0], np.eye(2)),
            f=_sum_f,
            n_default=(1.0, 4.0, 16.0, 64.0, 256.0, 1024.0),
            grid_for=_default_grid([(-8.0, 8.0), (-8.0, 8.0)], per_sigma=24),
        )
    if name == "algebraic":
        if d is None:
            raise ConfigError("the algebraic family needs a dimension d")
        model = AlgebraicModel(d)
        fam = Family(
            name=name,
            likelihood=gaussian_misfit(model, model.data(), model.noise_cov()),
            prior=UniformBoxPrior(np.full(d, -0.5), np.full(d, 0.5)),
            f=_sum_f,
            n_default=(100.0, 1000.0, 10000.0),
            grid_for=_default_grid([(-0.5, 0.5)] * d, per_sigma=24),
            forward=model,
        )
        fam.reference = lambda n: algebraic_reference(d, n)
        return fam
    if name == "elliptic":
        if d is None:
            raise ConfigError("the elliptic family needs a dimension d")
        model = EllipticModel(d, mesh_size=mesh_size)
        fam = Family(
            name=name,
            likelihood=gaussian_misfit(model, model.data(), model.noise_cov()),
            prior=UniformBoxPrior(np.full(d, -0.5), np.full(d, 0.5)),
            f=lambda x: np.array(
                [model.qoi(row) for row in np.atleast_2d(np.asarray(x, dtype=float))]
            ),
            n_default=(100.0, 1000.0, 10000.0),
            grid_for=_default_grid([(-0.5, 0.5)] * d, per_sigma=24, coarse=101),
            forward=model,
        )
        if d <= 2:
            fam.reference = lambda n: grid_reference(fam, n)
        return fam
    if name == "flat":
        d = 1 if d is None else d
        zero = lambda x: (
            0.0
            if np.asarray(x, dtype=float).ndim == 1
            else np.zeros(np.atleast_2d(x).shape[0])
        )
        fam = Family(
            name=name,
            likelihood=LogLikelihood(
                phi=zero,
                dim=d,
                gradient=lambda x: np.zeros(d),
                hessian=lambda x: np.zeros((d, d)),
            ),
            prior=UniformBoxPrior(np.full(d, -0.5), np.full(d, 0.5)),
            f=lambda x: np.atleast_2d(np.asarray(x, dtype=float))[:, 0],
            grid_for=_default_grid([(-0.5, 0.5)] * d, coarse=101),
        )
        fam.reference = lambda n: grid_reference(fam, n)
        return fam
    raise ConfigError(f"unknown model family {name!r}")


def reference_expectation(family: Family, n):
    """High-accuracy E_posterior[f] for the family, or ConfigError if none exists."""
    if family.reference is None:
        raise ConfigError(
            f"no quadrature reference is available for family {family.name!r}"
        )
    return float(family.reference(n))


# ---------------------------------------------------------------------------
# configuration


_SCHEMA = {
    "experiment": {"seed", "out", "threads"},
    "model": {"name", "d", "mesh_size"},
    "sweep": {
        "n_grid",
        "count",
        "replicates",
        "proposal",
        "shifts",
        "m",
        "tau",
        "generating_vector",
        "drop_first",
    },
}


@dataclass
class ExperimentConfig:
    seed: int = 0
    out: str = "results"
    threads: int = 1
    model_name: str = "algebraic"
    d: int | None = None
    mesh_size: int = 1024
    n_grid: tuple = ()
    count: int = 100_000
    replicates: int = 200
    proposal: str = "both"
    shifts: int = 16
    m: int = 13
    tau: float = 1e-6
    generating_vector: str | None = None
    drop_first: int = 2

    @classmethod
    def from_file(cls, path):
        parser = configparser.ConfigParser()
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as err:
            raise ConfigError(f"cannot read config file {path}: {err}") from err
        except configparser.Error as err:
            raise ConfigError(f"malformed config file {path}: {err}") from err
        cfg = cls()
        for section in parser.sections():
            if section not in _SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            for key, value in parser.items(section):
                if key not in _SCHEMA[section]:
                    raise ConfigError(f"unknown key {key!r} in section [{section}]")
                cfg._assign(section, key, value)
        cfg.validate()
        return cfg

    def _assign(self, section, key, value):
        try:
            if key == "seed":
                self.seed = int(value)
            elif key == "out":
                self.out = value
            elif key == "threads":
                self.threads = int(value)
            elif key == "name":
                self.model_name = value
            elif key == "d":
                self.d = int(value)
            elif key == "mesh_size":
                self.mesh_size = int(value)
            elif key == "n_grid":
                self.n_grid = tuple(float(v) for v in value.split(",") if v.strip())
            elif key == "count":
                self.count = int(value)
            elif key == "replicates":
                self.replicates = int(value)
            elif key == "proposal":
                self.proposal = value
            elif key == "shifts":
                self.shifts = int(value)
            elif key == "m":
                self.m = int(value)
            elif key == "tau":
                self.tau = float(value)
            elif key == "generating_vector":
                self.generating_vector = value
            elif key == "drop_first":
                self.drop_first = int(value)
        except ValueError as err:
            raise ConfigError(f"bad value for {key!r}: {value!r} ({err})") from err

    def validate(self):
        if self.n_grid:
            grid = np.asarray(self.n_grid)
            if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
                raise ConfigError("n_grid must be positive and strictly increasing")
        if self.proposal not in ("prior", "laplace", "both"):
            raise ConfigError("proposal must be prior, laplace or both")
        if not (0.0 < self.tau < 1.0):
            raise ConfigError("tau must lie strictly between 0 and 1")
        if self.threads < 1 or self.count < 1 or self.replicates < 1:
            raise ConfigError("threads, count and replicates must be positive")
        if self.shifts < 2:
            raise ConfigError("need at least 2 shifts for an empirical RMSE")
        if self.drop_first < 0:
            raise ConfigError("drop_first cannot be negative")
        return self


# ---------------------------------------------------------------------------
# drivers


def _plot_rate(png_path, title, curves):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    for label, ns, errs in curves:
        ns = np.asarray(ns, dtype=float)
        errs = np.asarray(errs, dtype=float)
        ok = errs > 0
        ax.loglog(ns[ok], errs[ok], "o-", label=label)
    ax.set_xlabel("n")
    ax.set_ylabel("error")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)


def _fit_or_none(ns, errs, drop_first=0):
    try:
        return fit_rate(ns, errs, drop_first=drop_first)
    except ValueError:
        return None


def _summary_line(label, report):
    if report is None:
        return f"{label}: fit unavailable"
    return (
        f"{label}: slope={report.slope:.4f} intercept={report.intercept:.4f} "
        f"r2={report.r_squared:.4f} dropped={report.dropped}"
    )


def run_hellinger_experiment(family: Family, n_grid, out_dir, drop_first=0):
    """Hellinger distance between the posterior and its Laplace approximation.

    For families carrying a deliberately wrong covariance, a second curve
    against N(x_n, wrong_cov / n) is produced for contrast.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ns, d_lap, d_wrong = [], [], []
    for n in n_grid:
        posterior = ScaledPosterior(family.likelihood, family.prior, float(n))
        map_result = find_map(posterior)
        laplace = build_laplace(posterior, map_result)
        grid = family.grid_for(laplace)
        log_p = posterior.log_unnorm_density
        dist = hellinger_numeric(log_p, laplace.log_density_unnorm, grid)
        ns.append(float(n))
        d_lap.append(dist)
        if family.wrong_cov is not None:
            prec = np.linalg.inv(family.wrong_cov)

            def log_q(pts, _n=float(n), _mean=laplace.mean, _prec=prec):
                delta = np.atleast_2d(pts) - _mean
                return -0.5 * _n * np.sum((delta @ _prec) * delta, axis=1)

            d_wrong.append(hellinger_numeric(log_p, log_q, grid))

    report = _fit_or_none(ns, d_lap, drop_first)
    write_rate_csv(out / f"hellinger_{family.name}.csv", ns, d_lap, report)
    curves = [("laplace", ns, d_lap)]
    lines = [_summary_line(f"hellinger {family.name} vs laplace", report)]
    if d_wrong:
        wrong_report = _fit_or_none(ns, d_wrong, drop_first)
        write_rate_csv(out / f"hellinger_{family.name}_wrong.csv", ns, d_wrong, wrong_report)
        curves.append(("wrong covariance", ns, d_wrong))
        lines.append(_summary_line(f"hellinger {family.name} vs wrong cov", wrong_report))
    _plot_rate(out / f"hellinger_{family.name}.png", f"Hellinger: {family.name}", curves)
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    return {"ns": ns, "laplace": d_lap, "wrong": d_wrong, "report": report}


def run_is_experiment(cfg: ExperimentConfig):
    """Prior- and Laplace-proposal SNIS error sweeps against quadrature references."""
    family = build_family(cfg.model_name, cfg.d, cfg.mesh_size)
    n_grid = list(cfg.n_grid or family.n_default)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    references = [reference_expectation(family, n) for n in n_grid]
    kinds = ["prior", "laplace"] if cfg.proposal == "both" else [cfg.proposal]
    lines, curves, results = [], [], {}
    for kind in kinds:
        rows = run_is_sweep(
            family.likelihood,
            family.prior,
            family.f,
            n_grid,
            kind,
            cfg.count,
            cfg.replicates,
            cfg.seed,
            references,
            csv_path=out / f"is_{family.name}_{kind}.csv",
            threads=cfg.threads,
        )
        rmse = [row["rmse"] for row in rows]
        report = _fit_or_none(n_grid, rmse, 0)
        write_rate_csv(out / f"is_rate_{family.name}_{kind}.csv", n_grid, rmse, report)
        curves.append((f"{kind} proposal", n_grid, rmse))
        lines.append(_summary_line(f"is {family.name} {kind}", report))
        results[kind] = {"rows": rows, "report": report}
    _plot_rate(out / f"is_{family.name}.png", f"SNIS RMSE: {family.name}", curves)
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    return results


def _load_rule(cfg: ExperimentConfig, d):
    path = cfg.generating_vector or DEFAULT_VECTOR
    try:
        base = load_generating_vector(path, max(d, 1), max(cfg.m, 1))
    except (OSError, VectorFormatError) as err:
        raise ConfigError(f"generating vector: {err}") from err
    return lattice_rule(base.z, d, cfg.m)


def run_qmc_experiment(cfg: ExperimentConfig):
    """Shift-averaged lattice QMC error sweeps, prior-based and preconditioned."""
    family = build_family(cfg.model_name, cfg.d, cfg.mesh_size)
    d = family.dim
    n_grid = list(cfg.n_grid or (1e2, 1e3, 1e4, 1e5, 1e6))
    rule = _load_rule(cfg, d)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)

    gaussian_prior = isinstance(family.prior, GaussianPrior)
    prior_abs, prior_rel, lap_abs, lap_rel = [], [], [], []
    for n in n_grid:
        n = float(n)
        if gaussian_prior:
            prior_est = lambda shift: qmc_gaussian_prior_estimate(
                family.likelihood, family.prior, n, rule, shift
            ).z_estimate
        else:
            prior_est = lambda shift: qmc_prior_estimate(
                family.likelihood, family.prior, n, rule, shift
            ).z_estimate
        rmse, values = qmc_shift_rmse(prior_est, d, cfg.shifts, cfg.seed)
        center = abs(float(np.mean(values)))
        prior_abs.append(rmse)
        prior_rel.append(rmse / center if center > 0 else np.inf)

        posterior = ScaledPosterior(family.likelihood, family.prior, n)
        laplace = build_laplace(posterior, find_map(posterior))
        lap_est = lambda shift: qmc_laplace_estimate(
            posterior, laplace, rule, shift, cfg.tau
        ).z_estimate
        rmse, values = qmc_shift_rmse(lap_est, d, cfg.shifts, cfg.seed)
        center = abs(float(np.mean(values)))
        lap_abs.append(rmse)
        lap_rel.append(rmse / center if center > 0 else np.inf)

    lines = []
    tables = {
        "qmc_prior_abs": prior_abs,
        "qmc_prior_rel": prior_rel,
        "qmc_laplace_abs": lap_abs,
        "qmc_laplace_rel": lap_rel,
    }
    reports = {}
    for label, errs in tables.items():
        report = _fit_or_none(n_grid, errs, cfg.drop_first)
        write_rate_csv(out / f"{label}_{family.name}.csv", n_grid, errs, report)
        lines.append(_summary_line(f"{label} {family.name}", report))
        reports[label] = report
    _plot_rate(
        out / f"qmc_{family.name}.png",
        f"QMC shift RMSE: {family.name} (N=2^{cfg.m})",
        [
            ("prior, relative", n_grid, prior_rel),
            ("preconditioned, relative", n_grid, lap_rel),
        ],
    )
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    return {
        "ns": n_grid,
        "prior_abs": prior_abs,
        "prior_rel": prior_rel,
        "laplace_abs": lap_abs,
        "laplace_rel": lap_rel,
        "reports": reports,
    }


def bvm_likelihood(data, sigma=0.1):
    """Averaged misfit for the scalar cubic observation model y = x^3 + noise."""
    data = np.atleast_1d(np.asarray(data, dtype=float))
    n_obs = data.size
    s = float(np.sum(data))
    sq = float(np.sum(data**2))
    c = 1.0 / (n_obs * sigma**2)

    def phi(x):
        x = np.asarray(x, dtype=float)
        pts = np.atleast_2d(x)[:, 0]
        vals = 0.5 * c * (sq - 2.0 * s * pts**3 + n_obs * pts**6)
        return float(vals[0]) if x.ndim == 1 else vals

    def gradient(x):
        t = float(np.asarray(x, dtype=float)[0])
        return np.array([-3.0 * c * t * t * (s - n_obs * t**3)])

    def hessian(x):
        t = float(np.asarray(x, dtype=float)[0])
        return np.array([[15.0 * c * n_obs * t**4 - 6.0 * c * t * s]])

    return LogLikelihood(phi=phi, dim=1, gradient=gradient, hessian=hessian)


def run_bvm_demo(out_dir, seed=0, n_grid=(1, 4, 16, 64, 256, 1024), sigma=0.1,
                 x0=1.0, zero_noise=False):
    """Laplace vs. limiting-Gaussian comparison for growing synthetic data sets.

    The data are y_k = x0^3 + sigma eps_k; each n uses the first n draws of one
    fixed stream. The limiting Gaussian is centered at the MAP with variance
    sigma^2 / (9 x0^4 n).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng((seed, 0))
    noise = np.zeros(max(n_grid)) if zero_noise else rng.standard_normal(max(n_grid))
    data = x0**3 + sigma * noise
    prior = GaussianPrior([0.0], [[1.0]])
    ns, d_lap, d_bvm, d_pair, residuals = [], [], [], [], []
    var_laplace, var_limit, means = [], [], []
    for n in n_grid:
        lk = bvm_likelihood(data[:n], sigma)
        posterior = ScaledPosterior(lk, prior, float(n))
        map_result = find_map(posterior)
        laplace = build_laplace(posterior, map_result)
        residuals.append(map_result.grad_norm)
        grid = _default_grid([(-4.0, 4.0)], per_sigma=60, coarse=1201)(laplace)
        log_p = posterior.log_unnorm_density
        var_lim = sigma**2 / (9.0 * x0**4 * n)
        A = laplace.precision_factor @ laplace.precision_factor.T
        var_lap = 1.0 / (float(A[0, 0]) * n)

        def log_q(pts, _m=float(map_result.x[0]), _v=var_lim):
            delta = np.atleast_2d(pts)[:, 0] - _m
            return -0.5 * delta**2 / _v

        ns.append(float(n))
        means.append(float(map_result.x[0]))
        var_laplace.append(var_lap)
        var_limit.append(var_lim)
        d_lap.append(hellinger_numeric(log_p, laplace.log_density_unnorm, grid))
        d_bvm.append(hellinger_numeric(log_p, log_q, grid))
        d_pair.append(
            gaussian_hellinger(map_result.x, [[var_lap]], map_result.x, [[var_lim]])
        )
    rep_lap = _fit_or_none(ns, d_lap)
    rep_bvm = _fit_or_none(ns, d_bvm)
    rep_pair = _fit_or_none(ns, d_pair)
    write_rate_csv(out / "bvm_laplace.csv", ns, d_lap, rep_lap)
    write_rate_csv(out / "bvm_limit.csv", ns, d_bvm, rep_bvm)
    write_rate_csv(out / "bvm_gaussian_pair.csv", ns, d_pair, rep_pair)
    _plot_rate(
        out / "bvm.png",
        "Posterior vs Laplace and limiting Gaussian",
        [("laplace", ns, d_lap), ("limiting gaussian", ns, d_bvm)],
    )
    lines = [
        _summary_line("bvm laplace", rep_lap),
        _summary_line("bvm limiting gaussian", rep_bvm),
        _summary_line("bvm gaussian pair", rep_pair),
        f"max MAP gradient residual: {max(residuals):.3e}",
    ]
    for n, m, vl, vb in zip(ns, means, var_laplace, var_limit):
        lines.append(
            f"n={n:g}: mean={m:.8f} var_laplace={vl:.6e} var_limit={vb:.6e}"
        )
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    return {
        "ns": ns,
        "laplace": d_lap,
        "limit": d_bvm,
        "pair": d_pair,
        "means": means,
        "var_laplace": var_laplace,
        "var_limit": var_limit,
        "residuals": residuals,
        "report_laplace": rep_lap,
        "report_limit": rep_bvm,
    }


def run_singular_demo(out_dir, n_grid=None):
    """Hellinger curves for the two rank-deficient misfit examples."""
    out = Path(out_dir)
    results = {}
    for name in ("example2d1", "example2d2"):
        family = build_family(name)
        grid = list(n_grid or family.n_default)
        results[name] = run_hellinger_experiment(family, grid, out / name)
    lines = []
    for name, res in results.items():
        lines.append(_summary_line(f"hellinger {name}", res["report"]))
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    return results


# ---------------------------------------------------------------------------
# command line


def _add_common(p):
    p.add_argument("--config", help="INI-style experiment configuration file")
    p.add_argument("--model", help="experiment family name")
    p.add_argument("--d", type=int, help="parameter dimension where applicable")
    p.add_argument("--n-grid", help="comma-separated concentration levels")
    p.add_argument("--seed", type=int, help="base random seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, help="worker threads for replicates")


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="lapmc",
        description=(
            "Laplace-preconditioned importance sampling and lattice QMC "
            "for concentrated posteriors"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, text in (
        ("hellinger", "posterior vs Laplace distance sweep"),
        ("is-sweep", "importance sampling RMSE sweep"),
        ("qmc-sweep", "lattice QMC RMSE sweep"),
        ("bvm-demo", "growing-data Gaussian limit demo"),
        ("singular-demo", "rank-deficient misfit examples"),
    ):
        p = sub.add_parser(cmd, help=text)
        _add_common(p)
        if cmd == "is-sweep":
            p.add_argument("--proposal", choices=("prior", "laplace", "both"))
            p.add_argument("--count", type=int, help="samples per estimate")
            p.add_argument("--replicates", type=int)
        if cmd == "qmc-sweep":
            p.add_argument("--m", type=int, help="points per rule as log2 N")
            p.add_argument("--shifts", type=int)
            p.add_argument("--tau", type=float)
            p.add_argument("--vector", help="generating vector file")
        if cmd == "hellinger":
            p.add_argument("--drop-first", type=int)
    return parser


def _config_from_args(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    overrides = {
        "model_name": getattr(args, "model", None),
        "d": getattr(args, "d", None),
        "seed": getattr(args, "seed", None),
        "out": getattr(args, "out", None),
        "threads": getattr(args, "threads", None),
        "proposal": getattr(args, "proposal", None),
        "count": getattr(args, "count", None),
        "replicates": getattr(args, "replicates", None),
        "m": getattr(args, "m", None),
        "shifts": getattr(args, "shifts", None),
        "tau": getattr(args, "tau", None),
        "generating_vector": getattr(args, "vector", None),
        "drop_first": getattr(args, "drop_first", None),
    }
    fields = {k: v for k, v in overrides.items() if v is not None}
    if getattr(args, "n_grid", None):
        try:
            fields["n_grid"] = tuple(float(v) for v in args.n_grid.split(","))
        except ValueError as err:
            raise ConfigError(f"bad --n-grid value: {args.n_grid!r}") from err
    cfg = replace(cfg, **fields)
    cfg.validate()
    return cfg


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _config_from_args(args)
        if args.command == "hellinger":
            family = build_family(cfg.model_name, cfg.d, cfg.mesh_size)
            drop = cfg.drop_first if getattr(args, "drop_first", None) is not None else 0
            run_hellinger_experiment(
                family, list(cfg.n_grid or family.n_default), cfg.out, drop_first=drop
            )
        elif args.command == "is-sweep":
            run_is_experiment(cfg)
        elif args.command == "qmc-sweep":
            run_qmc_experiment(cfg)
        elif args.command == "bvm-demo":
            run_bvm_demo(cfg.out, seed=cfg.seed, n_grid=tuple(
                int(n) for n in (cfg.n_grid or (1, 4, 16, 64, 256, 1024))
            ))
        elif args.command == "singular-demo":
            run_singular_demo(cfg.out, n_grid=list(cfg.n_grid) or None)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return 2
    except (
        SingularHessian,
        OptimizationError,
        EvaluationError,
        DegenerateWeightsError,
        UnsupportedPriorError,
        ZeroMassError,
    ) as err:
        print(f"computation failed: {err}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
