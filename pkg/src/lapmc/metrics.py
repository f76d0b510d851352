"""Grid-based distances between unnormalized densities, and rate fitting.

Distances are computed from log densities on tensor grids with trapezoid
weights, streamed in chunks so the full mesh never has to be materialized.
Rate fits are ordinary least squares on log-log pairs, reported with R^2
so flat or bent curves are visible in the output.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

MAX_GRID_POINTS = 20_000_000
_CHUNK = 1 << 20


class ZeroMassError(ValueError):
    """A density had no mass on the grid; the distance is undefined."""


class GridSpec:
    """Tensor-product grid described by one strictly increasing axis per dim."""

    def __init__(self, axes):
        self.axes = tuple(np.asarray(a, dtype=float) for a in axes)
        for k, a in enumerate(self.axes):
            if a.ndim != 1 or a.size < 3:
                raise ValueError(f"axis {k} needs at least 3 points")
            if not np.all(np.diff(a) > 0):
                raise ValueError(f"axis {k} must be strictly increasing")
        self.shape = tuple(a.size for a in self.axes)
        self.npoints = int(np.prod(self.shape))
        if self.npoints > MAX_GRID_POINTS:
            raise ValueError(
                f"grid has {self.npoints} points, over the {MAX_GRID_POINTS} budget"
            )
        self._axis_weights = tuple(_trapezoid_weights(a) for a in self.axes)

    @classmethod
    def uniform(cls, bounds, points):
        """Uniform grid from (lo, hi) pairs and a point count per axis."""
        if np.isscalar(points):
            points = [points] * len(bounds)
        return cls([np.linspace(lo, hi, int(m)) for (lo, hi), m in zip(bounds, points)])

    @property
    def dim(self):
        return len(self.axes)

    def chunks(self):
        """Yield (points, weights) blocks covering the grid in flat-index order."""
        for start in range(0, self.npoints, _CHUNK):
            stop = min(start + _CHUNK, self.npoints)
            idx = np.unravel_index(np.arange(start, stop), self.shape)
            pts = np.column_stack([self.axes[k][idx[k]] for k in range(self.dim)])
            w = self._axis_weights[0][idx[0]].copy()
            for k in range(1, self.dim):
                w *= self._axis_weights[k][idx[k]]
            yield pts, w


def _trapezoid_weights(a):
    w = np.empty_like(a)
    w[0] = 0.5 * (a[1] - a[0])
    w[-1] = 0.5 * (a[-1] - a[-2])
    if a.size > 2:
        w[1:-1] = 0.5 * (a[2:] - a[:-2])
    return w


def _scan_max(log_f, grid):
    peak = -np.inf
    for pts, _ in grid.chunks():
        vals = np.asarray(log_f(pts), dtype=float)
        if vals.size:
            peak = max(peak, float(np.max(vals)))
    return peak


def hellinger_numeric(log_p, log_q, grid: GridSpec):
    """Hellinger distance between two unnormalized log densities on a grid.

    Both densities are normalized by their own trapezoid mass, so arbitrary
    constant offsets in the inputs cancel. Convention: d_H^2 = 2 (1 - BC),
    so the distance lives in [0, sqrt(2)].
    """
    mp = _scan_max(log_p, grid)
    mq = _scan_max(log_q, grid)
    if not np.isfinite(mp) or not np.isfinite(mq):
        raise ZeroMassError("a density is identically zero on the grid")
    zp = zq = cross = 0.0
    for pts, w in grid.chunks():
        lp = np.asarray(log_p(pts), dtype=float) - mp
        lq = np.asarray(log_q(pts), dtype=float) - mq
        zp += float(w @ np.exp(lp))
        zq += float(w @ np.exp(lq))
        cross += float(w @ np.exp(0.5 * (lp + lq)))
    if zp <= 0.0 or zq <= 0.0:
        raise ZeroMassError("a density has zero trapezoid mass on the grid")
    bc = cross / np.sqrt(zp * zq)
    return float(np.sqrt(np.clip(2.0 - 2.0 * np.clip(bc, 0.0, 1.0), 0.0, 2.0)))


def tv_numeric(log_p, log_q, grid: GridSpec):
    """Total variation distance between grid-normalized densities, in [0, 1]."""
    mp = _scan_max(log_p, grid)
    mq = _scan_max(log_q, grid)
    if not np.isfinite(mp) or not np.isfinite(mq):
        raise ZeroMassError("a density is identically zero on the grid")
    zp = zq = 0.0
    for pts, w in grid.chunks():
        zp += float(w @ np.exp(np.asarray(log_p(pts), dtype=float) - mp))
        zq += float(w @ np.exp(np.asarray(log_q(pts), dtype=float) - mq))
    if zp <= 0.0 or zq <= 0.0:
        raise ZeroMassError("a density has zero trapezoid mass on the grid")
    acc = 0.0
    for pts, w in grid.chunks():
        p = np.exp(np.asarray(log_p(pts), dtype=float) - mp) / zp
        q = np.exp(np.asarray(log_q(pts), dtype=float) - mq) / zq
        acc += float(w @ np.abs(p - q))
    return float(np.clip(0.5 * acc, 0.0, 1.0))


def gaussian_hellinger(mean_a, cov_a, mean_b, cov_b):
    """Closed-form Hellinger distance between two Gaussians (log-space determinants)."""
    mean_a = np.atleast_1d(np.asarray(mean_a, dtype=float))
    mean_b = np.atleast_1d(np.asarray(mean_b, dtype=float))
    ca = np.atleast_2d(np.asarray(cov_a, dtype=float))
    cb = np.atleast_2d(np.asarray(cov_b, dtype=float))
    mid = 0.5 * (ca + cb)
    sign_a, logdet_a = np.linalg.slogdet(ca)
    sign_b, logdet_b = np.linalg.slogdet(cb)
    sign_m, logdet_m = np.linalg.slogdet(mid)
    if min(sign_a, sign_b, sign_m) <= 0:
        raise ValueError("covariances must be positive definite")
    delta = mean_a - mean_b
    quad = float(delta @ np.linalg.solve(mid, delta))
    log_bc = 0.25 * logdet_a + 0.25 * logdet_b - 0.5 * logdet_m - 0.125 * quad
    bc = np.exp(log_bc)
    return float(np.sqrt(np.clip(2.0 - 2.0 * np.clip(bc, 0.0, 1.0), 0.0, 2.0)))


@dataclass(frozen=True)
class RateReport:
    """Least-squares fit of log(error) against log(n)."""

    ns: np.ndarray
    errors: np.ndarray
    slope: float
    intercept: float
    r_squared: float
    dropped: int = 0


def fit_rate(ns, errors, drop_first=0):
    """Fit error ~ C * n^slope by least squares in log-log coordinates.

    Non-positive errors are dropped (counted in the report); fewer than three
    surviving pairs is an error since a line through two points says nothing.
    """
    ns = np.asarray(ns, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if ns.shape != errors.shape or ns.ndim != 1:
        raise ValueError("ns and errors must be 1-d arrays of equal length")
    if drop_first:
        ns, errors = ns[drop_first:], errors[drop_first:]
    keep = np.isfinite(errors) & (errors > 0.0) & (ns > 0.0)
    dropped = int(np.sum(~keep))
    ns, errors = ns[keep], errors[keep]
    if ns.size < 3:
        raise ValueError(f"need at least 3 positive pairs to fit a rate, have {ns.size}")
    lx, ly = np.log(ns), np.log(errors)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float(np.sum(resid**2)) / ss_tot
    return RateReport(
        ns=ns, errors=errors, slope=float(slope), intercept=float(intercept),
        r_squared=float(r2), dropped=dropped,
    )


def write_rate_csv(path, ns, errors, report: RateReport | None = None):
    """Write (n, error) rows plus a labeled fit footer; repr keeps full precision."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n", "error"])
        for n, e in zip(ns, errors):
            writer.writerow([repr(float(n)), repr(float(e))])
        if report is not None:
            writer.writerow(["slope", "intercept", "r2"])
            writer.writerow(
                [repr(report.slope), repr(report.intercept), repr(report.r_squared)]
            )


def read_rate_csv(path):
    """Inverse of :func:`write_rate_csv`; the fit block may be absent."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["n", "error"]:
        raise ValueError(f"{path} is not a rate table")
    fit = None
    body = rows[1:]
    if len(body) >= 2 and body[-2] == ["slope", "intercept", "r2"]:
        fit = tuple(float(v) for v in body[-1])
        body = body[:-2]
    ns = np.array([float(r[0]) for r in body])
    errors = np.array([float(r[1]) for r in body])
    return ns, errors, fit
