"""Self-normalized importance sampling against scaled posteriors.

Weights are formed in log space from the unnormalized posterior density and
the proposal density, shifted by their maximum before exponentiation. The
estimator is the usual ratio sum(w f) / sum(w); its effective sample size is
exp(2 lse(lw) - lse(2 lw)) which equals the sample count iff the weights are
constant.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .laplace import build_laplace
from .metrics import fit_rate
from .model import ScaledPosterior
from .optimize import find_map


class DegenerateWeightsError(RuntimeError):
    """Every proposal draw landed where the posterior density vanishes."""

    def __init__(self, message: str, hit_rate: float):
        super().__init__(message)
        self.hit_rate = hit_rate


@dataclass(frozen=True)
class Proposal:
    kind: str
    sample: Callable  # (count, rng) -> (count, d)
    log_density: Callable  # (count, d) -> (count,)


def prior_proposal(prior) -> Proposal:
    return Proposal(kind="prior", sample=prior.sample, log_density=prior.log_density)


def laplace_proposal(laplace) -> Proposal:
    return Proposal(
        kind="laplace", sample=laplace.sample, log_density=laplace.log_density
    )


@dataclass(frozen=True)
class ISResult:
    estimate: float
    ess: float
    max_log_weight: float
    count: int


def _f_batch(f, x):
    vals = np.asarray(f(x), dtype=float)
    if vals.shape != (x.shape[0],):
        vals = np.array([float(f(row)) for row in x])
    return vals


def snis(posterior, proposal: Proposal, f, count, rng) -> ISResult:
    """Self-normalized IS estimate of E_posterior[f] from ``count`` draws."""
    x = proposal.sample(count, rng)
    lw = np.asarray(posterior.log_unnorm_density(x), dtype=float)
    lw = lw - np.asarray(proposal.log_density(x), dtype=float)
    finite = np.isfinite(lw)
    hit_rate = float(np.mean(finite))
    if not np.any(finite):
        raise DegenerateWeightsError(
            f"all {count} importance weights vanished; the proposal misses the "
            "posterior entirely",
            hit_rate=hit_rate,
        )
    lw = np.where(finite, lw, -np.inf)
    m = float(np.max(lw))
    w = np.exp(lw - m)
    fv = _f_batch(f, x)
    if np.min(fv) == np.max(fv):
        estimate = float(fv[0])  # ratio is exact for constant integrands
    else:
        estimate = float(np.sum(w * fv) / np.sum(w))
    log_sum = logsumexp(lw)
    ess = float(np.exp(2.0 * log_sum - logsumexp(2.0 * lw)))
    return ISResult(estimate=estimate, ess=ess, max_log_weight=m, count=int(count))


def asymptotic_variance_estimate(log_weights, f_values, estimate):
    """Plug-in estimate of the SNIS asymptotic variance sigma^2.

    With normalized weights wbar = w / Z_hat and Z_hat = mean(w), this is
    mean(wbar^2 (f - estimate)^2); the RMSE of an N-sample run is roughly
    sqrt(sigma^2 / N).
    """
    lw = np.asarray(log_weights, dtype=float)
    fv = np.asarray(f_values, dtype=float)
    log_zhat = logsumexp(lw) - np.log(lw.size)
    wbar2 = np.exp(2.0 * (lw - log_zhat))
    return float(np.mean(wbar2 * (fv - estimate) ** 2))


def run_is_sweep(
    likelihood,
    prior,
    f,
    n_grid,
    proposal_kind,
    count,
    replicates,
    seed,
    references,
    csv_path=None,
    threads=1,
):
    """RMSE of SNIS estimates across a grid of concentration levels.

    For each n a fresh posterior is calibrated at its MAP point and
    ``replicates`` independent estimates are produced, each from its own
    random stream keyed by (seed, n_index, replicate). The result rows carry
    the RMSE against the matching entry of ``references``.
    """
    if proposal_kind not in ("prior", "laplace"):
        raise ValueError(f"unknown proposal kind {proposal_kind!r}")
    n_grid = [float(n) for n in n_grid]
    references = [float(r) for r in references]
    if len(references) != len(n_grid):
        raise ValueError("references must match n_grid in length")

    rows = []
    for ni, n in enumerate(n_grid):
        posterior = ScaledPosterior(likelihood, prior, n)
        map_result = find_map(posterior)
        if proposal_kind == "laplace":
            proposal = laplace_proposal(build_laplace(posterior, map_result))
        else:
            proposal = prior_proposal(prior)

        def one(r):
            rng = np.random.default_rng((seed, ni, r))
            return snis(posterior, proposal, f, count, rng).estimate

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                estimates = list(pool.map(one, range(replicates)))
        else:
            estimates = [one(r) for r in range(replicates)]
        err = np.asarray(estimates) - references[ni]
        rows.append(
            {
                "method": f"{proposal_kind}-is",
                "d": likelihood.dim,
                "n": n,
                "N": int(count),
                "replicates": int(replicates),
                "rmse": float(np.sqrt(np.mean(err**2))),
            }
        )

    if csv_path is not None:
        import csv as _csv

        with open(csv_path, "w", newline="") as fh:
            writer = _csv.writer(fh)
            writer.writerow(["method", "d", "n", "N", "replicates", "rmse"])
            for row in rows:
                writer.writerow(
                    [
                        row["method"],
                        row["d"],
                        repr(row["n"]),
                        row["N"],
                        row["replicates"],
                        repr(row["rmse"]),
                    ]
                )
    return rows


def sweep_rate(rows, drop_first=0):
    """Rate fit of the RMSE column of :func:`run_is_sweep` output rows."""
    ns = np.array([row["n"] for row in rows])
    rmse = np.array([row["rmse"] for row in rows])
    return fit_rate(ns, rmse, drop_first=drop_first)
