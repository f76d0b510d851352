"""Laplace-preconditioned importance sampling and lattice QMC for
posteriors of the form exp(-n Phi) d(prior) with large n."""

from .forward import AlgebraicModel, EllipticModel
from .importance import (
    DegenerateWeightsError,
    ISResult,
    Proposal,
    asymptotic_variance_estimate,
    laplace_proposal,
    prior_proposal,
    run_is_sweep,
    snis,
)
from .laplace import LaplaceApprox, SingularHessian, build_laplace, concentration_probe
from .metrics import (
    GridSpec,
    RateReport,
    ZeroMassError,
    fit_rate,
    gaussian_hellinger,
    hellinger_numeric,
    read_rate_csv,
    tv_numeric,
    write_rate_csv,
)
from .model import (
    GaussianPrior,
    LogLikelihood,
    NotCalibratedError,
    ScaledPosterior,
    UniformBoxPrior,
    gaussian_misfit,
)
from .optimize import (
    EvaluationError,
    MinResult,
    OptimizationError,
    fd_gradient,
    fd_hessian,
    find_map,
    minimize_newton,
)
from .qmc import (
    LatticeRule,
    PreconditionedMap,
    QMCResult,
    UnsupportedPriorError,
    VectorFormatError,
    lattice_points,
    lattice_rule,
    load_generating_vector,
    norm_inv_cdf,
    qmc_gaussian_prior_estimate,
    qmc_laplace_estimate,
    qmc_prior_estimate,
    qmc_shift_rmse,
)

__version__ = "0.1.0"

__all__ = [
    "AlgebraicModel",
    "EllipticModel",
    "DegenerateWeightsError",
    "ISResult",
    "Proposal",
    "asymptotic_variance_estimate",
    "laplace_proposal",
    "prior_proposal",
    "run_is_sweep",
    "snis",
    "LaplaceApprox",
    "SingularHessian",
    "build_laplace",
    "concentration_probe",
    "GridSpec",
    "RateReport",
    "ZeroMassError",
    "fit_rate",
    "gaussian_hellinger",
    "hellinger_numeric",
    "read_rate_csv",
    "tv_numeric",
    "write_rate_csv",
    "GaussianPrior",
    "LogLikelihood",
    "NotCalibratedError",
    "ScaledPosterior",
    "UniformBoxPrior",
    "gaussian_misfit",
    "EvaluationError",
    "MinResult",
    "OptimizationError",
    "fd_gradient",
    "fd_hessian",
    "find_map",
    "minimize_newton",
    "LatticeRule",
    "PreconditionedMap",
    "QMCResult",
    "UnsupportedPriorError",
    "VectorFormatError",
    "lattice_points",
    "lattice_rule",
    "load_generating_vector",
    "norm_inv_cdf",
    "qmc_gaussian_prior_estimate",
    "qmc_laplace_estimate",
    "qmc_prior_estimate",
    "qmc_shift_rmse",
    "__version__",
]
