"""Regularised odd power variations of Gaussian and Volterra processes.

Modules: ``kernels`` (kernel catalog), ``covariance`` (covariance engine and
structural-condition checkers), ``simulate`` (path ensembles), ``variation``
(path functionals and MC estimators), ``moments`` (exact second moments and
chaos split), ``cli`` (experiment runner).
"""
from .covariance import (CovarianceModel, ConditionReport, build_model, check_concavity,
                         check_conditions, mu_offdiagonal_mass)
from .errors import (AlignmentError, ConfigError, DomainError, InfiniteMomentError,
                     NotPSDError, PowvarError, QuadratureError, SimulationError)
from .kernels import DriverSpec, Gamma2, KernelSpec, eval_kernel, gamma_bound
from .moments import (chaos_variances_fbm, exact_msq_discrete, exact_msq_variation,
                      hermite_expand, isserlis_joint_moment, rate_fit)
from .quadrature import QuadratureConfig
from .simulate import PathEnsemble, TimeGrid, simulate_gaussian, simulate_martingale_volterra
from .variation import (ensemble_variation, ito_residual, noncauchy_probe, odd_variation,
                        strong_variation, symmetric_integral, weighted_variation)

__version__ = "0.1.0"
