"""twoscale: spectral-Galerkin simulation and statistical checks for
slow-fast stochastic reaction-diffusion averaging."""

from .errors import (
    ConfigError,
    DegenerateFit,
    HypothesisGateError,
    InvalidArgument,
    NonFiniteError,
    StabilityViolation,
)
from .spectral import SpectralBasis, build_basis, check_hypothesis_h1, sine_grid
from .model import ModelSpec, check_condition_m0, check_hypothesis_h2, check_model, get_model
from .integrator import simulate_averaged, simulate_coupled, simulate_frozen_fast
from .ergodics import (
    AveragedCoeffs,
    analytic_averaged,
    ergodic_average,
    estimate_bbar,
    estimate_mixing,
    estimate_S,
    estimated_averaged,
)
from .khasminskii import build_partition, eval_L_av, eval_L_sl, kolmogorov_gap, remainder_path
from .experiments import (
    convergence_study,
    holder_increment_study,
    moment_bound_study,
    weak_convergence_probe,
)

__version__ = "0.1.0"
