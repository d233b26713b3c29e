"""Per-sample solver chain: Matern field, Darcy flux, upwind transport."""
from .chain import PDESampler, SampleResult, coupled_sample, qoi
from .darcy import darcy_solve, discrete_divergence
from .spde import MaternParams, sample_grf, sample_white_noise
from .transport import TimeConfig, initial_condition, transport_solve

__all__ = [
    "MaternParams",
    "PDESampler",
    "SampleResult",
    "TimeConfig",
    "coupled_sample",
    "darcy_solve",
    "discrete_divergence",
    "initial_condition",
    "qoi",
    "sample_grf",
    "sample_white_noise",
    "transport_solve",
]
