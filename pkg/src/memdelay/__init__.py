"""Toolkit for linear evolution equations with discrete delay and Volterra memory.

Simulation by method of steps, backward dual solves, duality and
observability diagnostics, terminal-rest control synthesis, the 1-D heat
application with a moving control region, and singular weight functionals.
"""

from .core import (
    GridError,
    HistoryFunction,
    KernelDomainError,
    MemoryKernel,
    ShapeError,
    StepFailureError,
    TimeGrid,
    Trajectory,
    convolve_memory,
    eval_kernel,
    eval_kernel_derivative,
    kernel_from_json,
    kernel_to_json,
)
from .forward import (
    DelaySystem,
    FundamentalSolution,
    fundamental_solution,
    mild_solution_check,
    simulate_forward,
)
from .adjoint import AdjointData, adjoint_time_derivative_residual, simulate_adjoint
from .duality import DualityReport, duality_residual
from .observability import (
    KalmanRankResult,
    ObservabilityReport,
    ProbeResult,
    kalman_rank_extended,
    observability_gramian,
    unique_continuation_probe,
)
from .synthesis import (
    SynthesisConfig,
    SynthesisResult,
    TerminalReport,
    gradient_check,
    synthesize_control,
    verify_terminal_conditions,
)
from .heat import (
    HeatConfig,
    MovingRegion,
    build_heat_system,
    region_mask,
    run_experiment,
    spectral_apply,
    spectral_control_map,
)
from .carleman import WeightSpec, eval_weights, functional_IH, functional_IO, weight_g

__version__ = "0.1.0"
