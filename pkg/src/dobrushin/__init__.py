"""Normal approximation for sums over inhomogeneous Markov chains."""

from .kernel import (
    BoundedFunction,
    CoefficientReport,
    Kernel,
    KernelError,
    StateSpace,
    compose,
    load_kernel,
    md_delta,
    md_delta_multistep,
    multistep,
    osc,
)
from .schedule import (
    Schedule,
    ScheduleError,
    build_bd,
    build_example,
    condition_diagnostics,
    from_kernels,
    homogeneous,
    load_schedule,
    series_coefficients,
)
from .exact import (
    ExactEngineError,
    check_lemma1,
    check_lemma2,
    check_prop3,
    exact_mean_var,
    lemma4_decay,
    marginals,
    martingale_decomposition,
    sum_distribution,
)
from .montecarlo import SimulationError, normality_report, simulate

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
