"""Cut norms, cut distances and sampling experiments for symmetric kernels.

The package is organised around a small catalog of symmetric kernels on
[0,1]^2 (bounded and unbounded), random k-sampling of those kernels into
step functions, exact and heuristic cut-norm solvers, cut-distance
estimators, truncation operators, a toolkit of concentration-bound
evaluators, vector-valued (R^d) kernels, and a CLI harness that runs
Monte Carlo verification campaigns against the closed-form bounds.
"""

from .kernels import (
    Checkerboard,
    DomainError,
    IntegrabilityError,
    Kernel,
    KernelError,
    PowCorner,
    SamplePoints,
    SignedPow,
    StepKernel,
    StepSpec,
    TruncatedKernel,
    draw_sample,
    kernel_from_json,
    sample_matrix,
)
from .cutnorm import (
    CutNormResult,
    cut_norm_exact,
    cut_norm_heuristic,
    cut_norm_plus_exact,
    matrix_cut_norm_oracle,
    step_restriction_value,
)
from .cutdist import (
    AnnealBudget,
    CutDistanceEstimate,
    blowup,
    cut_distance_lower,
    cut_distance_upper,
    discretize_kernel,
)
from .truncation import (
    first_lemma_threshold,
    second_lemma_threshold,
    truncate_kernel,
    truncation_l1_error_bound,
    truncation_l1_error_exact,
    truncation_l1_mass_above,
)
from .concentration import (
    BoundValue,
    ConcentrationParams,
    DeltaReport,
    azuma_alpha,
    bplus_upper_check,
    bs12_check,
    chebyshev_bound,
    delta_U,
    dispersion_tail_bound,
    frobenius_check,
    l0_probability_bound,
    replace_coordinate,
    replacement_inequality_check,
    rplus_sets,
    theorem_bound,
)
from .vkernel import (
    EpsilonNet,
    VectorKernelNorms,
    VectorStepKernel,
    build_epsilon_net,
    draw_vector_sample,
    scalarize,
    vector_cut_norm_exact,
    vector_cut_norm_net,
    vector_lp_norm,
    vector_theorem_bounds,
)
from .experiments import (
    ExperimentConfig,
    RunResult,
    TrialRecord,
    run_experiment,
    verify_report,
    wilson_interval,
)

__version__ = "0.1.0"
