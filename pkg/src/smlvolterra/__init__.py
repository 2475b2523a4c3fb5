"""Separable (rank-one) Volterra models and their adaptive identification."""
from .adaptive import (
    LinearInParamsFilter,
    MultiplyCounter,
    SmlFilter,
    UndefinedBoundError,
    baseline_lms_step,
    counted_sml_lms_step,
    counted_sml_true_lms_step,
    linear_step_bound,
    max_threshold,
    operation_counts,
    sml_lms_step,
    sml_true_lms_step,
    step_bound,
)
from .estimation import (
    CorrelationSet,
    DivergedError,
    SteepestDescentTrace,
    block_gradient,
    default_initialization,
    gaussian_correlations,
    gradient_curvature,
    mse,
    normal_residual,
    output_power,
    stacked_gradient,
    steepest_descent,
)
from .models import (
    DelayLine,
    DiagonalKernel,
    diagonal_output,
    fir_outputs,
    partial_products,
    sml_output,
    volterra_output,
)
from .tensor import (
    DenseKernel,
    KernelSizeError,
    RankOneKernel,
    flatten_index,
    kron,
    load_kernel_csv,
    materialize,
    save_kernel_csv,
    tensor_inner,
    tensor_norm,
    tensor_power,
    unflatten_index,
)

__version__ = "0.1.0"
