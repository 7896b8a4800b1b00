"""Equilibrium-point regularization for linear inverse problems.

Solves ``A*(Ax - y) + alpha G(x) = 0`` for regularization operators
``G = id - N`` with contractive residual ``N`` and provides the tooling to
check stability estimates, convergence rates and recoverability bounds
numerically.
"""
from .data import Dataset, load_idx, make_synthetic, parse_idx, serialize_idx, split
from .equilibrium import (
    EquilibriumProblem,
    SolveReport,
    SolverConfig,
    fast_forward_fixed_point,
    nullspace_oracle,
    predict_iterations,
    residual_T,
    solve,
    solve_direct_linear,
    solve_fixed_point,
    solve_limiting,
)
from .harness import (
    NoiseSpec,
    RateTable,
    add_noise,
    fit_slope,
    run_rate_sweep,
    source_condition_residual,
    stability_probe,
)
from .linops import (
    KernelProjector,
    LinearMap,
    SpectralDecomposition,
    decompose,
    kernel_projector,
    make_dense,
    make_inpainting,
    make_motion_blur,
    operator_norm,
    pseudo_apply,
)
from .regularizers import (
    RegOperator,
    apply_reg,
    custom_reg,
    equivalence_check,
    identity_reg,
    invert_reg,
    linear_reg,
    loss_value,
    lower_bound_error,
    make_subspace_reg,
    recoverability_constant,
    sym_bregman,
)
from .training import SubspaceProjector, pca_fit, project_dataset, train_linear_reg

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "load_idx",
    "make_synthetic",
    "parse_idx",
    "serialize_idx",
    "split",
    "EquilibriumProblem",
    "SolveReport",
    "SolverConfig",
    "fast_forward_fixed_point",
    "nullspace_oracle",
    "predict_iterations",
    "residual_T",
    "solve",
    "solve_direct_linear",
    "solve_fixed_point",
    "solve_limiting",
    "NoiseSpec",
    "RateTable",
    "add_noise",
    "fit_slope",
    "run_rate_sweep",
    "source_condition_residual",
    "stability_probe",
    "KernelProjector",
    "LinearMap",
    "SpectralDecomposition",
    "decompose",
    "kernel_projector",
    "make_dense",
    "make_inpainting",
    "make_motion_blur",
    "operator_norm",
    "pseudo_apply",
    "RegOperator",
    "apply_reg",
    "custom_reg",
    "equivalence_check",
    "identity_reg",
    "invert_reg",
    "linear_reg",
    "loss_value",
    "lower_bound_error",
    "make_subspace_reg",
    "recoverability_constant",
    "sym_bregman",
    "SubspaceProjector",
    "pca_fit",
    "project_dataset",
    "train_linear_reg",
]
