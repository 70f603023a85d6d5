"""Tail analytics and Monte Carlo verification for a three-node Brownian tandem queue."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    DegenerateK1,
    ModelParams,
    StabilityMode,
    UnstableModel,
    ValidatedModel,
    net_flow_drift,
    validate,
)
from .kernel import (  # noqa: E402
    AsymptoticPrediction,
    JointTailPredictor,
    KernelGeometry,
    KernelReport,
    Regime,
    boundary_identity_point,
    branch_points,
    classify_node3,
    delta,
    y_branches,
    z_branches,
    joint_tail_predictor,
    kernel_report,
    marginal_asymptotics,
    tauberian_exponent,
    z_star,
)
from .sim import (  # noqa: E402
    EmptyWindow,
    SimConfig,
    StationaryAccumulator,
    estimate_boundary_transform,
    estimate_regulator_rates,
    run,
    step,
    stream_block_maxima,
)
from .tails import (  # noqa: E402
    DependenceProfile,
    TailFit,
    empirical_ccdf,
    factorization_ratio,
    fit_decay,
    gumbel_block_maxima,
    tail_dependence,
)

__all__ = [
    "__version__",
    "ModelParams",
    "StabilityMode",
    "ValidatedModel",
    "UnstableModel",
    "DegenerateK1",
    "validate",
    "net_flow_drift",
    "Regime",
    "KernelGeometry",
    "AsymptoticPrediction",
    "JointTailPredictor",
    "KernelReport",
    "branch_points",
    "delta",
    "y_branches",
    "z_branches",
    "z_star",
    "classify_node3",
    "marginal_asymptotics",
    "tauberian_exponent",
    "joint_tail_predictor",
    "boundary_identity_point",
    "kernel_report",
    "SimConfig",
    "StationaryAccumulator",
    "EmptyWindow",
    "run",
    "step",
    "stream_block_maxima",
    "estimate_regulator_rates",
    "estimate_boundary_transform",
    "TailFit",
    "DependenceProfile",
    "empirical_ccdf",
    "fit_decay",
    "tail_dependence",
    "factorization_ratio",
    "gumbel_block_maxima",
]
