"""Data-driven predictive control toolkit.

Two controllers built on the same quadratic-programming core:

* regularized DeePC, whose predictor is a linear combination of columns of
  block-Hankel matrices built from recorded trajectories, and
* offset-free Koopman MPC, which identifies a lifted linear model by least
  squares (EDMD with a time-delay dictionary), augments it with a constant
  output disturbance, and filters the augmented state with a Kalman filter.

Both are exercised against simulated plants (exact discrete LTI systems and
a nonlinear three-temperature pasteurization surrogate) by the CLI harness
in :mod:`ddpc.harness`, which also computes closed-loop performance metrics
and normalized comparisons.
"""

from ddpc.qp_core import (
    QpProblem,
    QpSolution,
    QpStatus,
    SolverOptions,
    brute_force_qp_oracle,
    kkt_residuals,
    solve_qp,
)
from ddpc.dataio import (
    ExcitationSpec,
    ScalerParams,
    TrajectoryDataset,
    apply_scaler,
    fit_scaler,
    generate_step_excitation,
    invert_scaler,
    minimum_data_length,
    persistent_excitation_check,
)
from ddpc.hankel import HankelBlocks, build_hankel, partition_blocks, trajectory_completion
from ddpc.deepc import DeepcConfig, DeepcController, MeasurementWindow, build_deepc_qp, init_window
from ddpc.koopman import (
    AugmentedModel,
    KalmanState,
    KmpcController,
    KoopmanModel,
    LiftSpec,
    augment_model,
    build_kmpc_qp,
    identify_edmd,
    kalman_init,
    kalman_step,
)
from ddpc.plant import LtiPlant, PasteurizerSurrogate, steady_state_solve
from ddpc.metrics import (
    MetricsRecord,
    RunLog,
    effort_cost,
    energy,
    normalize_comparison,
    rms_tracking_error,
    tracking_cost,
)

__version__ = "0.1.0"

__all__ = [
    "QpProblem", "QpSolution", "QpStatus", "SolverOptions",
    "solve_qp", "kkt_residuals", "brute_force_qp_oracle",
    "TrajectoryDataset", "ScalerParams", "ExcitationSpec",
    "generate_step_excitation", "fit_scaler", "apply_scaler", "invert_scaler",
    "minimum_data_length", "persistent_excitation_check",
    "HankelBlocks", "build_hankel", "partition_blocks", "trajectory_completion",
    "DeepcConfig", "MeasurementWindow", "DeepcController", "build_deepc_qp", "init_window",
    "KoopmanModel", "AugmentedModel", "KalmanState", "LiftSpec",
    "identify_edmd", "augment_model", "kalman_init", "kalman_step",
    "build_kmpc_qp", "KmpcController",
    "LtiPlant", "PasteurizerSurrogate", "steady_state_solve",
    "RunLog", "MetricsRecord",
    "rms_tracking_error", "tracking_cost", "effort_cost", "energy",
    "normalize_comparison",
    "__version__",
]
