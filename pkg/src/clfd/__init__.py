"""Continual learning of trajectories from demonstration with neural ODEs."""

__version__ = "0.1.0"

from .autodiff import (  # noqa: F401
    Architecture,
    AdamState,
    ParamVector,
    Tape,
    Tensor,
    adam_lookahead,
    adam_step,
    count_params,
    init_params,
    load_params,
    mlp_forward,
    save_params,
)
from .errors import ClfdError, DomainError, TrainingDiverged, ValidationError  # noqa: F401
from .node import (  # noqa: F401
    DemonstrationSet,
    NodeConfig,
    Trajectory,
    integrate,
    time_values,
    train_node,
)
from .so3 import (  # noqa: F401
    QuaternionTrajectory,
    UnitQuaternion,
    canonicalize_quats,
    exp_map,
    from_tangent_trajectory,
    log_map,
    quat_traj_error,
    to_tangent_trajectory,
)
from .traj_metrics import discrete_frechet, dtw, swept_area  # noqa: F401
from .cl_metrics import (  # noqa: F401
    EvaluationMatrix,
    MetricsRecord,
    RunLedger,
    accuracy_matrix,
    compute_metrics,
    dtw_threshold,
)
from .datasets import (  # noqa: F401
    DatasetFile,
    DatasetTask,
    gen_synthetic,
    load_dataset,
    save_dataset,
    subsample_dataset,
)
from .strategies import (  # noqa: F401
    Strategy,
    StrategyConfig,
    TaskStats,
    VARIANTS,
    derived_seed,
)
from .experiment import (  # noqa: F401
    ExperimentConfig,
    compare_metrics,
    evaluate_bundle,
    load_bundle,
    robustness_start,
    run_experiment,
    run_task_order_study,
)
