"""Multi-source domain adaptation with weighted joint-distribution optimal transport."""

from .data import (
    LabeledDataset,
    RotationShiftSpec,
    TargetShiftSpec,
    generate_rotation_domains,
    generate_target_shift,
    read_dataset,
    split_dataset,
    write_dataset,
)
from .errors import ConfigError, DivergenceError, InputError, ParseError
from .measure import (
    DiscreteMeasure,
    GaussianSummary,
    TransportSolution,
    bures_wasserstein,
    mix_measures,
    solve_exact_ot,
    sqrtm_spd,
    tv_distance_discrete,
)
from .model import FeedForwardModel, build_model, predict_labels, train_mtl_embedding
from .simplex import project_to_simplex
from .wjdot import (
    JointAtoms,
    WjdotConfig,
    WjdotState,
    alpha_gradient,
    bound_diagnostics,
    build_joint_cost,
    proxy_target,
    run_wjdot,
    theta_gradient,
    validation_score,
    wjdot_objective,
)

__version__ = "0.1.0"
