"""Compliance control on the SPD manifold with a desk-scale scenario simulator."""

from importlib import resources as _resources
from pathlib import Path as _Path

from .errors import (
    CotapError,
    DimensionMismatch,
    EmptyWindow,
    LengthMismatch,
    NotPositiveDefinite,
    NumericalDivergence,
    ParseError,
    RankDeficient,
    UnknownEndEffector,
    UnknownLink,
    ValidationError,
    ZeroMatrix,
)
from .spd import (
    EPS_SPD,
    EPS_SV,
    ModulationRatio,
    SpdMatrix,
    condition_number,
    log_euclidean_interpolate,
    regularize_alpha,
    spd_exp,
    spd_inverse,
    spd_log,
    sqrt_spd,
)
from .kinematics import (
    BasePose,
    Frame,
    KinematicChain,
    LinkSpec,
    base_jacobian,
    com_jacobians,
    end_effector_position,
    forward_kinematics,
    gravity_torques,
    load_chain,
    load_chain_file,
    position_jacobian,
    split_jacobian,
)
from .compliance import (
    ComplianceController,
    ComplianceGoal,
    ControlGains,
    PdBaseline,
    PdController,
    TorqueCommand,
    build_modulated_stiffness,
    effective_task_compliance,
    joint_torque,
    pd_gains,
    solve_upper_joint_compliance,
    task_compliance_from_joint,
)
from .facet import (
    FacetReference,
    ImpedanceParams,
    ReferenceState,
    facet_tracking_reward,
    ik_step,
    impedance_force,
    integrate_reference,
    reference_acceleration,
)
from .scenario import (
    ControllerSettings,
    ExternalForceProfile,
    FacetSettings,
    ScenarioConfig,
    TorsoScript,
    apply_variation,
    load_scenario,
)
from .simdyn import (
    HeldFeedback,
    MetricsReport,
    ScenarioResult,
    SimState,
    avg_upper_torque,
    ee_tracking_error,
    keypoint_to_torso_relative,
    keypoint_to_world,
    mass_matrix,
    metrics_dict,
    run_scenario,
    step,
    torso_velocity_error,
    trace_columns,
    upper_tracking_error,
    write_metrics_json,
    write_trace_csv,
)
from .training_math import (
    ACTOR_OBSERVATION_SCALES,
    CRITIC_OBSERVATION_SCALES,
    OBSERVATION_SCALES,
    RANDOMIZATION_RANGES,
    DiagonalGaussian,
    RandomizedParams,
    beta_schedule,
    distill_loss,
    gaussian_kl,
    keypoint_reward,
    ref_closeness_reward,
    sample_randomization,
    scale_observation,
)

__version__ = "0.1.0"


def data_path(name: str) -> _Path:
    """Path to a bundled data file, e.g. ``h1_upper.toml`` or ``scenarios/regulation.toml``."""
    return _Path(str(_resources.files("cotap") / "data" / name))
