"""Fixed-base joint-space dynamics, scenario drivers and evaluation metrics.

The plant is the point-mass serial chain integrated with semi-implicit Euler
at a small inner step while the controller is held at the 50 Hz control rate.
Coriolis/centrifugal terms are omitted: every scenario here is quasi-static
or a critically damped transient at low speed, the same regime the
compliance derivation itself assumes. Joint limits act as physical stops
(clamp plus velocity zeroing), unlike the kinematics layer which only warns.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np

from .compliance import (
    ComplianceController,
    ComplianceGoal,
    PdBaseline,
    PdController,
    TorqueCommand,
)
from .errors import LengthMismatch, NumericalDivergence, ValidationError
from .facet import (
    FacetReference,
    ImpedanceParams,
    ReferenceState,
    ik_step,
)
from .kinematics import (
    BasePose,
    KinematicChain,
    _point_jacobian,
    _world_axes,
    end_effector_position,
    forward_kinematics,
    gravity_torques,
    load_chain_file,
    position_jacobian,
)
from .scenario import (
    ControllerSettings,
    ExternalForceProfile,
    ScenarioConfig,
    config_summary,
)
from .spd import SpdMatrix

log = logging.getLogger("cotap.simdyn")

QD_DIVERGENCE_LIMIT = 1e3  # rad/s

METRICS_FORMAT = "cotap-metrics/1"

# Fraction of the trace (from the end) used for steady-state readouts.
STEADY_WINDOW_FRACTION = 0.2


@dataclass(frozen=True)
class SimState:
    """Joint-space state of the plant plus the currently applied externals."""

    t: float
    q: np.ndarray
    qd: np.ndarray
    last_tau: np.ndarray
    f_ext: dict

    def __post_init__(self):
        for name in ("q", "qd", "last_tau"):
            v = np.array(getattr(self, name), dtype=float).reshape(-1)
            if not np.all(np.isfinite(v)):
                raise ValueError(f"SimState.{name} contains non-finite entries")
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @classmethod
    def initial(cls, q) -> "SimState":
        q = np.asarray(q, dtype=float).reshape(-1)
        return cls(0.0, q, np.zeros_like(q), np.zeros_like(q), {})


@dataclass(frozen=True)
class HeldFeedback:
    """Controller outputs frozen over one control period.

    The zero-order hold applies to what the controller computes -- gains,
    targets and the gravity feedforward -- while the spring/damper law acts
    at the inner physics rate, the way a joint-level actuator loop realizes
    a 50 Hz command. Holding the raw torque constant instead makes the
    damping loop unstable at realistic arm inertias.
    """

    stiffness: np.ndarray
    damping: np.ndarray
    q_target: np.ndarray
    qd_target: np.ndarray
    tau_feedforward: np.ndarray

    def torque(self, q, qd) -> np.ndarray:
        return (
            self.tau_feedforward
            + self.stiffness @ (self.q_target - q)
            + self.damping @ (self.qd_target - qd)
        )


@dataclass(frozen=True)
class MetricsReport:
    """Time-averaged 2-norm metrics; ``e_torso`` is None when not applicable."""

    e_torso: float | None
    e_ee: float
    j_upper: float
    e_upper: float

    def __post_init__(self):
        for name in ("e_ee", "j_upper", "e_upper"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")
        if self.e_torso is not None and self.e_torso < 0.0:
            raise ValueError("e_torso must be >= 0")


# ---------------------------------------------------------------------------
# dynamics


def mass_matrix_entries(chain: KinematicChain, q, base: BasePose | None = None) -> np.ndarray:
    """Raw joint-space mass matrix ``sum_k m_k J_k^T J_k`` of the point-mass links."""
    base = BasePose.identity() if base is None else base
    frames = forward_kinematics(chain, base, q)
    axes, origins = _world_axes(chain, base, frames)
    M = np.zeros((chain.dof, chain.dof))
    for link in chain.links:
        if link.mass <= 0.0:
            continue
        f = frames[link.name]
        p_com = f.position + f.rotation @ link.com_offset
        J = _point_jacobian(chain, frames, axes, origins, link.name, p_com)
        M += link.mass * (J.T @ J)
    return 0.5 * (M + M.T)


def mass_matrix(chain: KinematicChain, q) -> SpdMatrix:
    """Joint-space mass matrix as an admitted SPD matrix.

    Raises :class:`NotPositiveDefinite` in degenerate postures where some
    joint has no distal mass with a moment arm; the simulator sidesteps this
    with a small armature term added on top of the raw entries.
    """
    return SpdMatrix(mass_matrix_entries(chain, q), "dimensionless")


def _total_gravity_and_external(
    chain: KinematicChain,
    base: BasePose,
    q,
    profiles,
    t: float,
    gravity,
    gravity_scale: float,
):
    """Generalized gravity + external-force torques with one shared FK pass."""
    frames = forward_kinematics(chain, base, q)
    axes, origins = _world_axes(chain, base, frames)
    n = chain.dof
    tau = np.zeros(n)
    M = np.zeros((n, n))
    g = np.asarray(gravity, dtype=float).reshape(3)
    for link in chain.links:
        if link.mass <= 0.0:
            continue
        f = frames[link.name]
        p_com = f.position + f.rotation @ link.com_offset
        J = _point_jacobian(chain, frames, axes, origins, link.name, p_com)
        tau += gravity_scale * link.mass * (J.T @ g)
        M += link.mass * (J.T @ J)
    f_ext: dict[str, np.ndarray] = {}
    for profile in profiles:
        force = profile.force_at(t)
        if not np.any(force):
            continue
        parent, _ = chain.end_effector(profile.target_ee)
        p_ee = end_effector_position(chain, frames, profile.target_ee)
        J = _point_jacobian(chain, frames, axes, origins, parent, p_ee)
        tau += J.T @ force
        f_ext[profile.target_ee] = f_ext.get(profile.target_ee, np.zeros(3)) + force
    return M, tau, f_ext


def step(
    chain: KinematicChain,
    state: SimState,
    tau,
    profiles=(),
    dt: float = 0.001,
    *,
    base: BasePose | None = None,
    gravity=(0.0, 0.0, -9.81),
    gravity_scale: float = 1.0,
    armature: float = 0.02,
    clamp_limits: bool = True,
) -> SimState:
    """One semi-implicit Euler step of ``M(q) qdd = tau + tau_grav + J^T f``.

    ``tau`` may be a :class:`HeldFeedback` (gains and targets held, law
    evaluated at this inner step), a :class:`TorqueCommand`, or a plain
    torque vector held constant over the step. Joint limits clamp the
    position and zero the velocity; a joint-speed norm beyond
    ``QD_DIVERGENCE_LIMIT`` raises :class:`NumericalDivergence`.
    """
    if not 0.0 < dt <= 0.005:
        raise ValueError("inner physics step dt must lie in (0, 0.005] s")
    base = BasePose.identity() if base is None else base
    if isinstance(tau, HeldFeedback):
        tau_vec = tau.torque(state.q, state.qd)
    elif isinstance(tau, TorqueCommand):
        tau_vec = np.asarray(tau.torques, dtype=float)
    else:
        tau_vec = np.asarray(tau, dtype=float)
    M, tau_passive, f_ext = _total_gravity_and_external(
        chain, base, state.q, profiles, state.t, gravity, gravity_scale
    )
    if armature > 0.0:
        M = M + armature * np.eye(chain.dof)
    qdd = np.linalg.solve(M, tau_vec + tau_passive)
    qd = state.qd + dt * qdd
    q = state.q + dt * qd
    if clamp_limits:
        lo, hi = chain.limits_array()
        clipped = np.clip(q, lo, hi)
        qd = np.where(clipped == q, qd, 0.0)
        q = clipped
    if float(np.linalg.norm(qd)) > QD_DIVERGENCE_LIMIT:
        raise NumericalDivergence(
            f"joint speed norm {float(np.linalg.norm(qd)):.3e} rad/s exceeds "
            f"{QD_DIVERGENCE_LIMIT:g} at t = {state.t + dt:.4f} s"
        )
    return SimState(state.t + dt, q, qd, tau_vec, f_ext)


# ---------------------------------------------------------------------------
# evaluation metrics


def _mean_row_norm(a, b=None) -> float:
    x = np.asarray(a, dtype=float)
    if b is not None:
        y = np.asarray(b, dtype=float)
        if x.shape[0] != y.shape[0]:
            raise LengthMismatch(f"series lengths differ: {x.shape[0]} vs {y.shape[0]}")
        x = x - y
    if x.shape[0] < 1:
        raise LengthMismatch("series must contain at least one sample")
    return float(np.mean(np.linalg.norm(np.atleast_2d(x.reshape(x.shape[0], -1)), axis=1)))


def torso_velocity_error(v_ref, v) -> float:
    """Time-averaged ``||v_ref - v||_2`` (m/s)."""
    return _mean_row_norm(v_ref, v)


def ee_tracking_error(p_ref, p) -> float:
    """Time-averaged ``||p_ref - p||_2`` (m)."""
    return _mean_row_norm(p_ref, p)


def avg_upper_torque(tau) -> float:
    """Time-averaged ``||tau||_2`` (Nm)."""
    return _mean_row_norm(tau)


def upper_tracking_error(q_ref, q) -> float:
    """Time-averaged ``||q_ref - q||_2`` (rad)."""
    return _mean_row_norm(q_ref, q)


# ---------------------------------------------------------------------------
# keypoint frame transforms


def keypoint_to_torso_relative(p_ref_world, v_ref_world, torso_ref: BasePose):
    """World keypoint position/velocity into the torso frame.

    ``p_rel = R^-1 (p - p_torso)``;
    ``v_rel = R^-1 (v - v_torso) - omega x p_rel`` with the torso angular
    velocity expressed in the torso frame.
    """
    R = torso_ref.rotation
    p = np.asarray(p_ref_world, dtype=float).reshape(3)
    v = np.asarray(v_ref_world, dtype=float).reshape(3)
    p_rel = R.T @ (p - torso_ref.position)
    v_rel = R.T @ (v - torso_ref.linear_velocity) - np.cross(torso_ref.angular_velocity, p_rel)
    return p_rel, v_rel


def keypoint_to_world(p_rel, v_rel, torso_cur: BasePose):
    """Exact inverse of :func:`keypoint_to_torso_relative` for a matched torso."""
    R = torso_cur.rotation
    p_rel = np.asarray(p_rel, dtype=float).reshape(3)
    v_rel = np.asarray(v_rel, dtype=float).reshape(3)
    p = R @ p_rel + torso_cur.position
    v = R @ (v_rel + np.cross(torso_cur.angular_velocity, p_rel)) + torso_cur.linear_velocity
    return p, v


# ---------------------------------------------------------------------------
# controller sessions used by the scenario runner


def _pd_baseline(ctl: ControllerSettings, dof: int) -> PdBaseline:
    kp = ctl.kp_joint
    gains = np.full(dof, float(kp)) if np.isscalar(kp) else np.asarray(kp, dtype=float)
    if gains.shape[0] != dof:
        raise ValidationError(f"kp_joint needs {dof} entries, got {gains.shape[0]}")
    return PdBaseline.from_gains(gains, ctl.damping_ratio)


class _Session:
    """Adapter: per-tick command (trace echo + held feedback) for the runner."""

    records_reference = False

    def update(self, base: BasePose, q, qd, f_ee) -> tuple[TorqueCommand, HeldFeedback]:
        raise NotImplementedError

    @property
    def x_ref(self):
        return None


def _command_pair(gains, q_target, qd_target, tau_grav, q, qd):
    held = HeldFeedback(
        stiffness=gains.stiffness.entries,
        damping=gains.damping.entries,
        q_target=np.asarray(q_target, dtype=float),
        qd_target=np.asarray(qd_target, dtype=float),
        tau_feedforward=tau_grav,
    )
    cmd = TorqueCommand(held.torque(q, qd), gains.stiffness, gains.damping, gains.alpha_processed)
    return cmd, held


class _PdSession(_Session):
    def __init__(self, chain, config: ScenarioConfig, pd: PdBaseline):
        self.inner = PdController(chain, pd, config.q_target, gravity=config.gravity)

    def update(self, base, q, qd, f_ee):
        gains = self.inner.gains(base, q)
        tau_grav = -gravity_torques(self.inner.chain, base, q, self.inner.gravity)
        return _command_pair(gains, self.inner.q_target, self.inner.qd_target, tau_grav, q, qd)


class _CotapSession(_Session):
    def __init__(self, chain, config: ScenarioConfig, pd: PdBaseline, ee_name: str):
        ctl = config.controller
        goal = ComplianceGoal(
            k_ee=SpdMatrix(ctl.k_ee, "stiffness_translational"),
            k_null=ctl.k_null,
            alpha=ctl.alpha,
            q_upper_target=config.q_target,
        )
        self.inner = ComplianceController(
            chain,
            ee_name,
            goal,
            pd,
            K_torso_inv=ctl.k_torso_inv,
            fallback_pd=(ctl.fallback == "pd"),
            gravity=config.gravity,
        )

    def update(self, base, q, qd, f_ee):
        gains = self.inner.gains(base, q)
        tau_grav = -gravity_torques(self.inner.chain, base, q, self.inner.gravity)
        goal = self.inner.goal
        return _command_pair(gains, goal.q_upper_target, goal.qd_upper_target, tau_grav, q, qd)


class _FacetSession(_Session):
    """FACET reference feeding joint targets into a PD or modulated law."""

    records_reference = True

    def __init__(self, chain, config: ScenarioConfig, pd: PdBaseline, ee_name: str, modulated: bool):
        self.chain = chain
        self.config = config
        self.ee_name = ee_name
        fac = config.controller.facet
        self.params = ImpedanceParams.with_default_damping(
            SpdMatrix(fac.k_e, "stiffness_translational"), fac.virtual_mass, fac.damping_ratio
        )
        self.lambda_dls = fac.lambda_dls
        self.step_clamp = fac.step_clamp
        self.reference: FacetReference | None = None
        if modulated:
            ctl = config.controller
            goal = ComplianceGoal(
                k_ee=SpdMatrix(ctl.k_ee, "stiffness_translational"),
                k_null=ctl.k_null,
                alpha=ctl.alpha,
                q_upper_target=config.q_target,
            )
            self.gain_source = ComplianceController(
                chain, ee_name, goal, pd,
                K_torso_inv=ctl.k_torso_inv,
                fallback_pd=(ctl.fallback == "pd"),
                gravity=config.gravity,
            )
        else:
            self.gain_source = PdController(chain, pd, config.q_target, gravity=config.gravity)

    def _x_des(self, base: BasePose) -> np.ndarray:
        frames = forward_kinematics(self.chain, base, self.config.q_target)
        return end_effector_position(self.chain, frames, self.ee_name)

    def update(self, base, q, qd, f_ee):
        if self.reference is None:
            frames = forward_kinematics(self.chain, base, q)
            x0 = end_effector_position(self.chain, frames, self.ee_name)
            self.reference = FacetReference(
                self.params, self._x_des(base), ReferenceState(x0, np.zeros(3)),
                dt=self.config.control_dt,
            )
        else:
            self.reference.x_des = self._x_des(base)
        ref = self.reference.step(f_ee)
        q_star = ik_step(
            self.chain, base, q, self.ee_name, ref.x_ref, self.lambda_dls, self.step_clamp
        )
        J = position_jacobian(self.chain, base, q, self.ee_name)
        qd_star = J.T @ np.linalg.solve(J @ J.T + self.lambda_dls**2 * np.eye(3), ref.xd_ref)
        gains = self.gain_source.gains(base, q)
        tau_grav = -gravity_torques(self.chain, base, q, self.config.gravity)
        return _command_pair(gains, q_star, qd_star, tau_grav, q, qd)

    @property
    def x_ref(self):
        return None if self.reference is None else self.reference.state.x_ref


def _make_session(chain, config: ScenarioConfig, ee_name: str) -> _Session:
    pd = _pd_baseline(config.controller, chain.dof)
    kind = config.controller.kind
    if kind == "pd":
        return _PdSession(chain, config, pd)
    if kind == "cotap":
        return _CotapSession(chain, config, pd, ee_name)
    if kind == "facet":
        return _FacetSession(chain, config, pd, ee_name, modulated=False)
    if kind == "cotap_facet":
        return _FacetSession(chain, config, pd, ee_name, modulated=True)
    raise ValidationError(f"unknown controller kind {kind!r}")


# ---------------------------------------------------------------------------
# scenario runner


@dataclass
class ScenarioResult:
    """Per-tick arrays, the metrics report and the steady-state readouts."""

    config: ScenarioConfig
    chain: KinematicChain
    t: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    tau: np.ndarray
    ee_pos: np.ndarray
    ee_err: np.ndarray
    f_ext: np.ndarray
    x_ref: np.ndarray | None
    metrics: MetricsReport
    steady: dict


def _base_at(config: ScenarioConfig, t: float) -> BasePose:
    if config.torso is None:
        return BasePose.identity()
    return BasePose(
        position=config.torso.position_at(t),
        orientation=np.array([1.0, 0.0, 0.0, 0.0]),
        linear_velocity=config.torso.velocity,
    )


def run_scenario(config: ScenarioConfig) -> ScenarioResult:
    """Run one scenario to completion; deterministic for a given config."""
    chain = load_chain_file(config.model_path)
    n = chain.dof
    if config.q_target.shape[0] != n:
        raise ValidationError(f"[target] q_upper needs {n} entries, got {config.q_target.shape[0]}")
    ee_name = config.controller.ee or chain.end_effector_names[0]
    chain.end_effector(ee_name)
    trace_ee = config.trace_ee or ee_name
    chain.end_effector(trace_ee)
    for profile in config.forces:
        chain.end_effector(profile.target_ee)

    session = _make_session(chain, config, ee_name)
    q0 = config.q_start if config.q_start is not None else config.q_target
    state = SimState.initial(q0)
    inner_steps = int(round(config.control_dt / config.dt))
    n_ticks = int(round(config.duration / config.control_dt))
    log.info(
        "scenario %r: controller=%s duration=%.3g s (%d ticks x %d inner steps)",
        config.name or str(config.model_path), config.controller.kind,
        config.duration, n_ticks, inner_steps,
    )

    rows_t, rows_q, rows_qd, rows_tau = [], [], [], []
    rows_ee, rows_err, rows_f, rows_xref = [], [], [], []

    for k in range(n_ticks):
        t = k * config.control_dt
        base = _base_at(config, t)
        f_ee = np.zeros(3)
        for profile in config.forces:
            if profile.target_ee == ee_name:
                f_ee += profile.force_at(t)
        try:
            cmd, held = session.update(base, state.q, state.qd, f_ee)
        except Exception as e:
            raise type(e)(f"{e} [controller failure at control tick {k}, t = {t:.3f} s]") from e

        frames = forward_kinematics(chain, base, state.q)
        p_ee = end_effector_position(chain, frames, trace_ee)
        ref_frames = forward_kinematics(chain, base, config.q_target)
        p_ref = end_effector_position(chain, ref_frames, trace_ee)
        f_trace = np.zeros(3)
        for profile in config.forces:
            if profile.target_ee == trace_ee:
                f_trace += profile.force_at(t)

        rows_t.append(t)
        rows_q.append(state.q.copy())
        rows_qd.append(state.qd.copy())
        rows_tau.append(cmd.torques.copy())
        rows_ee.append(p_ee)
        rows_err.append(p_ref - p_ee)
        rows_f.append(f_trace)
        if session.records_reference:
            rows_xref.append(np.array(session.x_ref))

        for j in range(inner_steps):
            try:
                state = step(
                    chain,
                    state,
                    held,
                    config.forces,
                    config.dt,
                    base=base,
                    gravity=config.gravity,
                    gravity_scale=config.gravity_mismatch,
                    armature=config.armature,
                )
            except NumericalDivergence as e:
                raise NumericalDivergence(
                    f"{e} [control tick {k}, inner step {j}]", step_index=k
                ) from e

    t_arr = np.array(rows_t)
    q_arr = np.array(rows_q)
    qd_arr = np.array(rows_qd)
    tau_arr = np.array(rows_tau)
    ee_arr = np.array(rows_ee)
    err_arr = np.array(rows_err)
    f_arr = np.array(rows_f)
    xref_arr = np.array(rows_xref) if rows_xref else None

    e_torso = None
    if config.torso is not None and config.torso.reference_velocity is not None:
        v_script = np.tile(config.torso.velocity, (len(rows_t), 1))
        v_ref = np.tile(config.torso.reference_velocity, (len(rows_t), 1))
        e_torso = torso_velocity_error(v_ref, v_script)

    metrics = MetricsReport(
        e_torso=e_torso,
        e_ee=float(np.mean(np.linalg.norm(err_arr, axis=1))),
        j_upper=float(np.mean(np.linalg.norm(tau_arr, axis=1))),
        e_upper=float(np.mean(np.linalg.norm(config.q_target[None, :] - q_arr, axis=1))),
    )

    log.info(
        "scenario %r done: e_ee=%.4g j_upper=%.4g e_upper=%.4g",
        config.name or str(config.model_path), metrics.e_ee, metrics.j_upper, metrics.e_upper,
    )
    window = max(1, int(round(STEADY_WINDOW_FRACTION * len(rows_t))))
    steady_err = err_arr[-window:].mean(axis=0)
    steady = {
        "window_ticks": window,
        "ee_error": steady_err.tolist(),
        "ee_error_norm": float(np.linalg.norm(steady_err)),
        "ee_error_z": float(steady_err[2]),
    }
    if xref_arr is not None:
        base_end = _base_at(config, float(t_arr[-1]))
        ref_frames = forward_kinematics(chain, base_end, config.q_target)
        x_des = end_effector_position(chain, ref_frames, ee_name)
        ref_err = x_des - xref_arr[-window:].mean(axis=0)
        steady["ref_error"] = ref_err.tolist()
        steady["ref_error_norm"] = float(np.linalg.norm(ref_err))
        steady["ref_error_z"] = float(ref_err[2])

    return ScenarioResult(
        config=config,
        chain=chain,
        t=t_arr,
        q=q_arr,
        qd=qd_arr,
        tau=tau_arr,
        ee_pos=ee_arr,
        ee_err=err_arr,
        f_ext=f_arr,
        x_ref=xref_arr,
        metrics=metrics,
        steady=steady,
    )


# ---------------------------------------------------------------------------
# output files


def trace_columns(dof: int) -> list[str]:
    """Pinned trace.csv column order."""
    cols = ["t"]
    cols += [f"q{i}" for i in range(dof)]
    cols += [f"qd{i}" for i in range(dof)]
    cols += [f"tau{i}" for i in range(dof)]
    cols += ["ee_x", "ee_y", "ee_z"]
    cols += ["ee_err_x", "ee_err_y", "ee_err_z"]
    cols += ["fext_x", "fext_y", "fext_z"]
    return cols


def write_trace_csv(result: ScenarioResult, path) -> None:
    """Write the per-tick trace; floats use repr so reruns are bit-identical."""
    dof = result.q.shape[1]
    lines = [",".join(trace_columns(dof))]
    for i in range(result.t.shape[0]):
        row = [result.t[i], *result.q[i], *result.qd[i], *result.tau[i],
               *result.ee_pos[i], *result.ee_err[i], *result.f_ext[i]]
        lines.append(",".join(repr(float(v)) for v in row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def metrics_dict(result: ScenarioResult) -> dict:
    m = result.metrics
    return {
        "format": METRICS_FORMAT,
        "metrics": {
            "e_torso": m.e_torso,
            "e_ee": m.e_ee,
            "j_upper": m.j_upper,
            "e_upper": m.e_upper,
        },
        "steady": result.steady,
        "ticks": int(result.t.shape[0]),
        "scenario": config_summary(result.config),
    }


def write_metrics_json(result: ScenarioResult, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(metrics_dict(result), fh, indent=2, sort_keys=True)
        fh.write("\n")
