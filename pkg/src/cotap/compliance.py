"""Task-space compliance control mapped to joint space, with SPD modulation.

The controller turns a desired end-effector stiffness into a joint-space
stiffness matrix in four moves: invert the task stiffness into a compliance,
subtract the torso contribution, distribute the remainder over the upper-body
joints with a null-space floor, and blend the result with a diagonal PD
baseline on the SPD manifold. Near kinematic singularities the blend ratio is
shrunk by the Jacobian condition number so the controller degrades gracefully
to the PD baseline instead of chasing an unreachable task compliance.

Everything here is quasi-static: forces map to displacements through
virtual work, velocity-level terms appear only as the damping synthesized
from the blended stiffness.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NotPositiveDefinite, RankDeficient
from .kinematics import (
    BasePose,
    KinematicChain,
    base_jacobian,
    gravity_torques,
    position_jacobian,
    split_jacobian,
)
from .spd import (
    SpdMatrix,
    condition_number,
    log_euclidean_interpolate,
    regularize_alpha,
    spd_inverse,
    sqrt_spd,
)

log = logging.getLogger("cotap.compliance")

__all__ = [
    "ComplianceGoal",
    "PdBaseline",
    "ControlGains",
    "TorqueCommand",
    "task_compliance_from_joint",
    "effective_task_compliance",
    "solve_upper_joint_compliance",
    "build_modulated_stiffness",
    "joint_torque",
    "damping_from_stiffness",
    "pd_gains",
    "sqrt_spd",
    "ComplianceController",
    "PdController",
]


@dataclass(frozen=True)
class ComplianceGoal:
    """Task-space compliance goal for one tracked end effector.

    ``k_ee`` is the desired 3x3 translational stiffness at the end effector,
    ``k_null`` the scalar stiffness assigned to joint motions that do not
    move it, ``alpha`` the requested blend ratio toward the compliance
    solution (0 keeps the PD baseline).
    """

    k_ee: SpdMatrix
    k_null: float
    alpha: float
    q_upper_target: np.ndarray
    qd_upper_target: np.ndarray | None = None

    def __post_init__(self):
        if self.k_ee.dim != 3:
            raise DimensionMismatch("k_ee must be 3x3")
        if not self.k_null > 0.0:
            raise ValueError("k_null must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha {self.alpha} outside [0, 1]")
        q = np.array(self.q_upper_target, dtype=float).reshape(-1)
        q.setflags(write=False)
        object.__setattr__(self, "q_upper_target", q)
        qd = self.qd_upper_target
        qd = np.zeros_like(q) if qd is None else np.array(qd, dtype=float).reshape(-1)
        if qd.shape != q.shape:
            raise DimensionMismatch("qd_upper_target length differs from q_upper_target")
        qd.setflags(write=False)
        object.__setattr__(self, "qd_upper_target", qd)


@dataclass(frozen=True)
class PdBaseline:
    """Diagonal joint-space PD stiffness and the shared damping ratio."""

    kp_joint: SpdMatrix
    damping_ratio: float = 1.0

    def __post_init__(self):
        k = self.kp_joint.entries
        if np.any(np.abs(k - np.diag(np.diag(k))) > 0.0):
            raise ValueError("kp_joint must be diagonal")
        if not self.damping_ratio > 0.0:
            raise ValueError("damping_ratio must be positive")

    @classmethod
    def from_gains(cls, kp_values, damping_ratio: float = 1.0) -> "PdBaseline":
        return cls(
            SpdMatrix.from_diag(np.asarray(kp_values, dtype=float), "stiffness_rotational"),
            damping_ratio,
        )

    @classmethod
    def uniform(cls, kp: float, dof: int, damping_ratio: float = 1.0) -> "PdBaseline":
        return cls.from_gains(np.full(dof, float(kp)), damping_ratio)


@dataclass(frozen=True)
class ControlGains:
    """Stiffness/damping pair produced by the modulation pipeline."""

    stiffness: SpdMatrix
    damping: SpdMatrix
    alpha_processed: float
    condition_number: float = math.nan


@dataclass(frozen=True)
class TorqueCommand:
    """Joint torques plus the gains that produced them."""

    torques: np.ndarray
    stiffness_used: SpdMatrix
    damping_used: SpdMatrix
    alpha_processed: float

    def __post_init__(self):
        tau = np.array(self.torques, dtype=float).reshape(-1)
        if not np.all(np.isfinite(tau)):
            raise ValueError("torque command contains non-finite entries")
        tau.setflags(write=False)
        object.__setattr__(self, "torques", tau)


def _entries(M) -> np.ndarray:
    return M.entries if isinstance(M, SpdMatrix) else np.asarray(M, dtype=float)


def task_compliance_from_joint(J_e, K_q) -> SpdMatrix:
    """Task-space compliance ``J K_q^-1 J^T`` of a joint-space stiffness.

    ``J_e`` may have any number of task rows; it must be full row rank, else
    :class:`RankDeficient` (the condition-number sentinel fired).
    """
    J = np.asarray(J_e, dtype=float)
    if math.isinf(condition_number(J)):
        raise RankDeficient("task Jacobian is not full row rank")
    K_inv = spd_inverse(_entries(K_q), "compliance")
    C = J @ K_inv.entries @ J.T
    return SpdMatrix(0.5 * (C + C.T), "compliance")


def effective_task_compliance(C_e, J_eb, K_torso_inv) -> np.ndarray:
    """Task compliance left for the arms after the torso's share.

    Returns a plain symmetric matrix: with a compliant torso the subtraction
    can leave something indefinite, and it is the caller's job to notice
    (``solve_upper_joint_compliance`` rejects it as an infeasible goal).
    """
    C = _entries(C_e)
    Jb = np.asarray(J_eb, dtype=float)
    Kt = _entries(K_torso_inv)
    out = C - Jb @ Kt @ Jb.T
    return 0.5 * (out + out.T)


def solve_upper_joint_compliance(J_eu, C_hat, k_null: float) -> SpdMatrix:
    """Distribute a task compliance over the upper-body joints.

    Uses the Moore-Penrose right inverse ``J#``, which makes two identities
    exact: ``J_eu C_u J_eu^T`` reconstructs ``C_hat``, and the null-space
    projection of ``C_u`` equals ``(1/k_null)`` times the null-space
    projector. Raises :class:`RankDeficient` when ``J_eu`` loses row rank and
    :class:`NotPositiveDefinite` when the assembled compliance is not SPD
    (an infeasible goal at this posture).
    """
    J = np.asarray(J_eu, dtype=float)
    if not k_null > 0.0:
        raise ValueError("k_null must be positive")
    if math.isinf(condition_number(J)):
        raise RankDeficient("upper-body Jacobian is not full row rank")
    C = _entries(C_hat)
    n = J.shape[1]
    J_sharp = np.linalg.pinv(J)
    P = J_sharp @ J
    Y = np.eye(n) / k_null
    C_u = J_sharp @ C @ J_sharp.T + Y - P @ Y @ P.T
    try:
        return SpdMatrix(0.5 * (C_u + C_u.T), "compliance")
    except NotPositiveDefinite as e:
        raise NotPositiveDefinite(
            f"assembled joint compliance is not SPD (infeasible goal at this posture): {e}"
        ) from e


def damping_from_stiffness(K: SpdMatrix, damping_ratio: float) -> SpdMatrix:
    """Damping ``2 zeta sqrt(K)``: critical in unit-mass coordinates."""
    root = sqrt_spd(K)
    return SpdMatrix(2.0 * damping_ratio * root.entries, "dimensionless")


def pd_gains(pd: PdBaseline) -> ControlGains:
    """Gains of the plain PD baseline (the alpha = 0 endpoint)."""
    return ControlGains(
        stiffness=pd.kp_joint,
        damping=damping_from_stiffness(pd.kp_joint, pd.damping_ratio),
        alpha_processed=0.0,
    )


def build_modulated_stiffness(
    chain: KinematicChain,
    base: BasePose,
    q,
    goal: ComplianceGoal,
    pd: PdBaseline,
    ee_name: str,
    K_torso_inv=None,
) -> ControlGains:
    """Run the full modulation pipeline at the current posture.

    Jacobian -> base/upper split -> condition number -> processed ratio ->
    task compliance from the goal -> torso subtraction -> joint compliance
    solve -> inversion to a stiffness -> Log-Euclidean blend with the PD
    baseline. A processed ratio of exactly zero (requested, or forced by the
    condition number sentinel) short-circuits to the PD gains, which is what
    makes the alpha = 0 trace bit-identical to a pure PD run.
    """
    J_u = position_jacobian(chain, base, q, ee_name)
    J_b = base_jacobian(chain, base, q, ee_name)
    J_eb, J_eu = split_jacobian(np.hstack([J_b, J_u]))
    cond = condition_number(J_eu)
    ratio = regularize_alpha(goal.alpha, cond)
    if ratio.processed_alpha == 0.0:
        g = pd_gains(pd)
        return ControlGains(g.stiffness, g.damping, 0.0, cond)
    C_e = spd_inverse(goal.k_ee, "compliance")
    K_t = np.zeros((6, 6)) if K_torso_inv is None else _entries(K_torso_inv)
    C_hat = effective_task_compliance(C_e, J_eb, K_t)
    C_u = solve_upper_joint_compliance(J_eu, C_hat, goal.k_null)
    K_comp = spd_inverse(C_u, "stiffness_rotational")
    K_mod = log_euclidean_interpolate(K_comp, pd.kp_joint, ratio.processed_alpha)
    return ControlGains(
        stiffness=K_mod,
        damping=damping_from_stiffness(K_mod, pd.damping_ratio),
        alpha_processed=ratio.processed_alpha,
        condition_number=cond,
    )


def joint_torque(stiffness, damping, q_target, q, qd_target, qd, tau_grav) -> TorqueCommand:
    """Joint-space feedback law ``tau = tau_grav + K dq + D dqd``."""
    K = stiffness if isinstance(stiffness, SpdMatrix) else SpdMatrix(stiffness, "stiffness_rotational")
    D = damping if isinstance(damping, SpdMatrix) else SpdMatrix(damping)
    q = np.asarray(q, dtype=float).reshape(-1)
    q_target = np.asarray(q_target, dtype=float).reshape(-1)
    qd = np.asarray(qd, dtype=float).reshape(-1)
    qd_target = np.asarray(qd_target, dtype=float).reshape(-1)
    tau_grav = np.asarray(tau_grav, dtype=float).reshape(-1)
    n = K.dim
    if not (q.shape[0] == q_target.shape[0] == qd.shape[0] == qd_target.shape[0] == tau_grav.shape[0] == n):
        raise DimensionMismatch("joint_torque: operand lengths disagree")
    tau = tau_grav + K.entries @ (q_target - q) + D.entries @ (qd_target - qd)
    return TorqueCommand(tau, K, D, math.nan)


# ---------------------------------------------------------------------------
# controller sessions


class PdController:
    """Joint PD with gravity compensation; the modulation alpha = 0 endpoint."""

    def __init__(self, chain: KinematicChain, pd: PdBaseline, q_target, qd_target=None, gravity=None):
        self.chain = chain
        self.pd = pd
        self.q_target = np.asarray(q_target, dtype=float).reshape(-1)
        self.qd_target = (
            np.zeros_like(self.q_target)
            if qd_target is None
            else np.asarray(qd_target, dtype=float).reshape(-1)
        )
        self.gravity = np.array([0.0, 0.0, -9.81]) if gravity is None else np.asarray(gravity, dtype=float)

    def gains(self, base: BasePose, q) -> ControlGains:
        return pd_gains(self.pd)

    def torque(self, base: BasePose, q, qd) -> TorqueCommand:
        g = self.gains(base, q)
        tau_grav = -gravity_torques(self.chain, base, q, self.gravity)
        cmd = joint_torque(g.stiffness, g.damping, self.q_target, q, self.qd_target, qd, tau_grav)
        return TorqueCommand(cmd.torques, g.stiffness, g.damping, g.alpha_processed)


class ComplianceController:
    """Modulated compliance control for one tracked end effector.

    Caches the chain, goal and baseline; every call re-derives the gains from
    the current posture, so there is no mutable state between calls and many
    controller instances can run in parallel.
    """

    def __init__(
        self,
        chain: KinematicChain,
        ee_name: str,
        goal: ComplianceGoal,
        pd: PdBaseline,
        K_torso_inv=None,
        fallback_pd: bool = False,
        gravity=None,
    ):
        if goal.q_upper_target.shape[0] != chain.dof:
            raise DimensionMismatch("goal target length differs from chain DOF")
        chain.end_effector(ee_name)  # raises UnknownEndEffector early
        self.chain = chain
        self.ee_name = ee_name
        self.goal = goal
        self.pd = pd
        self.K_torso_inv = None if K_torso_inv is None else np.asarray(_entries(K_torso_inv), dtype=float)
        self.fallback_pd = fallback_pd
        self.gravity = np.array([0.0, 0.0, -9.81]) if gravity is None else np.asarray(gravity, dtype=float)
        self._fallback_reported = False  # log once, not at 50 Hz

    def gains(self, base: BasePose, q) -> ControlGains:
        try:
            return build_modulated_stiffness(
                self.chain, base, q, self.goal, self.pd, self.ee_name, self.K_torso_inv
            )
        except (NotPositiveDefinite, RankDeficient) as e:
            if self.fallback_pd:
                if not self._fallback_reported:
                    log.warning("compliance goal infeasible (%s); falling back to PD gains", e)
                    self._fallback_reported = True
                g = pd_gains(self.pd)
                return ControlGains(g.stiffness, g.damping, 0.0)
            raise

    def torque(self, base: BasePose, q, qd) -> TorqueCommand:
        g = self.gains(base, q)
        tau_grav = -gravity_torques(self.chain, base, q, self.gravity)
        cmd = joint_torque(
            g.stiffness, g.damping, self.goal.q_upper_target, q, self.goal.qd_upper_target, qd, tau_grav
        )
        return TorqueCommand(cmd.torques, g.stiffness, g.damping, g.alpha_processed)
