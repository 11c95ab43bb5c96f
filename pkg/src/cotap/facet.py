"""Impedance reference generator: virtual spring-mass-damper plus online IK.

A task-space spring/damper pulls a virtual point mass toward the desired
position; the measured external force pushes back. Integrating the virtual
mass produces reference position and velocity trajectories whose steady state
under a constant load is exactly ``x_des + K_e^-1 f`` -- the analytic ideal
deflection. A damped-least-squares IK step turns the reference into joint
targets for whatever joint-space law runs underneath.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyWindow
from .kinematics import BasePose, KinematicChain, position_jacobian
from .kinematics import end_effector_position, forward_kinematics
from .spd import SpdMatrix, sqrt_spd

CONTROL_DT = 0.02  # s, reference integration locked to the 50 Hz control period

DEFAULT_VIRTUAL_MASS = 2.0     # kg
DEFAULT_DAMPING_RATIO = 0.9    # near-critical reference dynamics
DEFAULT_LAMBDA_DLS = 0.05
DEFAULT_STEP_CLAMP = 0.2       # rad per IK step


@dataclass(frozen=True)
class ImpedanceParams:
    """Task-space spring/damper and the virtual mass they act on."""

    k_e: SpdMatrix   # N/m
    d_e: SpdMatrix   # Ns/m
    virtual_mass: float = DEFAULT_VIRTUAL_MASS

    def __post_init__(self):
        if not self.virtual_mass > 0.0:
            raise ValueError("virtual_mass must be positive")
        if self.k_e.dim != 3 or self.d_e.dim != 3:
            raise DimensionMismatch("impedance matrices must be 3x3")

    @classmethod
    def with_default_damping(
        cls, k_e: SpdMatrix, virtual_mass: float = DEFAULT_VIRTUAL_MASS,
        damping_ratio: float = DEFAULT_DAMPING_RATIO,
    ) -> "ImpedanceParams":
        """Damping ``2 zeta sqrt(m K_e)`` for near-critical reference motion."""
        d = sqrt_spd(virtual_mass * k_e.entries)
        return cls(k_e, SpdMatrix(2.0 * damping_ratio * d.entries), virtual_mass)


@dataclass(frozen=True)
class ReferenceState:
    """Reference position/velocity of the virtual point mass."""

    x_ref: np.ndarray
    xd_ref: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        x = np.array(self.x_ref, dtype=float).reshape(3)
        v = np.array(self.xd_ref, dtype=float).reshape(3)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            raise ValueError("reference state must be finite")
        x.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "x_ref", x)
        object.__setattr__(self, "xd_ref", v)


def impedance_force(p: ImpedanceParams, x_des, x, xd_des, xd) -> np.ndarray:
    """Spring force ``K_e (x_des - x) + D_e (xd_des - xd)``."""
    x_des = np.asarray(x_des, dtype=float).reshape(3)
    x = np.asarray(x, dtype=float).reshape(3)
    xd_des = np.asarray(xd_des, dtype=float).reshape(3)
    xd = np.asarray(xd, dtype=float).reshape(3)
    return p.k_e.entries @ (x_des - x) + p.d_e.entries @ (xd_des - xd)


def reference_acceleration(f_spring, f_ee, virtual_mass: float) -> np.ndarray:
    """Acceleration of the virtual mass: ``(f_spring + f_ee) / m``."""
    if not virtual_mass > 0.0:
        raise ValueError("virtual_mass must be positive")
    return (np.asarray(f_spring, dtype=float) + np.asarray(f_ee, dtype=float)) / virtual_mass


def integrate_reference(state: ReferenceState, xdd_ref, dt: float) -> ReferenceState:
    """One semi-implicit Euler step: velocity first, then position."""
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    xd = state.xd_ref + np.asarray(xdd_ref, dtype=float).reshape(3) * dt
    x = state.x_ref + xd * dt
    return ReferenceState(x, xd, state.t + dt)


def ik_step(
    chain: KinematicChain,
    base: BasePose,
    q,
    ee_name: str,
    x_ref,
    lambda_dls: float = DEFAULT_LAMBDA_DLS,
    step_clamp: float = DEFAULT_STEP_CLAMP,
) -> np.ndarray:
    """One damped-least-squares IK step toward ``x_ref``.

    ``q* = q + J^T (J J^T + lambda^2 I)^-1 (x_ref - x_ee)`` with the step
    norm clamped, so targets outside the workspace produce a bounded step
    instead of a divergent one.
    """
    q = np.asarray(q, dtype=float).reshape(-1)
    frames = forward_kinematics(chain, base, q)
    x_ee = end_effector_position(chain, frames, ee_name)
    J = position_jacobian(chain, base, q, ee_name)
    err = np.asarray(x_ref, dtype=float).reshape(3) - x_ee
    dq = J.T @ np.linalg.solve(J @ J.T + lambda_dls**2 * np.eye(3), err)
    norm = float(np.linalg.norm(dq))
    if norm > step_clamp:
        dq *= step_clamp / norm
    return q + dq


def facet_tracking_reward(x_ref_window, xd_ref_window, x_ee, xd_ee) -> float:
    """Mean over a reference window of ``exp(-|xd err|^2 - |x err|^2)``.

    Equals 1 exactly when every window sample matches the current
    end-effector state, and decreases strictly with either error norm.
    """
    x_window = [np.asarray(x, dtype=float).reshape(3) for x in x_ref_window]
    xd_window = [np.asarray(v, dtype=float).reshape(3) for v in xd_ref_window]
    if len(x_window) == 0:
        raise EmptyWindow("reference window is empty")
    if len(x_window) != len(xd_window):
        raise DimensionMismatch("position and velocity windows differ in length")
    x_ee = np.asarray(x_ee, dtype=float).reshape(3)
    xd_ee = np.asarray(xd_ee, dtype=float).reshape(3)
    total = 0.0
    for x_r, xd_r in zip(x_window, xd_window):
        total += float(
            np.exp(
                -float(np.dot(xd_r - xd_ee, xd_r - xd_ee))
                - float(np.dot(x_r - x_ee, x_r - x_ee))
            )
        )
    return total / len(x_window)


class FacetReference:
    """Steps the virtual impedance system at the control rate.

    Holds only the explicit reference state; each :meth:`step` evaluates the
    spring at the reference (not the plant), adds the measured external
    force, and advances one control period.
    """

    def __init__(self, params: ImpedanceParams, x_des, initial: ReferenceState, dt: float = CONTROL_DT):
        if not dt > 0.0:
            raise ValueError("dt must be positive")
        self.params = params
        self.x_des = np.asarray(x_des, dtype=float).reshape(3)
        self.xd_des = np.zeros(3)
        self.state = initial
        self.dt = dt

    def step(self, f_ee) -> ReferenceState:
        f_spring = impedance_force(
            self.params, self.x_des, self.state.x_ref, self.xd_des, self.state.xd_ref
        )
        xdd = reference_acceleration(f_spring, f_ee, self.params.virtual_mass)
        self.state = integrate_reference(self.state, xdd, self.dt)
        return self.state
