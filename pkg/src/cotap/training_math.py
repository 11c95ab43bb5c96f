"""Pure formula layer for the learning side: losses, rewards, randomization.

No training loop lives here; these are the closed-form pieces (diagonal
Gaussian KL, distillation loss, reward kernels, the domain-randomization
sampler and the observation scale table) factored out so they can be unit
tested against independent oracles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, LengthMismatch

# Domain-randomization intervals. Multiplicative entries scale a default;
# additive entries are offsets in the stated unit.
RANDOMIZATION_RANGES = {
    "friction": (0.5, 1.25),
    "link_mass_scale": (0.9, 1.2),
    "base_mass_delta": (-1.0, 3.0),      # kg
    "control_delay": (0.0, 20.0),        # ms
    "p_gain_scale": (0.9, 1.1),
    "d_gain_scale": (0.9, 1.1),
    "k_ee": (0.5 * 300.0, 1.5 * 300.0),  # N/m
    "k_null": (0.6 * 40.0, 1.4 * 40.0),  # Nm/rad
    "alpha": (0.0, 1.0),
}

# Observation terms: name -> (dimension, scale). Scaled value = raw * scale.
ACTOR_OBSERVATION_SCALES = {
    "torso_angular_velocity": (3, 0.25),
    "projected_gravity": (3, 1.0),
    "command_linear_velocity": (2, 1.0),
    "command_angular_velocity": (1, 1.0),
    "command_stand": (1, 1.0),
    "command_torso_height": (1, 2.0),
    "reference_upper_dof_position": (8, 1.0),
    "dof_position": (19, 1.0),
    "dof_velocity": (19, 0.05),
    "actions": (19, 1.0),
    "sin_phase": (1, 1.0),
    "cos_phase": (1, 1.0),
    "upper_joint_torque": (8, 1.0),
}

CRITIC_OBSERVATION_SCALES = {
    "torso_orientation": (4, 1.0),
    "torso_linear_velocity": (3, 2.0),
    "left_ee_force": (3, 0.1),
    "right_ee_force": (3, 0.1),
}

OBSERVATION_SCALES = {**ACTOR_OBSERVATION_SCALES, **CRITIC_OBSERVATION_SCALES}


@dataclass(frozen=True)
class DiagonalGaussian:
    """Factorized Gaussian policy head: per-dimension mean and std."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        std = np.array(self.std, dtype=float).reshape(-1)
        if mean.shape != std.shape:
            raise DimensionMismatch("mean and std lengths differ")
        if np.any(std <= 0.0):
            raise ValueError("std must be strictly positive")
        mean.setflags(write=False)
        std.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class RandomizedParams:
    """One domain-randomization draw; every field inside its interval."""

    friction: float
    link_mass_scale: float
    base_mass_delta: float
    control_delay: float
    p_gain_scale: float
    d_gain_scale: float
    k_ee: float
    k_null: float
    alpha: float

    def __post_init__(self):
        for name, (lo, hi) in RANDOMIZATION_RANGES.items():
            value = getattr(self, name)
            if not lo <= value <= hi:
                raise ValueError(f"{name} = {value} outside [{lo}, {hi}]")


def gaussian_kl(p: DiagonalGaussian, q: DiagonalGaussian) -> float:
    """KL(p || q) for diagonal Gaussians, closed form; zero iff p equals q."""
    if p.dim != q.dim:
        raise DimensionMismatch("distributions have different dimensions")
    var_p = p.std**2
    var_q = q.std**2
    terms = np.log(q.std / p.std) + (var_p + (p.mean - q.mean) ** 2) / (2.0 * var_q) - 0.5
    return float(np.sum(terms))


def distill_loss(l_ppo: float, kl: float, beta_kl: float) -> float:
    """Distillation objective ``L_PPO + beta_KL * KL``."""
    if beta_kl < 0.0:
        raise ValueError("beta_kl must be >= 0")
    return float(l_ppo) + float(beta_kl) * float(kl)


def beta_schedule(step: int, beta0: float, decay_steps: int) -> float:
    """Linear decay ``max(0, beta0 (1 - step / decay_steps))``."""
    if decay_steps <= 0:
        raise ValueError("decay_steps must be positive")
    if step < 0:
        raise ValueError("step must be >= 0")
    return max(0.0, float(beta0) * (1.0 - step / decay_steps))


def ref_closeness_reward(action, q_ref, sigma_ref: float = 1.0) -> float:
    """``exp(-sigma_ref ||action - q_ref||_2)``: 1 iff the action matches."""
    if not sigma_ref > 0.0:
        raise ValueError("sigma_ref must be positive")
    a = np.asarray(action, dtype=float).reshape(-1)
    r = np.asarray(q_ref, dtype=float).reshape(-1)
    if a.shape != r.shape:
        raise DimensionMismatch("action and reference lengths differ")
    return float(np.exp(-sigma_ref * np.linalg.norm(a - r)))


def keypoint_reward(p, p_ref) -> float:
    """``exp(-||p - p_ref||^2 / 0.01)`` over the stacked keypoint vector."""
    pts = [np.asarray(x, dtype=float).reshape(3) for x in p]
    refs = [np.asarray(x, dtype=float).reshape(3) for x in p_ref]
    if len(pts) != len(refs):
        raise LengthMismatch("keypoint lists differ in length")
    if not pts:
        raise LengthMismatch("keypoint lists are empty")
    sq = sum(float(np.dot(a - b, a - b)) for a, b in zip(pts, refs))
    return float(np.exp(-sq / 0.01))


def scale_observation(term: str, values) -> np.ndarray:
    """Apply the table scale to a raw observation term."""
    dims, scale = OBSERVATION_SCALES[term]
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.shape[0] != dims:
        raise DimensionMismatch(f"{term}: expected {dims} values, got {v.shape[0]}")
    return v * scale


def sample_randomization(seed: int) -> RandomizedParams:
    """Deterministic draw of one randomization tuple from the table ranges."""
    rng = np.random.default_rng(seed)
    draws = {name: float(rng.uniform(lo, hi)) for name, (lo, hi) in RANDOMIZATION_RANGES.items()}
    return RandomizedParams(**draws)
