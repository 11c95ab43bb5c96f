"""Serial-chain kinematics for a torso-rooted humanoid upper body.

The chain is a tree of revolute links hanging off a floating base link (the
torso). Links are point masses located at their centers of mass; joint frames
follow the usual convention of a fixed translation in the parent frame
followed by a rotation about the joint axis.

Models are loaded from a small TOML format (``format = "cotap-model/1"``),
documented in the repository README; the bundled ``h1_upper.toml`` is a
simplified two-arm upper body whose numbers are placeholders that real
URDF-derived values can replace.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import (
    DimensionMismatch,
    ParseError,
    UnknownEndEffector,
    UnknownLink,
    ValidationError,
)

MODEL_FORMAT = "cotap-model/1"

GRAVITY = np.array([0.0, 0.0, -9.81])


class JointLimitWarning(UserWarning):
    """Configuration outside joint limits (kinematics proceeds anyway)."""


# ---------------------------------------------------------------------------
# small rotation helpers


def skew(v) -> np.ndarray:
    x, y, z = np.asarray(v, dtype=float).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation_about_axis(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix for a unit axis."""
    a = np.asarray(axis, dtype=float).reshape(3)
    c, s = math.cos(angle), math.sin(angle)
    K = skew(a)
    return np.eye(3) + s * K + (1.0 - c) * (K @ K)


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix of a unit quaternion in (w, x, y, z) order."""
    w, x, y, z = np.asarray(q, dtype=float).reshape(4)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class LinkSpec:
    """One revolute link: joint placement, axis, limits and point mass."""

    name: str
    parent: str
    joint_axis: np.ndarray        # unit 3-vector in the parent frame
    origin_offset: np.ndarray     # joint origin in the parent frame, m
    mass: float                   # kg
    com_offset: np.ndarray        # center of mass in the link frame, m
    joint_limits: tuple[float, float]  # rad
    joint_type: str = "revolute"

    def __post_init__(self):
        object.__setattr__(self, "joint_axis", _frozen_vec3(self.joint_axis))
        object.__setattr__(self, "origin_offset", _frozen_vec3(self.origin_offset))
        object.__setattr__(self, "com_offset", _frozen_vec3(self.com_offset))
        if self.joint_type != "revolute":
            raise ValidationError(f"link {self.name!r}: unsupported joint type {self.joint_type!r}")
        if abs(float(np.linalg.norm(self.joint_axis)) - 1.0) > 1e-9:
            raise ValidationError(f"link {self.name!r}: joint axis is not a unit vector")
        if self.mass < 0.0:
            raise ValidationError(f"link {self.name!r}: mass must be >= 0")
        lo, hi = self.joint_limits
        if not lo < hi:
            raise ValidationError(f"link {self.name!r}: joint limits must satisfy lower < upper")


@dataclass(frozen=True)
class BasePose:
    """World pose and twist of the base (torso) link."""

    position: np.ndarray
    orientation: np.ndarray  # unit quaternion (w, x, y, z)
    linear_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "position", _frozen_vec3(self.position))
        q = np.array(self.orientation, dtype=float).reshape(4)
        if abs(float(np.linalg.norm(q)) - 1.0) > 1e-9:
            raise ValueError("base orientation quaternion is not unit norm")
        q.setflags(write=False)
        object.__setattr__(self, "orientation", q)
        object.__setattr__(self, "linear_velocity", _frozen_vec3(self.linear_velocity))
        object.__setattr__(self, "angular_velocity", _frozen_vec3(self.angular_velocity))

    @classmethod
    def identity(cls) -> "BasePose":
        return cls(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)


@dataclass(frozen=True)
class Frame:
    """World pose of one link: position and rotation matrix."""

    position: np.ndarray
    rotation: np.ndarray


def _frozen_vec3(v) -> np.ndarray:
    a = np.array(v, dtype=float).reshape(3)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class KinematicChain:
    """Immutable serial-chain model rooted at the base link.

    ``links`` must be topologically ordered (each parent is the base or an
    earlier link); the joint index of a link is its position in the tuple.
    """

    links: tuple[LinkSpec, ...]
    base_link: str
    end_effectors: tuple[tuple[str, str, np.ndarray], ...]  # (name, parent link, local offset)
    name: str = ""

    def __post_init__(self):
        seen = {self.base_link}
        for link in self.links:
            if link.name in seen:
                raise ValidationError(f"duplicate link name {link.name!r}")
            if link.parent not in seen:
                raise ValidationError(
                    f"link {link.name!r}: parent {link.parent!r} is not the base or an earlier link"
                )
            seen.add(link.name)
        ee_frozen = []
        ee_names = set()
        for ee_name, parent, offset in self.end_effectors:
            if ee_name in ee_names:
                raise ValidationError(f"duplicate end-effector name {ee_name!r}")
            if parent not in seen:
                raise ValidationError(f"end effector {ee_name!r}: unknown parent link {parent!r}")
            ee_names.add(ee_name)
            ee_frozen.append((ee_name, parent, _frozen_vec3(offset)))
        object.__setattr__(self, "end_effectors", tuple(ee_frozen))
        index = {link.name: i for i, link in enumerate(self.links)}
        object.__setattr__(self, "_index", index)
        # joint indices on the path base -> link, root first
        paths: list[tuple[int, ...]] = []
        for i, link in enumerate(self.links):
            if link.parent == self.base_link:
                paths.append((i,))
            else:
                paths.append(paths[index[link.parent]] + (i,))
        object.__setattr__(self, "_paths", tuple(paths))
        object.__setattr__(self, "_ee_map", {n: (p, o) for n, p, o in self.end_effectors})

    @property
    def dof(self) -> int:
        return len(self.links)

    @property
    def joint_names(self) -> tuple[str, ...]:
        return tuple(link.name for link in self.links)

    @property
    def end_effector_names(self) -> tuple[str, ...]:
        return tuple(name for name, _, _ in self.end_effectors)

    def link_index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise UnknownLink(f"unknown link {name!r}") from None

    def end_effector(self, name: str) -> tuple[str, np.ndarray]:
        try:
            return self._ee_map[name]
        except KeyError:
            raise UnknownEndEffector(f"unknown end effector {name!r}") from None

    def path_joints(self, link_name: str) -> tuple[int, ...]:
        return self._paths[self.link_index(link_name)]

    def limits_array(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([l.joint_limits[0] for l in self.links])
        hi = np.array([l.joint_limits[1] for l in self.links])
        return lo, hi


# ---------------------------------------------------------------------------
# forward kinematics and Jacobians


def _check_q(chain: KinematicChain, q) -> np.ndarray:
    q = np.asarray(q, dtype=float).reshape(-1)
    if q.shape[0] != chain.dof:
        raise DimensionMismatch(f"expected {chain.dof} joint values, got {q.shape[0]}")
    lo, hi = chain.limits_array()
    if np.any(q < lo - math.pi) or np.any(q > hi + math.pi):
        worst = int(np.argmax(np.maximum(lo - q, q - hi)))
        raise ValueError(
            f"joint {chain.links[worst].name!r} exceeds its limits by more than pi"
        )
    if np.any(q < lo) or np.any(q > hi):
        outside = [chain.links[i].name for i in np.flatnonzero((q < lo) | (q > hi))]
        warnings.warn(
            f"configuration outside joint limits for {outside}", JointLimitWarning, stacklevel=3
        )
    return q


def forward_kinematics(chain: KinematicChain, base: BasePose, q) -> dict[str, Frame]:
    """World frames of the base and every link at configuration ``q``.

    Warns (``JointLimitWarning``) outside joint limits and raises once a
    joint exceeds its limits by more than pi; limits are a physical stop, the
    math itself stays valid.
    """
    q = _check_q(chain, q)
    frames: dict[str, Frame] = {chain.base_link: Frame(base.position.copy(), base.rotation)}
    for i, link in enumerate(chain.links):
        parent = frames[link.parent]
        pos = parent.position + parent.rotation @ link.origin_offset
        rot = parent.rotation @ rotation_about_axis(link.joint_axis, q[i])
        frames[link.name] = Frame(pos, rot)
    return frames


def end_effector_position(chain: KinematicChain, frames: dict[str, Frame], ee_name: str) -> np.ndarray:
    parent, offset = chain.end_effector(ee_name)
    f = frames[parent]
    return f.position + f.rotation @ offset


def _world_axes(chain: KinematicChain, base: BasePose, frames: dict[str, Frame]):
    """World joint axes and joint origins, indexed like ``chain.links``."""
    axes, origins = [], []
    for link in chain.links:
        parent = frames[link.parent]
        axes.append(parent.rotation @ link.joint_axis)
        origins.append(frames[link.name].position)
    return axes, origins


def _point_jacobian(
    chain: KinematicChain,
    frames: dict[str, Frame],
    axes,
    origins,
    carrier_link: str,
    point_world: np.ndarray,
) -> np.ndarray:
    """3xN position Jacobian of a point rigidly attached to ``carrier_link``."""
    J = np.zeros((3, chain.dof))
    for i in chain.path_joints(carrier_link):
        ax, ay, az = axes[i]
        rx = point_world[0] - origins[i][0]
        ry = point_world[1] - origins[i][1]
        rz = point_world[2] - origins[i][2]
        # axis x (point - origin), unrolled: np.cross dominates the profile here
        J[0, i] = ay * rz - az * ry
        J[1, i] = az * rx - ax * rz
        J[2, i] = ax * ry - ay * rx
    return J


def position_jacobian(chain: KinematicChain, base: BasePose, q, ee_name: str) -> np.ndarray:
    """3xN Jacobian of an end-effector position w.r.t. the joint angles.

    Column ``i`` is ``axis_i x (p_ee - p_joint_i)`` for joints on the path to
    the end effector and zero elsewhere.
    """
    parent, _ = chain.end_effector(ee_name)
    frames = forward_kinematics(chain, base, q)
    axes, origins = _world_axes(chain, base, frames)
    p_ee = end_effector_position(chain, frames, ee_name)
    return _point_jacobian(chain, frames, axes, origins, parent, p_ee)


def base_jacobian(chain: KinematicChain, base: BasePose, q, ee_name: str) -> np.ndarray:
    """3x6 Jacobian of the end-effector position w.r.t. the base twist.

    Columns are ordered (linear xyz, angular xyz): ``[I | -skew(p_ee - p_base)]``.
    """
    frames = forward_kinematics(chain, base, q)
    p_ee = end_effector_position(chain, frames, ee_name)
    J = np.zeros((3, 6))
    J[:, :3] = np.eye(3)
    J[:, 3:] = -skew(p_ee - base.position)
    return J


def split_jacobian(J_e) -> tuple[np.ndarray, np.ndarray]:
    """Split a task Jacobian into base (first 6) and upper-body columns."""
    J = np.asarray(J_e, dtype=float)
    if J.ndim != 2 or J.shape[1] <= 6:
        raise DimensionMismatch(
            f"expected a matrix with more than 6 columns (6 base + upper), got shape {J.shape}"
        )
    return J[:, :6].copy(), J[:, 6:].copy()


def com_jacobians(chain: KinematicChain, base: BasePose, q):
    """Per-link ``(mass, world com position, 3xN com Jacobian)`` triples."""
    frames = forward_kinematics(chain, base, q)
    axes, origins = _world_axes(chain, base, frames)
    out = []
    for link in chain.links:
        f = frames[link.name]
        p_com = f.position + f.rotation @ link.com_offset
        J = _point_jacobian(chain, frames, axes, origins, link.name, p_com)
        out.append((link.mass, p_com, J))
    return out


def gravity_torques(chain: KinematicChain, base: BasePose, q, g=GRAVITY) -> np.ndarray:
    """Generalized gravity load ``sum_k m_k g^T dp_com_k/dq`` (N m).

    This is the torque gravity itself exerts on the joints (the
    Jacobian-transpose map of the per-link weight forces); a controller
    compensates it by commanding the negative.
    """
    g = np.asarray(g, dtype=float).reshape(3)
    tau = np.zeros(chain.dof)
    for mass, _, J in com_jacobians(chain, base, q):
        if mass > 0.0:
            tau += mass * (J.T @ g)
    return tau


# ---------------------------------------------------------------------------
# model file loading


_LINK_FIELDS = {"name", "parent", "axis", "origin", "mass", "com", "limits", "joint_type"}
_EE_FIELDS = {"name", "parent", "offset"}


def _reject_unknown(record: dict, allowed: set, where: str):
    unknown = set(record) - allowed
    if unknown:
        raise ParseError(f"{where}: unknown field(s) {sorted(unknown)}")


def _require(record: dict, key: str, where: str):
    if key not in record:
        raise ParseError(f"{where}: missing required field {key!r}")
    return record[key]


def load_chain(model_text: str) -> KinematicChain:
    """Parse a ``cotap-model/1`` description into a validated chain."""
    try:
        doc = tomllib.loads(model_text)
    except tomllib.TOMLDecodeError as e:
        raise ParseError(f"model: invalid TOML: {e}") from e
    fmt = doc.get("format")
    if fmt != MODEL_FORMAT:
        raise ParseError(f"model: expected format = {MODEL_FORMAT!r}, got {fmt!r}")
    _reject_unknown(doc, {"format", "name", "base", "link", "end_effector"}, "model")
    base = _require(doc, "base", "model")
    _reject_unknown(base, {"link"}, "[base]")
    base_link = _require(base, "link", "[base]")

    links = []
    for rec in doc.get("link", []):
        where = f"link {rec.get('name', '?')!r}"
        _reject_unknown(rec, _LINK_FIELDS, where)
        links.append(
            LinkSpec(
                name=_require(rec, "name", where),
                parent=_require(rec, "parent", where),
                joint_axis=_require(rec, "axis", where),
                origin_offset=_require(rec, "origin", where),
                mass=float(_require(rec, "mass", where)),
                com_offset=_require(rec, "com", where),
                joint_limits=tuple(float(x) for x in _require(rec, "limits", where)),
                joint_type=rec.get("joint_type", "revolute"),
            )
        )
    if not links:
        raise ValidationError("model declares no links")

    ees = []
    for rec in doc.get("end_effector", []):
        where = f"end_effector {rec.get('name', '?')!r}"
        _reject_unknown(rec, _EE_FIELDS, where)
        ees.append(
            (
                _require(rec, "name", where),
                _require(rec, "parent", where),
                np.asarray(_require(rec, "offset", where), dtype=float),
            )
        )
    if not ees:
        raise ValidationError("model declares no end effectors")

    return KinematicChain(
        links=tuple(links),
        base_link=base_link,
        end_effectors=tuple(ees),
        name=doc.get("name", ""),
    )


def load_chain_file(path) -> KinematicChain:
    with open(path, "r", encoding="utf-8") as fh:
        return load_chain(fh.read())
