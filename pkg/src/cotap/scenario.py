"""Declarative scenario descriptions: load/impact/sinusoid experiments.

A scenario file (``format = "cotap-scenario/1"``) names a robot model,
a controller block, external force profiles, duration/seed and output paths.
Parsing is strict: unknown fields are rejected so typos fail loudly instead
of silently running a different experiment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import ParseError, ValidationError

SCENARIO_FORMAT = "cotap-scenario/1"

CONTROLLER_KINDS = ("pd", "cotap", "facet", "cotap_facet")
FORCE_KINDS = ("constant", "impulse", "sinusoid")

# Controller parameters cmd_sweep may vary.
SWEEP_KEYS = ("k_ee_x", "k_ee_y", "k_ee_z", "alpha", "k_null", "damping_ratio")


@dataclass(frozen=True)
class ExternalForceProfile:
    """One external force applied at an end effector.

    ``vector`` is the force for constant/impulse profiles and the amplitude
    for sinusoids (``f(t) = vector * sin(2 pi (t - start) / period)``).
    """

    kind: str
    vector: np.ndarray
    target_ee: str
    start: float = 0.0
    duration: float | None = None
    period: float | None = None

    def __post_init__(self):
        if self.kind not in FORCE_KINDS:
            raise ValidationError(f"force kind {self.kind!r} not one of {FORCE_KINDS}")
        v = np.array(self.vector, dtype=float).reshape(3)
        v.setflags(write=False)
        object.__setattr__(self, "vector", v)
        if self.start < 0.0:
            raise ValidationError("force start must be >= 0")
        if self.kind == "impulse" and not (self.duration is not None and self.duration > 0.0):
            raise ValidationError("impulse force requires duration > 0")
        if self.kind == "sinusoid" and not (self.period is not None and self.period > 0.0):
            raise ValidationError("sinusoid force requires period > 0")
        if self.duration is not None and not self.duration > 0.0:
            raise ValidationError("force duration must be > 0 when given")

    def force_at(self, t: float) -> np.ndarray:
        if t < self.start:
            return np.zeros(3)
        if self.duration is not None and t >= self.start + self.duration:
            return np.zeros(3)
        if self.kind == "sinusoid":
            return self.vector * math.sin(2.0 * math.pi * (t - self.start) / self.period)
        return self.vector.copy()


@dataclass(frozen=True)
class FacetSettings:
    """Reference-generator parameters for facet / cotap_facet controllers."""

    k_e: np.ndarray                 # 3x3 N/m
    virtual_mass: float = 2.0
    damping_ratio: float = 0.9
    lambda_dls: float = 0.05
    step_clamp: float = 0.2

    def __post_init__(self):
        k = np.array(self.k_e, dtype=float)
        if k.shape != (3, 3):
            raise ValidationError("facet k_e must resolve to a 3x3 matrix")
        k.setflags(write=False)
        object.__setattr__(self, "k_e", k)
        if not self.virtual_mass > 0.0:
            raise ValidationError("facet virtual_mass must be > 0")


@dataclass(frozen=True)
class ControllerSettings:
    """Controller block of a scenario."""

    kind: str
    ee: str | None = None           # tracked end effector; default: first in model
    alpha: float = 1.0
    k_null: float = 25.0
    kp_joint: object = 100.0        # scalar or per-joint sequence, Nm/rad
    damping_ratio: float = 1.0
    fallback: str = "error"
    k_ee: np.ndarray = field(default_factory=lambda: np.diag([300.0, 300.0, 300.0]))
    k_torso_inv: np.ndarray | None = None
    facet: FacetSettings | None = None

    def __post_init__(self):
        if self.kind not in CONTROLLER_KINDS:
            raise ValidationError(f"controller kind {self.kind!r} not one of {CONTROLLER_KINDS}")
        if self.fallback not in ("error", "pd"):
            raise ValidationError("controller fallback must be 'error' or 'pd'")
        k = np.array(self.k_ee, dtype=float)
        if k.shape != (3, 3):
            raise ValidationError("k_ee must resolve to a 3x3 matrix")
        k.setflags(write=False)
        object.__setattr__(self, "k_ee", k)
        if self.k_torso_inv is not None:
            kt = np.array(self.k_torso_inv, dtype=float)
            if kt.shape != (6, 6):
                raise ValidationError("k_torso_inv must resolve to a 6x6 matrix")
            kt.setflags(write=False)
            object.__setattr__(self, "k_torso_inv", kt)
        if self.kind in ("facet", "cotap_facet") and self.facet is None:
            object.__setattr__(self, "facet", FacetSettings(k_e=self.k_ee.copy()))


@dataclass(frozen=True)
class TorsoScript:
    """Externally scripted base motion plus the reference it is judged against."""

    velocity: np.ndarray
    reference_velocity: np.ndarray | None = None

    def __post_init__(self):
        v = np.array(self.velocity, dtype=float).reshape(3)
        v.setflags(write=False)
        object.__setattr__(self, "velocity", v)
        if self.reference_velocity is not None:
            r = np.array(self.reference_velocity, dtype=float).reshape(3)
            r.setflags(write=False)
            object.__setattr__(self, "reference_velocity", r)

    def position_at(self, t: float) -> np.ndarray:
        return self.velocity * t


@dataclass(frozen=True)
class ScenarioConfig:
    """Fully resolved scenario: model path, controller, forces, outputs."""

    model_path: Path
    controller: ControllerSettings
    q_target: np.ndarray
    duration: float
    forces: tuple[ExternalForceProfile, ...] = ()
    seed: int = 0
    dt: float = 0.001
    control_dt: float = 0.02
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))
    gravity_mismatch: float = 1.0
    armature: float = 0.02
    q_start: np.ndarray | None = None
    torso: TorsoScript | None = None
    trace_name: str = "trace.csv"
    metrics_name: str = "metrics.json"
    trace_ee: str | None = None
    name: str = ""

    def __post_init__(self):
        if not self.duration > 0.0:
            raise ValidationError("duration must be > 0")
        if not 0.0 < self.dt <= 0.005:
            raise ValidationError("inner dt must lie in (0, 0.005] s")
        steps = self.control_dt / self.dt
        if not self.control_dt > 0.0 or abs(steps - round(steps)) > 1e-9:
            raise ValidationError("control_dt must be a positive multiple of dt")
        q = np.array(self.q_target, dtype=float).reshape(-1)
        q.setflags(write=False)
        object.__setattr__(self, "q_target", q)
        if self.q_start is not None:
            qs = np.array(self.q_start, dtype=float).reshape(-1)
            if qs.shape != q.shape:
                raise ValidationError("q_start length differs from q_upper target")
            qs.setflags(write=False)
            object.__setattr__(self, "q_start", qs)
        g = np.array(self.gravity, dtype=float).reshape(3)
        g.setflags(write=False)
        object.__setattr__(self, "gravity", g)
        object.__setattr__(self, "model_path", Path(self.model_path))


# ---------------------------------------------------------------------------
# parsing


def _reject_unknown(record: dict, allowed: set, where: str):
    unknown = set(record) - allowed
    if unknown:
        raise ParseError(f"{where}: unknown field(s) {sorted(unknown)}")


def _matrix3(value, where: str) -> np.ndarray:
    a = np.asarray(value, dtype=float)
    if a.shape == (3,):
        return np.diag(a)
    if a.shape == (3, 3):
        return a
    raise ValidationError(f"{where}: expected 3 diagonal entries or a full 3x3 matrix")


def load_scenario(path) -> ScenarioConfig:
    """Parse and validate a ``cotap-scenario/1`` file."""
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as e:
        raise ParseError(f"scenario: invalid TOML: {e}") from e
    fmt = doc.get("format")
    if fmt != SCENARIO_FORMAT:
        raise ParseError(f"scenario: expected format = {SCENARIO_FORMAT!r}, got {fmt!r}")
    _reject_unknown(
        doc,
        {"format", "name", "robot", "controller", "simulation", "target", "torso", "force", "output"},
        "scenario",
    )

    robot = doc.get("robot", {})
    _reject_unknown(robot, {"model"}, "[robot]")
    if "model" not in robot:
        raise ParseError("[robot]: missing required field 'model'")
    model_path = (path.parent / robot["model"]).resolve()
    if not model_path.is_file():
        raise ValidationError(f"[robot]: model file {model_path} does not exist")

    ctl = doc.get("controller", {})
    _reject_unknown(
        ctl,
        {"kind", "ee", "alpha", "k_null", "kp_joint", "damping_ratio", "fallback",
         "k_ee", "k_torso_inv", "facet"},
        "[controller]",
    )
    if "kind" not in ctl:
        raise ParseError("[controller]: missing required field 'kind'")
    facet = None
    if "facet" in ctl:
        fac = ctl["facet"]
        _reject_unknown(
            fac, {"k_e", "virtual_mass", "damping_ratio", "lambda_dls", "step_clamp"}, "[controller.facet]"
        )
        facet = FacetSettings(
            k_e=_matrix3(fac["k_e"], "[controller.facet] k_e") if "k_e" in fac
            else _matrix3(ctl.get("k_ee", [300.0, 300.0, 300.0]), "[controller] k_ee"),
            virtual_mass=float(fac.get("virtual_mass", 2.0)),
            damping_ratio=float(fac.get("damping_ratio", 0.9)),
            lambda_dls=float(fac.get("lambda_dls", 0.05)),
            step_clamp=float(fac.get("step_clamp", 0.2)),
        )
    controller = ControllerSettings(
        kind=ctl["kind"],
        ee=ctl.get("ee"),
        alpha=float(ctl.get("alpha", 1.0)),
        k_null=float(ctl.get("k_null", 25.0)),
        kp_joint=ctl.get("kp_joint", 100.0),
        damping_ratio=float(ctl.get("damping_ratio", 1.0)),
        fallback=ctl.get("fallback", "error"),
        k_ee=_matrix3(ctl.get("k_ee", [300.0, 300.0, 300.0]), "[controller] k_ee"),
        k_torso_inv=np.diag(np.asarray(ctl["k_torso_inv"], dtype=float))
        if "k_torso_inv" in ctl
        else None,
        facet=facet,
    )

    sim = doc.get("simulation", {})
    _reject_unknown(
        sim,
        {"duration", "dt", "control_dt", "seed", "gravity", "gravity_mismatch", "armature"},
        "[simulation]",
    )
    if "duration" not in sim:
        raise ParseError("[simulation]: missing required field 'duration'")

    target = doc.get("target", {})
    _reject_unknown(target, {"q_upper", "q_start"}, "[target]")
    if "q_upper" not in target:
        raise ParseError("[target]: missing required field 'q_upper'")

    torso = None
    if "torso" in doc:
        tor = doc["torso"]
        _reject_unknown(tor, {"velocity", "reference_velocity"}, "[torso]")
        torso = TorsoScript(
            velocity=tor.get("velocity", [0.0, 0.0, 0.0]),
            reference_velocity=tor.get("reference_velocity"),
        )

    forces = []
    for i, rec in enumerate(doc.get("force", [])):
        where = f"[[force]] #{i}"
        _reject_unknown(rec, {"kind", "ee", "vector", "amplitude", "start", "duration", "period"}, where)
        if "vector" in rec and "amplitude" in rec:
            raise ParseError(f"{where}: give either 'vector' or 'amplitude', not both")
        if "vector" not in rec and "amplitude" not in rec:
            raise ParseError(f"{where}: missing 'vector' (or 'amplitude')")
        if "ee" not in rec:
            raise ParseError(f"{where}: missing 'ee'")
        forces.append(
            ExternalForceProfile(
                kind=rec.get("kind", "constant"),
                vector=rec.get("vector", rec.get("amplitude")),
                target_ee=rec["ee"],
                start=float(rec.get("start", 0.0)),
                duration=float(rec["duration"]) if "duration" in rec else None,
                period=float(rec["period"]) if "period" in rec else None,
            )
        )

    out = doc.get("output", {})
    _reject_unknown(out, {"trace", "metrics", "trace_ee"}, "[output]")

    return ScenarioConfig(
        model_path=model_path,
        controller=controller,
        q_target=target["q_upper"],
        q_start=target.get("q_start"),
        duration=float(sim["duration"]),
        forces=tuple(forces),
        seed=int(sim.get("seed", 0)),
        dt=float(sim.get("dt", 0.001)),
        control_dt=float(sim.get("control_dt", 0.02)),
        gravity=sim.get("gravity", [0.0, 0.0, -9.81]),
        gravity_mismatch=float(sim.get("gravity_mismatch", 1.0)),
        armature=float(sim.get("armature", 0.02)),
        torso=torso,
        trace_name=out.get("trace", "trace.csv"),
        metrics_name=out.get("metrics", "metrics.json"),
        trace_ee=out.get("trace_ee"),
        name=doc.get("name", ""),
    )


def apply_variation(config: ScenarioConfig, key: str, value: float) -> ScenarioConfig:
    """Return a copy of ``config`` with one swept controller parameter changed."""
    if key not in SWEEP_KEYS:
        raise ValidationError(f"unknown sweep key {key!r}; expected one of {SWEEP_KEYS}")
    ctl = config.controller
    if key in ("alpha", "k_null", "damping_ratio"):
        ctl = replace(ctl, **{key: float(value)})
    else:
        i = {"k_ee_x": 0, "k_ee_y": 1, "k_ee_z": 2}[key]
        k = np.array(ctl.k_ee, dtype=float)
        k[i, i] = float(value)
        ctl = replace(ctl, k_ee=k)
        if ctl.facet is not None and config.controller.kind in ("facet", "cotap_facet"):
            ke = np.array(ctl.facet.k_e, dtype=float)
            ke[i, i] = float(value)
            ctl = replace(ctl, facet=replace(ctl.facet, k_e=ke))
    return replace(config, controller=ctl)


def config_summary(config: ScenarioConfig) -> dict:
    """JSON-ready echo of the scenario for the metrics file."""
    ctl = config.controller
    summary = {
        "name": config.name,
        "model": str(config.model_path),
        "controller": {
            "kind": ctl.kind,
            "ee": ctl.ee,
            "alpha": ctl.alpha,
            "k_null": ctl.k_null,
            "kp_joint": ctl.kp_joint if np.isscalar(ctl.kp_joint) else list(ctl.kp_joint),
            "damping_ratio": ctl.damping_ratio,
            "fallback": ctl.fallback,
            "k_ee": np.asarray(ctl.k_ee).tolist(),
        },
        "duration": config.duration,
        "seed": config.seed,
        "dt": config.dt,
        "control_dt": config.control_dt,
        "gravity": config.gravity.tolist(),
        "gravity_mismatch": config.gravity_mismatch,
        "armature": config.armature,
        "forces": [
            {
                "kind": f.kind,
                "vector": f.vector.tolist(),
                "ee": f.target_ee,
                "start": f.start,
                "duration": f.duration,
                "period": f.period,
            }
            for f in config.forces
        ],
    }
    if ctl.facet is not None:
        summary["controller"]["facet"] = {
            "k_e": np.asarray(ctl.facet.k_e).tolist(),
            "virtual_mass": ctl.facet.virtual_mass,
            "damping_ratio": ctl.facet.damping_ratio,
            "lambda_dls": ctl.facet.lambda_dls,
            "step_clamp": ctl.facet.step_clamp,
        }
    return summary
