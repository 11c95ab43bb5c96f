"""Command-line front end: validate models/scenarios, run them, sweep parameters.

Exit codes are a stable contract: 0 success, 2 configuration or validation
failure, 3 runtime divergence or controller failure. Failures print a
machine-readable JSON object on stderr. ``COTAP_LOG`` selects log verbosity.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import CotapError, ParseError, ValidationError
from .kinematics import MODEL_FORMAT, load_chain, load_chain_file
from .scenario import SCENARIO_FORMAT, SWEEP_KEYS, apply_variation, load_scenario
from .simdyn import run_scenario, write_metrics_json, write_trace_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

log = logging.getLogger("cotap.cli")


def _emit_error(exc: Exception, **extra) -> None:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    step = getattr(exc, "step_index", None)
    if step is not None:
        payload["step_index"] = step
    payload.update(extra)
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)


def _sniff_format(path: Path) -> str:
    try:
        doc = tomllib.loads(path.read_text(encoding="utf-8"))
    except (OSError, tomllib.TOMLDecodeError) as e:
        raise ParseError(f"{path}: {e}") from e
    fmt = doc.get("format")
    if not isinstance(fmt, str):
        raise ParseError(f"{path}: missing 'format' header field")
    return fmt


def cmd_validate(args) -> int:
    path = Path(args.path)
    try:
        if not path.is_file():
            raise OSError(f"no such file: {path}")
        fmt = _sniff_format(path)
        if fmt == MODEL_FORMAT:
            chain = load_chain(path.read_text(encoding="utf-8"))
            print(
                f"ok: model {chain.name or path.name!r}: {chain.dof} DOF, "
                f"end effectors: {', '.join(chain.end_effector_names)}"
            )
        elif fmt == SCENARIO_FORMAT:
            config = load_scenario(path)
            chain = load_chain_file(config.model_path)
            if config.q_target.shape[0] != chain.dof:
                raise ValidationError(
                    f"[target] q_upper needs {chain.dof} entries, got {config.q_target.shape[0]}"
                )
            print(
                f"ok: scenario {config.name or path.name!r}: controller={config.controller.kind}, "
                f"duration={config.duration:g} s, forces={len(config.forces)}, model {chain.dof} DOF"
            )
        else:
            raise ParseError(f"unrecognized format {fmt!r}")
    except (CotapError, OSError) as e:
        _emit_error(e, path=str(path))
        return EXIT_CONFIG
    return EXIT_OK


def _load_with_overrides(args):
    config = load_scenario(args.scenario)
    if getattr(args, "seed_override", None) is not None:
        config = dataclasses.replace(config, seed=args.seed_override)
    if getattr(args, "dt", None) is not None:
        config = dataclasses.replace(config, dt=args.dt)
    return config


def _print_metrics(tag: str, result) -> None:
    m = result.metrics
    torso = "n/a" if m.e_torso is None else f"{m.e_torso:.6g}"
    print(
        f"{tag}: e_torso={torso} e_ee={m.e_ee:.6g} m  J_upper={m.j_upper:.6g} Nm  "
        f"e_upper={m.e_upper:.6g} rad  steady_ee_err_z={result.steady['ee_error_z']:.6g} m"
    )


def cmd_run(args) -> int:
    try:
        config = _load_with_overrides(args)
    except (CotapError, OSError) as e:
        _emit_error(e)
        return EXIT_CONFIG
    try:
        result = run_scenario(config)
    except (CotapError, OSError) as e:
        _emit_error(e)
        return EXIT_RUNTIME
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    trace = outdir / config.trace_name
    metrics = outdir / config.metrics_name
    write_trace_csv(result, trace)
    write_metrics_json(result, metrics)
    _print_metrics(config.name or "scenario", result)
    print(f"wrote {trace} and {metrics}")
    return EXIT_OK


def _parse_vary(spec: str):
    if "=" not in spec:
        raise ValidationError("--vary expects key=v1,v2,...")
    key, _, rest = spec.partition("=")
    key = key.strip()
    if key not in SWEEP_KEYS:
        raise ValidationError(f"unknown sweep key {key!r}; expected one of {SWEEP_KEYS}")
    try:
        values = [float(v) for v in rest.split(",") if v.strip()]
    except ValueError as e:
        raise ValidationError(f"--vary values must be numbers: {e}") from None
    if not values:
        raise ValidationError("--vary needs at least one value")
    return key, sorted(values)


SWEEP_COLUMNS = ("e_torso", "e_ee", "j_upper", "e_upper", "steady_ee_error_norm", "steady_ee_error_z")


def cmd_sweep(args) -> int:
    try:
        config = _load_with_overrides(args)
        key, values = _parse_vary(args.vary) if args.vary else (None, [None])
    except (CotapError, OSError) as e:
        _emit_error(e)
        return EXIT_CONFIG
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    rows = []
    for value in values:
        variant = config if value is None else apply_variation(config, key, value)
        label = "base" if value is None else f"{key}_{value:g}"
        try:
            result = run_scenario(variant)
        except (CotapError, OSError) as e:
            _emit_error(e, variant=label)
            return EXIT_RUNTIME
        vdir = outdir / label
        vdir.mkdir(parents=True, exist_ok=True)
        write_trace_csv(result, vdir / variant.trace_name)
        write_metrics_json(result, vdir / variant.metrics_name)
        m = result.metrics
        rows.append(
            {
                "variant": label,
                "value": value,
                "e_torso": m.e_torso,
                "e_ee": m.e_ee,
                "j_upper": m.j_upper,
                "e_upper": m.e_upper,
                "steady_ee_error_norm": result.steady["ee_error_norm"],
                "steady_ee_error_z": result.steady["ee_error_z"],
            }
        )
        _print_metrics(label, result)

    header = ["variant", "value", *SWEEP_COLUMNS]
    lines = [",".join(header)]
    for row in rows:
        cells = [row["variant"], "" if row["value"] is None else repr(float(row["value"]))]
        for col in SWEEP_COLUMNS:
            cells.append("" if row[col] is None else repr(float(row[col])))
        lines.append(",".join(cells))
    (outdir / "sweep.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    payload = {"vary": key, "rows": rows}
    (outdir / "sweep.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"wrote {outdir / 'sweep.csv'} and {outdir / 'sweep.json'}")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cotap",
        description="Validate and run compliance-control scenarios.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="validate a model or scenario file")
    p.add_argument("path")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="run one scenario, write trace.csv and metrics.json")
    p.add_argument("scenario")
    p.add_argument("--out", default=".", help="output directory (default: current)")
    p.add_argument("--seed-override", type=int, default=None)
    p.add_argument("--dt", type=float, default=None, help="override the inner physics step")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run variants over one controller parameter")
    p.add_argument("scenario")
    p.add_argument("--vary", default=None, help="key=v1,v2,... with key one of " + ", ".join(SWEEP_KEYS))
    p.add_argument("--out", default=".", help="output directory (default: current)")
    p.add_argument("--seed-override", type=int, default=None)
    p.add_argument("--dt", type=float, default=None)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    level = os.environ.get("COTAP_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    args = _build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
