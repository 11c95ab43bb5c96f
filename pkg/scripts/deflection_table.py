#!/usr/bin/env python3
"""Constant-load deflection table: compliance controller vs impedance reference.

Applies 10/30/50 N downward loads to the left hand with the z task stiffness
at 500 N/m and compares the steady deflection against the analytic ideal
|f| / k. The compliance controller is judged on the measured hand error, the
reference generator on its converged x_ref.
"""

import argparse
import dataclasses

import numpy as np

import cotap


def steady_deflection(kind: str, load: float) -> float:
    cfg = cotap.load_scenario(cotap.data_path(f"scenarios/constant_load_{kind}.toml"))
    force = dataclasses.replace(cfg.forces[0], vector=np.array([0.0, 0.0, -load]))
    res = cotap.run_scenario(dataclasses.replace(cfg, forces=(force,)))
    key = "ref_error_z" if kind == "facet" else "ee_error_z"
    return res.steady[key]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--loads", type=float, nargs="+", default=[10.0, 30.0, 50.0])
    parser.add_argument("--out", default=None, help="optional CSV output path")
    args = parser.parse_args()

    rows = []
    print(f"{'load [N]':>9} {'ideal [m]':>10} {'cotap [m]':>10} {'facet ref [m]':>14}")
    for load in args.loads:
        ideal = load / 500.0
        z_cotap = steady_deflection("cotap", load)
        z_facet = steady_deflection("facet", load)
        print(f"{load:9.1f} {ideal:10.4f} {z_cotap:10.4f} {z_facet:14.4f}")
        rows.append((load, ideal, z_cotap, z_facet))

    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("load_n,ideal_m,cotap_m,facet_ref_m\n")
            for row in rows:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
