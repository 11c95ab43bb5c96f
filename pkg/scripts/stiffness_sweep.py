#!/usr/bin/env python3
"""Steady-state hand error vs task stiffness under a constant -50 N load.

Higher z stiffness should leave a strictly smaller residual at steady state.
"""

import argparse

import cotap
from cotap.scenario import apply_variation


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--stiffness", type=float, nargs="+", default=[100.0, 300.0, 500.0, 800.0])
    args = parser.parse_args()

    cfg = cotap.load_scenario(cotap.data_path("scenarios/constant_load_cotap.toml"))
    print(f"{'k_ee_z [N/m]':>13} {'steady |e| [m]':>15} {'steady e_z [m]':>15} {'J_upper [Nm]':>13}")
    for kz in args.stiffness:
        res = cotap.run_scenario(apply_variation(cfg, "k_ee_z", kz))
        print(
            f"{kz:13.0f} {res.steady['ee_error_norm']:15.4f} "
            f"{res.steady['ee_error_z']:15.4f} {res.metrics.j_upper:13.3f}"
        )


if __name__ == "__main__":
    main()
