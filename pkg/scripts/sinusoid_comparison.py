#!/usr/bin/env python3
"""Elbow torque under a periodic hand load: pure PD vs modulated compliance.

Runs the bundled 30 N / 4 s sinusoid scenario once per blend ratio and
reports the left-elbow torque RMS over the complete cycles after the first.
The softer modulated arm gives way to the load, which shortens the moment
arms and lowers the torque it has to supply.
"""

import argparse

import numpy as np

import cotap
from cotap.scenario import apply_variation


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--alphas", type=float, nargs="+", default=[0.0, 0.3, 0.7, 1.0])
    parser.add_argument("--settle", type=float, default=5.0, help="discard trace before this time")
    args = parser.parse_args()

    cfg = cotap.load_scenario(cotap.data_path("scenarios/sinusoid_load.toml"))
    elbow = cfg.q_target.shape[0] // 2 - 1  # left elbow is the last left-arm joint
    print(f"{'alpha':>6} {'elbow RMS [Nm]':>15} {'e_ee [m]':>10} {'J_upper [Nm]':>13}")
    for alpha in args.alphas:
        res = cotap.run_scenario(apply_variation(cfg, "alpha", alpha))
        mask = res.t >= args.settle
        rms = float(np.sqrt(np.mean(res.tau[mask, elbow] ** 2)))
        label = "PD" if alpha == 0.0 else f"{alpha:g}"
        print(f"{label:>6} {rms:15.4f} {res.metrics.e_ee:10.4f} {res.metrics.j_upper:13.3f}")


if __name__ == "__main__":
    main()
