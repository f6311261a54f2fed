"""Photon statistics of one oscillator across threshold.

Prints the closed-form mean photon number, g2(0) and Mandel Q over a pump
grid, then spot-checks two pump values with the truncated positive-P engine.
The stochastic part uses a short protocol so the script ends in about a
minute; pass ``--traj`` to tighten the error bars.

    python demos/photon_statistics.py --traj 2000
"""

import argparse

import numpy as np

from nopo import NetworkConfig, NopoParams, RunPlan, run
from nopo.analytic import analytic_stats


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--traj", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    # gamma_p = 50, G = 0.05 in units of gamma_s
    base = NopoParams.from_pump(50.0, 0.05, 1.0)

    print(f"{'p':>6} {'<n>':>12} {'g2':>9} {'Q':>9}")
    for p in np.round(np.geomspace(0.1, 10.0, 13), 3):
        s = analytic_stats(base.with_pump(p))
        print(f"{p:6.3g} {s['n_mean']:12.5g} {s['g2']:9.5f} {s['mandel_q']:9.4f}")

    # below threshold the light is nearly thermal; above it Q turns negative
    print("\ntruncated positive-P, ramp 20 and window 20 (units of 1/gamma_s)")
    for p in (0.5, 5.0):
        plan = RunPlan("tpsde", NetworkConfig.solitary(base), p, dt=5e-3, ramp_time=20.0,
                       average_window=20.0, n_traj=args.traj, master_seed=args.seed)
        s = run(plan)[-1].stats
        a = analytic_stats(base.with_pump(p))
        print(f"p={p:g}: <n> {s['n_mean']:.4g} +- {s['n_mean_err']:.2g} (closed form "
              f"{a['n_mean']:.4g}), Q {s['mandel_q']:.4f} +- {s['mandel_q_err']:.2g} "
              f"(closed form {a['mandel_q']:.4f})")


if __name__ == "__main__":
    main()
