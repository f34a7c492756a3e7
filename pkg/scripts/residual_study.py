"""Subgradient residual and iterate displacement over long runs on the 64x64
instance, for each certified schedule."""

import argparse

from flexbcpg.imaging import ExperimentConfig, run_experiment

SCHEDULES = [("fb", 8), ("cyclic", 8), ("flex", 1), ("flex", 5), ("flex", 8)]


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--cycles", type=int, nargs="+", default=[10, 50, 200, 1000])
    args = p.parse_args()

    n = max(args.cycles)
    print("schedule     " + "".join(f"{'ratio@' + str(c):>14}{'disp@' + str(c):>12}"
                                    for c in args.cycles))
    for kind, m in SCHEDULES:
        cfg = ExperimentConfig(side=64, blur_size=9, blur_std=7.0, schedule=kind, m=m,
                               cycles=n, tol_displacement=0.0, record_residual=True,
                               out_dir="unused")
        cyc = run_experiment(cfg).trace.cycles
        r0 = cyc[0].residual
        row = "".join(f"{cyc[c - 1].residual / r0:14.3e}{cyc[c - 1].displacement:12.2e}"
                      for c in args.cycles)
        print(f"{cfg.label:<13}{row}")


if __name__ == "__main__":
    main()
