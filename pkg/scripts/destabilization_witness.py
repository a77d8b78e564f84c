"""Grow the standard energy with a strong delayed gain acting over a full delay window.

Prints the energy at each cycle start and the growth factor over the run.
"""
import argparse
import math

import numpy as np

from delaydamp.modal import ModalState, ModalSystem, simulate
from delaydamp.schedule import build_schedule, make_profile


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--b1", type=float, default=0.1, help="undelayed gain on active intervals")
    ap.add_argument("--b2", type=float, default=2.0, help="delayed gain on delay intervals")
    ap.add_argument("--cycles", type=int, default=20)
    ap.add_argument("--dt", type=float, default=0.02)
    args = ap.parse_args()

    sch = build_schedule(1.0, 1.0, 1.0, args.cycles)
    pr = make_profile(args.cycles, b1=args.b1, b2=args.b2, schedule=sch)
    tr = simulate(ModalSystem.identity([1.0]), sch, pr, ModalState(0.0, [1.0], [0.0]), args.dt)
    e = tr.switch_energy("E_S")[0::2]
    for n, v in enumerate(e):
        print(f"{n:3d}  {v:.6e}")
    growth = e[-1] / e[0]
    rate = math.log(growth) / args.cycles
    print(f"growth over {args.cycles} cycles: {growth:.3e}  (per cycle {np.exp(rate):.3f})")


if __name__ == "__main__":
    main()
