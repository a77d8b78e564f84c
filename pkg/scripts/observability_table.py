"""Tabulate the observability constant of the modal system with eigenvalues k^2 against observation time."""
import argparse

import numpy as np

from delaydamp.modal import ModalSystem
from delaydamp.observability import observability_table, truncation_check


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--K", type=int, default=8)
    ap.add_argument("--times", type=float, nargs="+", default=[0.5, 1.0, 2.0, np.pi, 2 * np.pi, 4 * np.pi])
    args = ap.parse_args()

    s = ModalSystem.identity(np.arange(1, args.K + 1.0) ** 2)
    print("T,c")
    for T, c in observability_table(s, args.times):
        print(f"{T:.6g},{c:.10g}")
    tc = truncation_check(s, max(args.times))
    print(f"# c with {args.K // 2} modes differs by {tc.rel_change:.2%} at T={max(args.times):.4g}")


if __name__ == "__main__":
    main()
