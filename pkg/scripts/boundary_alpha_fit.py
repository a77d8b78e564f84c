"""Fit the boundary quasi-observability constants on random data and gains, then print the boundary contraction.

The fit is an empirical lower estimate and carries no proof.
"""
import argparse

from delaydamp.certify import boundary_dn, contraction_dn_hat
from delaydamp.observability import estimate_boundary_alphas
from delaydamp.wave import DampingRegion, Grid1D, boundary_system


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--J", type=int, default=40)
    ap.add_argument("--K", type=int, default=12, help="modes kept for the fit")
    ap.add_argument("--T", type=float, default=4.0, help="active length")
    ap.add_argument("--T-bar", type=float, default=2.5)
    ap.add_argument("--samples", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--gain", type=float, default=1.0, help="constant boundary gain used for d_n")
    args = ap.parse_args()

    g = Grid1D(1.0, args.J)
    ws = boundary_system(g, DampingRegion.from_interval(g, 0.5, 1.0, args.J + 1))
    fit = estimate_boundary_alphas(ws.modal.truncate(args.K), args.T, args.T_bar, args.samples, args.seed)
    print(fit.to_dict())
    if fit.feasible:
        d = boundary_dn(*fit.alphas, args.gain, args.gain, args.T, args.T_bar)
        print(f"d_n = {d:.6g}   contraction d_n/(d_n+1) = {contraction_dn_hat(d):.6g}")


if __name__ == "__main__":
    main()
