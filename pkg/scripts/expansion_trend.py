"""Remainder of the second-order shuffle expansion as N grows."""
import argparse

import numpy as np

from wfmfg.master_eq import solve_master
from wfmfg.model import preset_scenario
from wfmfg.verify import common_noise_expansion


def quadratic(i, p):
    return (1 + i) * p[..., 0] ** 2 - p[..., 0] * p[..., 1]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--N", type=int, nargs="+", default=[4, 8, 16, 32])
    ap.add_argument("--t", type=float, default=0.5)
    args = ap.parse_args()
    spec = preset_scenario("voter", noise_convention="eps")
    U = solve_master(spec, 1 / 400)
    mu = np.array([0.75, 0.25])
    for label, field in (("quadratic", quadratic), ("voter surface", U)):
        for N in args.N:
            x = np.array([0] * round(N * mu[0]) + [1] * round(N * mu[1]))
            r = float(np.max(np.abs(common_noise_expansion(field, spec, N, args.t, x, np.ones(N)))))
            print(f"{label:>14} N={N:>3}: remainder {r:.4f}  N*remainder {N * r:.4f}")


if __name__ == "__main__":
    main()
