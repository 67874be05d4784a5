"""Nash vs master-equation value gap for small N, by region."""
import argparse
import time

from wfmfg.master_eq import solve_master
from wfmfg.model import preset_scenario
from wfmfg.nash import solve_nash, value_gap


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--N", type=int, nargs="+", default=[2, 3, 4])
    ap.add_argument("--dy", type=float, default=0.25)
    ap.add_argument("--dx", type=float, default=1 / 400)
    args = ap.parse_args()

    spec = preset_scenario("voter", noise_convention="eps")
    U = solve_master(spec, args.dx)
    print(f"{'N':>3} {'region':>8} {'nodes':>7} {'raw':>9} {'weighted':>9} {'secs':>6}")
    for N in args.N:
        t0 = time.time()
        gap = value_gap(solve_nash(spec, N, dy=args.dy), U)
        secs = time.time() - t0
        for region in ("unit", "relaxed", "all", "strict"):
            g = gap[region]
            if not g["nodes"]:
                print(f"{N:>3} {region:>8} {0:>7} {'empty':>9}")
                continue
            print(f"{N:>3} {region:>8} {g['nodes']:>7} {g['raw_sup']:9.4f} {g['weighted_sup']:9.4f} {secs:6.1f}")


if __name__ == "__main__":
    main()
