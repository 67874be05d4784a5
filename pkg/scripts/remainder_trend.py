"""Residual of the mean-field candidate in the N-player Nash system,
under both noise conventions."""
import argparse

from wfmfg.master_eq import solve_master
from wfmfg.model import preset_scenario
from wfmfg.verify import nash_remainder_check


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--N", type=int, nargs="+", default=[2, 3, 4])
    ap.add_argument("--dx", type=float, default=1 / 400)
    args = ap.parse_args()
    for conv in ("eps", "eps2"):
        spec = preset_scenario("voter", noise_convention=conv)
        v = nash_remainder_check(solve_master(spec, args.dx), spec, args.N)
        vals = ", ".join(f"N={r['N']}: {r['max_remainder']:.4f}" for r in v["statistics"]["rows"])
        print(f"{conv:>5}: {vals}  decreasing={v['pass']}")


if __name__ == "__main__":
    main()
