"""KS distance between the N-player empirical measure and the limit SDE at time T."""
import argparse
import json

from wfmfg.master_eq import solve_master
from wfmfg.model import preset_scenario
from wfmfg.verify import weak_convergence_study, write_verdict


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--N", type=int, nargs="+", default=[8, 32, 128])
    ap.add_argument("--M", type=int, default=2000)
    ap.add_argument("--M-sde", type=int, default=20000)
    ap.add_argument("--seeds", type=int, nargs="+", default=[11])
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default=None, help="stem for JSON/CSV verdict files")
    args = ap.parse_args()

    spec = preset_scenario("voter", noise_convention="eps")
    U = solve_master(spec, 1 / 200)
    for seed in args.seeds:
        v = weak_convergence_study(spec, U, args.N, M=args.M, M_sde=args.M_sde, seed=seed,
                                   p0=(0.625, 0.375), workers=args.workers)
        ks = v["statistics"]["ks_time_average"]
        print(f"seed {seed}: " + ", ".join(f"N={n}: {k:.4f}" for n, k in zip(args.N, ks))
              + f"  decreasing={v['pass']}")
        if args.out:
            write_verdict(v, f"{args.out}_{seed}")
    if args.out:
        print(json.dumps({"written": [f"{args.out}_{s}.json" for s in args.seeds]}))


if __name__ == "__main__":
    main()
