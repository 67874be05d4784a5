"""Weight moments and the exponential functional near the simplex boundary."""
import argparse

import numpy as np

from wfmfg.model import default_kappa, preset_scenario
from wfmfg.policy import ZeroPolicy
from wfmfg.verify import exp_bound_check, paired_exp_comparison, weight_moment_check


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--N", type=int, default=20)
    ap.add_argument("--M", type=int, default=1500)
    ap.add_argument("--seed", type=int, default=44)
    ap.add_argument("--tau-mode", default="none", choices=("localised", "support", "none"))
    args = ap.parse_args()

    kappa = default_kappa(1.0, 0.1)
    spec = preset_scenario("voter", kappa=kappa)
    pol = ZeroPolicy(2)
    print(f"kappa = {kappa:.3f}")
    for n0 in range(args.N // 2, args.N, max(1, args.N // 10)):
        x0 = np.array([0] * n0 + [1] * (args.N - n0))
        s = weight_moment_check(spec, args.N, pol, x0, ell=3, M=args.M, seed=args.seed,
                                tau_mode=args.tau_mode)["statistics"]
        e = exp_bound_check(spec, args.N, pol, x0, lam=1.0, M=args.M, seed=args.seed,
                            tau_mode="support")["statistics"]
        print(f"mu0={n0 / args.N:.2f}  sup E[y^3] = {s['sup_moment']:.3f} +- {s['sup_moment_se']:.3f}"
              f"  exp estimate = {np.round(e['estimate'], 3).tolist()}")
    x0 = np.array([0] * (args.N // 2) + [1] * (args.N - args.N // 2))
    k = paired_exp_comparison(spec, args.N, pol, x0, (kappa, 2 * kappa), lam=1.0, M=args.M, seed=args.seed)
    print(f"doubling kappa: mean change {np.round(k['statistics']['mean_difference'], 3).tolist()}"
          f" (SE {np.round(k['statistics']['difference_se'], 3).tolist()}), pass={k['pass']}")


if __name__ == "__main__":
    main()
