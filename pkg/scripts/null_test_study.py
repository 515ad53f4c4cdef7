"""Size and power of the split-sample test of zero importance.

Size uses a randomized trial where X1 has no effect modification (known
propensity 0.5); power uses the two-covariate simulation DGP.
"""

import argparse
import time

import numpy as np

from tevim.nuisance import KnownConstant
from tevim.simulation import generate_dgp, generate_null_dgp, null_test_p_values


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=4000)
    parser.add_argument("--replicates", type=int, default=500)
    parser.add_argument("--power-replicates", type=int, default=200)
    parser.add_argument("--alpha", type=float, default=0.05)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--skip-power", action="store_true")
    args = parser.parse_args()

    t0 = time.perf_counter()
    p = null_test_p_values(
        generate_null_dgp, args.n, args.replicates, args.seed, KnownConstant(0.5), threads=args.threads
    )
    print(f"size  n={args.n} reps={args.replicates}: {np.mean(p < args.alpha):.3f} "
          f"({time.perf_counter() - t0:.1f}s)")
    if not args.skip_power:
        t0 = time.perf_counter()
        p = null_test_p_values(generate_dgp, args.n, args.power_replicates, args.seed, threads=args.threads)
        print(f"power n={args.n} reps={args.power_replicates}: {np.mean(p < args.alpha):.3f} "
              f"({time.perf_counter() - t0:.1f}s)")


if __name__ == "__main__":
    main()
