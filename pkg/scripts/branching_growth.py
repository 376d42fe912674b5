"""Mean footprint of the I/J branching system against exp(2 (1 + lambda) t).

    python scripts/branching_growth.py --lam 0.5 1 --t 0.25 0.5 1 1.5 --runs 5000
"""
import argparse
import math
import sys

from arwlab import JumpKernel
from arwlab.acceptance import branching_sizes


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--lam", type=float, nargs="+", default=[0.5, 1.0])
    parser.add_argument("--t", type=float, nargs="+", default=[0.25, 0.5, 1.0])
    parser.add_argument("--runs", type=int, default=5000)
    parser.add_argument("--dim", type=int, default=1)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    kernel = JumpKernel.simple_symmetric(args.dim)
    print(f"{'lambda':>7} {'t':>6} {'mean |Z_t|':>12} {'stderr':>8} {'bound':>10} {'ratio':>7}")
    for lam in args.lam:
        for t in args.t:
            z = branching_sizes(lam, t, args.runs, args.seed, kernel)
            mean = z.mean()
            se = z.std(ddof=1) / math.sqrt(args.runs)
            bound = math.exp(2 * (1 + lam) * t)
            print(f"{lam:7.3f} {t:6.2f} {mean:12.4f} {se:8.4f} {bound:10.4f} {mean / bound:7.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
