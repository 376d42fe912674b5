"""Table of F_v(lambda) for nearest-neighbour walks on Z.

For each p(+1) and lambda: the linear-solve value, the closed form, a
Monte Carlo estimate with its standard error, and the critical density
1 - F above which the criterion holds.

    python scripts/fv_table.py --p 0.6 0.75 0.9 --lam 0.1 0.5 1 --samples 100000
"""
import argparse
import sys

from arwlab import JumpKernel, estimate_F, estimate_F_exact_1d
from arwlab.oracles import F_closed_form_nn


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--p", type=float, nargs="+", default=[0.6, 0.75, 0.9, 1.0])
    parser.add_argument("--lam", type=float, nargs="+", default=[0.1, 0.2, 0.5, 1.0])
    parser.add_argument("--samples", type=int, default=100_000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    print(f"{'p':>5} {'lambda':>7} {'solve':>12} {'closed':>12} {'monte carlo':>20} {'1-F':>9}")
    for p in args.p:
        kernel = JumpKernel.nearest_neighbor_1d(p)
        for lam in args.lam:
            ex = estimate_F_exact_1d(kernel, lam)
            mc = estimate_F(kernel, lam, samples=args.samples, seed=args.seed, key=(p, lam))
            mc_text = f"{mc.estimate:.6f}±{mc.stderr:.1e}"
            print(f"{p:5.2f} {lam:7.3f} {ex.estimate:12.9f} {F_closed_form_nn(p, lam):12.9f} "
                  f"{mc_text:>20} {1 - ex.estimate:9.6f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
