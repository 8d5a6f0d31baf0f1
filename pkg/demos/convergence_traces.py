"""Constraint violation against iterations for the three solvers on one instance.

Prints a coarse log-scale view of ``|A x^k|`` and the fitted linear rate of
each trace, and optionally saves a plot when matplotlib is available.
"""

import argparse

import numpy as np

from decaff.harness import ExperimentConfig, run_single
from decaff.trace import log_linear_fit


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--case", type=int, default=1, choices=(1, 2, 3))
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--plot", default=None, help="write a PNG to this path")
    args = parser.parse_args(argv)

    config = ExperimentConfig.for_case(args.case, seeds=(args.seed,))
    traces = run_single(config, args.seed)
    for name, tr in traces.items():
        slope, resid = log_linear_fit(tr.cons_viol)
        print(f"{name:6s} {tr.status:10s} iterations={tr.iterations:5d} "
              f"rate per step={10**slope:.4f} fit residual={resid:.3f}")
        marks = np.linspace(0, len(tr) - 1, 8).astype(int)
        print("       " + "  ".join(f"k={tr.iters[i]}:{tr.cons_viol[i]:.1e}" for i in marks))

    if args.plot:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6, 4))
        for name, tr in traces.items():
            ax.semilogy(tr.iters, tr.cons_viol, label=name)
        ax.axhline(config.eps_cons, color="k", lw=0.8, ls="--")
        ax.set_xlabel("iteration")
        ax.set_ylabel("|A x|")
        ax.legend()
        fig.tight_layout()
        fig.savefig(args.plot, dpi=120)
        print(f"plot written to {args.plot}")


if __name__ == "__main__":
    main()
