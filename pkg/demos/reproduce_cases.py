"""Reproduce the three benchmark cases and print a table of mean iterations.

Each case pits the accelerated primal-dual method (apdg) against the globally
dual (gdual) and locally dual (ldual) accelerated methods on random quadratic
instances.  The locally dual method works in the null space of ``B`` and only
has to reach consensus, which is why it wins by a wide margin once ``B`` has
rank above one (case 2).

Usage::

    python demos/reproduce_cases.py --seeds 10 --out results
"""

import argparse

from decaff.harness import CASES, reproduce_case


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--cases", default="1,2,3", help="comma list of case ids")
    parser.add_argument("--seeds", type=int, default=10, help="seeds per case")
    parser.add_argument("--out", default=None, help="directory for CSV/JSON output")
    parser.add_argument("--jobs", type=int, default=None, help="worker processes")
    args = parser.parse_args(argv)

    print(f"{'case':>4s}  {'setting':38s} {'apdg':>8s} {'gdual':>8s} {'ldual':>8s}")
    for case in (int(c) for c in args.cases.split(",")):
        c = CASES[case]
        setting = (f"m={c['m']} {c['graph']} d={c['d']} rank={c['rank_B']} "
                   f"eps={c['eps_cons']:g}")
        agg, _ = reproduce_case(case, seeds=args.seeds, out_dir=args.out, jobs=args.jobs)
        row = [agg.solvers[s].mean_iters for s in ("apdg", "gdual", "ldual")]
        print(f"{case:>4d}  {setting:38s} " + " ".join(
            f"{v:8.1f}" if v is not None else f"{'-':>8s}" for v in row))


if __name__ == "__main__":
    main()
