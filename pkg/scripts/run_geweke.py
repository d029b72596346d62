#!/usr/bin/env python3
"""Joint-distribution (Geweke-style) checks of the Gibbs kernels.

Runs marginal-conditional vs successive-conditional simulators for the
unsupervised topic block, the logistic block, and the full loop in the
exactness configuration, and prints two-sample KS p-values per statistic.
"""

import argparse
import time

from topical_gibbs import validation


def run(name, fn, transitions, thin):
    t0 = time.time()
    res = fn(n_transitions=transitions, thin=thin)
    pvals = res.ks_pvalues()
    status = "ok" if min(pvals.values()) > 0.01 else "SUSPECT"
    print(f"{name}: {status} ({time.time() - t0:.0f}s)")
    for stat, p in sorted(pvals.items()):
        print(f"    {stat:12s} KS p = {p:.4f}")


def main():
    ap = argparse.ArgumentParser(
        description=__doc__,
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    ap.add_argument("--transitions", type=int, default=200_000)
    ap.add_argument("--thin", type=int, default=10)
    ap.add_argument("--full-thin", type=int, default=25,
                    help="thinning for the more autocorrelated full loop")
    args = ap.parse_args()
    run("topic block (unsupervised)", validation.geweke_topic_block,
        args.transitions, args.thin)
    run("logistic block", validation.geweke_logistic_block,
        args.transitions, args.thin)
    run("full loop (A1-only)", validation.geweke_full_loop,
        args.transitions, args.full_thin)


if __name__ == "__main__":
    main()
