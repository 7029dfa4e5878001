#!/usr/bin/env python3
"""Detector closure experiment.

Generates clean and wash-heavy synthetic tapes across seeds and runs the
three detection families on each (Benford chi-squared at effective N 10,000,
clustering-100 t-test, Pareto-Levy tail check). Clean tapes should pass all
three, wash-heavy tapes should fail at least two.

Usage:
    python scripts/detector_closure.py --seeds 10 --n 500000 --wash 0.8
"""

import argparse
import time

from washdetect.benford import chi_squared_benford, digit_histogram
from washdetect.clustering import run_cluster_test
from washdetect.errors import WashdetectError
from washdetect.synth import GeneratorConfig, gen_exchange
from washdetect.tailfit import fit_tail


def families(tape, alpha):
    g = tape.group
    spec = tape.config.spec
    benford = chi_squared_benford(digit_histogram(g.amounts), effective_n=10_000, alpha=alpha)
    cluster = run_cluster_test(g.amounts, spec, 100, alpha=alpha)
    try:
        tail_ok = fit_tail(g.amounts / spec.subunits_per_base_unit).in_pareto_levy
    except WashdetectError:
        tail_ok = False
    return {
        "benford": not benford.reject,
        "cluster": not cluster.insufficient and not cluster.reject,
        "tail": tail_ok,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--n", type=int, default=500_000)
    ap.add_argument("--wash", type=float, default=0.8)
    ap.add_argument("--alpha", type=float, default=0.05)
    args = ap.parse_args()

    t0 = time.time()
    print(f"{'seed':>5} {'tape':>6} {'benford':>8} {'cluster':>8} {'tail':>6}  verdict")
    clean_all, wash_majority = 0, 0
    for seed in range(args.seeds):
        clean = families(
            gen_exchange(GeneratorConfig(seed=seed, n_trades=args.n, wash_fraction=0.0)),
            args.alpha,
        )
        washy = families(
            gen_exchange(
                GeneratorConfig(seed=10_000 + seed, n_trades=args.n, wash_fraction=args.wash)
            ),
            args.alpha,
        )
        clean_all += all(clean.values())
        wash_majority += sum(not ok for ok in washy.values()) >= 2
        for label, fam in (("clean", clean), (f"w={args.wash}", washy)):
            marks = ["PASS" if fam[k] else "fail" for k in ("benford", "cluster", "tail")]
            verdict = "authentic-like" if all(fam.values()) else "anomalous"
            print(f"{seed:>5} {label:>6} {marks[0]:>8} {marks[1]:>8} {marks[2]:>6}  {verdict}")
    print(
        f"\nclean tapes passing all families: {clean_all}/{args.seeds}; "
        f"wash tapes failing >= 2: {wash_majority}/{args.seeds} "
        f"({time.time() - t0:.0f}s)"
    )


if __name__ == "__main__":
    main()
