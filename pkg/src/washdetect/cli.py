"""Command-line front end.

Subcommands: ingest-check, benford, cluster, tail, roundness, fit-benchmark,
estimate-wash, fisher, report, synth, plot-data, rank. Exit codes: 0 on
success, 1 on a fatal error, 2 when the run completed but some group was
flagged (insufficient data for one or more tests).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import benford as bf
from . import clustering as cl
from . import report as rp
from . import synth
from . import tailfit as tf
from . import verdicts as vd
from . import washest as we
from .errors import WashdetectError
from .ingest import TradeDataset, make_group, parse_trades, unrounded_subset, weekly_split
from .trades import PairRegistry, load_exchange_meta

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_FLAGGED = 2


def _add_common(p: argparse.ArgumentParser, inputs: bool = True) -> None:
    if inputs:
        p.add_argument("inputs", nargs="+", help="trade files (CSV or JSONL)")
        p.add_argument("--format", choices=["csv", "jsonl"], default="csv")
        p.add_argument("--pairs", help="JSON file of pair -> base-unit exponent overrides")
        p.add_argument("--strict", action="store_true", help="abort on the first bad row")
        p.add_argument("--dedupe", action="store_true", help="drop exact duplicate rows")
    p.add_argument("--alpha", type=float, default=0.05, help="significance level")
    p.add_argument(
        "--effective-n",
        default=str(rp.BENFORD_EMULATION_N),
        help="chi-squared effective sample size: an integer or 'raw'",
    )
    p.add_argument("--bootstrap", type=int, default=0, help="bootstrap replicates (0 = off)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output directory")


def _effective_n(value: str) -> int | None:
    if value == "raw":
        return None
    n = int(value)
    if n <= 0:
        raise WashdetectError(f"effective n must be positive or 'raw', got {value}")
    return n


def _registry(args) -> PairRegistry:
    if getattr(args, "pairs", None):
        return PairRegistry.from_file(args.pairs)
    return PairRegistry()


def _load(args) -> tuple[TradeDataset, int]:
    merged = TradeDataset()
    rejected = 0
    for path in args.inputs:
        ds, report = parse_trades(path, args.format, strict=args.strict, dedupe=args.dedupe)
        rejected += report.n_rejected
        for key, group in ds.groups.items():
            if key in merged.groups:
                old = merged.groups[key]
                merged.groups[key] = make_group(
                    group.exchange_id,
                    group.pair,
                    np.concatenate([old.timestamps, group.timestamps]),
                    np.concatenate([old.amounts, group.amounts]),
                    np.concatenate([old.prices, group.prices]),
                )
            else:
                merged.groups[key] = group
    if merged.n_trades == 0:
        raise WashdetectError("no trades ingested")
    return merged, rejected


def _outdir(args) -> Path | None:
    if not args.out:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_rows(path: Path, rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)


def _slug(exchange: str, pair: str) -> str:
    return f"{exchange}_{pair}".replace("/", "-")


def cmd_ingest_check(args) -> int:
    datasets = []
    total_rejected = 0
    out = _outdir(args)
    for path in args.inputs:
        ds, report = parse_trades(path, args.format, strict=args.strict, dedupe=args.dedupe)
        datasets.append(ds)
        total_rejected += report.n_rejected
        print(f"{path}: {report.n_accepted} accepted, {report.n_rejected} rejected", end="")
        if args.dedupe:
            print(f", {report.n_deduplicated} duplicates dropped", end="")
        print()
        for key in ds.sorted_keys():
            g = ds.groups[key]
            print(f"  {g.exchange_id} {g.pair}: {g.n} trades")
        if out and report.rejected:
            with open(out / f"rejected_{Path(path).stem}.csv", "w", newline="") as fh:
                report.write_csv(fh)
    return EXIT_OK if total_rejected == 0 else EXIT_FLAGGED


def cmd_benford(args) -> int:
    ds, _ = _load(args)
    if args.unrounded_only:
        ds = unrounded_subset(ds, _registry(args))
    out = _outdir(args)
    n_eff = _effective_n(args.effective_n)
    flagged = False
    for key in ds.sorted_keys():
        g = ds.groups[key]
        try:
            hist = bf.digit_histogram(g.amounts)
        except WashdetectError as exc:
            print(f"{g.exchange_id} {g.pair}: skipped ({exc})")
            flagged = True
            continue
        res = bf.chi_squared_benford(hist, n_eff, args.alpha)
        raw = bf.chi_squared_benford(hist, None, args.alpha)
        print(
            f"{g.exchange_id} {g.pair}: chi2={res.statistic:.3f} p={res.p_value:.4f} "
            f"(raw-n chi2={raw.statistic:.3f}) -> {'PASS' if not res.reject else 'FAIL'}"
        )
        if out:
            with open(out / f"benford_{_slug(*key)}.csv", "w", newline="") as fh:
                bf.export_histogram_csv(hist, fh)
    return EXIT_FLAGGED if flagged else EXIT_OK


def cmd_cluster(args) -> int:
    ds, _ = _load(args)
    flagged = False
    for key in ds.sorted_keys():
        g = ds.groups[key]
        spec = _registry(args).get(g.pair)
        res = cl.run_cluster_test(
            g.amounts, spec, args.step, alpha=args.alpha, min_support=args.min_support
        )
        if res.insufficient:
            print(f"{g.exchange_id} {g.pair}: insufficient windows ({res.n_pairs})")
            flagged = True
            continue
        print(
            f"{g.exchange_id} {g.pair}: step={args.step} diff={res.mean_difference:+.4f} "
            f"t={res.t_statistic:.2f} p={res.p_value:.3e} -> "
            f"{'clustering present' if not res.reject else 'NO clustering'}"
        )
    return EXIT_FLAGGED if flagged else EXIT_OK


def cmd_tail(args) -> int:
    ds, _ = _load(args)
    registry = _registry(args)
    if args.unrounded_only:
        ds = unrounded_subset(ds, registry)
    out = _outdir(args)
    flagged = False
    for key in ds.sorted_keys():
        g = ds.groups[key]
        sizes = g.amounts / registry.get(g.pair).subunits_per_base_unit
        try:
            fit = tf.fit_tail(sizes)
        except WashdetectError as exc:
            print(f"{g.exchange_id} {g.pair}: skipped ({exc})")
            flagged = True
            continue
        ols = "n/a" if fit.alpha_ols is None else f"{fit.alpha_ols:.3f}"
        print(
            f"{g.exchange_id} {g.pair}: alpha_ols={ols} alpha_hill={fit.alpha_hill:.3f} "
            f"n_tail={fit.n_tail} -> {'Pareto-Levy' if fit.in_pareto_levy else 'OUTSIDE range'}"
        )
        if fit.flags:
            flagged = True
        if out:
            tail_sizes = sizes[sizes >= fit.x_min]
            with open(out / f"tail_{_slug(*key)}.csv", "w", newline="") as fh:
                tf.export_tail_csv(fit, tail_sizes, fh)
    return EXIT_FLAGGED if flagged else EXIT_OK


def cmd_roundness(args) -> int:
    ds, _ = _load(args)
    registry = _registry(args)
    meta = load_exchange_meta(args.meta)
    regulated = {ex for ex, m in meta.items() if m.is_regulated}
    if not regulated:
        raise WashdetectError("no regulated exchange in metadata; nothing to benchmark against")
    pooled = rp.pooled_regulated_roundness(ds, registry, regulated)
    n_eff = _effective_n(args.effective_n)
    for key in ds.sorted_keys():
        g = ds.groups[key]
        if g.exchange_id in regulated:
            continue
        if g.pair not in pooled:
            print(f"{g.exchange_id} {g.pair}: no regulated benchmark for this pair")
            continue
        target = we.roundness_distribution(g.amounts, registry.get(g.pair))
        res = we.roundness_chi_squared(target, pooled[g.pair], n_eff, args.alpha)
        print(
            f"{g.exchange_id} {g.pair}: chi2={res.statistic:.3f} p={res.p_value:.4f} -> "
            f"{'consistent' if not res.reject else 'DIFFERS from regulated benchmark'}"
        )
    return EXIT_OK


def cmd_fit_benchmark(args) -> int:
    ds, _ = _load(args)
    registry = _registry(args)
    meta = load_exchange_meta(args.meta)
    regulated = {ex for ex, m in meta.items() if m.is_regulated}
    splits = [r for r in weekly_split(ds, registry) if r.exchange_id in regulated]
    if not splits:
        raise WashdetectError("no regulated exchange-weeks found")
    models = {}
    pairs = sorted({r.pair for r in splits})
    if args.pooled:
        model = we.fit_benchmark(splits, meta=meta, use_controls=args.controls, pool_pairs=True)
        models["pooled"] = model
    else:
        for pair in pairs:
            rows = [r for r in splits if r.pair == pair]
            models[pair] = we.fit_benchmark(rows, meta=meta, use_controls=args.controls)
    payload = {scope: m.to_json() for scope, m in models.items()}
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    Path(args.out_model).write_text(text)
    for scope, m in models.items():
        print(
            f"{scope}: intercept={m.intercept:.4f} slope={m.slope:.4f} "
            f"resid_se={m.resid_se:.4f} n={m.n_obs}"
        )
    print(f"model written to {args.out_model}")
    return EXIT_OK


def _load_models(path: str) -> dict[str, we.BenchmarkModel]:
    payload = json.loads(Path(path).read_text())
    return {scope: we.BenchmarkModel.from_json(obj) for scope, obj in payload.items()}


def cmd_estimate_wash(args) -> int:
    ds, _ = _load(args)
    registry = _registry(args)
    meta = load_exchange_meta(args.meta) if args.meta else None
    if args.model:
        models = _load_models(args.model)
        regulated = {ex for ex, m in (meta or {}).items() if m.is_regulated}
    elif meta:
        regulated = {ex for ex, m in meta.items() if m.is_regulated}
        if not regulated:
            raise WashdetectError("metadata has no regulated exchange; supply --model instead")
        splits = [r for r in weekly_split(ds, registry) if r.exchange_id in regulated]
        models = {}
        for pair in sorted({r.pair for r in splits}):
            models[pair] = we.fit_benchmark([r for r in splits if r.pair == pair], meta=meta)
    else:
        raise WashdetectError("pass --meta (with regulated exchanges) or --model FILE")

    splits = weekly_split(ds, registry)
    rows_out = [["exchange", "pair", "wash_volume", "wash_percent", "bootstrap_sd", "controls_used", "flags"]]
    for ex in sorted({r.exchange_id for r in splits} - regulated):
        for pair in sorted({r.pair for r in splits if r.exchange_id == ex}):
            model = models.get(pair) or models.get("pooled")
            if model is None:
                continue
            target = [r for r in splits if r.exchange_id == ex and r.pair == pair]
            est = we.estimate_wash(target, model, meta=meta)
            if args.bootstrap:
                bench = [r for r in splits if r.exchange_id in regulated and r.pair == pair]
                if bench:
                    est = we.with_bootstrap_sd(
                        est,
                        we.bootstrap_wash_sd(
                            target, bench, n_boot=args.bootstrap, seed=args.seed, meta=meta
                        ),
                    )
            sd = "" if est.bootstrap_sd is None else f" (sd {est.bootstrap_sd:.2f})"
            print(f"{ex} {pair}: wash {est.wash_percent:.2f}%{sd} of {est.total_volume:.4f}")
            rows_out.append(
                [ex, pair, est.wash_volume, est.wash_percent, est.bootstrap_sd, est.controls_used, ";".join(est.flags)]
            )
    out = _outdir(args)
    if out:
        _write_rows(out / "wash_estimates.csv", rows_out)
    return EXIT_OK


def cmd_fisher(args) -> int:
    ds, _ = _load(args)
    registry = _registry(args)
    config = rp.RunConfig(
        alpha=args.alpha,
        effective_n=_effective_n(args.effective_n),
        estimate_wash=False,
    )
    report = rp.run_battery(ds, registry, None, config)
    flagged = False
    for ex in report.exchanges:
        for p in ex.pairs:
            if p.fisher is None:
                print(f"{ex.exchange_id} {p.pair}: fisher skipped ({'; '.join(p.flags)})")
                flagged = True
                continue
            print(
                f"{ex.exchange_id} {p.pair}: chi2={p.fisher.chi2:.3f} df={p.fisher.df} "
                f"critical={p.fisher.critical_value:.3f} -> "
                f"{'REJECT authenticity' if p.fisher.reject else 'consistent'}"
            )
    return EXIT_FLAGGED if flagged else EXIT_OK


def cmd_report(args) -> int:
    ds, _ = _load(args)
    registry = _registry(args)
    meta = load_exchange_meta(args.meta) if args.meta else None
    models = _load_models(args.model) if args.model else None
    config = rp.RunConfig(
        alpha=args.alpha,
        effective_n=_effective_n(args.effective_n),
        bootstrap=args.bootstrap,
        seed=args.seed,
        estimate_wash=not args.no_wash,
        pool_pairs=args.pooled,
        use_controls=args.controls,
    )
    report = rp.run_battery(ds, registry, meta, config, benchmark_models=models)
    out = _outdir(args)
    text = rp.dump_report_json(report)
    if out:
        (out / "report.json").write_text(text)
        _write_rows(out / "report_tests.csv", rp.report_test_rows(report))
        if not args.no_wash:
            _write_rows(out / "wash_estimates.csv", rp.wash_estimate_rows(report))
        print(f"report written to {out}")
    else:
        sys.stdout.write(text)
    for ex in report.exchanges:
        rate = "n/a" if ex.failure_rate is None else f"{ex.failure_rate:.0%}"
        wash = (
            f" wash={ex.wash_aggregate.wash_percent:.1f}%"
            if ex.wash_aggregate is not None
            else ""
        )
        print(
            f"{ex.exchange_id}: {ex.tests_failed}/{ex.tests_completed} tests failed "
            f"(rate {rate}){wash}",
            file=sys.stderr,
        )
    return EXIT_FLAGGED if report.has_flags else EXIT_OK


def cmd_synth(args) -> int:
    profile = synth.STABLE_PANEL_PARAMS if args.profile == "stable-panel" else synth.AuthenticParams()
    wash_params = synth.WashParams()
    if args.profile == "stable-panel":
        wash_params = synth.WashParams(size_low_units=4e4, size_high_units=9e4)
    cfg = synth.GeneratorConfig(
        seed=args.seed,
        exchange_id=args.exchange_id,
        pair=args.pair,
        spec=PairRegistry().get(args.pair),
        n_trades=args.n,
        wash_fraction=args.wash,
        n_weeks=args.weeks,
        authentic=profile,
        wash=wash_params,
    )
    tape = synth.gen_exchange(cfg)
    if tape.flags:
        print(f"warning: {', '.join(tape.flags)}", file=sys.stderr)
    with open(args.out_file, "w", newline="") as fh:
        synth.write_tape(tape, fh, fmt=args.format, include_labels=args.labels)
    print(
        f"wrote {tape.group.n} trades to {args.out_file} "
        f"(wash volume fraction {tape.realized_wash_fraction:.4f})"
    )
    return EXIT_OK


def cmd_plot_data(args) -> int:
    ds, _ = _load(args)
    registry = _registry(args)
    out = _outdir(args) or Path(".")
    lo, hi = (int(x) for x in args.range.split(":")) if args.range else (1, 1000)
    for key in ds.sorted_keys():
        g = ds.groups[key]
        spec = registry.get(g.pair)
        slug = _slug(*key)
        if args.which == "benford":
            with open(out / f"benford_{slug}.csv", "w", newline="") as fh:
                bf.export_histogram_csv(bf.digit_histogram(g.amounts), fh)
        elif args.which == "sizes":
            with open(out / f"sizes_{slug}.csv", "w", newline="") as fh:
                cl.export_size_histogram_csv(
                    g.amounts, spec, fh, lo_units=lo, hi_units=hi, step=args.step
                )
        elif args.which == "tail":
            sizes = g.amounts / spec.subunits_per_base_unit
            fit = tf.fit_tail(sizes)
            with open(out / f"tail_{slug}.csv", "w", newline="") as fh:
                tf.export_tail_csv(fit, sizes[sizes >= fit.x_min], fh)
    print(f"plot data written to {out}")
    return EXIT_OK


def cmd_rank(args) -> int:
    res = vd.counterfactual_rank(
        args.volume,
        args.wash_percent,
        coeffs=vd.RankCoeffs(a=args.coeff_a, b=args.coeff_b),
        log_base=args.log_base,
        reported_rank=args.rank,
    )
    print(f"rank improvement from inflated volume: {res.improvement} positions")
    if res.counterfactual_rank is not None:
        print(f"counterfactual rank without wash trading: {res.counterfactual_rank:.0f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="washdetect",
        description="Detect and quantify wash trading in exchange trade tapes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest-check", help="parse inputs and report rejected rows")
    _add_common(p)
    p.set_defaults(func=cmd_ingest_check)

    p = sub.add_parser("benford", help="first-digit chi-squared test per group")
    _add_common(p)
    p.add_argument(
        "--unrounded-only",
        action="store_true",
        help="re-run the test on the unrounded subset (validation mode)",
    )
    p.set_defaults(func=cmd_benford)

    p = sub.add_parser("cluster", help="round-size clustering t-test per group")
    _add_common(p)
    p.add_argument("--step", type=int, choices=[100, 500], default=100)
    p.add_argument("--min-support", type=int, default=50)
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("tail", help="power-law tail fit per group")
    _add_common(p)
    p.add_argument(
        "--unrounded-only",
        action="store_true",
        help="fit the tail of the unrounded subset (validation mode)",
    )
    p.set_defaults(func=cmd_tail)

    p = sub.add_parser("roundness", help="roundness distribution vs regulated benchmark")
    _add_common(p)
    p.add_argument("--meta", required=True, help="exchange metadata JSON")
    p.set_defaults(func=cmd_roundness)

    p = sub.add_parser("fit-benchmark", help="fit the round/unrounded volume relation")
    _add_common(p)
    p.add_argument("--meta", required=True)
    p.add_argument("--pooled", action="store_true", help="pool pairs with indicator terms")
    p.add_argument("--controls", action="store_true", help="include exchange covariates")
    p.add_argument("--out-model", required=True, help="where to write the model JSON")
    p.set_defaults(func=cmd_fit_benchmark)

    p = sub.add_parser("estimate-wash", help="estimate wash volume per exchange")
    _add_common(p)
    p.add_argument("--meta")
    p.add_argument("--model", help="benchmark model JSON from fit-benchmark")
    p.set_defaults(func=cmd_estimate_wash)

    p = sub.add_parser("fisher", help="combined test per exchange-pair")
    _add_common(p)
    p.set_defaults(func=cmd_fisher)

    p = sub.add_parser("report", help="full battery plus wash estimation")
    _add_common(p)
    p.add_argument("--meta")
    p.add_argument("--model", help="benchmark model JSON (skip refitting)")
    p.add_argument("--no-wash", action="store_true", help="battery only")
    p.add_argument("--pooled", action="store_true")
    p.add_argument("--controls", action="store_true")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth", help="generate a synthetic labeled tape")
    _add_common(p, inputs=False)
    p.add_argument("--wash", type=float, default=0.0, help="wash volume fraction in [0, 1]")
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--pair", default="BTC/USD")
    p.add_argument("--exchange-id", default="X1")
    p.add_argument("--weeks", type=int, default=12)
    p.add_argument("--profile", choices=["default", "stable-panel"], default="default")
    p.add_argument("--labels", action="store_true", help="emit the ground-truth label column")
    p.add_argument("--format", choices=["csv", "jsonl"], default="csv")
    p.add_argument("--out-file", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("plot-data", help="emit plot-ready CSVs")
    _add_common(p)
    p.add_argument("--which", choices=["benford", "sizes", "tail"], required=True)
    p.add_argument("--range", help="size histogram range in base units, lo:hi")
    p.add_argument("--step", type=int, default=100)
    p.set_defaults(func=cmd_plot_data)

    p = sub.add_parser("rank", help="counterfactual ranking improvement")
    p.add_argument("--volume", type=float, required=True, help="reported volume")
    p.add_argument("--wash-percent", type=float, required=True)
    p.add_argument("--rank", type=float, help="reported rank, for the absolute counterfactual")
    p.add_argument("--coeff-a", type=float, default=vd.DEFAULT_RANK_COEFFS.a)
    p.add_argument("--coeff-b", type=float, default=vd.DEFAULT_RANK_COEFFS.b)
    p.add_argument("--log-base", type=float, default=float(np.e))
    p.set_defaults(func=cmd_rank)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except WashdetectError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
