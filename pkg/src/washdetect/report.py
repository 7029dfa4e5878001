"""Full detection battery over a dataset, with JSON/CSV report emission.

For every (exchange, pair) group the battery runs the Benford chi-squared
test (at the configured effective N and at the raw count), round-size
clustering t-tests at the 100- and 500-unit grids, the power-law tail fit
with its Pareto-Levy range verdict, and, when regulated exchanges are
present, the roundness-distribution chi-squared against the pooled regulated
benchmark. Per pair, Fisher's method combines the Benford, clustering-100,
and tail probabilities (all oriented so authentic behavior gives values near
one). Wash volume is then estimated per pair against a benchmark fitted on
the regulated exchanges, with optional bootstrap standard errors, and the
failure rate and counterfactual rank improvement summarize each exchange.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import benford as bf
from . import clustering as cl
from . import tailfit as tf
from . import verdicts as vd
from . import washest as we
from .errors import EstimationError, InsufficientDataError
from .ingest import TradeDataset, WeeklyVolumeSplit, weekly_split
from .trades import ExchangeMeta, PairRegistry

SCHEMA_VERSION = "1"
BENFORD_EMULATION_N = 10_000


@dataclass
class RunConfig:
    """Knobs shared by the battery and the CLI front end."""

    alpha: float = 0.05
    effective_n: int | None = BENFORD_EMULATION_N  # None = raw counts
    bootstrap: int = 0
    seed: int = 0
    estimate_wash: bool = True
    pool_pairs: bool = False
    use_controls: bool = False
    min_window_support: int = 50

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha <= 0.5:
            raise ValueError(f"alpha must be in (0, 0.5], got {self.alpha}")
        if self.bootstrap and self.bootstrap < 100:
            raise ValueError(f"bootstrap must be 0 or >= 100, got {self.bootstrap}")


@dataclass
class PairReport:
    exchange_id: str
    pair: str
    n_trades: int
    benford: bf.ChiSquaredResult | None = None
    benford_raw: bf.ChiSquaredResult | None = None
    benford_counterfactual_wash: float | None = None
    cluster_100: cl.ClusterTestResult | None = None
    cluster_500: cl.ClusterTestResult | None = None
    tail: tf.TailFit | None = None
    tail_verdict: tf.ParetoLevyVerdict | None = None
    roundness: bf.ChiSquaredResult | None = None
    fisher: vd.FisherResult | None = None
    flags: list[str] = field(default_factory=list)

    def test_outcomes(self) -> dict[str, bool | None]:
        """Failure indicator per detection test; None marks a skipped test."""
        return {
            "benford": None if self.benford is None else self.benford.reject,
            "cluster_100": (
                None
                if self.cluster_100 is None or self.cluster_100.insufficient
                else self.cluster_100.reject
            ),
            "cluster_500": (
                None
                if self.cluster_500 is None or self.cluster_500.insufficient
                else self.cluster_500.reject
            ),
            "tail": None if self.tail is None else not self.tail.in_pareto_levy,
        }


@dataclass
class ExchangeReport:
    exchange_id: str
    regulatory_class: str | None
    pairs: list[PairReport] = field(default_factory=list)
    failure_rate: float | None = None
    tests_failed: int = 0
    tests_completed: int = 0
    wash_by_pair: list[we.WashEstimate] = field(default_factory=list)
    wash_aggregate: we.WashEstimate | None = None
    rank_improvement: int | None = None
    flags: list[str] = field(default_factory=list)


@dataclass
class BatteryReport:
    config: RunConfig
    exchanges: list[ExchangeReport] = field(default_factory=list)
    benchmark_models: dict[str, we.BenchmarkModel] = field(default_factory=dict)
    cross_validation: dict[str, float] | None = None
    failure_rate_by_pair: dict[str, float] = field(default_factory=dict)
    wash_summary: dict[str, dict[str, float]] = field(default_factory=dict)
    wash_failure_fit: vd.WashFailureFit | None = None
    warnings: list[str] = field(default_factory=list)

    @property
    def has_flags(self) -> bool:
        return any(p.flags for ex in self.exchanges for p in ex.pairs) or any(
            ex.flags for ex in self.exchanges
        )


def _pair_battery(group, spec, config: RunConfig) -> PairReport:
    rep = PairReport(group.exchange_id, group.pair, group.n)
    try:
        hist = bf.digit_histogram(group.amounts)
        rep.benford = bf.chi_squared_benford(hist, config.effective_n, config.alpha)
        rep.benford_raw = bf.chi_squared_benford(hist, None, config.alpha)
        try:
            rep.benford_counterfactual_wash = bf.counterfactual_wash_benford(hist)
        except EstimationError:
            rep.flags.append("benford counterfactual undefined: empty digit class")
    except InsufficientDataError as exc:
        rep.flags.append(f"benford skipped: {exc}")

    for step, attr in ((100, "cluster_100"), (500, "cluster_500")):
        result = cl.run_cluster_test(
            group.amounts, spec, step, alpha=config.alpha, min_support=config.min_window_support
        )
        setattr(rep, attr, result)
        if result.insufficient:
            rep.flags.append(f"clustering-{step} skipped: insufficient windows ({result.n_pairs})")

    sizes = group.amounts / spec.subunits_per_base_unit
    try:
        rep.tail = tf.fit_tail(sizes)
        rep.tail_verdict = tf.pareto_levy_verdict(rep.tail)
        if rep.tail.flags:
            rep.flags.extend(f"tail: {f}" for f in rep.tail.flags)
    except (InsufficientDataError, EstimationError) as exc:
        rep.flags.append(f"tail skipped: {exc}")

    if (
        rep.benford is not None
        and rep.cluster_100 is not None
        and not rep.cluster_100.insufficient
        and rep.tail_verdict is not None
    ):
        rep.fisher = vd.fisher_combine(
            [rep.benford.p_value, rep.cluster_100.anomaly_p, rep.tail_verdict.anomaly_p],
            config.alpha,
        )
    return rep


def pooled_regulated_roundness(
    dataset: TradeDataset, registry: PairRegistry, regulated: set[str]
) -> dict[str, np.ndarray]:
    pooled: dict[str, np.ndarray] = {}
    for (ex, pair), group in dataset.groups.items():
        if ex not in regulated or group.n == 0:
            continue
        counts = we.roundness_distribution(group.amounts, registry.get(pair))
        pooled[pair] = pooled.get(pair, np.zeros(8, dtype=np.int64)) + counts
    return pooled


def _wash_section(
    report: BatteryReport,
    dataset: TradeDataset,
    registry: PairRegistry,
    meta: dict[str, ExchangeMeta] | None,
    regulated: set[str],
    config: RunConfig,
    external_models: dict[str, we.BenchmarkModel] | None,
) -> None:
    splits = weekly_split(dataset, registry)
    by_pair: dict[str, list[WeeklyVolumeSplit]] = {}
    for row in splits:
        by_pair.setdefault(row.pair, []).append(row)

    models: dict[str, we.BenchmarkModel] = dict(external_models or {})
    if not models:
        use_controls = config.use_controls
        if use_controls and meta is not None:
            lacking = [ex for ex in regulated if not meta[ex].has_all_controls()]
            if lacking:
                report.warnings.append(
                    f"controls disabled: missing covariates for {', '.join(sorted(lacking))}"
                )
                use_controls = False
        for pair, rows in sorted(by_pair.items()):
            bench_rows = [r for r in rows if r.exchange_id in regulated]
            try:
                models[pair] = we.fit_benchmark(
                    bench_rows, meta=meta, use_controls=use_controls
                )
            except (InsufficientDataError, EstimationError) as exc:
                report.warnings.append(f"benchmark for {pair} not fitted: {exc}")
    report.benchmark_models = models

    bench_rows_by_pair = {
        pair: [r for r in rows if r.exchange_id in regulated] for pair, rows in by_pair.items()
    }
    for ex_rep in report.exchanges:
        if ex_rep.exchange_id in regulated:
            continue
        per_pair: list[we.WashEstimate] = []
        wash_volume = total_volume = 0.0
        for pair_rep in ex_rep.pairs:
            model = models.get(pair_rep.pair)
            if model is None:
                continue
            target = [
                r
                for r in by_pair.get(pair_rep.pair, [])
                if r.exchange_id == ex_rep.exchange_id
            ]
            if not target:
                continue
            try:
                est = we.estimate_wash(target, model, meta=meta)
            except (InsufficientDataError, EstimationError) as exc:
                ex_rep.flags.append(f"wash estimate failed for {pair_rep.pair}: {exc}")
                continue
            if config.bootstrap:
                sd = we.bootstrap_wash_sd(
                    target,
                    bench_rows_by_pair.get(pair_rep.pair, []),
                    n_boot=config.bootstrap,
                    seed=config.seed,
                    meta=meta,
                    use_controls=model.controls_used,
                )
                est = we.with_bootstrap_sd(est, sd)
            per_pair.append(est)
            wash_volume += est.wash_volume
            total_volume += est.total_volume
        ex_rep.wash_by_pair = per_pair
        if per_pair and total_volume > 0:
            ex_rep.wash_aggregate = we.WashEstimate(
                exchange_id=ex_rep.exchange_id,
                scope="aggregate",
                wash_volume=wash_volume,
                wash_percent=100.0 * wash_volume / total_volume,
                total_volume=total_volume,
                n_weeks=sum(e.n_weeks for e in per_pair),
                controls_used=any(e.controls_used for e in per_pair),
                flags=tuple(sorted({f for e in per_pair for f in e.flags})),
            )
            if ex_rep.wash_aggregate.wash_percent < 100.0:
                ex_rep.rank_improvement = vd.counterfactual_rank(
                    max(total_volume, 1e-12), ex_rep.wash_aggregate.wash_percent
                ).improvement

    if len(regulated) >= 3:
        rows_by_ex = {}
        for row in splits:
            if row.exchange_id in regulated:
                rows_by_ex.setdefault(row.exchange_id, []).append(row)
        try:
            cv = we.cross_validate_regulated(
                rows_by_ex, meta=meta, pool_pairs=config.pool_pairs or len(by_pair) > 1
            )
            report.cross_validation = {
                ex: est.wash_percent for ex, est in cv.estimates.items()
            }
        except (InsufficientDataError, EstimationError) as exc:
            report.warnings.append(f"regulated cross-validation failed: {exc}")

    _wash_summaries(report, meta)
    _wash_failure_relation(report)


def _summary_cell(estimates: list[we.WashEstimate]) -> dict[str, float]:
    total = sum(e.total_volume for e in estimates)
    return {
        "equal_weighted": float(np.mean([e.wash_percent for e in estimates])),
        "volume_weighted": 100.0 * sum(e.wash_volume for e in estimates) / total,
        "n_exchanges": len(estimates),
    }


def _wash_summaries(report: BatteryReport, meta: dict[str, ExchangeMeta] | None) -> None:
    """Equal- and volume-weighted wash percentages per regulatory category."""
    scored = [ex for ex in report.exchanges if ex.wash_aggregate is not None]
    if not scored:
        return
    report.wash_summary["all_scored"] = _summary_cell([ex.wash_aggregate for ex in scored])
    if meta:
        for cls_value in ("unregulated_tier1", "unregulated_tier2"):
            members = [
                ex.wash_aggregate for ex in scored if ex.regulatory_class == cls_value
            ]
            if members:
                report.wash_summary[cls_value] = _summary_cell(members)


def _wash_failure_relation(report: BatteryReport) -> None:
    """Regress estimated wash fraction on the detection-failure rate."""
    points = [
        (ex.failure_rate, ex.wash_aggregate.wash_percent / 100.0)
        for ex in report.exchanges
        if ex.failure_rate is not None and ex.wash_aggregate is not None
    ]
    if len(points) < 3:
        return
    try:
        report.wash_failure_fit = vd.wash_failure_regression(
            [p[0] for p in points], [p[1] for p in points]
        )
    except (InsufficientDataError, EstimationError):
        pass


def run_battery(
    dataset: TradeDataset,
    registry: PairRegistry,
    meta: dict[str, ExchangeMeta] | None = None,
    config: RunConfig | None = None,
    benchmark_models: dict[str, we.BenchmarkModel] | None = None,
) -> BatteryReport:
    """Run every detection test and, where possible, the wash estimator."""
    config = config or RunConfig()
    report = BatteryReport(config=config)
    regulated = {ex for ex, m in (meta or {}).items() if m.is_regulated}

    pooled_roundness: dict[str, np.ndarray] = {}
    if regulated:
        pooled_roundness = pooled_regulated_roundness(dataset, registry, regulated)

    by_exchange: dict[str, ExchangeReport] = {}
    for ex, pair in dataset.sorted_keys():
        group = dataset.groups[(ex, pair)]
        spec = registry.get(pair)
        pair_rep = _pair_battery(group, spec, config)
        if ex not in regulated and pair in pooled_roundness:
            try:
                target = we.roundness_distribution(group.amounts, spec)
                pair_rep.roundness = we.roundness_chi_squared(
                    target, pooled_roundness[pair], config.effective_n, config.alpha
                )
            except (InsufficientDataError, EstimationError) as exc:
                pair_rep.flags.append(f"roundness skipped: {exc}")
        ex_rep = by_exchange.setdefault(
            ex,
            ExchangeReport(
                exchange_id=ex,
                regulatory_class=(
                    meta[ex].regulatory_class.value if meta and ex in meta else None
                ),
            ),
        )
        ex_rep.pairs.append(pair_rep)

    report.exchanges = [by_exchange[ex] for ex in sorted(by_exchange)]

    pair_outcomes: dict[str, list[bool]] = {}
    for ex_rep in report.exchanges:
        outcomes: list[bool | None] = []
        for pair_rep in ex_rep.pairs:
            per_test = pair_rep.test_outcomes()
            outcomes.extend(per_test.values())
            for o in per_test.values():
                if o is not None:
                    pair_outcomes.setdefault(pair_rep.pair, []).append(o)
        completed = [o for o in outcomes if o is not None]
        ex_rep.tests_completed = len(completed)
        ex_rep.tests_failed = sum(completed)
        if completed:
            ex_rep.failure_rate = vd.failure_rate(outcomes)
        else:
            ex_rep.flags.append("failure rate undefined: no completed tests")
    report.failure_rate_by_pair = {
        pair: sum(v) / len(v) for pair, v in sorted(pair_outcomes.items())
    }

    if config.estimate_wash:
        if regulated or benchmark_models:
            _wash_section(report, dataset, registry, meta, regulated, config, benchmark_models)
        else:
            raise EstimationError(
                "wash estimation requested but no regulated exchange is present; "
                "pass --no-wash or supply a benchmark model file"
            )
    return report


# ---------------------------------------------------------------------------
# Serialization


def _chi_json(r: bf.ChiSquaredResult | None) -> dict | None:
    if r is None:
        return None
    return {
        "statistic": r.statistic,
        "df": r.df,
        "p": r.p_value,
        "effective_n": r.effective_n,
        "pass": not r.reject,
    }


def _cluster_json(r: cl.ClusterTestResult | None) -> dict | None:
    if r is None:
        return None
    if r.insufficient:
        return {"skipped": "insufficient windows", "n_windows": r.n_pairs, "step": r.step}
    return {
        "mean_difference": r.mean_difference,
        "statistic": r.t_statistic if np.isfinite(r.t_statistic) else None,
        "p": r.p_value,
        "n_windows": r.n_pairs,
        "step": r.step,
        "pass": not r.reject,
    }


def _tail_json(rep: PairReport) -> dict | None:
    t = rep.tail
    if t is None:
        return None
    return {
        "x_min": t.x_min,
        "n_tail": t.n_tail,
        "alpha_hill": t.alpha_hill,
        "hill_pdf_exponent": t.hill_pdf_exponent,
        "hill_se": t.hill_se,
        "alpha_ols": t.alpha_ols,
        "ols_r_squared": t.ols_r_squared,
        "pass": t.in_pareto_levy,
        "p_outside_range": rep.tail_verdict.p_outside if rep.tail_verdict else None,
    }


def _wash_json(e: we.WashEstimate | None) -> dict | None:
    if e is None:
        return None
    return {
        "scope": e.scope,
        "wash_volume": e.wash_volume,
        "wash_percent": e.wash_percent,
        "total_volume": e.total_volume,
        "n_weeks": e.n_weeks,
        "bootstrap_sd": e.bootstrap_sd,
        "controls_used": e.controls_used,
        "flags": list(e.flags),
    }


def report_to_json(report: BatteryReport) -> dict[str, Any]:
    return {
        "schema_version": SCHEMA_VERSION,
        "alpha": report.config.alpha,
        "effective_n": report.config.effective_n,
        "exchanges": [
            {
                "exchange_id": ex.exchange_id,
                "regulatory_class": ex.regulatory_class,
                "failure_rate": ex.failure_rate,
                "tests_failed": ex.tests_failed,
                "tests_completed": ex.tests_completed,
                "rank_improvement": ex.rank_improvement,
                "wash_aggregate": _wash_json(ex.wash_aggregate),
                "wash_by_pair": [_wash_json(e) for e in ex.wash_by_pair],
                "flags": list(ex.flags),
                "pairs": [
                    {
                        "pair": p.pair,
                        "n_trades": p.n_trades,
                        "benford": _chi_json(p.benford),
                        "benford_raw_n": _chi_json(p.benford_raw),
                        "benford_counterfactual_wash": p.benford_counterfactual_wash,
                        "clustering_100": _cluster_json(p.cluster_100),
                        "clustering_500": _cluster_json(p.cluster_500),
                        "tail": _tail_json(p),
                        "roundness": _chi_json(p.roundness),
                        "fisher": (
                            None
                            if p.fisher is None
                            else {
                                "chi2": p.fisher.chi2,
                                "df": p.fisher.df,
                                "critical_value": p.fisher.critical_value,
                                "reject": p.fisher.reject,
                            }
                        ),
                        "flags": list(p.flags),
                    }
                    for p in ex.pairs
                ],
            }
            for ex in report.exchanges
        ],
        "failure_rate_by_pair": report.failure_rate_by_pair,
        "benchmark_models": {
            pair: m.to_json() for pair, m in sorted(report.benchmark_models.items())
        },
        "regulated_cross_validation": report.cross_validation,
        "wash_summary": report.wash_summary,
        "wash_failure_fit": (
            None
            if report.wash_failure_fit is None
            else {
                "slope": report.wash_failure_fit.slope,
                "intercept": report.wash_failure_fit.intercept,
                "adj_r_squared": report.wash_failure_fit.adj_r_squared,
                "slope_p": report.wash_failure_fit.slope_p,
                "n": report.wash_failure_fit.n,
            }
        ),
        "warnings": list(report.warnings),
    }


def dump_report_json(report: BatteryReport) -> str:
    return json.dumps(report_to_json(report), indent=2, sort_keys=True) + "\n"


def report_test_rows(report: BatteryReport) -> list[list]:
    """Flat spreadsheet rows: one line per exchange-pair-test."""
    rows: list[list] = [["exchange", "pair", "test", "statistic", "p_value", "passed"]]
    for ex in report.exchanges:
        for p in ex.pairs:
            if p.benford is not None:
                rows.append(
                    [ex.exchange_id, p.pair, "benford", p.benford.statistic, p.benford.p_value, not p.benford.reject]
                )
            for step, c in ((100, p.cluster_100), (500, p.cluster_500)):
                if c is not None and not c.insufficient:
                    rows.append(
                        [ex.exchange_id, p.pair, f"cluster_{step}", c.t_statistic, c.p_value, not c.reject]
                    )
            if p.tail is not None:
                rows.append(
                    [ex.exchange_id, p.pair, "pareto_levy", p.tail.alpha_hill,
                     p.tail_verdict.p_outside if p.tail_verdict else None, p.tail.in_pareto_levy]
                )
            if p.roundness is not None:
                rows.append(
                    [ex.exchange_id, p.pair, "roundness", p.roundness.statistic, p.roundness.p_value, not p.roundness.reject]
                )
            if p.fisher is not None:
                rows.append(
                    [ex.exchange_id, p.pair, "fisher", p.fisher.chi2, None, not p.fisher.reject]
                )
    return rows


def wash_estimate_rows(report: BatteryReport) -> list[list]:
    rows: list[list] = [
        ["exchange", "pair", "wash_volume", "wash_percent", "bootstrap_sd", "controls_used", "flags"]
    ]
    for ex in report.exchanges:
        for e in ex.wash_by_pair + ([ex.wash_aggregate] if ex.wash_aggregate else []):
            rows.append(
                [
                    ex.exchange_id,
                    e.scope,
                    e.wash_volume,
                    e.wash_percent,
                    e.bootstrap_sd,
                    e.controls_used,
                    ";".join(e.flags),
                ]
            )
    return rows
