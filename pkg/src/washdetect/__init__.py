"""Statistical forensics for exchange trade tapes.

Detects fabricated volume by testing trade-size distributions against
Benford's law, round-size clustering, and Pareto-Levy power-law tails, and
quantifies it from the round/unrounded volume relation of regulated
benchmark exchanges.
"""

from .benford import (
    ChiSquaredResult,
    DigitHistogram,
    benford_expected,
    chi_squared_benford,
    chi_squared_pvalue,
    counterfactual_wash_benford,
    digit_histogram,
)
from .clustering import (
    ClusterTestResult,
    WindowPair,
    cluster_pairs,
    clustering_t_test,
    run_cluster_test,
    window_frequencies,
)
from .errors import (
    AmountError,
    EstimationError,
    InsufficientDataError,
    PairConfigError,
    ParseError,
    WashdetectError,
)
from .ingest import (
    ParseReport,
    TradeDataset,
    TradeGroup,
    WeeklyVolumeSplit,
    parse_trades,
    unrounded_subset,
    week_index,
    weekly_split,
)
from .tailfit import (
    HillFit,
    TailFit,
    fit_hill,
    fit_ols,
    fit_tail,
    pareto_levy_verdict,
    tail_cutoff,
)
from .trades import (
    BUILTIN_PAIR_SPECS,
    ExchangeMeta,
    PairRegistry,
    PairSpec,
    RegulatoryClass,
    RoundnessLevel,
    Trade,
    first_significant_digit,
    format_amount,
    infer_base_unit_exponent,
    is_round,
    parse_amount,
    roundness_level,
    to_base_units,
)
from .verdicts import (
    FisherResult,
    RankCoeffs,
    counterfactual_rank,
    failure_rate,
    fisher_combine,
    spearman_rank_correlation,
    wash_failure_regression,
)
from .report import BatteryReport, RunConfig, run_battery
from .synth import (
    AuthenticParams,
    GeneratorConfig,
    LabeledTape,
    STABLE_PANEL_PARAMS,
    WashParams,
    gen_authentic,
    gen_exchange,
    gen_wash,
    write_tape,
)
from .washest import (
    BenchmarkModel,
    WashEstimate,
    bootstrap_wash_sd,
    cross_validate_regulated,
    estimate_wash,
    fit_benchmark,
    roundness_chi_squared,
    roundness_distribution,
)

__version__ = "0.1.0"
