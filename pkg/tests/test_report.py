"""Battery assembly, report JSON schema, and determinism."""

import json
from importlib import resources

import jsonschema
import pytest

from washdetect.errors import EstimationError
from washdetect.ingest import TradeDataset
from washdetect.report import (
    BENFORD_EMULATION_N,
    RunConfig,
    dump_report_json,
    report_test_rows,
    report_to_json,
    run_battery,
    wash_estimate_rows,
)
from washdetect.synth import GeneratorConfig, STABLE_PANEL_PARAMS, WashParams, gen_exchange
from washdetect.trades import ExchangeMeta, PairRegistry, RegulatoryClass

REG = PairRegistry()
PANEL_WASH = WashParams(size_low_units=4e4, size_high_units=9e4)


def make_dataset(specs):
    """specs: list of (exchange_id, seed, n, wash_fraction)."""
    ds = TradeDataset()
    for ex, seed, n, w in specs:
        cfg = GeneratorConfig(
            seed=seed,
            exchange_id=ex,
            n_trades=n,
            wash_fraction=w,
            authentic=STABLE_PANEL_PARAMS,
            wash=PANEL_WASH,
        )
        tape = gen_exchange(cfg)
        ds.groups.update(tape.dataset.groups)
    return ds


def make_meta(regulated, tier2=()):
    meta = {ex: ExchangeMeta(ex, RegulatoryClass.REGULATED) for ex in regulated}
    meta.update({ex: ExchangeMeta(ex, RegulatoryClass.UNREGULATED_TIER2) for ex in tier2})
    return meta


@pytest.fixture(scope="module")
def battery():
    ds = make_dataset(
        [("R1", 1, 150_000, 0.0), ("R2", 2, 100_000, 0.0), ("R3", 3, 80_000, 0.0), ("U1", 4, 100_000, 0.8)]
    )
    meta = make_meta(["R1", "R2", "R3"], ["U1"])
    return run_battery(ds, REG, meta, RunConfig())


class TestBattery:
    def test_regulated_pass_everything(self, battery):
        for ex in battery.exchanges:
            if ex.exchange_id.startswith("R"):
                assert ex.failure_rate == 0.0
                for p in ex.pairs:
                    assert p.fisher is not None and not p.fisher.reject

    def test_wash_exchange_rejects_fisher_on_all_pairs(self, battery):
        u1 = next(ex for ex in battery.exchanges if ex.exchange_id == "U1")
        assert all(p.fisher is not None and p.fisher.reject for p in u1.pairs)
        assert u1.failure_rate >= 0.5

    def test_wash_estimate_near_injected(self, battery):
        u1 = next(ex for ex in battery.exchanges if ex.exchange_id == "U1")
        assert u1.wash_aggregate is not None
        assert u1.wash_aggregate.wash_percent == pytest.approx(80.0, abs=10.0)
        assert u1.rank_improvement is not None and u1.rank_improvement > 0

    def test_regulated_get_no_wash_estimate(self, battery):
        for ex in battery.exchanges:
            if ex.exchange_id.startswith("R"):
                assert ex.wash_aggregate is None

    def test_roundness_vs_regulated_benchmark(self, battery):
        u1 = next(ex for ex in battery.exchanges if ex.exchange_id == "U1")
        assert u1.pairs[0].roundness is not None
        assert u1.pairs[0].roundness.reject

    def test_cross_validation_present_and_small(self, battery):
        assert set(battery.cross_validation) == {"R1", "R2", "R3"}
        assert all(v < 10.0 for v in battery.cross_validation.values())

    def test_wash_summary_by_category(self, battery):
        assert "all_scored" in battery.wash_summary
        cell = battery.wash_summary["unregulated_tier2"]
        assert cell["n_exchanges"] == 1
        assert cell["equal_weighted"] == pytest.approx(80.0, abs=10.0)
        assert cell["volume_weighted"] == pytest.approx(cell["equal_weighted"])

    def test_wash_failure_fit_needs_three_scored_exchanges(self, battery):
        # only one unregulated exchange in this fixture
        assert battery.wash_failure_fit is None

    def test_failure_rate_by_pair(self, battery):
        assert "BTC/USD" in battery.failure_rate_by_pair
        assert 0.0 < battery.failure_rate_by_pair["BTC/USD"] < 1.0

    def test_wash_requested_without_benchmark_raises(self):
        ds = make_dataset([("U1", 4, 60_000, 0.5)])
        with pytest.raises(EstimationError, match="no-wash"):
            run_battery(ds, REG, None, RunConfig())

    def test_battery_only_mode(self):
        ds = make_dataset([("U1", 4, 60_000, 0.5)])
        rep = run_battery(ds, REG, None, RunConfig(estimate_wash=False))
        assert rep.exchanges[0].wash_aggregate is None
        assert rep.exchanges[0].failure_rate is not None

    def test_wash_failure_fit_with_graded_exchanges(self):
        # wash grades spread enough that failure rates are not all equal
        specs = [("R1", 1, 120_000, 0.0), ("R2", 2, 100_000, 0.0), ("R3", 3, 80_000, 0.0)]
        specs += [(f"U{i}", 40 + i, 80_000, w) for i, w in enumerate((0.05, 0.5, 0.9))]
        ds = make_dataset(specs)
        meta = make_meta(["R1", "R2", "R3"], ["U0", "U1", "U2"])
        rep = run_battery(ds, REG, meta, RunConfig())
        assert rep.wash_failure_fit is not None
        assert rep.wash_failure_fit.n == 3
        assert rep.wash_failure_fit.slope > 0


class TestSerialization:
    def test_json_validates_against_shipped_schema(self, battery):
        schema = json.loads(
            resources.files("washdetect").joinpath("report_schema.json").read_text()
        )
        jsonschema.validate(report_to_json(battery), schema)

    def test_schema_version_stamped(self, battery):
        assert report_to_json(battery)["schema_version"] == "1"

    def test_dump_is_deterministic(self, battery):
        ds = make_dataset([("R1", 1, 60_000, 0.0)])
        rep1 = run_battery(ds, REG, None, RunConfig(estimate_wash=False))
        rep2 = run_battery(
            make_dataset([("R1", 1, 60_000, 0.0)]), REG, None, RunConfig(estimate_wash=False)
        )
        assert dump_report_json(rep1) == dump_report_json(rep2)

    def test_flat_rows(self, battery):
        rows = report_test_rows(battery)
        assert rows[0] == ["exchange", "pair", "test", "statistic", "p_value", "passed"]
        tests = {r[2] for r in rows[1:]}
        assert {"benford", "cluster_100", "cluster_500", "pareto_levy", "fisher"} <= tests
        wash_rows = wash_estimate_rows(battery)
        assert any(r[0] == "U1" for r in wash_rows[1:])


class TestRunConfig:
    def test_alpha_bounds(self):
        with pytest.raises(ValueError):
            RunConfig(alpha=0.0)
        with pytest.raises(ValueError):
            RunConfig(alpha=0.6)

    def test_bootstrap_minimum(self):
        with pytest.raises(ValueError):
            RunConfig(bootstrap=50)
        RunConfig(bootstrap=0)
        RunConfig(bootstrap=100)

    def test_default_effective_n(self):
        assert RunConfig().effective_n == BENFORD_EMULATION_N
