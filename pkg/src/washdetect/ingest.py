"""Stream trade files into validated in-memory datasets.

Input is CSV (header ``exchange,pair,timestamp_ms,price,amount``) or JSONL
with the same keys, one object per line. Rows are validated as they stream:
well-formed rows become trades, bad rows are recorded with a line number and
reason and skipped (or abort the parse in strict mode).

Trades are grouped by (exchange, pair). Each group keeps compact parallel
numpy arrays (timestamps, sub-unit amounts, prices) sorted by timestamp, so
a million-row tape costs tens of megabytes and every downstream statistic can
run vectorized.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, TextIO

import numpy as np

from .errors import AmountError, InsufficientDataError, ParseError
from .trades import PairRegistry, Trade, exact_sum, format_amount, is_round_mask, parse_amount

CSV_HEADER = ("exchange", "pair", "timestamp_ms", "price", "amount")

MS_PER_DAY = 86_400_000
# 1970-01-01 was a Thursday; the Monday on or before it is 1969-12-29 (day -3).
_EPOCH_MONDAY_OFFSET_DAYS = 3


def week_index(timestamp_ms: int) -> int:
    """UTC week number, weeks starting Monday 00:00:00, week 0 holding the epoch."""
    days = timestamp_ms // MS_PER_DAY
    return (days + _EPOCH_MONDAY_OFFSET_DAYS) // 7


def week_start_ms(index: int) -> int:
    """Timestamp of the Monday 00:00:00 UTC that opens the given week."""
    return (index * 7 - _EPOCH_MONDAY_OFFSET_DAYS) * MS_PER_DAY


@dataclass
class TradeGroup:
    """All trades of one (exchange, pair), sorted by timestamp."""

    exchange_id: str
    pair: str
    timestamps: np.ndarray  # int64 ms, ascending
    amounts: np.ndarray  # int64 sub-units
    prices: np.ndarray  # float64

    @property
    def n(self) -> int:
        return int(self.amounts.size)

    @property
    def total_volume_subunits(self) -> int:
        return exact_sum(self.amounts)

    def trades(self) -> Iterator[Trade]:
        for i in range(self.n):
            yield Trade(
                self.exchange_id,
                self.pair,
                int(self.timestamps[i]),
                float(self.prices[i]),
                int(self.amounts[i]),
            )


@dataclass
class TradeDataset:
    """Trade groups keyed by (exchange, pair) plus the overall sample window."""

    groups: dict[tuple[str, str], TradeGroup] = field(default_factory=dict)

    @property
    def n_trades(self) -> int:
        return sum(g.n for g in self.groups.values())

    @property
    def window(self) -> tuple[int, int] | None:
        if not self.groups:
            return None
        lo = min(int(g.timestamps[0]) for g in self.groups.values())
        hi = max(int(g.timestamps[-1]) for g in self.groups.values())
        return lo, hi

    def group(self, exchange_id: str, pair: str) -> TradeGroup:
        return self.groups[(exchange_id, pair)]

    def sorted_keys(self) -> list[tuple[str, str]]:
        return sorted(self.groups)

    def exchanges(self) -> list[str]:
        return sorted({ex for ex, _ in self.groups})


def make_group(
    exchange_id: str,
    pair: str,
    timestamps: np.ndarray,
    amounts: np.ndarray,
    prices: np.ndarray,
) -> TradeGroup:
    """Build a TradeGroup, sorting the parallel arrays by timestamp (stable)."""
    ts = np.asarray(timestamps, dtype=np.int64)
    order = np.argsort(ts, kind="stable")
    return TradeGroup(
        exchange_id,
        pair,
        ts[order],
        np.asarray(amounts, dtype=np.int64)[order],
        np.asarray(prices, dtype=np.float64)[order],
    )


def dataset_from_trades(trades: Iterable[Trade]) -> TradeDataset:
    buckets: dict[tuple[str, str], list[Trade]] = {}
    for t in trades:
        buckets.setdefault((t.exchange_id, t.pair), []).append(t)
    ds = TradeDataset()
    for (ex, pair), rows in buckets.items():
        ds.groups[(ex, pair)] = make_group(
            ex,
            pair,
            np.array([t.timestamp_ms for t in rows], dtype=np.int64),
            np.array([t.amount_subunits for t in rows], dtype=np.int64),
            np.array([t.price for t in rows], dtype=np.float64),
        )
    return ds


# ---------------------------------------------------------------------------
# Parsing


@dataclass
class ParseReport:
    """Outcome of one parse: acceptance counts and the rejected-row log."""

    n_accepted: int = 0
    n_rejected: int = 0
    rejected: list[tuple[int, str]] = field(default_factory=list)
    n_deduplicated: int = 0

    def record_rejection(self, line: int, reason: str) -> None:
        self.n_rejected += 1
        self.rejected.append((line, reason))

    def write_csv(self, out: TextIO) -> None:
        writer = csv.writer(out)
        writer.writerow(["line", "reason"])
        for line, reason in self.rejected:
            writer.writerow([line, reason])


class _GroupAccumulator:
    __slots__ = ("timestamps", "amounts", "prices")

    def __init__(self) -> None:
        self.timestamps: list[int] = []
        self.amounts: list[int] = []
        self.prices: list[float] = []


def _open_text(source) -> TextIO:
    if isinstance(source, (str, Path)):
        return open(source, "r", encoding="utf-8", newline="")
    if isinstance(source, (bytes, bytearray)):
        return io.TextIOWrapper(io.BytesIO(source), encoding="utf-8", newline="")
    if hasattr(source, "read"):
        first = source.read(0)
        if isinstance(first, bytes):
            return io.TextIOWrapper(source, encoding="utf-8", newline="")
        return source
    raise TypeError(f"cannot read trades from {type(source)!r}")


def _validate_row(
    exchange: str, pair: str, ts_text: str, price_text: str, amount_text: str
) -> Trade:
    if not exchange:
        raise AmountError("missing exchange id")
    if not pair:
        raise AmountError("missing pair")
    try:
        ts = int(ts_text)
    except (TypeError, ValueError):
        raise AmountError(f"bad timestamp {ts_text!r}") from None
    try:
        price = float(price_text)
    except (TypeError, ValueError):
        raise AmountError(f"bad price {price_text!r}") from None
    if not price > 0:
        raise AmountError(f"non-positive price {price_text!r}")
    subunits = parse_amount(str(amount_text))
    return Trade(exchange, pair, ts, price, subunits)


def parse_trades(
    source,
    fmt: str = "csv",
    *,
    strict: bool = False,
    dedupe: bool = False,
) -> tuple[TradeDataset, ParseReport]:
    """Parse a CSV or JSONL trade file into a dataset plus a parse report.

    ``strict`` aborts on the first malformed row; otherwise bad rows are
    logged with their line number and skipped. ``dedupe`` drops exact
    duplicate rows (duplicates are legitimate in clean feeds, so this is off
    by default).
    """
    if fmt not in ("csv", "jsonl"):
        raise ValueError(f"unknown format {fmt!r}")
    report = ParseReport()
    buckets: dict[tuple[str, str], _GroupAccumulator] = {}
    seen: set[tuple] | None = set() if dedupe else None

    stream = _open_text(source)
    close = isinstance(source, (str, Path, bytes, bytearray))
    try:
        rows = _iter_csv(stream, report, strict) if fmt == "csv" else _iter_jsonl(stream, report, strict)
        for line_no, fields in rows:
            try:
                trade = _validate_row(*fields)
            except AmountError as exc:
                if strict:
                    raise ParseError(f"line {line_no}: {exc}") from exc
                report.record_rejection(line_no, str(exc))
                continue
            if seen is not None:
                key = (trade.exchange_id, trade.pair, trade.timestamp_ms, trade.price, trade.amount_subunits)
                if key in seen:
                    report.n_deduplicated += 1
                    continue
                seen.add(key)
            acc = buckets.setdefault((trade.exchange_id, trade.pair), _GroupAccumulator())
            acc.timestamps.append(trade.timestamp_ms)
            acc.amounts.append(trade.amount_subunits)
            acc.prices.append(trade.price)
            report.n_accepted += 1
    finally:
        if close:
            stream.close()

    ds = TradeDataset()
    for (ex, pair), acc in buckets.items():
        ds.groups[(ex, pair)] = make_group(
            ex,
            pair,
            np.array(acc.timestamps, dtype=np.int64),
            np.array(acc.amounts, dtype=np.int64),
            np.array(acc.prices, dtype=np.float64),
        )
    return ds, report


def _iter_csv(stream: TextIO, report: ParseReport, strict: bool):
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None:
        return
    if tuple(h.strip() for h in header) != CSV_HEADER:
        raise ParseError(f"bad CSV header {header!r}, expected {','.join(CSV_HEADER)}")
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 5:
            if strict:
                raise ParseError(f"line {line_no}: expected 5 columns, got {len(row)}")
            report.record_rejection(line_no, f"expected 5 columns, got {len(row)}")
            continue
        yield line_no, tuple(row)


def _iter_jsonl(stream: TextIO, report: ParseReport, strict: bool):
    for line_no, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            fields = tuple(str(obj[k]) for k in CSV_HEADER)
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            if strict:
                raise ParseError(f"line {line_no}: {exc}") from exc
            report.record_rejection(line_no, f"bad JSONL row: {exc}")
            continue
        yield line_no, fields


def write_trades_csv(dataset: TradeDataset, out: TextIO) -> None:
    """Write a dataset back out in the canonical CSV schema."""
    writer = csv.writer(out)
    writer.writerow(CSV_HEADER)
    for key in dataset.sorted_keys():
        g = dataset.groups[key]
        for i in range(g.n):
            writer.writerow(
                [g.exchange_id, g.pair, int(g.timestamps[i]), repr(float(g.prices[i])), format_amount(int(g.amounts[i]))]
            )


# ---------------------------------------------------------------------------
# Weekly volume panel and unrounded subset


@dataclass(frozen=True)
class WeeklyVolumeSplit:
    """Round vs unrounded volume of one exchange-pair-week, in sub-units."""

    exchange_id: str
    pair: str
    week: int
    round_subunits: int
    unrounded_subunits: int

    @property
    def round_volume(self) -> float:
        return self.round_subunits / 10**8

    @property
    def unrounded_volume(self) -> float:
        return self.unrounded_subunits / 10**8

    @property
    def total_subunits(self) -> int:
        return self.round_subunits + self.unrounded_subunits


def _exact_segment_sums(values: np.ndarray, boundaries: np.ndarray) -> list[int]:
    """Exact per-segment sums of int64 values (segments given by start offsets)."""
    hi = np.add.reduceat(values >> 32, boundaries)
    lo = np.add.reduceat(values & 0xFFFFFFFF, boundaries)
    return [(int(h) << 32) + int(l) for h, l in zip(hi, lo)]


def weekly_split(dataset: TradeDataset, registry: PairRegistry) -> list[WeeklyVolumeSplit]:
    """Exact per-week round/unrounded volume sums for every group.

    Weeks with no trades are omitted. Integer arithmetic throughout, so the
    two parts always sum to the group's total volume exactly.
    """
    out: list[WeeklyVolumeSplit] = []
    for key in dataset.sorted_keys():
        g = dataset.groups[key]
        if g.n == 0:
            continue
        spec = registry.get(g.pair)
        weeks = (g.timestamps // MS_PER_DAY + _EPOCH_MONDAY_OFFSET_DAYS) // 7
        round_mask = is_round_mask(g.amounts, spec)
        # timestamps are sorted, so week indices are non-decreasing
        uniq_weeks, starts = np.unique(weeks, return_index=True)
        round_amounts = np.where(round_mask, g.amounts, 0)
        unrounded_amounts = np.where(round_mask, 0, g.amounts)
        round_sums = _exact_segment_sums(round_amounts, starts)
        unrounded_sums = _exact_segment_sums(unrounded_amounts, starts)
        for w, r, u in zip(uniq_weeks, round_sums, unrounded_sums):
            out.append(WeeklyVolumeSplit(g.exchange_id, g.pair, int(w), r, u))
    return out


def unrounded_subset(dataset: TradeDataset, registry: PairRegistry) -> TradeDataset:
    """Restrict the dataset to unrounded trades; empty groups are dropped."""
    ds = TradeDataset()
    for key, g in dataset.groups.items():
        spec = registry.get(g.pair)
        keep = ~is_round_mask(g.amounts, spec)
        if not keep.any():
            continue
        ds.groups[key] = TradeGroup(
            g.exchange_id, g.pair, g.timestamps[keep], g.amounts[keep], g.prices[keep]
        )
    return ds


def require_group(group: TradeGroup, minimum: int = 1) -> None:
    if group.n < minimum:
        raise InsufficientDataError(
            f"{group.exchange_id} {group.pair}: {group.n} trades, need at least {minimum}"
        )
