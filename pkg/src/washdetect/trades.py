"""Exact trade representation, base units, digits, and roundness.

Trade amounts are decimal strings with at most 8 fractional digits. They are
stored as integer counts of 1e-8 native-currency sub-units so that every
roundness and digit computation is exact integer arithmetic; a float would
misclassify roundness, which is the core signal everything else builds on.

Each currency pair has a base unit: the power of ten of the native currency
whose market value sits near one US dollar. Trade sizes are measured in base
units for all clustering and roundness logic. A trade is "round" when its
size is an exact integer multiple of 100 base units.
"""

from __future__ import annotations

import enum
import json
import math
import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import AmountError, PairConfigError

AMOUNT_DECIMALS = 8
SUBUNITS_PER_UNIT = 10**AMOUNT_DECIMALS

# Largest representable amount in sub-units (fits comfortably in int64).
MAX_AMOUNT_SUBUNITS = 2**62

_AMOUNT_RE = re.compile(r"^\s*(\d+)(?:\.(\d*))?\s*$")


def parse_amount(text: str) -> int:
    """Parse a decimal amount string into an exact sub-unit count.

    Rejects (rather than truncates) anything with more than 8 fractional
    digits: silent truncation would manufacture roundness.
    """
    m = _AMOUNT_RE.match(text)
    if m is None:
        raise AmountError(f"malformed amount {text!r}")
    int_part, frac_part = m.group(1), m.group(2) or ""
    if len(frac_part) > AMOUNT_DECIMALS:
        raise AmountError(f"precision overflow: {text!r} has more than {AMOUNT_DECIMALS} decimals")
    subunits = int(int_part) * SUBUNITS_PER_UNIT + int(frac_part.ljust(AMOUNT_DECIMALS, "0") or "0")
    if subunits <= 0:
        raise AmountError(f"non-positive amount {text!r}")
    if subunits >= MAX_AMOUNT_SUBUNITS:
        raise AmountError(f"amount overflow {text!r}")
    return subunits


def format_amount(subunits: int) -> str:
    """Serialize a sub-unit count to its canonical decimal string.

    Canonical means no trailing fractional zeros and no exponent notation,
    so parse(format(x)) == x and format(parse(s)) is idempotent.
    """
    if subunits <= 0:
        raise AmountError(f"non-positive amount {subunits}")
    units, rem = divmod(subunits, SUBUNITS_PER_UNIT)
    frac = str(rem).rjust(AMOUNT_DECIMALS, "0").rstrip("0")
    return f"{units}.{frac}" if frac else str(units)


def first_significant_digit(subunits: int) -> int:
    """Leading non-zero decimal digit of a positive amount (1..9).

    Invariant under multiplication by powers of ten, so the sub-unit integer
    carries the same leading digit as the native-unit decimal.
    """
    if subunits <= 0:
        raise AmountError("first significant digit undefined for non-positive amount")
    return int(str(subunits)[0])


def first_significant_digits(subunits: np.ndarray) -> np.ndarray:
    """Vectorized leading digit for an int64 array of positive amounts."""
    x = np.asarray(subunits, dtype=np.int64)
    if x.size and x.min() <= 0:
        raise AmountError("first significant digit undefined for non-positive amount")
    e = np.floor(np.log10(x.astype(np.float64))).astype(np.int64)
    # float log10 can misround next to powers of ten; fix with exact integer division
    lead = x // 10**e
    too_low = lead == 0
    if too_low.any():
        e[too_low] -= 1
        lead[too_low] = x[too_low] // 10 ** e[too_low]
    too_high = lead >= 10
    if too_high.any():
        e[too_high] += 1
        lead[too_high] = x[too_high] // 10 ** e[too_high]
    return lead.astype(np.int64)


def decimal_trailing_zeros(subunits: int) -> int:
    """Number of trailing decimal zeros of a positive integer."""
    s = str(subunits)
    return len(s) - len(s.rstrip("0"))


# ---------------------------------------------------------------------------
# Pair configuration


BASE_UNIT_EXPONENT_MIN = -AMOUNT_DECIMALS
BASE_UNIT_EXPONENT_MAX = 4


@dataclass(frozen=True)
class PairSpec:
    """Base-unit convention for one currency pair.

    ``base_unit_exponent`` is the integer e with one base unit = 10**e native
    units. It must stay within [-8, 4] so base units remain representable on
    the 1e-8 fixed-point grid.
    """

    pair: str
    base_unit_exponent: int

    def __post_init__(self) -> None:
        e = self.base_unit_exponent
        if not BASE_UNIT_EXPONENT_MIN <= e <= BASE_UNIT_EXPONENT_MAX:
            raise PairConfigError(
                f"base unit exponent {e} for {self.pair} outside "
                f"[{BASE_UNIT_EXPONENT_MIN}, {BASE_UNIT_EXPONENT_MAX}]"
            )

    @property
    def subunits_per_base_unit(self) -> int:
        return 10 ** (AMOUNT_DECIMALS + self.base_unit_exponent)

    @property
    def round_modulus(self) -> int:
        """Sub-unit divisor that defines a round trade (100 base units)."""
        return 100 * self.subunits_per_base_unit


BUILTIN_PAIR_SPECS: dict[str, PairSpec] = {
    "BTC/USD": PairSpec("BTC/USD", -4),
    "ETH/USD": PairSpec("ETH/USD", -3),
    "LTC/USD": PairSpec("LTC/USD", -2),
    "XRP/USD": PairSpec("XRP/USD", 0),
}


def infer_base_unit_exponent(reference_price_usd: float) -> int:
    """Pick the power-of-ten base unit whose unit price is nearest 1 USD.

    Nearness is the absolute distance |price * 10**e - 1|; exact ties break
    toward the smaller exponent. ``reference_price_usd`` is the price of one
    native unit.
    """
    if not (reference_price_usd > 0 and math.isfinite(reference_price_usd)):
        raise PairConfigError(f"reference price must be positive, got {reference_price_usd}")
    best_e, best_dist = None, None
    for e in range(BASE_UNIT_EXPONENT_MIN, BASE_UNIT_EXPONENT_MAX + 1):
        dist = abs(reference_price_usd * 10.0**e - 1.0)
        if best_dist is None or dist < best_dist - 1e-12 * max(1.0, best_dist):
            best_e, best_dist = e, dist
    return best_e


class PairRegistry:
    """Lookup table pair -> PairSpec, seeded with the four built-in pairs."""

    def __init__(self, specs: dict[str, PairSpec] | None = None, include_builtins: bool = True):
        self._specs: dict[str, PairSpec] = dict(BUILTIN_PAIR_SPECS) if include_builtins else {}
        if specs:
            self._specs.update(specs)

    def get(self, pair: str) -> PairSpec:
        try:
            return self._specs[pair]
        except KeyError:
            raise PairConfigError(f"no base-unit configuration for pair {pair!r}") from None

    def add(self, spec: PairSpec) -> None:
        self._specs[spec.pair] = spec

    def pairs(self) -> list[str]:
        return sorted(self._specs)

    def __contains__(self, pair: str) -> bool:
        return pair in self._specs

    @classmethod
    def from_file(cls, path: str | Path, include_builtins: bool = True) -> "PairRegistry":
        """Load overrides from a JSON file mapping pair -> exponent."""
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(raw, dict):
            raise PairConfigError(f"{path}: expected a JSON object of pair -> exponent")
        specs = {}
        for pair, exponent in raw.items():
            if not isinstance(exponent, int):
                raise PairConfigError(f"{path}: exponent for {pair!r} must be an integer")
            specs[pair] = PairSpec(pair, exponent)
        return cls(specs, include_builtins=include_builtins)


# ---------------------------------------------------------------------------
# Roundness


class RoundnessLevel(enum.IntEnum):
    """Place value, in base units, of the last non-zero digit of a trade size.

    The value of each member is the (clipped) power of ten of that place, so
    the enum is ordered from least to most round. Extreme places pool into
    the two boundary buckets, leaving exactly eight categories.
    """

    THOUSANDTHS_OR_LESS = -3
    HUNDREDTHS = -2
    TENTHS = -1
    ONES = 0
    TENS = 1
    HUNDREDS = 2
    THOUSANDS = 3
    TEN_THOUSANDS_OR_MORE = 4


ROUNDNESS_LEVELS = tuple(sorted(RoundnessLevel, key=int))


def to_base_units(subunits: int, spec: PairSpec) -> Fraction:
    """Exact trade size in base units, as a rational number."""
    if subunits <= 0:
        raise AmountError("non-positive amount")
    return Fraction(subunits, spec.subunits_per_base_unit)


def is_round(subunits: int, spec: PairSpec) -> bool:
    """True when the size is an exact integer multiple of 100 base units."""
    if subunits <= 0:
        raise AmountError("non-positive amount")
    return subunits % spec.round_modulus == 0


def roundness_level(subunits: int, spec: PairSpec) -> RoundnessLevel:
    """Bucket the place value of the last non-zero digit, in base units."""
    if subunits <= 0:
        raise AmountError("non-positive amount")
    place = decimal_trailing_zeros(subunits) - (AMOUNT_DECIMALS + spec.base_unit_exponent)
    place = max(RoundnessLevel.THOUSANDTHS_OR_LESS, min(RoundnessLevel.TEN_THOUSANDS_OR_MORE, place))
    return RoundnessLevel(place)


def is_round_mask(subunits: np.ndarray, spec: PairSpec) -> np.ndarray:
    """Vectorized is_round over an int64 amount array."""
    x = np.asarray(subunits, dtype=np.int64)
    return x % spec.round_modulus == 0


def trailing_zero_counts(subunits: np.ndarray) -> np.ndarray:
    """Vectorized count of trailing decimal zeros (positive int64 input)."""
    x = np.asarray(subunits, dtype=np.int64).copy()
    zeros = np.zeros(x.shape, dtype=np.int64)
    active = x % 10 == 0
    while active.any():
        zeros[active] += 1
        x[active] //= 10
        active &= x % 10 == 0
    return zeros


def roundness_level_indices(subunits: np.ndarray, spec: PairSpec) -> np.ndarray:
    """Vectorized roundness buckets as indices 0..7 into ROUNDNESS_LEVELS."""
    place = trailing_zero_counts(subunits) - (AMOUNT_DECIMALS + spec.base_unit_exponent)
    return np.clip(place, int(RoundnessLevel.THOUSANDTHS_OR_LESS), int(RoundnessLevel.TEN_THOUSANDS_OR_MORE)) + 3


# ---------------------------------------------------------------------------
# Trades and exchange metadata


@dataclass(frozen=True, slots=True)
class Trade:
    """One executed transaction.

    ``amount_subunits`` is the exact integer count of 1e-8 native units;
    ``price`` (quote per native unit) is carried as metadata and takes part
    in no detection test.
    """

    exchange_id: str
    pair: str
    timestamp_ms: int
    price: float
    amount_subunits: int

    def __post_init__(self) -> None:
        if self.amount_subunits <= 0:
            raise AmountError(f"non-positive amount {self.amount_subunits}")
        if not (self.price > 0 and math.isfinite(self.price)):
            raise AmountError(f"non-positive price {self.price}")

    @property
    def amount(self) -> Fraction:
        return Fraction(self.amount_subunits, SUBUNITS_PER_UNIT)

    @property
    def amount_str(self) -> str:
        return format_amount(self.amount_subunits)


class RegulatoryClass(enum.Enum):
    REGULATED = "regulated"
    UNREGULATED_TIER1 = "unregulated_tier1"
    UNREGULATED_TIER2 = "unregulated_tier2"


_REG_CLASS_ALIASES = {
    "regulated": RegulatoryClass.REGULATED,
    "tier1": RegulatoryClass.UNREGULATED_TIER1,
    "unregulated_tier1": RegulatoryClass.UNREGULATED_TIER1,
    "unregulated-tier1": RegulatoryClass.UNREGULATED_TIER1,
    "tier2": RegulatoryClass.UNREGULATED_TIER2,
    "unregulated_tier2": RegulatoryClass.UNREGULATED_TIER2,
    "unregulated-tier2": RegulatoryClass.UNREGULATED_TIER2,
}

CONTROL_FIELDS = ("age_years", "rank", "traffic_pct", "unique_visitors")


@dataclass(frozen=True)
class ExchangeMeta:
    """Regulatory class plus optional benchmark-regression covariates."""

    exchange_id: str
    regulatory_class: RegulatoryClass
    name: str = ""
    age_years: float | None = None
    rank: float | None = None
    traffic_pct: float | None = None
    unique_visitors: float | None = None

    @property
    def is_regulated(self) -> bool:
        return self.regulatory_class is RegulatoryClass.REGULATED

    def has_all_controls(self) -> bool:
        return all(getattr(self, f) is not None for f in CONTROL_FIELDS)


def parse_regulatory_class(text: str) -> RegulatoryClass:
    try:
        return _REG_CLASS_ALIASES[text.strip().lower()]
    except KeyError:
        raise PairConfigError(f"unknown regulatory class {text!r}") from None


def load_exchange_meta(path: str | Path) -> dict[str, ExchangeMeta]:
    """Load exchange metadata from a JSON file keyed by exchange id."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    meta = {}
    for exchange_id, fields in raw.items():
        meta[exchange_id] = ExchangeMeta(
            exchange_id=exchange_id,
            regulatory_class=parse_regulatory_class(fields["regulatory_class"]),
            name=fields.get("name", ""),
            age_years=fields.get("age_years"),
            rank=fields.get("rank"),
            traffic_pct=fields.get("traffic_pct"),
            unique_visitors=fields.get("unique_visitors"),
        )
    return meta


def exact_sum(subunits: np.ndarray) -> int:
    """Exact Python-int sum of an int64 array (no silent int64 overflow).

    Splits each value into high and low 32-bit halves so each partial sum
    stays far from the int64 boundary.
    """
    x = np.asarray(subunits, dtype=np.int64)
    if x.size == 0:
        return 0
    hi = int(np.sum(x >> 32, dtype=np.int64))
    lo = int(np.sum(x & 0xFFFFFFFF, dtype=np.int64))
    return (hi << 32) + lo
