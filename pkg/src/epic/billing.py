"""Billing periods, closing masks, period-total recovery, and bills.

Each day splits into fixed billing periods of w slots.  During a period a
meter's masked readings carry its regular net masks; the closing slot swaps
in a closing mask (billing mask minus the running sum of the period's prior
net masks), so the period's masked readings sum to the plain period total
plus one meter-utility billing mask:

    sum_{k=1..w} m^(k) = sum_{k=1..w} r^(k) + s_b   (mod p)

The utility adds the period's homomorphic hashes, strips H(s_b), and
recovers the period total by solving a bounded discrete log in the hash
group (the total is tiny compared to p).  Totals priced per period give the
bill; bill arithmetic is exact (fractions), never floating point.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction

from .crypto import hmac_scalar
from .errors import (
    ConfigError,
    DlogRangeError,
    IncompleteBillingError,
    IncompletePeriodError,
    ParameterError,
)


# --- period calendar ---------------------------------------------------------


@dataclass(frozen=True)
class PeriodRef:
    """One billing period of one day."""

    index: int          # global period counter (day * periods_per_day + position)
    day: int
    position: int       # position within the day
    start_slot: int
    width: int

    @property
    def closing_slot(self) -> int:
        return self.start_slot + self.width - 1

    def slots(self):
        return range(self.start_slot, self.start_slot + self.width)

    def is_closing(self, t_x: int) -> bool:
        return t_x == self.closing_slot


@dataclass(frozen=True)
class PeriodSchedule:
    """Partition of the day's slots into billing periods."""

    slots_per_day: int
    boundaries: tuple  # (start_slot, width) per period, covering the day

    def __post_init__(self):
        covered = 0
        for start, width in self.boundaries:
            if start != covered or width < 1:
                raise ConfigError("periods must partition the day in order")
            covered += width
        if covered != self.slots_per_day:
            raise ConfigError(
                f"periods cover {covered} slots but the day has {self.slots_per_day}"
            )

    @classmethod
    def uniform(cls, slots_per_day: int, periods_per_day: int) -> "PeriodSchedule":
        if slots_per_day % periods_per_day:
            raise ConfigError("slots_per_day must divide evenly into periods")
        w = slots_per_day // periods_per_day
        return cls(
            slots_per_day=slots_per_day,
            boundaries=tuple((i * w, w) for i in range(periods_per_day)),
        )

    @property
    def periods_per_day(self) -> int:
        return len(self.boundaries)

    def period_of(self, day: int, t_x: int) -> PeriodRef:
        if not 0 <= t_x < self.slots_per_day:
            raise ParameterError(f"slot {t_x} outside the daily schedule")
        for pos, (start, width) in enumerate(self.boundaries):
            if start <= t_x < start + width:
                return PeriodRef(
                    index=day * self.periods_per_day + pos,
                    day=day,
                    position=pos,
                    start_slot=start,
                    width=width,
                )
        raise ParameterError(f"slot {t_x} not covered by any period")

    def period_by_index(self, index: int) -> PeriodRef:
        day, pos = divmod(index, self.periods_per_day)
        start, width = self.boundaries[pos]
        return PeriodRef(index=index, day=day, position=pos, start_slot=start, width=width)


def derive_billing_mask(pair_key_bytes: bytes, period_index: int, p: int) -> int:
    """Billing mask s_b shared between a meter and the utility, derivable
    only from their pairwise key."""
    msg = b"bill" + period_index.to_bytes(4, "big")
    return hmac_scalar(pair_key_bytes, msg, p)


# --- period hash accumulation and recovery -----------------------------------


def accumulate_hashes(backend, hashes, expected_w: int):
    """Sum the w homomorphic hashes a meter sent during a period."""
    if len(hashes) != expected_w:
        raise IncompletePeriodError(
            f"period needs {expected_w} hashes, have {len(hashes)}"
        )
    acc = backend.hh_identity()
    for h in hashes:
        acc = backend.hh_add(acc, h)
    return acc


class DLogSolver:
    """Bounded discrete log in the hash group: recovers k from k*P1 for
    k in [0, max_value].

    Small ranges use a direct lookup table; larger ones baby-step/giant-step
    with about sqrt(max_value) stored entries.  Both are exact over the full
    range.  Works through the backend's group API only, so it does not care
    how elements are represented.
    """

    def __init__(self, backend, max_value: int, table_threshold: int = 1 << 16):
        if max_value < 0:
            raise ParameterError("dlog range must be nonnegative")
        self.backend = backend
        self.max_value = max_value
        self.gen = backend.hh_generators[0]
        self.strategy = "table" if max_value <= table_threshold else "bsgs"
        if self.strategy == "table":
            self._table = {}
            elem = backend.hh_identity()
            for k in range(max_value + 1):
                self._table[backend.hh_encode(elem)] = k
                elem = backend.hh_add(elem, self.gen)
        else:
            self._stride = math.isqrt(max_value) + 1
            self._baby = {}
            elem = backend.hh_identity()
            for j in range(self._stride):
                self._baby[backend.hh_encode(elem)] = j
                elem = backend.hh_add(elem, self.gen)
            # elem is now stride*P1; giant steps subtract it repeatedly
            self._giant_neg = backend.hh_neg(elem)

    def solve(self, element) -> int:
        be = self.backend
        if self.strategy == "table":
            k = self._table.get(be.hh_encode(element))
            if k is None:
                raise DlogRangeError(
                    f"element has no discrete log in [0, {self.max_value}]"
                )
            return k
        cur = element
        for i in range(self._stride + 1):
            j = self._baby.get(be.hh_encode(cur))
            if j is not None:
                k = i * self._stride + j
                if k <= self.max_value:
                    return k
            cur = be.hh_add(cur, self._giant_neg)
        raise DlogRangeError(f"element has no discrete log in [0, {self.max_value}]")


def recover_period_total(backend, solver: DLogSolver, hash_accumulator, billing_mask: int) -> int:
    """Strip H(s_b) from the period's hash sum and solve for the total."""
    masked_hash = backend.hh_hash([billing_mask] + [0] * (backend.params.d - 1))
    target = backend.hh_add(hash_accumulator, backend.hh_neg(masked_hash))
    return solver.solve(target)


class UtilityBillingLedger:
    """Utility-side per-meter hash collection across a billing period.

    Each verified round contributes one homomorphic hash per meter; at the
    period boundary the accumulated sum, minus the billing-mask hash, yields
    the period total through the bounded discrete log.
    """

    def __init__(self, backend, schedule: PeriodSchedule):
        self.backend = backend
        self.schedule = schedule
        self._hashes = {}  # meter -> {(day, t_x) -> hash element}

    def record_round(self, hash_entries, day: int, t_x: int):
        for meter_id, h in hash_entries:
            self._hashes.setdefault(meter_id, {})[(day, t_x)] = h

    def period_accumulator(self, meter_id: int, ref: PeriodRef):
        slots = [(ref.day, t) for t in ref.slots()]
        stored = self._hashes.get(meter_id, {})
        missing = [s for s in slots if s not in stored]
        if missing:
            raise IncompletePeriodError(
                f"meter {meter_id} period {ref.index}: missing slots {missing}"
            )
        return accumulate_hashes(self.backend, [stored[s] for s in slots], ref.width)

    def recover_total(self, meter_id: int, ref: PeriodRef, billing_mask: int,
                      solver: DLogSolver) -> int:
        acc = self.period_accumulator(meter_id, ref)
        return recover_period_total(self.backend, solver, acc, billing_mask)


# --- pricing ----------------------------------------------------------------


@dataclass(frozen=True)
class PriceSchedule:
    """Price per billing-period position within the day (exact fractions,
    currency per energy unit)."""

    prices: tuple

    def __post_init__(self):
        norm = tuple(Fraction(p) for p in self.prices)
        if any(p < 0 for p in norm):
            raise ConfigError("prices must be nonnegative")
        object.__setattr__(self, "prices", norm)

    def price_for(self, period_position: int) -> Fraction:
        return self.prices[period_position % len(self.prices)]


def compute_bill(period_totals: dict, prices: PriceSchedule, schedule: PeriodSchedule) -> Fraction:
    """Exact bill: sum over periods of price * recovered total.

    `period_totals` maps global period index -> energy total; every period
    between the smallest and largest index must be present.
    """
    if not period_totals:
        return Fraction(0)
    indices = sorted(period_totals)
    expected = range(indices[0], indices[-1] + 1)
    missing = [i for i in expected if i not in period_totals]
    if missing:
        raise IncompleteBillingError(f"missing recovered totals for periods {missing}")
    bill = Fraction(0)
    for index in indices:
        ref = schedule.period_by_index(index)
        bill += prices.price_for(ref.position) * period_totals[index]
    return bill


def export_bills_csv(path, rows):
    """Write billing rows (meter_id, period, total_energy, price, amount)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["meter_id", "period", "total_energy", "price", "amount"])
        for meter_id, period, total, price, amount in rows:
            writer.writerow([
                meter_id,
                period,
                total,
                f"{float(price):.6f}",
                f"{float(amount):.6f}",
            ])
