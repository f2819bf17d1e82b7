"""Billing tests: closing masks, hash accumulation, discrete-log recovery,
and dynamic-pricing bills."""

import random
from fractions import Fraction

import pytest

from epic.billing import (
    DLogSolver,
    PeriodSchedule,
    PriceSchedule,
    UtilityBillingLedger,
    accumulate_hashes,
    compute_bill,
    derive_billing_mask,
    export_bills_csv,
    recover_period_total,
)
from epic.errors import (
    ConfigError,
    DlogRangeError,
    IncompleteBillingError,
    IncompletePeriodError,
)
from epic.protocol import RoundContext, Tree, run_collection_round
from epic.system import GATEWAY_ID

from conftest import make_system


def run_period(sys, tree, day, slots, rng, ledger=None, readings_log=None,
               masked_log=None):
    """Run one honest round per slot, recording hashes and masked values."""
    for t_x in slots:
        readings = {m: rng.randrange(sys.config.r_max + 1) for m in sys.meter_ids}
        if readings_log is not None:
            for m, r in readings.items():
                readings_log.setdefault(m, []).append(r)

        def capture(sender, receiver, report):
            if masked_log is not None and sender in sys.meter_ids:
                masked_log.setdefault(sender, []).append(report.value)
            return report

        ctx = RoundContext(day=day, t_x=t_x, ts=1000 + 60 * t_x, r_max=sys.config.r_max)
        result = run_collection_round(sys, tree, readings, ctx, relay_hook=capture)
        assert not result.detections
        assert result.error is None
        assert result.recovered == sum(readings.values())
        if ledger is not None:
            ledger.record_round(result.gw_report.hash_entries, day, t_x)
    return result


# --- schedules -----------------------------------------------------------------


def test_uniform_schedule_partitions_day():
    sched = PeriodSchedule.uniform(96, 4)
    assert sched.periods_per_day == 4
    ref = sched.period_of(2, 50)
    assert (ref.day, ref.position, ref.start_slot, ref.width) == (2, 2, 48, 24)
    assert ref.index == 2 * 4 + 2
    assert ref.closing_slot == 71
    assert not ref.is_closing(50)
    assert sched.period_by_index(ref.index) == ref


def test_schedule_validation():
    with pytest.raises(ConfigError):
        PeriodSchedule(slots_per_day=8, boundaries=((0, 4), (5, 3)))
    with pytest.raises(ConfigError):
        PeriodSchedule.uniform(10, 3)


# --- closing masks ---------------------------------------------------------------


def test_single_slot_period_closing_mask_is_billing_mask():
    sys = make_system(n_meters=3, lam=2, seed=1, slots_per_day=4, periods_per_day=4)
    meter = sys.meter_ids[0]
    mgr = sys.nodes[meter].masks
    ref = sys.schedule.period_of(0, 0)
    assert ref.width == 1
    expected = sys.utility.billing_mask(meter, ref.index)
    assert mgr.net_mask(0, 0) == expected


def test_zero_pairwise_masks_reduce_closing_to_billing_mask():
    sys = make_system(n_meters=3, lam=0, seed=2, slots_per_day=6, periods_per_day=2)
    meter = sys.meter_ids[1]
    ref = sys.schedule.period_of(0, 2)
    assert ref.width == 3
    expected = sys.utility.billing_mask(meter, ref.index)
    assert sys.nodes[meter].masks.net_mask(0, 2) == expected


def test_period_sum_of_masked_readings_is_total_plus_billing_mask():
    """Brute-force oracle over a w=4 period with random masks."""
    rng = random.Random(12)
    sys = make_system(n_meters=5, lam=2, seed=3, slots_per_day=4, periods_per_day=1)
    tree = Tree(GATEWAY_ID, {m: GATEWAY_ID for m in sys.meter_ids})
    readings_log, masked_log = {}, {}
    run_period(sys, tree, 0, range(4), rng, readings_log=readings_log,
               masked_log=masked_log)
    p = sys.backend.params.p
    ref = sys.schedule.period_of(0, 0)
    for m in sys.meter_ids:
        total_masked = sum(masked_log[m]) % p
        total_plain = sum(readings_log[m])
        s_b = sys.utility.billing_mask(m, ref.index)
        assert total_masked == (total_plain + s_b) % p


# --- accumulation and recovery -----------------------------------------------------


def test_accumulator_zero_reading_single_slot(backend):
    sys = make_system(n_meters=2, lam=0, seed=4, slots_per_day=4, periods_per_day=4)
    tree = Tree(GATEWAY_ID, {m: GATEWAY_ID for m in sys.meter_ids})
    ctx = RoundContext(day=0, t_x=0, ts=0, r_max=sys.config.r_max)
    result = run_collection_round(sys, tree, {m: 0 for m in sys.meter_ids}, ctx)
    be = sys.backend
    ref = sys.schedule.period_of(0, 0)
    for meter_id, h in result.gw_report.hash_entries:
        s_b = sys.utility.billing_mask(meter_id, ref.index)
        assert h == be.hh_hash([s_b])


def test_accumulator_equals_hash_of_masked_sum():
    rng = random.Random(21)
    sys = make_system(n_meters=4, lam=1, seed=5, slots_per_day=5, periods_per_day=1)
    tree = Tree(GATEWAY_ID, {m: GATEWAY_ID for m in sys.meter_ids})
    ledger = UtilityBillingLedger(sys.backend, sys.schedule)
    masked_log = {}
    run_period(sys, tree, 0, range(5), rng, ledger=ledger, masked_log=masked_log)
    be = sys.backend
    ref = sys.schedule.period_of(0, 0)
    for m in sys.meter_ids:
        acc = ledger.period_accumulator(m, ref)
        assert acc == be.hh_hash([sum(masked_log[m]) % be.params.p])


def test_incomplete_period_raises():
    sys = make_system(n_meters=2, lam=0, seed=6, slots_per_day=4, periods_per_day=1)
    ledger = UtilityBillingLedger(sys.backend, sys.schedule)
    ledger.record_round([(2, sys.backend.hh_hash([1]))], 0, 0)
    with pytest.raises(IncompletePeriodError):
        ledger.period_accumulator(2, sys.schedule.period_of(0, 0))
    with pytest.raises(IncompletePeriodError):
        accumulate_hashes(sys.backend, [sys.backend.hh_identity()], 3)


def test_recover_known_totals():
    """Readings (5, 7, 9) over a w=3 period recover exactly 21."""
    sys = make_system(n_meters=1, lam=0, seed=7, slots_per_day=3, periods_per_day=1)
    tree = Tree(GATEWAY_ID, {2: GATEWAY_ID})
    ledger = UtilityBillingLedger(sys.backend, sys.schedule)
    for t_x, r in enumerate((5, 7, 9)):
        ctx = RoundContext(day=0, t_x=t_x, ts=60 * t_x, r_max=sys.config.r_max)
        result = run_collection_round(sys, tree, {2: r}, ctx)
        ledger.record_round(result.gw_report.hash_entries, 0, t_x)
    ref = sys.schedule.period_of(0, 0)
    solver = DLogSolver(sys.backend, 3 * sys.config.r_max)
    total = ledger.recover_total(2, ref, sys.utility.billing_mask(2, ref.index), solver)
    assert total == 21


def test_recover_many_meters_and_periods_matches_plaintext_oracle():
    rng = random.Random(77)
    sys = make_system(n_meters=8, lam=2, seed=8, slots_per_day=8, periods_per_day=4)
    tree = Tree(GATEWAY_ID, {m: GATEWAY_ID for m in sys.meter_ids})
    ledger = UtilityBillingLedger(sys.backend, sys.schedule)
    readings_log = {}
    run_period(sys, tree, 0, range(8), rng, ledger=ledger, readings_log=readings_log)
    solver = DLogSolver(sys.backend, 2 * sys.config.r_max)
    for pos in range(4):
        ref = sys.schedule.period_of(0, pos * 2)
        for m in sys.meter_ids:
            expect = sum(readings_log[m][pos * 2: pos * 2 + 2])
            got = ledger.recover_total(m, ref, sys.utility.billing_mask(m, ref.index), solver)
            assert got == expect


# --- discrete log solver -------------------------------------------------------------


@pytest.mark.parametrize("max_value,threshold", [(500, 1 << 16), (500, 10), (4096, 10)])
def test_dlog_exhaustive_exact(backend, max_value, threshold):
    solver = DLogSolver(backend, max_value, table_threshold=threshold)
    g = backend.hh_generators[0]
    elem = backend.hh_identity()
    for k in range(max_value + 1):
        assert solver.solve(elem) == k
        elem = backend.hh_add(elem, g)


def test_dlog_large_range_sampled(backend):
    max_value = 1 << 20
    solver = DLogSolver(backend, max_value)
    assert solver.strategy == "bsgs"
    rng = random.Random(5)
    for _ in range(200):
        k = rng.randrange(max_value + 1)
        assert solver.solve(backend.hh_mul(k, backend.hh_generators[0])) == k


def test_dlog_out_of_range_raises(backend):
    solver = DLogSolver(backend, 100, table_threshold=1000)
    with pytest.raises(DlogRangeError):
        solver.solve(backend.hh_mul(101, backend.hh_generators[0]))
    bsgs = DLogSolver(backend, 100, table_threshold=10)
    with pytest.raises(DlogRangeError):
        bsgs.solve(backend.hh_mul(5000, backend.hh_generators[0]))


# --- bills -----------------------------------------------------------------------------


def make_sched(n_periods):
    return PeriodSchedule.uniform(n_periods, n_periods)


def test_bill_zero_totals():
    sched = make_sched(4)
    prices = PriceSchedule(prices=(1, 2, 3, 4))
    assert compute_bill({i: 0 for i in range(4)}, prices, sched) == 0


def test_bill_known_arithmetic():
    sched = make_sched(2)
    prices = PriceSchedule(prices=(2, 3))
    assert compute_bill({0: 21, 1: 10}, prices, sched) == 72


def test_bill_randomized_matches_direct_recompute():
    rng = random.Random(31)
    sched = make_sched(6)
    for _ in range(50):
        prices = PriceSchedule(prices=tuple(Fraction(rng.randrange(0, 500), 100)
                                            for _ in range(6)))
        totals = {i: rng.randrange(10**6) for i in range(12)}  # two days
        expected = sum(prices.prices[i % 6] * t for i, t in totals.items())
        assert compute_bill(totals, prices, sched) == expected


def test_bill_missing_period_rejected():
    sched = make_sched(3)
    prices = PriceSchedule(prices=(1, 1, 1))
    with pytest.raises(IncompleteBillingError):
        compute_bill({0: 5, 2: 5}, prices, sched)


def test_bill_exactness_no_float_rounding():
    sched = make_sched(1)
    prices = PriceSchedule(prices=(Fraction(1, 3),))
    assert compute_bill({0: 3}, prices, sched) == 1


def test_negative_price_rejected():
    with pytest.raises(ConfigError):
        PriceSchedule(prices=(-1,))


def test_export_bills_csv(tmp_path):
    path = tmp_path / "bills.csv"
    export_bills_csv(path, [(2, 0, 21, Fraction(2), Fraction(42))])
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "meter_id,period,total_energy,price,amount"
    assert lines[1] == "2,0,21,2.000000,42.000000"


def test_billing_mask_deterministic(backend):
    a = derive_billing_mask(b"pair-key", 7, backend.params.p)
    assert a == derive_billing_mask(b"pair-key", 7, backend.params.p)
    assert a != derive_billing_mask(b"pair-key", 8, backend.params.p)
