"""Expected-dissatisfaction objective and the inventory decision it implies."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bikecast.errors import DomainError
from bikecast.inventory import PenaltyConfig, UdfCurve, oracle_decision, udf, udf_curve
from bikecast.queueing import RateSeries, monte_carlo_oracle


def test_empty_station_pure_pickups_loses_everything():
    # start 0, pickups 1/h for 24h, no returns: every arrival is lost
    rates = RateSeries(60, np.ones(24), np.zeros(24))
    value = udf(rates, start=0, capacity=5)
    np.testing.assert_allclose(value, 24.0, atol=1e-9)


def test_no_demand_no_cost():
    rates = RateSeries(60, np.zeros(24), np.zeros(24))
    curve = udf_curve(rates, capacity=8)
    np.testing.assert_allclose(curve.values, 0.0, atol=1e-12)
    assert curve.s_star == 0


def test_full_station_pure_returns():
    # start C, returns 2/h, no pickups: every return is blocked
    rates = RateSeries(60, np.zeros(6), np.full(6, 2.0))
    value = udf(rates, start=4, capacity=4)
    np.testing.assert_allclose(value, 12.0, atol=1e-8)


def test_symmetric_day_symmetric_curve():
    rng = np.random.default_rng(2)
    shared = rng.uniform(0.5, 6.0, 24)
    rates = RateSeries(60, shared, shared)
    curve = udf_curve(rates, capacity=10)
    assert curve.s_star == 5
    np.testing.assert_allclose(curve.values, curve.values[::-1], atol=1e-8)


def test_penalty_scaling_is_linear():
    rates = RateSeries(60, [3.0, 1.0], [0.5, 2.5])
    base = udf(rates, 2, 4, PenaltyConfig(1.0, 1.0))
    scaled = udf(rates, 2, 4, PenaltyConfig(3.0, 3.0))
    np.testing.assert_allclose(scaled, 3.0 * base, rtol=1e-12)


def test_one_sided_penalty_isolates_one_boundary():
    rates = RateSeries(60, [2.0], [2.0])
    only_pickups = udf(rates, 1, 3, PenaltyConfig(1.0, 0.0))
    only_returns = udf(rates, 1, 3, PenaltyConfig(0.0, 1.0))
    both = udf(rates, 1, 3, PenaltyConfig(1.0, 1.0))
    np.testing.assert_allclose(only_pickups + only_returns, both, rtol=1e-12)
    assert only_pickups > 0 and only_returns > 0


def test_curve_matches_pointwise_udf():
    rates = RateSeries(60, [4.0, 0.5, 2.0], [1.0, 3.0, 0.5])
    curve = udf_curve(rates, capacity=6, substeps_per_interval=40)
    for s in range(7):
        np.testing.assert_allclose(
            curve.values[s], udf(rates, s, 6, substeps_per_interval=40), atol=1e-12
        )


def test_refinement_converges_second_order():
    # the trapezoid quadrature dominates the error and halving the substep
    # shrinks it about fourfold
    rates = RateSeries(60, [7.0, 2.0, 5.0, 1.0], [1.0, 6.0, 2.0, 4.0])
    v = {n: udf(rates, 3, 8, substeps_per_interval=n) for n in (60, 120, 240, 960)}
    err_coarse = abs(v[60] - v[960])
    err_fine = abs(v[120] - v[960])
    assert err_coarse < 1e-3
    assert err_fine < err_coarse / 3.0
    assert abs(v[240] - v[960]) < err_fine / 3.0


def test_udf_matches_monte_carlo_lost_cost():
    # expected lost pickups + returns from simulation vs the integral
    rates = RateSeries(60, [5.0, 2.0, 6.0], [1.0, 4.0, 2.0])
    start, capacity = 3, 6
    pen = PenaltyConfig(1.0, 1.0)
    value = udf(rates, start, capacity, pen)
    mc = monte_carlo_oracle(rates, start, capacity, n_paths=60000, seed=23)
    losses = pen.lost_pickup * mc.lost_pickups + pen.lost_return * mc.lost_returns
    se = losses.std() / np.sqrt(mc.n_paths)
    assert abs(value - losses.mean()) < 3 * se


def test_tie_break_takes_smallest_start():
    values = np.array([1.0, 0.25, 0.25, 0.9])
    curve = UdfCurve(capacity=3, values=values, s_star=int(np.argmin(values)))
    assert curve.s_star == 1


def test_oracle_decision_uses_counts_as_rates():
    from bikecast.ingest import DemandSeries
    from datetime import datetime

    series = DemandSeries(
        station="s",
        interval_minutes=60,
        start=datetime(2018, 6, 1),
        pickups=np.concatenate([np.full(12, 3), np.zeros(12)]).astype(np.int64),
        returns=np.concatenate([np.zeros(12), np.full(12, 3)]).astype(np.int64),
    )
    curve = oracle_decision(series, capacity=40)
    direct = udf_curve(
        RateSeries(60, series.pickups.astype(float), series.returns.astype(float)),
        capacity=40,
    )
    np.testing.assert_allclose(curve.values, direct.values, atol=1e-12)
    assert curve.s_star == direct.s_star


def test_rejects_invalid_capacity():
    rates = RateSeries(60, [1.0], [1.0])
    with pytest.raises(DomainError):
        udf_curve(rates, capacity=0)


def test_rejects_negative_penalties():
    with pytest.raises(DomainError):
        PenaltyConfig(-1.0, 1.0)


def test_curve_csv_layout():
    rates = RateSeries(60, [1.0], [1.0])
    curve = udf_curve(rates, capacity=2)
    lines = curve.to_csv().strip().splitlines()
    assert lines[0] == "s,udf_value"
    assert len(lines) == 4


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2**31))
def test_udf_is_nonnegative_and_bounded_by_total_demand(seed):
    rng = np.random.default_rng(seed)
    capacity = int(rng.integers(1, 9))
    start = int(rng.integers(0, capacity + 1))
    pickups = rng.uniform(0, 8, 6)
    returns = rng.uniform(0, 8, 6)
    rates = RateSeries(60, pickups, returns)
    value = udf(rates, start, capacity, substeps_per_interval=20)
    assert value >= -1e-12
    # cannot lose more users than arrive in expectation
    assert value <= pickups.sum() + returns.sum() + 1e-9


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2**31))
def test_curve_minimum_is_argmin(seed):
    rng = np.random.default_rng(seed)
    capacity = int(rng.integers(1, 9))
    rates = RateSeries(60, rng.uniform(0, 6, 5), rng.uniform(0, 6, 5))
    curve = udf_curve(rates, capacity, substeps_per_interval=20)
    assert curve.values[curve.s_star] == curve.values.min()
    assert curve.s_star == int(np.argmin(curve.values))
