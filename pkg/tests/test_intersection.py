import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from incentive_routing.intersection import (
    IntersectionModel,
    RequestStream,
    apply_timestamp_offsets,
    delay_curve,
    fcfs_schedule,
    poisson_stream,
)
from incentive_routing.network import ContractError


def _stream(times, tags):
    return RequestStream(np.array(times, dtype=float), np.array(tags, dtype=object))


def test_full_delay_when_gap_allows():
    s = apply_timestamp_offsets(_stream([0, 20], ["a", "b"]), {"a": 10.0})
    assert list(s.timestamps) == [10.0, 20.0]


def test_delay_bounded_by_gap():
    # the follower is 7 s behind, so only 6 s of the 10 s delay fit
    s = apply_timestamp_offsets(_stream([0, 7], ["a", "b"]), {"a": 10.0})
    assert list(s.timestamps) == [6.0, 7.0]


def test_advancement_bounded_by_leader_and_zero():
    s = apply_timestamp_offsets(_stream([3, 8], ["b", "a"]), {"a": -10.0, "b": -10.0})
    assert list(s.timestamps) == [0.0, 1.0]


def test_zero_offsets_leave_stream_unchanged():
    base = poisson_stream(300, seed=4, tags=("a", "b"))
    s = apply_timestamp_offsets(base, {})
    assert np.array_equal(s.timestamps, base.arrivals)


def test_offset_limit():
    with pytest.raises(ContractError):
        apply_timestamp_offsets(_stream([0], ["a"]), {"a": 11.0})


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(-10, 10), st.floats(-10, 10), st.integers(0, 2))
def test_lane_order_preserved(seed, da, db, lanes):
    base = poisson_stream(600, seed=seed, tags=("a", "b"))
    if lanes:
        base.lanes = np.random.default_rng(seed).integers(0, lanes + 1, len(base))
    s = apply_timestamp_offsets(base, {"a": da, "b": db})
    assert np.all(s.timestamps >= 0)
    for lane in np.unique(s.lanes):
        ts = s.timestamps[s.lanes == lane]
        assert np.all(np.diff(ts) >= 0)


def test_single_vehicle_delay():
    m = IntersectionModel(service_time=2.0, control_zone_travel=1.0)
    assert fcfs_schedule(_stream([5.0], ["a"]), m).delay[0] == 3.0


def test_simultaneous_pair():
    m = IntersectionModel(service_time=2.0, control_zone_travel=1.0)
    sched = fcfs_schedule(_stream([0.0, 0.0], ["a", "b"]), m)
    assert list(sched.delay) == [3.0, 5.0]


def test_work_conservation():
    m = IntersectionModel()
    stream = poisson_stream(1000, seed=2)
    sched = fcfs_schedule(stream, m)
    order = np.argsort(sched.service_start, kind="stable")
    start, entry = sched.service_start[order], sched.entry[order]
    prev_exit = np.concatenate([[-np.inf], start[:-1] + m.service_time])
    # each service starts the moment the vehicle is ready or the server frees up
    assert np.allclose(start, np.maximum(entry, prev_exit))


def test_md1_wait():
    m = IntersectionModel(service_time=2.0)
    rho = 0.5
    waits = [fcfs_schedule(poisson_stream(rho / 2.0 * 3600, seed=k), m).wait.mean() for k in range(20)]
    expected = rho * 2.0 / (2 * (1 - rho))
    assert np.mean(waits) == pytest.approx(expected, rel=0.10)


def test_determinism():
    a = poisson_stream(500, seed=11, tags=("x", "y"))
    b = poisson_stream(500, seed=11, tags=("x", "y"))
    assert np.array_equal(a.arrivals, b.arrivals) and list(a.tags) == list(b.tags)
    sa, sb = fcfs_schedule(a), fcfs_schedule(b)
    assert np.array_equal(sa.exit, sb.exit)


def test_rate_zero_curve():
    curve = delay_curve([0.0], rollouts=3)
    assert curve.point(0.0, 0.0).mean_delay == IntersectionModel().free_delay


def test_unstable_rates_flagged():
    curve = delay_curve([0.1, 0.5, 0.6], offsets=(0.0,), rollouts=2)
    assert curve.unstable_rates == [0.5, 0.6]
    assert [p.rate for p in curve.points] == [0.1]


def test_positive_offset_is_additive_at_low_rates():
    curve = delay_curve([0.02, 0.05], offsets=(0.0, 10.0), rollouts=20)
    for rate in (0.02, 0.05):
        base, shifted = curve.point(rate, 0.0), curve.point(rate, 10.0)
        delta = shifted.mean_applied_offset
        assert delta > 5.0
        assert abs(shifted.mean_delay - base.mean_delay - delta) <= 0.15 * delta


def test_baseline_curve_non_decreasing():
    rates = np.linspace(0.05, 0.35, 7)
    _, delays = delay_curve(rates, offsets=(0.0,), rollouts=20).series(0.0)
    assert np.all(np.diff(delays) >= 0)


def test_curve_csv(tmp_path):
    curve = delay_curve([0.1], offsets=(0.0, 10.0), rollouts=2)
    curve.write_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "rate_veh_per_s,offset_s,mean_delay_s,stddev_s,rollouts"
    assert len(lines) == 3
