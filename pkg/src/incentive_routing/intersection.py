"""Event-driven single-server FCFS intersection with timestamp offsets.

Vehicles request a crossing slot at their arrival time; the controller serves
requests in timestamp order.  A per-path offset shifts a vehicle's timestamp
(delays push it back, advancements pull it forward) subject to a gap rule that
keeps the lane order intact.  The delay curves produced here check that such
offsets act as flow-independent additive shifts of the intersection delay.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .network import ContractError

DEFAULT_HORIZON = 3600.0
DEFAULT_MAX_OFFSET = 10.0
DEFAULT_MIN_HEADWAY = 1.0
DEFAULT_ROLLOUTS = 20


@dataclass(frozen=True)
class IntersectionModel:
    service_time: float = 2.0  # seconds a vehicle occupies the crossing
    control_zone_travel: float = 2.0  # free traversal of the approach zone

    def __post_init__(self):
        if not (self.service_time > 0 and self.control_zone_travel > 0):
            raise ContractError("service_time and control_zone_travel must be positive")

    @property
    def free_delay(self) -> float:
        return self.control_zone_travel + self.service_time

    def utilization(self, rate: float) -> float:
        return rate * self.service_time


@dataclass
class RequestStream:
    """Arrivals sorted by time; ``timestamps`` are the (possibly offset) request
    times used for scheduling, ``arrivals`` the physical ones."""

    arrivals: np.ndarray
    tags: np.ndarray
    lanes: np.ndarray | None = None
    timestamps: np.ndarray | None = None
    seed: int | None = None

    def __post_init__(self):
        self.arrivals = np.asarray(self.arrivals, dtype=float)
        n = len(self.arrivals)
        self.tags = np.asarray(self.tags, dtype=object) if len(self.tags) else np.empty(0, dtype=object)
        self.lanes = np.zeros(n, dtype=np.int64) if self.lanes is None else np.asarray(self.lanes, dtype=np.int64)
        self.timestamps = self.arrivals.copy() if self.timestamps is None else np.asarray(self.timestamps, dtype=float)
        if not (len(self.tags) == len(self.lanes) == len(self.timestamps) == n):
            raise ContractError("stream fields have different lengths")
        if n and (self.arrivals[0] < 0 or np.any(np.diff(self.arrivals) < 0)):
            raise ContractError("arrival times must be non-negative and sorted")

    def __len__(self) -> int:
        return len(self.arrivals)

    @property
    def vehicle_ids(self) -> np.ndarray:
        return np.arange(len(self))


def poisson_stream(
    departures: float,
    horizon: float = DEFAULT_HORIZON,
    seed: int | None = None,
    tags=("base",),
    weights=None,
) -> RequestStream:
    """Poisson arrivals of rate departures / horizon on [0, horizon); each
    vehicle draws a path tag (uniform unless ``weights`` is given)."""
    if departures < 0 or horizon <= 0:
        raise ContractError("need departures >= 0 and horizon > 0")
    rng = np.random.default_rng(seed)
    rate = departures / horizon
    times = []
    if rate > 0:
        # draw in blocks so the same seed gives the same unit gaps at every rate
        t = 0.0
        while True:
            gaps = rng.standard_exponential(1024) / rate
            block = t + np.cumsum(gaps)
            keep = block[block < horizon]
            times.append(keep)
            if len(keep) < len(block):
                break
            t = block[-1]
    arrivals = np.concatenate(times) if times else np.empty(0)
    tag_rng = np.random.default_rng(None if seed is None else [seed, 1])
    labels = np.array(list(tags), dtype=object)
    picks = tag_rng.choice(len(labels), size=len(arrivals), p=weights)
    return RequestStream(arrivals, labels[picks], seed=seed)


def apply_timestamp_offsets(
    stream: RequestStream,
    offsets: dict,
    max_offset: float = DEFAULT_MAX_OFFSET,
    min_headway: float = DEFAULT_MIN_HEADWAY,
) -> RequestStream:
    """Shift each vehicle's timestamp by ``offsets[tag]`` (missing tags: 0).

    Within a lane, a delay may not bring a vehicle closer than ``min_headway``
    to the original timestamp of the vehicle behind it, and an advancement may
    not bring it closer than ``min_headway`` to the (already shifted) vehicle in
    front or below zero.  Vehicles whose gap is already below the headway keep
    their timestamp, so the lane order never changes.
    """
    for tag, off in offsets.items():
        if abs(off) > max_offset:
            raise ContractError(f"offset {off} for {tag!r} exceeds the {max_offset} s limit")
    if min_headway < 0:
        raise ContractError("min_headway must be non-negative")
    ts = stream.arrivals.copy()
    for lane in np.unique(stream.lanes):
        idx = np.flatnonzero(stream.lanes == lane)
        orig = stream.arrivals[idx]
        new = orig.copy()
        for j, i in enumerate(idx):
            off = float(offsets.get(stream.tags[i], 0.0))
            if off > 0:
                room = orig[j + 1] - min_headway - orig[j] if j + 1 < len(idx) else off
                new[j] = orig[j] + max(0.0, min(off, room))
            elif off < 0:
                floor = new[j - 1] + min_headway if j > 0 else 0.0
                new[j] = orig[j] - max(0.0, min(-off, orig[j] - floor))
        ts[idx] = new
    return RequestStream(stream.arrivals, stream.tags, stream.lanes, ts, stream.seed)


@dataclass
class Schedule:
    """Per-vehicle times in the stream's vehicle order."""

    timestamps: np.ndarray
    entry: np.ndarray  # timestamp + control-zone travel
    service_start: np.ndarray
    exit: np.ndarray
    delay: np.ndarray  # exit - physical arrival
    tags: np.ndarray = field(repr=False)

    @property
    def wait(self) -> np.ndarray:
        return self.service_start - self.entry


def fcfs_schedule(stream: RequestStream, model: IntersectionModel | None = None) -> Schedule:
    """Single-server queue served in timestamp order (ties by vehicle id)."""
    model = model or IntersectionModel()
    n = len(stream)
    order = np.lexsort((np.arange(n), stream.timestamps))
    entry = stream.timestamps + model.control_zone_travel
    start = np.empty(n)
    free_at = -np.inf
    for i in order:
        start[i] = max(entry[i], free_at)
        free_at = start[i] + model.service_time
    exit_ = start + model.service_time
    return Schedule(stream.timestamps.copy(), entry, start, exit_, exit_ - stream.arrivals, stream.tags)


# -- delay curves ----------------------------------------------------------------


@dataclass
class CurvePoint:
    rate: float  # vehicles per second
    offset: float
    mean_delay: float
    stddev: float  # across rollout means
    rollouts: int
    mean_applied_offset: float  # realized timestamp shift after the gap rule


@dataclass
class DelayCurve:
    points: list
    unstable_rates: list

    def series(self, offset: float) -> tuple[np.ndarray, np.ndarray]:
        pts = [p for p in self.points if p.offset == offset]
        return np.array([p.rate for p in pts]), np.array([p.mean_delay for p in pts])

    def point(self, rate: float, offset: float) -> CurvePoint:
        for p in self.points:
            if p.rate == rate and p.offset == offset:
                return p
        raise KeyError((rate, offset))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rate_veh_per_s", "offset_s", "mean_delay_s", "stddev_s", "rollouts"])
            for p in self.points:
                w.writerow([repr(p.rate), repr(p.offset), repr(p.mean_delay), repr(p.stddev), p.rollouts])


def delay_curve(
    rates,
    offsets=(0.0, 10.0, -10.0),
    seeds=None,
    model: IntersectionModel | None = None,
    horizon: float = DEFAULT_HORIZON,
    rollouts: int = DEFAULT_ROLLOUTS,
    min_headway: float = DEFAULT_MIN_HEADWAY,
) -> DelayCurve:
    """Mean per-vehicle delay versus arrival rate for each offset class.

    Each rollout mixes all offset classes in one stream (vehicles pick a class
    uniformly), so the classes share the queue.  Rollout ``r`` uses seed
    ``seeds[r]`` at every rate.  Rates with utilization >= 1 are reported in
    ``unstable_rates`` and skipped.
    """
    model = model or IntersectionModel()
    seeds = list(range(rollouts)) if seeds is None else list(seeds)
    offsets = [float(o) for o in offsets]
    tags = [f"offset{i}" for i in range(len(offsets))]
    shift = dict(zip(tags, offsets))
    points, unstable = [], []
    for rate in rates:
        rate = float(rate)
        if rate < 0:
            raise ContractError("rates must be non-negative")
        if model.utilization(rate) >= 1.0:
            unstable.append(rate)
            continue
        means = np.full((len(seeds), len(offsets)), np.nan)
        applied = np.zeros((len(seeds), len(offsets)))
        for r, seed in enumerate(seeds):
            stream = poisson_stream(rate * horizon, horizon, seed, tags)
            shifted = apply_timestamp_offsets(stream, shift, max(abs(o) for o in offsets), min_headway)
            sched = fcfs_schedule(shifted, model)
            for k, tag in enumerate(tags):
                sel = stream.tags == tag
                if sel.any():
                    means[r, k] = sched.delay[sel].mean()
                    applied[r, k] = (shifted.timestamps[sel] - stream.arrivals[sel]).mean()
        for k, off in enumerate(offsets):
            col = means[:, k]
            ok = ~np.isnan(col)
            if ok.any():
                points.append(
                    CurvePoint(rate, off, float(col[ok].mean()), float(col[ok].std()), int(ok.sum()), float(applied[ok, k].mean()))
                )
            else:
                # no traffic: a lone vehicle crosses unobstructed, shifted by its offset
                points.append(CurvePoint(rate, off, model.free_delay + off, 0.0, 0, off))
    return DelayCurve(points, unstable)
