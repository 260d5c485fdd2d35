"""The shared-randomness coupling: event streams, deterministic replay,
monotonicity helpers and equilibrium sampling.

All initial states driven by one stream (arrival times + choice lists,
potential-departure times + uniform selections) yield deterministic paths
that contract in l1 and linf and preserve componentwise order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np

from . import _sim
from .model import ModelParams, as_state

__all__ = [
    "Arrival",
    "PotentialDeparture",
    "EventStream",
    "SimRecord",
    "generate_events",
    "apply_arrival",
    "apply_departure",
    "evolve",
    "add_customers",
    "sample_equilibrium",
    "coalescence_time",
    "default_burn_in",
    "record_run",
]


@dataclass(frozen=True)
class Arrival:
    time: float
    choices: Tuple[int, ...]


@dataclass(frozen=True)
class PotentialDeparture:
    time: float
    selection: int


Event = Union[Arrival, PotentialDeparture]


@dataclass(frozen=True)
class EventStream:
    """Time-ordered coupling events on [0, horizon] for an n-queue system."""

    n: int
    d: int
    horizon: float
    seed: int
    events: Tuple[Event, ...]

    def __post_init__(self) -> None:
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        prev = -math.inf
        for ev in self.events:
            if not (0.0 <= ev.time <= self.horizon):
                raise ValueError(f"event time {ev.time} outside [0, {self.horizon}]")
            if ev.time <= prev:
                raise ValueError(f"event times must be strictly increasing (tie at {ev.time})")
            prev = ev.time
            if isinstance(ev, Arrival):
                if len(ev.choices) != self.d:
                    raise ValueError(f"arrival carries {len(ev.choices)} choices, expected d = {self.d}")
                if any(not (0 <= c < self.n) for c in ev.choices):
                    raise ValueError(f"arrival choice out of range in {ev.choices}")
            else:
                if not (0 <= ev.selection < self.n):
                    raise ValueError(f"departure selection {ev.selection} out of range")
        object.__setattr__(self, "events", tuple(self.events))


def generate_events(params: ModelParams, horizon: float, seed: int) -> EventStream:
    """Sample a coupling stream: arrivals at rate lam*n with iid uniform
    d-lists, potential departures at rate n with iid uniform selections.
    Deterministic in (params, horizon, seed)."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    rng = np.random.default_rng(seed)
    events: list[Event] = []
    t0 = 0.0
    while t0 < horizon:
        t1 = min(t0 + _sim.CHUNK_TIME, horizon)
        times, is_arrival, choices, selections = _sim.chunk_events(rng, params, t0, t1)
        for i in range(times.size):
            if is_arrival[i]:
                events.append(Arrival(float(times[i]), tuple(int(c) for c in choices[i])))
            else:
                events.append(PotentialDeparture(float(times[i]), int(selections[i])))
        t0 = t1
    return EventStream(params.n, params.d, float(horizon), int(seed), tuple(events))


def _arrival_target(x: np.ndarray, choices: Sequence[int]) -> int:
    best = choices[0]
    for c in choices[1:]:
        if x[c] < x[best]:  # strict: ties resolved by earliest list position
            best = c
    return int(best)


def apply_arrival(x, choices: Sequence[int]) -> np.ndarray:
    """Increment the shortest queue among `choices` (first-in-list ties)."""
    x = as_state(x)
    if len(choices) == 0:
        raise ValueError("choice list must be non-empty")
    if any(not (0 <= c < x.size) for c in choices):
        raise ValueError(f"choice index out of range in {tuple(choices)}")
    y = np.array(x)
    y[_arrival_target(x, choices)] += 1
    y.flags.writeable = False
    return y


def apply_departure(x, selection: int) -> np.ndarray:
    """Decrement queue `selection` if non-empty; empty selections are ignored."""
    x = as_state(x)
    if not (0 <= selection < x.size):
        raise ValueError(f"selection {selection} out of range")
    y = np.array(x)
    if y[selection] > 0:
        y[selection] -= 1
    y.flags.writeable = False
    return y


def _step_inplace(x: np.ndarray, ev: Event) -> int:
    """Apply one event in place; return the changed index, or -1."""
    if isinstance(ev, Arrival):
        j = _arrival_target(x, ev.choices)
        x[j] += 1
        return j
    if x[ev.selection] > 0:
        x[ev.selection] -= 1
        return ev.selection
    return -1


def evolve(x0, stream: EventStream, t: float) -> np.ndarray:
    """Deterministic replay: x0 with every event at time <= t applied in
    order (right-continuous convention)."""
    x0 = as_state(x0)
    if x0.size != stream.n:
        raise ValueError(f"state has {x0.size} queues, stream expects {stream.n}")
    if not (0.0 <= t <= stream.horizon):
        raise ValueError(f"t = {t} outside [0, {stream.horizon}]")
    x = np.array(x0)
    for ev in stream.events:
        if ev.time > t:
            break
        _step_inplace(x, ev)
    x.flags.writeable = False
    return x


def add_customers(stream: EventStream, extra: Sequence[Arrival]) -> EventStream:
    """Merge extra arrivals into a stream (times must not collide)."""
    merged = sorted(tuple(stream.events) + tuple(extra), key=lambda ev: ev.time)
    for a, b in zip(merged, merged[1:]):
        if a.time == b.time:
            raise ValueError(f"time collision at {a.time}")
    return EventStream(stream.n, stream.d, stream.horizon, stream.seed, tuple(merged))


def coalescence_time(x, y, stream: EventStream) -> float:
    """First event time at which the coupled replays of x and y agree, 0.0 if
    they already do, or math.inf if they have not met by the horizon."""
    x = as_state(x)
    y = as_state(y)
    if x.size != y.size or x.size != stream.n:
        raise ValueError("state dimensions must match each other and the stream")
    if np.array_equal(x, y):
        return 0.0
    a = np.array(x)
    b = np.array(y)
    ndiff = int(np.count_nonzero(a != b))
    for ev in stream.events:
        # an event touches at most one coordinate per path; track the
        # disagreement count incrementally at those coordinates
        if isinstance(ev, Arrival):
            ia = _arrival_target(a, ev.choices)
            ib = _arrival_target(b, ev.choices)
        else:
            ia = ev.selection if a[ev.selection] > 0 else -1
            ib = ev.selection if b[ev.selection] > 0 else -1
        touched = {j for j in (ia, ib) if j != -1}
        ndiff -= sum(1 for j in touched if a[j] != b[j])
        if ia != -1:
            a[ia] += 1 if isinstance(ev, Arrival) else -1
        if ib != -1:
            b[ib] += 1 if isinstance(ev, Arrival) else -1
        ndiff += sum(1 for j in touched if a[j] != b[j])
        if ndiff == 0:
            return float(ev.time)
    return math.inf


def default_burn_in(params: ModelParams, x0=None) -> float:
    """10 * (||x0||_inf + ln n): generous relative to the O(ln n) mixing time."""
    linf = 0 if x0 is None else int(np.max(as_state(x0)))
    return 10.0 * (linf + math.log(params.n))


def sample_equilibrium(
    params: ModelParams,
    burn_in: float,
    spacing: float,
    count: int,
    seed,
) -> np.ndarray:
    """Approximate equilibrium draws: start empty, discard [0, burn_in], then
    record `count` snapshots `spacing` apart. Returns an int array of shape
    (count, n); rows are serially correlated unless spacing is large."""
    if burn_in < 0:
        raise ValueError("burn_in must be non-negative")
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    if count < 0:
        raise ValueError("count must be non-negative")
    if count == 0:
        return np.empty((0, params.n), dtype=np.int32)
    snap_times = burn_in + spacing * np.arange(1, count + 1)
    return _sim.simulate_snapshots(params, np.zeros(params.n, dtype=np.int32), snap_times, seed)


@dataclass(frozen=True)
class SimRecord:
    """One replication: parameters, initial state, timed snapshots, seed."""

    params: ModelParams
    initial: np.ndarray
    snapshot_times: np.ndarray
    snapshots: np.ndarray
    stream_seed: int


def record_run(params: ModelParams, x0, snapshot_times, seed: int) -> SimRecord:
    snap_times = np.asarray(snapshot_times, dtype=float)
    snaps = _sim.simulate_snapshots(params, x0, snap_times, seed)
    return SimRecord(params, as_state(x0), snap_times, snaps, int(seed))


def record_to_csv(record: SimRecord, path) -> None:
    """Debug export: one row per snapshot, time then the sorted-lengths histogram."""
    max_len = int(record.snapshots.max(initial=0))
    with open(path, "w") as fh:
        header = ",".join(["time"] + [f"count_len_{k}" for k in range(max_len + 1)])
        fh.write(header + "\n")
        for t, row in zip(record.snapshot_times, record.snapshots):
            hist = np.bincount(row, minlength=max_len + 1)
            fh.write(",".join([f"{t:.6f}"] + [str(int(c)) for c in hist]) + "\n")
