"""Volume-time clock.

Physical timestamps are integer milliseconds. Volume time is expressed on the
same millisecond axis: it starts at the session open and advances in
proportion to cumulative traded volume, so that the full day's volume spans
the effective session length (trading breaks removed).
"""
from __future__ import annotations

import datetime
from dataclasses import dataclass
from typing import Sequence

import numpy as np

MS_PER_MINUTE = 60_000
DEFAULT_SESSION = (("09:30", "11:30"), ("13:00", "15:00"))


class ClockError(ValueError):
    """Base class for volume-clock construction and lookup failures."""


class EmptyTicksError(ClockError):
    pass


class UnsortedTicksError(ClockError):
    pass


class ZeroVolumeError(ClockError):
    pass


class OutsideSessionError(ClockError):
    pass


@dataclass(frozen=True)
class VolumeClock:
    """Cumulative volume curve of one trading day.

    ``curve_times``/``curve_volumes`` are the knots of a piecewise-linear
    V(t); the first knot is (open_time, 0) and the last is
    (close_time, total_volume). ``breaks`` are physical gaps (e.g. the lunch
    halt) that are excluded from the session length.
    """

    open_time: int
    close_time: int
    total_volume: float
    curve_times: np.ndarray
    curve_volumes: np.ndarray
    breaks: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if not self.open_time < self.close_time:
            raise ClockError("open_time must precede close_time")
        if not self.total_volume > 0:
            raise ZeroVolumeError("total volume must be positive")

    @property
    def cumulative_curve(self) -> list[tuple[int, float]]:
        return list(zip(self.curve_times.tolist(), self.curve_volumes.tolist()))

    @property
    def session_length(self) -> float:
        """Effective trading length in ms, breaks removed."""
        gap = sum(min(e, self.close_time) - max(s, self.open_time) for s, e in self.breaks)
        return float(self.close_time - self.open_time - gap)

    def volume_at(self, t: float) -> float:
        """Cumulative traded volume V(t)."""
        if t < self.open_time or t > self.close_time:
            raise OutsideSessionError(f"t={t} outside session [{self.open_time}, {self.close_time}]")
        # rightmost knot at or before t, so simultaneous ticks are all counted
        i = int(np.searchsorted(self.curve_times, t, side="right")) - 1
        if i >= len(self.curve_times) - 1:
            return float(self.curve_volumes[-1])
        t0, t1 = self.curve_times[i], self.curve_times[i + 1]
        v0, v1 = self.curve_volumes[i], self.curve_volumes[i + 1]
        if t1 == t0:
            return float(v1)
        return float(v0 + (v1 - v0) * (t - t0) / (t1 - t0))

    def volume_fraction_to_time(self, fraction: float) -> float:
        """Earliest physical time at which V(t) reaches ``fraction`` of the day."""
        target = float(np.clip(fraction, 0.0, 1.0)) * self.total_volume
        vols = self.curve_volumes
        i = int(np.searchsorted(vols, target, side="left"))
        if i == 0:
            return float(self.curve_times[0])
        if i >= len(vols):
            return float(self.curve_times[-1])
        v0, v1 = vols[i - 1], vols[i]
        t0, t1 = self.curve_times[i - 1], self.curve_times[i]
        if v1 == v0:
            return float(t0)
        return float(t0 + (t1 - t0) * (target - v0) / (v1 - v0))


def build_volume_clock(
    ticks: Sequence,
    open_time: int | None = None,
    close_time: int | None = None,
    breaks: Sequence[tuple[int, int]] = (),
) -> VolumeClock:
    """Build the cumulative-volume clock from one day's ticks.

    ``ticks`` are objects with ``timestamp`` (ms) and ``volume`` attributes.
    The session defaults to [first tick, last tick].
    """
    if len(ticks) == 0:
        raise EmptyTicksError("no ticks to build a volume clock from")
    ts = np.fromiter((tk.timestamp for tk in ticks), dtype=np.int64, count=len(ticks))
    vol = np.fromiter((tk.volume for tk in ticks), dtype=float, count=len(ticks))
    if np.any(np.diff(ts) < 0):
        raise UnsortedTicksError("tick timestamps are not sorted")
    total = float(vol.sum())
    if total <= 0:
        raise ZeroVolumeError("total traded volume is zero")

    t_open = int(ts[0]) if open_time is None else int(open_time)
    t_close = int(ts[-1]) if close_time is None else int(close_time)
    if ts[0] < t_open or ts[-1] > t_close:
        raise OutsideSessionError("ticks fall outside the declared session")
    if t_close <= t_open:
        # a single instant of trading still needs a non-empty session
        t_close = t_open + 1

    cum = np.cumsum(vol)
    times = [t_open]
    vols = [0.0]
    # flat volume across halts, so the inverse never lands inside a break
    knots = sorted(
        [(int(t), float(c), 1) for t, c in zip(ts, cum)]
        + [(int(s), 0.0, 0) for s, _ in breaks]
        + [(int(e), 0.0, 0) for _, e in breaks]
    )
    last = 0.0
    for t, c, is_tick in knots:
        if is_tick:
            last = c
        times.append(t)
        vols.append(last)
    times.append(t_close)
    vols.append(total)

    return VolumeClock(
        open_time=t_open,
        close_time=t_close,
        total_volume=total,
        curve_times=np.asarray(times, dtype=np.int64),
        curve_volumes=np.asarray(vols, dtype=float),
        breaks=tuple((int(s), int(e)) for s, e in breaks),
    )


def to_volume_time(clock: VolumeClock, t: float) -> float:
    """kappa(t) = t_open + V(t) * session_length / V."""
    return clock.open_time + clock.volume_at(t) * clock.session_length / clock.total_volume


def from_volume_time(clock: VolumeClock, tau: float) -> float:
    """Physical time at which the volume clock first reaches ``tau``."""
    frac = (tau - clock.open_time) / clock.session_length
    return clock.volume_fraction_to_time(frac)


def partition_windows(clock: VolumeClock, unit_minutes: float) -> list[tuple[float, float]]:
    """Split the volume-time axis into consecutive windows of ``unit_minutes``.

    A trailing remainder shorter than half a unit is merged into the last
    full window; a longer one is kept as a short window.
    """
    if unit_minutes <= 0:
        raise ClockError("unit_minutes must be positive")
    unit = unit_minutes * MS_PER_MINUTE
    length = clock.session_length
    if unit > length:
        raise ClockError(f"window unit of {unit_minutes} min exceeds the session length")
    n_full = int(length // unit)
    rem = length - n_full * unit
    # guard against float dust from non-integral session lengths
    if rem < 1e-9 * unit:
        rem = 0.0
    edges = [clock.open_time + k * unit for k in range(n_full + 1)]
    if rem >= 0.5 * unit:
        edges.append(clock.open_time + length)
    else:
        edges[-1] = clock.open_time + length
    return [(float(a), float(b)) for a, b in zip(edges[:-1], edges[1:])]


def physical_interval(clock: VolumeClock, window: tuple[float, float]) -> tuple[float, float]:
    return from_volume_time(clock, window[0]), from_volume_time(clock, window[1])


def hhmm_to_ms(s: str) -> int:
    """Milliseconds after midnight for an ``HH:MM`` string."""
    h, m = s.split(":")
    if not (0 <= int(h) <= 24 and 0 <= int(m) < 60):
        raise ValueError(f"bad time of day {s!r}")
    return (int(h) * 60 + int(m)) * MS_PER_MINUTE


def session_segments(date: str, session=DEFAULT_SESSION) -> list[tuple[int, int]]:
    """Continuous-trading segments of a YYYYMMDD date in epoch ms.

    ``session`` lists (start, end) ``HH:MM`` pairs read on a UTC clock,
    matching the tick files' epoch timestamps.
    """
    day = datetime.datetime.strptime(date, "%Y%m%d").replace(tzinfo=datetime.timezone.utc)
    base = int(day.timestamp() * 1000)
    segs = [(base + hhmm_to_ms(a), base + hhmm_to_ms(b)) for a, b in session]
    if any(b <= a for a, b in segs) or any(segs[i][1] > segs[i + 1][0] for i in range(len(segs) - 1)):
        raise ValueError("session segments must be increasing and non-overlapping")
    return segs


def session_bounds(date: str, session=DEFAULT_SESSION) -> tuple[int, int, list[tuple[int, int]]]:
    """(open, close, breaks) in epoch ms; gaps between segments are breaks."""
    segs = session_segments(date, session)
    breaks = [(segs[i][1], segs[i + 1][0]) for i in range(len(segs) - 1) if segs[i][1] < segs[i + 1][0]]
    return segs[0][0], segs[-1][1], breaks
