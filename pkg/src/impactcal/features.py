"""Per-window observables: smart-price volatility, signed velocity, volume and
the permanent/realized impact pair."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .clock import MS_PER_MINUTE, VolumeClock, partition_windows
from .taq import ClassifiedTrade, Side

log = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-6
WINDOW_COLUMNS = ("instrument", "date", "window_index", "v", "V", "sigma", "I", "J", "T", "T_post")


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class ExecutionWindow:
    """Aggregates of one execution window, times in volume-time units.

    Prices are optional for windows read back from a window table; in that
    case they are normalized to ``s0 = 1``.
    """

    instrument: str
    window_index: int
    v: float
    V: float
    sigma: float
    I: float
    J: float
    T: float = 1.0
    T_post: float = 2.0
    s0: float = 1.0
    s_bar: float = math.nan
    s_post: float = math.nan
    date: str = ""

    def __post_init__(self):
        if not (self.V > 0 and self.sigma > 0):
            raise FeatureError(f"window {self.instrument}/{self.window_index}: V and sigma must be positive")
        if not (self.T > 0 and self.T_post > self.T):
            raise FeatureError(f"window {self.instrument}/{self.window_index}: need T_post > T > 0")
        if abs(self.v) * self.T > self.V * (1 + 1e-12):
            raise FeatureError(f"window {self.instrument}/{self.window_index}: |v|*T exceeds V")
        if math.isnan(self.s_bar):
            object.__setattr__(self, "s_bar", self.s0 * (1.0 + self.J))
        if math.isnan(self.s_post):
            object.__setattr__(self, "s_post", self.s0 * (1.0 + self.I))


class WindowArrays(NamedTuple):
    """Column view of a window sequence used by the vectorized likelihoods."""

    v: np.ndarray
    V: np.ndarray
    sigma: np.ndarray
    I: np.ndarray
    J: np.ndarray
    T: np.ndarray
    T_post: np.ndarray
    instrument: np.ndarray

    def __len__(self):
        return len(self.v)

    def take(self, idx) -> "WindowArrays":
        return WindowArrays(*(a[idx] for a in self))

    def with_sigma(self, sigma) -> "WindowArrays":
        return self._replace(sigma=np.broadcast_to(np.asarray(sigma, float), self.v.shape).copy())


def as_arrays(windows) -> WindowArrays:
    if isinstance(windows, WindowArrays):
        return windows
    ws = list(windows)
    return WindowArrays(
        v=np.array([w.v for w in ws], float),
        V=np.array([w.V for w in ws], float),
        sigma=np.array([w.sigma for w in ws], float),
        I=np.array([w.I for w in ws], float),
        J=np.array([w.J for w in ws], float),
        T=np.array([w.T for w in ws], float),
        T_post=np.array([w.T_post for w in ws], float),
        instrument=np.array([w.instrument for w in ws], dtype=object),
    )


def smart_price(bid: float, ask: float, bid_size: float, ask_size: float) -> float:
    """Size-weighted quote midpoint (P_a*Q_b + P_b*Q_a) / (Q_a + Q_b)."""
    total = bid_size + ask_size
    if not total > 0:
        raise FeatureError("quote sizes sum to zero")
    if bid > ask:
        raise FeatureError("crossed quote")
    return (ask * bid_size + bid * ask_size) / total


def window_volatility(smart_prices: Sequence[float], span: float = 1.0, floor: float = SIGMA_FLOOR) -> float:
    """Log-return volatility per unit volume time.

    The sample standard deviation of log returns is scaled by
    sqrt(n_returns / span), treating the samples as evenly spread over a
    window of ``span`` units.
    """
    p = np.asarray(smart_prices, dtype=float)
    if p.size < 2:
        raise FeatureError("need at least two smart-price samples")
    r = np.diff(np.log(p))
    sd = float(np.std(r, ddof=1)) if r.size > 1 else abs(float(r[0]))
    return max(sd * math.sqrt(r.size / span), floor)


def impact_pair(s0: float, s_bar: float, s_post: float) -> tuple[float, float]:
    """(I, J) = ((s_post - s0)/s0, (s_bar - s0)/s0)."""
    if not s0 > 0:
        raise FeatureError("s0 must be positive")
    return (s_post - s0) / s0, (s_bar - s0) / s0


@dataclass
class WindowConfig:
    unit_minutes: float = 15.0
    t_post_units: float = 1.0
    sigma_floor: float = SIGMA_FLOOR
    instrument: str = ""
    date: str = ""


def _smart_or_nan(tk) -> float:
    if not tk.has_quote:
        return math.nan
    total = tk.bid_size + tk.ask_size
    if not (total > 0):
        return math.nan
    return (tk.best_ask * tk.bid_size + tk.best_bid * tk.ask_size) / total


def build_windows(
    classified: Sequence[ClassifiedTrade],
    clock: VolumeClock,
    config: WindowConfig | None = None,
) -> list[ExecutionWindow]:
    """Aggregate one instrument-day of classified trades into execution windows.

    Trades are assigned to windows by their cumulative volume, i.e. by their
    position on the volume-time axis. Windows without trades, with fewer
    than two smart-price samples, or whose post-trade horizon runs past the
    close are dropped.
    """
    cfg = config or WindowConfig()
    if not classified:
        return []
    vol = np.array([c.tick.volume for c in classified], float)
    price = np.array([c.tick.price for c in classified], float)
    sign = np.array([c.side.sign for c in classified], float)
    smart = np.array([_smart_or_nan(c.tick) for c in classified], float)
    cum = np.cumsum(vol)
    total = clock.total_volume
    if not math.isclose(cum[-1], total, rel_tol=1e-9):
        raise FeatureError("clock volume does not match the classified trades")

    unit_ms = cfg.unit_minutes * MS_PER_MINUTE
    length = clock.session_length
    tol = 1e-9 * total
    valid_idx = np.flatnonzero(~np.isnan(smart))

    def vol_at(tau: float) -> float:
        return total * (tau - clock.open_time) / length

    def prevailing(b: float) -> int | None:
        # last quoted trade whose cumulative volume does not pass b
        j = int(np.searchsorted(cum[valid_idx], b + tol, side="right")) - 1
        return int(valid_idx[j]) if j >= 0 else None

    out = []
    for k, (start, end) in enumerate(partition_windows(clock, cfg.unit_minutes)):
        b0, b1 = vol_at(start), vol_at(end)
        lo = int(np.searchsorted(cum, b0 + tol, side="right"))
        hi = int(np.searchsorted(cum, b1 + tol, side="right"))
        if hi <= lo:
            log.info("%s %s window %d has no trades, dropped", cfg.instrument, cfg.date, k)
            continue
        T = (end - start) / unit_ms
        T_post = T + cfg.t_post_units
        b_post = vol_at(start + T_post * unit_ms)
        if b_post > total + tol:
            log.info("%s %s window %d post horizon beyond close, dropped", cfg.instrument, cfg.date, k)
            continue

        i0 = prevailing(b0)
        own = [i for i in range(lo, hi) if not math.isnan(smart[i])]
        if i0 is None:
            if not own:
                log.info("%s %s window %d has no quotes, dropped", cfg.instrument, cfg.date, k)
                continue
            i0 = own[0]
            samples = smart[own]
        else:
            samples = np.concatenate([[smart[i0]], smart[own]])
        if samples.size < 2:
            log.info("%s %s window %d has <2 smart-price samples, dropped", cfg.instrument, cfg.date, k)
            continue
        i_post = prevailing(b_post)

        w = vol[lo:hi]
        s0 = float(smart[i0])
        s_bar = float(np.dot(w, price[lo:hi]) / w.sum())
        s_post = float(smart[i_post])
        I, J = impact_pair(s0, s_bar, s_post)
        out.append(ExecutionWindow(
            instrument=cfg.instrument,
            window_index=k,
            v=float(np.dot(w, sign[lo:hi])) / T,
            V=float(w.sum()),
            sigma=window_volatility(samples, span=T, floor=cfg.sigma_floor),
            I=I,
            J=J,
            T=T,
            T_post=T_post,
            s0=s0,
            s_bar=s_bar,
            s_post=s_post,
            date=cfg.date,
        ))
    return out


def write_window_table(windows: Iterable[ExecutionWindow], path_or_stream) -> None:
    own = isinstance(path_or_stream, (str, Path))
    fh = open(path_or_stream, "w", newline="", encoding="utf-8") if own else path_or_stream
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(WINDOW_COLUMNS)
        for x in windows:
            w.writerow([x.instrument, x.date, x.window_index, repr(x.v), repr(x.V),
                        repr(x.sigma), repr(x.I), repr(x.J), repr(x.T), repr(x.T_post)])
    finally:
        if own:
            fh.close()


def read_window_table(path_or_stream) -> list[ExecutionWindow]:
    own = isinstance(path_or_stream, (str, Path))
    fh = open(path_or_stream, newline="", encoding="utf-8") if own else path_or_stream
    try:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return []  # empty file
        if tuple(reader.fieldnames) != WINDOW_COLUMNS:
            raise FeatureError(f"window table header must be {','.join(WINDOW_COLUMNS)}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            try:
                out.append(ExecutionWindow(
                    instrument=row["instrument"],
                    date=row["date"],
                    window_index=int(row["window_index"]),
                    v=float(row["v"]),
                    V=float(row["V"]),
                    sigma=float(row["sigma"]),
                    I=float(row["I"]),
                    J=float(row["J"]),
                    T=float(row["T"]),
                    T_post=float(row["T_post"]),
                ))
            except (ValueError, TypeError) as exc:
                raise FeatureError(f"window table line {lineno}: {exc}") from exc
        return out
    finally:
        if own:
            fh.close()
