"""Tick-file parsing and Lee-Ready trade-side classification."""
from __future__ import annotations

import csv
import io
import logging
import math
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

log = logging.getLogger(__name__)

TICK_COLUMNS = ("ts_ms", "price", "volume", "bid", "ask", "bid_size", "ask_size")
TICK_FILE_RE = re.compile(r"^(?P<instrument>.+)_(?P<date>\d{8})\.csv$")


class TickFormatError(ValueError):
    pass


class Side(str, Enum):
    BUY = "buy"
    SELL = "sell"
    UNKNOWN = "unknown"

    @property
    def sign(self) -> int:
        return {"buy": 1, "sell": -1, "unknown": 0}[self.value]


@dataclass(frozen=True, slots=True)
class TickRecord:
    """One trade with the quote prevailing immediately before it.

    Missing quote fields are NaN.
    """

    timestamp: int
    price: float
    volume: float
    best_ask: float
    best_bid: float
    ask_size: float
    bid_size: float

    @property
    def has_quote(self) -> bool:
        return (
            math.isfinite(self.best_bid)
            and math.isfinite(self.best_ask)
            and self.best_bid > 0
            and self.best_ask > 0
            and self.best_bid <= self.best_ask
        )


@dataclass(frozen=True, slots=True)
class ClassifiedTrade:
    tick: TickRecord
    side: Side


@dataclass
class ParsedTicks:
    records: list[TickRecord]
    diagnostics: list[str]


def _float_or_nan(s: str) -> float:
    s = s.strip()
    return float(s) if s else math.nan


def parse_ticks(source, ts_tolerance_ms: int = 0) -> ParsedTicks:
    """Parse a tick CSV from a path, bytes, or a binary/text stream.

    Rows that cannot be parsed or violate the record invariants are skipped
    and reported in ``diagnostics`` with their line number. Timestamps that
    step backwards by no more than ``ts_tolerance_ms`` are re-sorted; larger
    regressions raise :class:`TickFormatError`.
    """
    if isinstance(source, (str, Path)):
        text = Path(source).read_text(encoding="utf-8")
    elif isinstance(source, (bytes, bytearray)):
        text = bytes(source).decode("utf-8")
    else:
        data = source.read()
        text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data

    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise TickFormatError("missing header") from None
    header = [h.strip() for h in header]
    if tuple(header) != TICK_COLUMNS:
        raise TickFormatError(f"unexpected header {header!r}; expected {','.join(TICK_COLUMNS)}")

    records: list[TickRecord] = []
    diagnostics: list[str] = []
    latest = None
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            if len(row) != len(TICK_COLUMNS):
                raise ValueError(f"expected {len(TICK_COLUMNS)} fields, got {len(row)}")
            ts = int(row[0])
            price = float(row[1])
            volume = float(row[2])
            bid, ask = _float_or_nan(row[3]), _float_or_nan(row[4])
            bid_size, ask_size = _float_or_nan(row[5]), _float_or_nan(row[6])
            if not (price > 0 and volume > 0):
                raise ValueError("price and volume must be positive")
            if bid > ask:
                raise ValueError("crossed quote (bid > ask)")
        except ValueError as exc:
            diagnostics.append(f"line {lineno}: {exc}")
            continue
        if latest is not None and ts < latest - ts_tolerance_ms:
            raise TickFormatError(f"line {lineno}: timestamp {ts} goes back past {latest}")
        latest = ts if latest is None else max(latest, ts)
        records.append(TickRecord(ts, price, volume, ask, bid, ask_size, bid_size))

    for d in diagnostics:
        log.warning("malformed tick row, %s", d)
    records.sort(key=lambda r: r.timestamp)
    return ParsedTicks(records, diagnostics)


def write_ticks(records: Iterable[TickRecord], path_or_stream) -> None:
    def _fmt(x: float) -> str:
        return "" if math.isnan(x) else format(x, ".12g")

    own = isinstance(path_or_stream, (str, Path))
    fh = open(path_or_stream, "w", newline="", encoding="utf-8") if own else path_or_stream
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TICK_COLUMNS)
        for r in records:
            w.writerow([
                r.timestamp, _fmt(r.price), _fmt(r.volume), _fmt(r.best_bid),
                _fmt(r.best_ask), _fmt(r.bid_size), _fmt(r.ask_size),
            ])
    finally:
        if own:
            fh.close()


def classify_trades(ticks: Sequence[TickRecord], rel_tol: float = 1e-9) -> list[ClassifiedTrade]:
    """Lee-Ready cascade: quote rule first, tick test at the midquote.

    A trade closer to the ask is a buy and closer to the bid a sell. At the
    midquote it is a buy if above the previous transaction price, a sell if
    below, and unknown if equal, first in the sequence, or without a valid
    two-sided quote.
    """
    out = []
    prev_price = None
    for tk in ticks:
        side = Side.UNKNOWN
        if tk.has_quote:
            mid = 0.5 * (tk.best_bid + tk.best_ask)
            tol = rel_tol * mid
            if tk.price > mid + tol:
                side = Side.BUY
            elif tk.price < mid - tol:
                side = Side.SELL
            elif prev_price is not None:
                if tk.price > prev_price + tol:
                    side = Side.BUY
                elif tk.price < prev_price - tol:
                    side = Side.SELL
        out.append(ClassifiedTrade(tk, side))
        prev_price = tk.price
    return out


def day_is_complete(
    ticks: Sequence[TickRecord], segments: Sequence[tuple[int, int]]
) -> bool:
    """True when every continuous-trading segment has at least one quoted trade."""
    for start, end in segments:
        if not any(start <= tk.timestamp <= end and tk.has_quote for tk in ticks):
            return False
    return True


def filter_universe(valid_days: Mapping[str, int | Sequence[bool]], min_valid_days: int = 1250) -> set[str]:
    """Instruments with at least ``min_valid_days`` complete days.

    ``valid_days`` maps instrument to either a count of complete days or the
    per-day completeness flags. The default is five years of ~250 sessions.
    """
    kept = set()
    for inst, days in valid_days.items():
        n = days if isinstance(days, int) else sum(bool(d) for d in days)
        if n >= min_valid_days:
            kept.add(inst)
    return kept


def split_tick_filename(path: str | Path) -> tuple[str, str]:
    m = TICK_FILE_RE.match(Path(path).name)
    if m is None:
        raise TickFormatError(f"tick file name {Path(path).name!r} is not <instrument>_<YYYYMMDD>.csv")
    return m["instrument"], m["date"]
