import io
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from impactcal.taq import (
    Side,
    TickFormatError,
    TickRecord,
    classify_trades,
    day_is_complete,
    filter_universe,
    parse_ticks,
    split_tick_filename,
    write_ticks,
)
from conftest import tick

HEADER = "ts_ms,price,volume,bid,ask,bid_size,ask_size\n"


def test_empty_file_with_header():
    assert parse_ticks(HEADER.encode()).records == []


def test_missing_or_wrong_header():
    with pytest.raises(TickFormatError):
        parse_ticks(b"")
    with pytest.raises(TickFormatError):
        parse_ticks(b"ts,price,volume,bid,ask,bid_size,ask_size\n1,2,3,4,5,6,7\n")


def test_one_row_all_fields():
    out = parse_ticks(io.StringIO(HEADER + "1000,10.01,200,10.00,10.02,300,100\n"))
    assert out.records == [TickRecord(1000, 10.01, 200.0, 10.02, 10.00, 100.0, 300.0)]
    assert out.diagnostics == []


def test_one_bad_row_among_hundred():
    lines = [f"{1000 + i},10.0,100,9.99,10.01,50,50" for i in range(100)]
    lines[41] = "1041,abc,100,9.99,10.01,50,50"
    out = parse_ticks((HEADER + "\n".join(lines) + "\n").encode())
    assert len(out.records) == 99
    assert len(out.diagnostics) == 1
    # header is line 1, so row index 41 sits on line 43
    assert out.diagnostics[0].startswith("line 43:")


def test_invalid_values_are_diagnosed():
    body = "1,10,0,,,,\n2,-1,5,,,,\n3,10,5,10.02,10.00,1,1\n4,10,5,,,,\n5,10,5\n"
    out = parse_ticks((HEADER + body).encode())
    assert [r.timestamp for r in out.records] == [4]
    assert [d.split(":")[0] for d in out.diagnostics] == ["line 2", "line 3", "line 4", "line 6"]


def test_missing_quote_is_nan():
    rec = parse_ticks((HEADER + "5,10,5,,,,\n").encode()).records[0]
    assert math.isnan(rec.best_bid) and not rec.has_quote


def test_timestamp_regression_tolerance():
    body = "100,10,1,,,,\n95,10,1,,,,\n110,10,1,,,,\n"
    with pytest.raises(TickFormatError):
        parse_ticks((HEADER + body).encode())
    out = parse_ticks((HEADER + body).encode(), ts_tolerance_ms=5)
    assert [r.timestamp for r in out.records] == [95, 100, 110]


def test_write_parse_round_trip(tmp_path):
    recs = [tick(1, 10.125, 100, 10.12, 10.13, 300, 200), tick(2, 10.13, 50)]
    path = tmp_path / "X_20240102.csv"
    write_ticks(recs, path)
    back = parse_ticks(path).records
    assert back[0] == recs[0]
    assert back[1].price == 10.13 and not back[1].has_quote


def _side(price, prev=None, bid=10.00, ask=10.02):
    ticks = [] if prev is None else [tick(0, prev, 1, bid, ask, 1, 1)]
    ticks.append(tick(1, price, 1, bid, ask, 1, 1))
    return classify_trades(ticks)[-1].side


def test_quote_rule_buy_at_ask():
    assert _side(10.02) is Side.BUY


def test_tick_test_at_mid():
    assert _side(10.01, prev=10.00) is Side.BUY
    assert _side(10.01, prev=10.02) is Side.SELL


def test_indeterminate_cases_are_unknown():
    assert _side(10.01) is Side.UNKNOWN  # first trade at the mid
    assert _side(10.01, prev=10.01) is Side.UNKNOWN  # equal to previous
    assert classify_trades([tick(1, 10.0, 1)])[0].side is Side.UNKNOWN  # no quote


def test_sign_values():
    assert (Side.BUY.sign, Side.SELL.sign, Side.UNKNOWN.sign) == (1, -1, 0)


@given(
    st.floats(1.0, 100.0),
    st.floats(0.001, 1.0),
    st.floats(-1.2, 1.2),
    st.floats(-1.2, 1.2),
)
def test_reflection_flips_sides(mid, half, x, x_prev):
    """Mirror prices about the mid: bid and ask swap roles, buys become sells."""
    bid, ask = mid - half, mid + half
    p, p_prev = mid + x * half, mid + x_prev * half
    q, q_prev = mid - x * half, mid - x_prev * half
    a = classify_trades([tick(0, p_prev, 1, bid, ask, 1, 1), tick(1, p, 1, bid, ask, 1, 1)])
    b = classify_trades([tick(0, q_prev, 1, bid, ask, 1, 1), tick(1, q, 1, bid, ask, 1, 1)])
    for s, t in zip(a, b):
        assert s.side.sign == -t.side.sign


def test_classification_is_deterministic():
    ts = [tick(i, 10 + 0.01 * (i % 3), 1, 10.0, 10.02, 1, 1) for i in range(30)]
    assert classify_trades(ts) == classify_trades(list(ts))


def test_filter_universe_thresholds():
    assert filter_universe({"A": 0}, 1) == set()
    assert filter_universe({"A": 3}, 2) == {"A"}
    assert filter_universe({"A": [True, False, True]}, 2) == {"A"}


def test_filter_universe_ten_instruments():
    counts = {f"S{i}": c for i, c in enumerate([0, 5, 1249, 1250, 1251, 3000, 10, 1250, 7, 2000])}
    expected = {k for k, c in counts.items() if c >= 1250}
    assert filter_universe(counts) == expected == {"S3", "S4", "S5", "S7", "S9"}


def test_day_completeness():
    segs = [(0, 100), (200, 300)]
    q = dict(bid=9.99, ask=10.01, bid_size=1, ask_size=1)
    assert day_is_complete([tick(10, **q), tick(250, **q)], segs)
    assert not day_is_complete([tick(10, **q), tick(150, **q)], segs)
    assert not day_is_complete([tick(10, **q), tick(250)], segs)


def test_file_name_split():
    assert split_tick_filename("/data/600000.SH_20240105.csv") == ("600000.SH", "20240105")
    with pytest.raises(TickFormatError):
        split_tick_filename("prices.csv")
