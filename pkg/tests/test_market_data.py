import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from darkhorse.market_data import (
    EventTable,
    Kind,
    MarketDataError,
    MatchRecord,
    Outcome,
    Side,
    TradeEvent,
    format_match,
    load_event_tables,
    parse_events,
    parse_matches,
    serialize_events,
    serialize_matches,
    validate_match,
    write_event_table,
)

ids = st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789_-", min_size=1, max_size=8)
events = st.builds(
    TradeEvent,
    match_id=ids,
    t=st.floats(min_value=1e-6, max_value=1e5, allow_nan=False),
    outcome=st.sampled_from(list(Outcome)),
    side=st.sampled_from(list(Side)),
    kind=st.sampled_from(list(Kind)),
    odds=st.floats(min_value=1.01, max_value=1e4, allow_nan=False),
    volume=st.floats(min_value=0, max_value=1e7, allow_nan=False),
)


def _event(t=350.0, odds=2.5, volume=10.0, match_id="m1", kind=Kind.SUBMITTED, side=Side.BACK):
    return TradeEvent(match_id, t, Outcome.WIN, side, kind, odds, volume)


def test_parse_single_line():
    (e,) = parse_events("m1,350,win,back,submitted,2.5,10\n")
    assert e == TradeEvent("m1", 350.0, Outcome.WIN, Side.BACK, Kind.SUBMITTED, 2.5, 10.0)


def test_parse_accepts_bytes_and_files_and_skips_comments():
    text = "# header\n\nm1,350,win,back,submitted,2.5,10\n"
    assert parse_events(text.encode()) == parse_events(io.StringIO(text)) == parse_events(text)


def test_empty_stream():
    assert parse_events("") == []
    assert parse_events(b"# only a comment\n") == []


def test_low_odds_rejected_with_line_number():
    with pytest.raises(MarketDataError, match="odds below 1.01") as err:
        parse_events("m1,350,win,back,submitted,2.5,10\nm1,300,win,back,submitted,0.5,10\n")
    assert err.value.lineno == 2
    assert "line 2" in str(err.value)


@pytest.mark.parametrize(
    "line, needle",
    [
        ("m1,350,win,back,submitted,2.5", "7 comma-separated"),
        ("m1,0,win,back,submitted,2.5,1", "t must be > 0"),
        ("m1,10,win,back,submitted,2.5,-1", "volume"),
        ("m1,10,home,back,submitted,2.5,1", "home"),
        ("m1,10,win,bid,submitted,2.5,1", "bid"),
        ("m1,x,win,back,submitted,2.5,1", "x"),
    ],
)
def test_malformed_lines(line, needle):
    with pytest.raises(MarketDataError, match=needle):
        parse_events(line)


def test_buy_sell_mapping():
    assert _event(kind=Kind.EXECUTED, side=Side.BACK).is_buy
    assert _event(kind=Kind.EXECUTED, side=Side.LAY).is_sell
    assert not _event(kind=Kind.SUBMITTED).is_buy


@settings(max_examples=60, deadline=None)
@given(st.lists(events, max_size=20))
def test_event_round_trip(evs):
    assert parse_events(serialize_events(evs)) == evs


@settings(max_examples=30, deadline=None)
@given(st.lists(events, min_size=1, max_size=20))
def test_table_writer_matches_object_writer(evs):
    evs = [TradeEvent("m", e.t, e.outcome, e.side, e.kind, e.odds, e.volume) for e in evs]
    buf = io.StringIO()
    write_event_table(EventTable.from_events(evs), buf)
    assert buf.getvalue() == serialize_events(evs)
    tables = load_event_tables(buf.getvalue())
    assert tables["m"].to_events() == evs


def test_match_file_round_trip_and_duplicates():
    recs = [MatchRecord("a", "EPL", (1.17, 9.8, 22.0), Outcome.DRAW), MatchRecord("b", "X", (2, 3, 4), Outcome.LOSE)]
    assert parse_matches(serialize_matches(recs)) == recs
    with pytest.raises(MarketDataError, match="duplicate"):
        parse_matches(format_match(recs[0]) + "\n" + format_match(recs[0]) + "\n")
    with pytest.raises(MarketDataError, match="below 1.01"):
        MatchRecord("c", "X", (1.0, 3, 4), Outcome.WIN)


def test_validate_zero_events():
    rec = MatchRecord("m1", "EPL", (2, 3, 4), Outcome.WIN)
    report = validate_match(rec, [])
    assert report.too_few_events and not report.ok


def test_validate_clean_match():
    rec = MatchRecord("m1", "EPL", (2, 3, 4), Outcome.WIN)
    evs = [_event(t=float(t)) for t in np.linspace(1, 7200, 1000)]
    report = validate_match(rec, evs)
    assert report.ok and report.reasons() == []


def test_validate_out_of_window_and_outliers():
    rec = MatchRecord("m1", "EPL", (2, 3, 4), Outcome.WIN)
    evs = [_event(t=float(t)) for t in range(1, 100)] + [_event(t=8000.0), _event(odds=5000.0)]
    report = validate_match(rec, evs)
    assert report.out_of_window == 1 and report.odds_outliers == 1 and not report.ok
    assert validate_match(rec, evs, min_events=200).too_few_events


def test_validate_foreign_events():
    rec = MatchRecord("m1", "EPL", (2, 3, 4), Outcome.WIN)
    evs = [_event(t=float(t)) for t in range(1, 60)] + [_event(match_id="m2")]
    assert validate_match(rec, evs).foreign_events == 1
