"""Matches, trading events and the two line-oriented file formats.

Event file, one record per line::

    match_id,t,outcome,side,kind,odds,volume

``t`` is seconds before kickoff (> 0), ``outcome`` is one of win/draw/lose,
``side`` back/lay and ``kind`` submitted/cancelled/executed.  Match file::

    match_id,league,odds_win,odds_draw,odds_lose,final_outcome

Both are UTF-8; blank lines and lines starting with ``#`` are skipped.

An executed event on the back side is a *Buy* (somebody took a Back bid);
an executed event on the lay side is a *Sell*.
"""
from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

MIN_ODDS = 1.01
WINDOW_SECONDS = 7200.0
DEFAULT_MIN_EVENTS = 50
DEFAULT_MAX_ODDS = 1000.0


class Outcome(enum.IntEnum):
    WIN = 0
    DRAW = 1
    LOSE = 2

    @classmethod
    def parse(cls, text):
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown outcome {text!r}") from None

    def __str__(self):
        return self.name.lower()


class Side(enum.IntEnum):
    BACK = 0
    LAY = 1

    @classmethod
    def parse(cls, text):
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown side {text!r}") from None

    def __str__(self):
        return self.name.lower()


class Kind(enum.IntEnum):
    SUBMITTED = 0
    CANCELLED = 1
    EXECUTED = 2

    @classmethod
    def parse(cls, text):
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown kind {text!r}") from None

    def __str__(self):
        return self.name.lower()


class MarketDataError(ValueError):
    """Malformed record or invariant violation in market data."""

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


def _check_event_fields(t, odds, volume):
    if not math.isfinite(t) or t <= 0:
        raise MarketDataError(f"t must be > 0 seconds before kickoff, got t={t!r}")
    if not math.isfinite(odds) or odds < MIN_ODDS:
        raise MarketDataError(f"odds below {MIN_ODDS}: odds={odds!r}")
    if not math.isfinite(volume) or volume < 0:
        raise MarketDataError(f"volume must be >= 0, got volume={volume!r}")


@dataclass(frozen=True)
class TradeEvent:
    match_id: str
    t: float
    outcome: Outcome
    side: Side
    kind: Kind
    odds: float
    volume: float

    def __post_init__(self):
        _check_event_fields(self.t, self.odds, self.volume)

    @property
    def is_buy(self):
        return self.kind == Kind.EXECUTED and self.side == Side.BACK

    @property
    def is_sell(self):
        return self.kind == Kind.EXECUTED and self.side == Side.LAY


@dataclass(frozen=True)
class MatchRecord:
    match_id: str
    league: str
    closing_odds: tuple[float, float, float]
    final_outcome: Outcome

    def __post_init__(self):
        odds = tuple(float(o) for o in self.closing_odds)
        if len(odds) != 3:
            raise MarketDataError(f"closing_odds needs 3 entries, got {len(odds)}")
        for o, value in zip(Outcome, odds):
            if not math.isfinite(value) or value < MIN_ODDS:
                raise MarketDataError(f"closing odds for {o} below {MIN_ODDS}: {value!r}")
        object.__setattr__(self, "closing_odds", odds)
        object.__setattr__(self, "final_outcome", Outcome(self.final_outcome))


class EventTable:
    """Columnar view of one match's events, in stream order.

    Iterating yields :class:`TradeEvent` objects; the numpy columns are what
    the feature extractor consumes.
    """

    __slots__ = ("match_id", "t", "outcome", "side", "kind", "odds", "volume")

    def __init__(self, match_id, t, outcome, side, kind, odds, volume):
        self.match_id = match_id
        self.t = np.asarray(t, dtype=np.float64)
        self.outcome = np.asarray(outcome, dtype=np.int8)
        self.side = np.asarray(side, dtype=np.int8)
        self.kind = np.asarray(kind, dtype=np.int8)
        self.odds = np.asarray(odds, dtype=np.float64)
        self.volume = np.asarray(volume, dtype=np.float64)
        n = len(self.t)
        for name in ("outcome", "side", "kind", "odds", "volume"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name} has length {len(getattr(self, name))}, expected {n}")

    @classmethod
    def empty(cls, match_id):
        return cls(match_id, [], [], [], [], [], [])

    @classmethod
    def from_events(cls, events, match_id=None):
        events = list(events)
        if match_id is None:
            match_id = events[0].match_id if events else ""
        return cls(
            match_id,
            [e.t for e in events],
            [int(e.outcome) for e in events],
            [int(e.side) for e in events],
            [int(e.kind) for e in events],
            [e.odds for e in events],
            [e.volume for e in events],
        )

    def __len__(self):
        return len(self.t)

    def __getitem__(self, i):
        return TradeEvent(
            self.match_id,
            float(self.t[i]),
            Outcome(int(self.outcome[i])),
            Side(int(self.side[i])),
            Kind(int(self.kind[i])),
            float(self.odds[i]),
            float(self.volume[i]),
        )

    def __iter__(self) -> Iterator[TradeEvent]:
        for i in range(len(self)):
            yield self[i]

    def to_events(self):
        return list(self)

    def take(self, index):
        return EventTable(
            self.match_id,
            self.t[index],
            self.outcome[index],
            self.side[index],
            self.kind[index],
            self.odds[index],
            self.volume[index],
        )


def as_table(events, match_id=None):
    if isinstance(events, EventTable):
        return events
    return EventTable.from_events(events, match_id)


# ---------------------------------------------------------------- text I/O


def _lines(stream) -> Iterator[tuple[int, str]]:
    if isinstance(stream, (bytes, bytearray)):
        stream = io.StringIO(bytes(stream).decode("utf-8"))
    elif isinstance(stream, str):
        stream = io.StringIO(stream)
    for lineno, line in enumerate(stream, start=1):
        if isinstance(line, bytes):
            line = line.decode("utf-8")
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        yield lineno, line


def _parse_event_row(line, lineno):
    parts = line.split(",")
    if len(parts) != 7:
        raise MarketDataError(f"expected 7 comma-separated fields, got {len(parts)}", lineno)
    match_id, t, outcome, side, kind, odds, volume = parts
    try:
        row = (
            match_id.strip(),
            float(t),
            Outcome.parse(outcome),
            Side.parse(side),
            Kind.parse(kind),
            float(odds),
            float(volume),
        )
    except ValueError as exc:
        raise MarketDataError(str(exc), lineno) from None
    if not row[0]:
        raise MarketDataError("empty match_id", lineno)
    try:
        _check_event_fields(row[1], row[5], row[6])
    except MarketDataError as exc:
        raise MarketDataError(str(exc), lineno) from None
    return row


def parse_events(stream) -> list[TradeEvent]:
    """Parse an event stream (bytes, str or file object) into events."""
    return [TradeEvent(*_parse_event_row(line, lineno)) for lineno, line in _lines(stream)]


def load_event_tables(stream) -> dict[str, EventTable]:
    """Parse an event stream straight into per-match columnar tables.

    Same validation as :func:`parse_events`, without materialising one object
    per event.  Match order follows first appearance in the stream.
    """
    columns: dict[str, list[list]] = {}
    for lineno, line in _lines(stream):
        match_id, *row = _parse_event_row(line, lineno)
        cols = columns.get(match_id)
        if cols is None:
            cols = columns[match_id] = [[], [], [], [], [], []]
        for col, value in zip(cols, row):
            col.append(value)
    return {mid: EventTable(mid, *cols) for mid, cols in columns.items()}


def format_event(e) -> str:
    return f"{e.match_id},{e.t!r},{e.outcome},{e.side},{e.kind},{e.odds!r},{e.volume!r}"


def serialize_events(events: Iterable[TradeEvent]) -> str:
    return "".join(format_event(e) + "\n" for e in events)


def write_event_table(table: EventTable, fh):
    """Write a table in event-file format; faster than going through objects."""
    outcomes = [str(o) for o in Outcome]
    sides = [str(s) for s in Side]
    kinds = [str(k) for k in Kind]
    mid = table.match_id
    lines = [
        f"{mid},{t!r},{outcomes[o]},{sides[s]},{kinds[k]},{odds!r},{vol!r}\n"
        for t, o, s, k, odds, vol in zip(
            table.t.tolist(),
            table.outcome.tolist(),
            table.side.tolist(),
            table.kind.tolist(),
            table.odds.tolist(),
            table.volume.tolist(),
        )
    ]
    fh.write("".join(lines))


def parse_matches(stream) -> list[MatchRecord]:
    records = []
    seen = set()
    for lineno, line in _lines(stream):
        parts = line.split(",")
        if len(parts) != 6:
            raise MarketDataError(f"expected 6 comma-separated fields, got {len(parts)}", lineno)
        try:
            record = MatchRecord(
                parts[0].strip(),
                parts[1].strip(),
                (float(parts[2]), float(parts[3]), float(parts[4])),
                Outcome.parse(parts[5]),
            )
        except ValueError as exc:
            raise MarketDataError(str(exc), lineno) from None
        if record.match_id in seen:
            raise MarketDataError(f"duplicate match_id {record.match_id!r}", lineno)
        seen.add(record.match_id)
        records.append(record)
    return records


def format_match(r: MatchRecord) -> str:
    w, d, l = r.closing_odds
    return f"{r.match_id},{r.league},{w!r},{d!r},{l!r},{r.final_outcome}"


def serialize_matches(records: Iterable[MatchRecord]) -> str:
    return "".join(format_match(r) + "\n" for r in records)


# -------------------------------------------------------------- validation


@dataclass(frozen=True)
class ValidationReport:
    match_id: str
    n_events: int
    too_few_events: bool
    out_of_window: int
    odds_outliers: int
    foreign_events: int

    @property
    def ok(self):
        return not (self.too_few_events or self.out_of_window or self.odds_outliers or self.foreign_events)

    def reasons(self):
        out = []
        if self.too_few_events:
            out.append(f"too_few_events ({self.n_events})")
        if self.out_of_window:
            out.append(f"out_of_window ({self.out_of_window})")
        if self.odds_outliers:
            out.append(f"odds_outliers ({self.odds_outliers})")
        if self.foreign_events:
            out.append(f"foreign_events ({self.foreign_events})")
        return out


def validate_match(
    record: MatchRecord,
    events,
    min_events=DEFAULT_MIN_EVENTS,
    window=WINDOW_SECONDS,
    max_odds=DEFAULT_MAX_ODDS,
) -> ValidationReport:
    """Flag matches unfit for the dataset.

    Flags: fewer than ``min_events`` events, events earlier than ``window``
    seconds before kickoff, event odds above ``max_odds``, and events carrying
    another match's id.  A match with any flag set is excluded.
    """
    if isinstance(events, EventTable):
        table = events
        foreign = 0 if table.match_id == record.match_id or len(table) == 0 else len(table)
    else:
        events = list(events)
        foreign = sum(e.match_id != record.match_id for e in events)
        table = EventTable.from_events(events, record.match_id)
    n = len(table)
    return ValidationReport(
        match_id=record.match_id,
        n_events=n,
        too_few_events=n < min_events,
        out_of_window=int(np.count_nonzero(table.t > window)),
        odds_outliers=int(np.count_nonzero(table.odds > max_odds)),
        foreign_events=int(foreign),
    )
