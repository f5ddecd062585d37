"""Event stream -> fixed 240x60 feature matrix.

Time before kickoff is cut into windows (10 s x 90 nearest kickoff, then
20 s x 90, 30 s x 59, and one catch-all window reaching back to two hours).
In every window each outcome gets a 20-vector summarising Buy, Back, Sell and
Lay activity; the three outcome blocks are concatenated in win/draw/lose order.
Rows run oldest window first, so the last row is the window ending at kickoff.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from darkhorse._parallel import chunk_ranges, ordered_map
from darkhorse.market_data import (
    WINDOW_SECONDS,
    EventTable,
    MatchRecord,
    Outcome,
    as_table,
    validate_match,
)

REMAINDER = None
DEFAULT_PLAN = ((10.0, 90), (20.0, 90), (30.0, 59), (REMAINDER, 1))

N_GROUP = 20
N_FEATURES = 3 * N_GROUP

_GROUP_NAMES = (
    "BuyActionCnt", "BuyVolAvg", "BuyVolStd", "BuyOddsAvg",
    "BackBidsSubmitted", "BackSubmittedVolAvg", "BackSubmittedVolStd",
    "BackBidsCancelled", "BackCancelledVolAvg", "BackCancelledVolStd",
    "SellActionCnt", "SellVolAvg", "SellVolStd", "SellOddsAvg",
    "LayBidsSubmitted", "LaySubmittedVolAvg", "LaySubmittedVolStd",
    "LayBidsCancelled", "LayCancelledVolAvg", "LayCancelledVolStd",
)  # fmt: skip
FEATURE_NAMES = tuple(f"{o}_{name}" for o in ("win", "draw", "lose") for name in _GROUP_NAMES)

# event category = side * 3 + kind  (back/lay x submitted/cancelled/executed)
# -> (count column, avg column, std column, odds column or None) inside a 20-block
_CATEGORY_COLUMNS = {
    0: (4, 5, 6, None),  # back submitted
    1: (7, 8, 9, None),  # back cancelled
    2: (0, 1, 2, 3),  # back executed = Buy
    3: (14, 15, 16, None),  # lay submitted
    4: (17, 18, 19, None),  # lay cancelled
    5: (10, 11, 12, 13),  # lay executed = Sell
}


class FeatureError(ValueError):
    pass


def build_windows(plan=DEFAULT_PLAN, horizon=WINDOW_SECONDS):
    """Return an ``(n, 2)`` array of half-open windows ``(start, end]``.

    Rows are ordered farthest from kickoff first; the windows tile
    ``(0, horizon]`` exactly.
    """
    fixed = sum(width * count for width, count in plan if width is not REMAINDER)
    n_rem = sum(1 for width, _ in plan if width is REMAINDER)
    if n_rem > 1:
        raise FeatureError("at most one remainder period is allowed")
    rem_width = None
    if n_rem:
        (rem_count,) = [count for width, count in plan if width is REMAINDER]
        if rem_count != 1:
            raise FeatureError(f"the remainder period must have exactly 1 point, got {rem_count}")
        rem_width = horizon - fixed
        if rem_width <= 0:
            raise FeatureError(f"fixed periods cover {fixed} s, leaving nothing of the {horizon} s horizon")
    elif not np.isclose(fixed, horizon, rtol=0, atol=1e-9):
        raise FeatureError(f"plan covers {fixed} s, does not tile the {horizon} s horizon")

    edges = [0.0]
    for width, count in plan:
        if width is not REMAINDER and (width <= 0 or count < 1):
            raise FeatureError(f"invalid period ({width}, {count})")
        step = rem_width if width is REMAINDER else float(width)
        for _ in range(count):
            edges.append(edges[-1] + step)
    edges[-1] = float(horizon)
    edges = np.asarray(edges)
    nearest_first = np.column_stack([edges[:-1], edges[1:]])
    return nearest_first[::-1].copy()


def _group_stats(key, values, n_keys):
    """Count, mean and population std of ``values`` grouped by ``key``."""
    count = np.bincount(key, minlength=n_keys).astype(np.float64)
    total = np.bincount(key, weights=values, minlength=n_keys)
    mean = np.divide(total, count, out=np.zeros(n_keys), where=count > 0)
    dev = values - mean[key]
    var = np.bincount(key, weights=dev * dev, minlength=n_keys)
    std = np.sqrt(np.divide(var, count, out=np.zeros(n_keys), where=count > 0))
    return count, mean, std, total


def frame_matrix(table: EventTable, windows):
    """Feature rows for ``windows`` (an ``(n, 2)`` array, any order)."""
    windows = np.asarray(windows, dtype=np.float64)
    n_win = len(windows)
    out = np.zeros((n_win, N_FEATURES))
    if len(table) == 0:
        return out
    order = np.argsort(windows[:, 1], kind="stable")
    ends = windows[order, 1]
    horizon = ends[-1]
    # anything older than the horizon belongs to the farthest window
    t = np.minimum(table.t, horizon)
    pos = np.searchsorted(ends, t, side="left")
    keep = (pos < n_win) & (t > windows[order[np.minimum(pos, n_win - 1)], 0])
    row = order[pos[keep]]
    outcome = table.outcome[keep].astype(np.int64)
    category = table.side[keep].astype(np.int64) * 3 + table.kind[keep].astype(np.int64)
    volume = table.volume[keep]
    odds = table.odds[keep]

    n_keys = n_win * 3 * 6
    key = (row * 3 + outcome) * 6 + category
    # fixed summation order, so reordering events cannot change a single bit
    canon = np.lexsort((odds, volume, key))
    key, volume, odds = key[canon], volume[canon], odds[canon]
    count, mean, std, vol_sum = _group_stats(key, volume, n_keys)
    wodds = np.bincount(key, weights=volume * odds, minlength=n_keys)
    plain_odds = np.bincount(key, weights=odds, minlength=n_keys)
    odds_avg = np.where(
        vol_sum > 0,
        np.divide(wodds, vol_sum, out=np.zeros(n_keys), where=vol_sum > 0),
        np.divide(plain_odds, count, out=np.zeros(n_keys), where=count > 0),
    )

    shape = (n_win, 3, 6)
    count, mean, std, odds_avg = (a.reshape(shape) for a in (count, mean, std, odds_avg))
    blocks = out.reshape(n_win, 3, N_GROUP)
    for cat, (c_col, m_col, s_col, o_col) in _CATEGORY_COLUMNS.items():
        blocks[:, :, c_col] = count[:, :, cat]
        blocks[:, :, m_col] = mean[:, :, cat]
        blocks[:, :, s_col] = std[:, :, cat]
        if o_col is not None:
            blocks[:, :, o_col] = odds_avg[:, :, cat]
    return out


def extract_frame(events_in_window, outcome) -> np.ndarray:
    """20 summary features of the events for one outcome (events pre-filtered to a window)."""
    table = as_table(events_in_window)
    if len(table) == 0:
        return np.zeros(N_GROUP)
    upper = float(table.t.max())
    row = frame_matrix(table, np.array([[0.0, upper]]))[0]
    o = int(Outcome(outcome))
    return row[o * N_GROUP : (o + 1) * N_GROUP].copy()


@dataclass
class FeatureSequence:
    match_id: str
    frames: np.ndarray
    closing_odds: tuple
    label: Outcome


def extract_sequence(record: MatchRecord, events, plan=DEFAULT_PLAN) -> FeatureSequence:
    table = as_table(events, record.match_id)
    frames = frame_matrix(table, build_windows(plan))
    if not np.all(np.isfinite(frames)):
        raise FeatureError(f"non-finite features for match {record.match_id}")
    return FeatureSequence(record.match_id, frames, tuple(record.closing_odds), Outcome(record.final_outcome))


class FeatureSet:
    """A stack of featurised matches: ``X`` is ``(n, 240, 60)``."""

    def __init__(self, match_ids, X, labels, odds):
        self.match_ids = list(match_ids)
        self.X = np.asarray(X, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.odds = np.asarray(odds, dtype=np.float64).reshape(-1, 3)
        n = len(self.match_ids)
        if self.X.ndim != 3 or len(self.X) != n or len(self.labels) != n or len(self.odds) != n:
            raise FeatureError("inconsistent feature set dimensions")

    @classmethod
    def from_sequences(cls, seqs):
        seqs = list(seqs)
        if not seqs:
            return cls([], np.zeros((0, len(build_windows()), N_FEATURES)), [], np.zeros((0, 3)))
        return cls(
            [s.match_id for s in seqs],
            np.stack([s.frames for s in seqs]),
            [int(s.label) for s in seqs],
            [s.closing_odds for s in seqs],
        )

    def __len__(self):
        return len(self.match_ids)

    def __getitem__(self, i):
        return FeatureSequence(self.match_ids[i], self.X[i], tuple(self.odds[i].tolist()), Outcome(int(self.labels[i])))

    def subset(self, index):
        index = np.asarray(index, dtype=np.int64)
        return FeatureSet([self.match_ids[i] for i in index], self.X[index], self.labels[index], self.odds[index])

    @property
    def true_odds(self):
        return self.odds[np.arange(len(self)), self.labels]


def _featurise_chunk(job):
    pairs, plan, validate_kw = job
    windows = build_windows(plan)
    seqs, dropped = [], []
    for record, table in pairs:
        table = as_table(table, record.match_id)
        report = validate_match(record, table, **validate_kw)
        if not report.ok:
            dropped.append(report)
            continue
        frames = frame_matrix(table, windows)
        seqs.append(FeatureSequence(record.match_id, frames, tuple(record.closing_odds), Outcome(record.final_outcome)))
    return seqs, dropped


def build_feature_set(records, tables, plan=DEFAULT_PLAN, workers=1, **validate_kw):
    """Validate and featurise matches; returns ``(FeatureSet, dropped_reports)``.

    ``tables`` maps match_id -> events; matches without events are validated
    against an empty stream.  Output order follows ``records`` whatever the
    number of ``workers``.
    """
    build_windows(plan)  # fail early on a bad plan
    pairs = [(r, tables.get(r.match_id) or EventTable.empty(r.match_id)) for r in records]
    jobs = [(pairs[a:b], plan, validate_kw) for a, b in chunk_ranges(len(pairs), 4 * max(workers, 1))]
    seqs, dropped = [], []
    for part_seqs, part_dropped in ordered_map(_featurise_chunk, jobs, workers):
        seqs.extend(part_seqs)
        dropped.extend(part_dropped)
    return FeatureSet.from_sequences(seqs), dropped


# ------------------------------------------------------------ normalization


@dataclass
class NormalizationStats:
    min: np.ndarray
    max: np.ndarray

    def to_json(self):
        return json.dumps({"min": self.min.tolist(), "max": self.max.tolist()})

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(np.asarray(d["min"], dtype=np.float64), np.asarray(d["max"], dtype=np.float64))

    @property
    def per_window(self):
        return self.min.ndim == 2


def fit_normalizer(train, per_window=True) -> NormalizationStats:
    """Min and max of every feature over the training matches.

    With ``per_window`` (the default) each (window, feature) cell gets its own
    range, shape ``(240, 60)``.  Otherwise one range per feature column,
    shape ``(60,)``; windows span 10 s to 2730 s, so a shared range lets the
    wide catch-all window squash the fine windows towards 0.
    """
    if isinstance(train, FeatureSet):
        X = train.X
    else:
        X = np.stack([s.frames if isinstance(s, FeatureSequence) else np.asarray(s) for s in train]) if train else None
    if X is None or len(X) == 0:
        raise FeatureError("cannot fit a normalizer on an empty training set")
    if per_window:
        return NormalizationStats(X.min(axis=0), X.max(axis=0))
    flat = X.reshape(-1, X.shape[-1])
    return NormalizationStats(flat.min(axis=0), flat.max(axis=0))


def apply_normalizer(stats: NormalizationStats, data):
    """Min-max scale to [0, 1]; zero-range columns map to 0, out-of-range values clip."""
    if isinstance(data, FeatureSet):
        return FeatureSet(data.match_ids, apply_normalizer(stats, data.X), data.labels, data.odds)
    if isinstance(data, FeatureSequence):
        return FeatureSequence(data.match_id, apply_normalizer(stats, data.frames), data.closing_odds, data.label)
    x = np.asarray(data, dtype=np.float64)
    span = stats.max - stats.min
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (x - stats.min) / safe, 0.0)
    return np.clip(out, 0.0, 1.0)


# ------------------------------------------------------------- feature dump
#
# Binary layout, little-endian:
#   magic  b"DHFS", uint32 version (=1)
#   uint64 n_matches, uint32 n_rows (240), uint32 n_cols (60)
#   float64[n_matches, n_rows, n_cols]  row-major feature matrices
#   per match: uint8 label, float64[3] closing odds, uint16 id length, utf-8 id

_MAGIC = b"DHFS"
_HEADER = struct.Struct("<4sIQII")
_MATCH = struct.Struct("<B3dH")


def write_feature_dump(fs: FeatureSet, path):
    n, rows, cols = fs.X.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, 1, n, rows, cols))
        fh.write(np.ascontiguousarray(fs.X, dtype="<f8").tobytes())
        for mid, label, odds in zip(fs.match_ids, fs.labels, fs.odds):
            raw = mid.encode("utf-8")
            fh.write(_MATCH.pack(int(label), *odds.tolist(), len(raw)))
            fh.write(raw)


def read_feature_header(path):
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
    if len(head) != _HEADER.size:
        raise FeatureError(f"{path}: truncated header")
    magic, version, n, rows, cols = _HEADER.unpack(head)
    if magic != _MAGIC or version != 1:
        raise FeatureError(f"{path}: not a feature dump (magic {magic!r}, version {version})")
    return n, rows, cols


def read_feature_dump(path) -> FeatureSet:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise FeatureError(f"{path}: truncated header")
    magic, version, n, rows, cols = _HEADER.unpack_from(data)
    if magic != _MAGIC or version != 1:
        raise FeatureError(f"{path}: not a feature dump (magic {magic!r}, version {version})")
    offset = _HEADER.size
    size = n * rows * cols * 8
    if len(data) < offset + size:
        raise FeatureError(f"{path}: truncated feature block")
    X = np.frombuffer(data, dtype="<f8", count=n * rows * cols, offset=offset).reshape(n, rows, cols).astype(np.float64)
    offset += size
    ids, labels, odds = [], [], []
    for _ in range(n):
        if len(data) < offset + _MATCH.size:
            raise FeatureError(f"{path}: truncated match block")
        label, o1, o2, o3, length = _MATCH.unpack_from(data, offset)
        offset += _MATCH.size
        if len(data) < offset + length:
            raise FeatureError(f"{path}: truncated match block")
        try:
            ids.append(data[offset : offset + length].decode("utf-8"))
        except UnicodeDecodeError:
            raise FeatureError(f"{path}: match id is not valid UTF-8") from None
        offset += length
        labels.append(label)
        odds.append((o1, o2, o3))
    if offset != len(data):
        raise FeatureError(f"{path}: {len(data) - offset} trailing bytes")
    return FeatureSet(ids, X, labels, np.asarray(odds).reshape(-1, 3))


def write_feature_csv(fs: FeatureSet, path, plan=DEFAULT_PLAN):
    """One row per (match, window) for eyeballing; not used by the pipeline."""
    windows = build_windows(plan)
    header = "match_id,window,t_start,t_end," + ",".join(FEATURE_NAMES)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for mid, frames in zip(fs.match_ids, fs.X):
            for w, ((start, end), row) in enumerate(zip(windows, frames)):
                fh.write(f"{mid},{w},{start!r},{end!r}," + ",".join(repr(float(v)) for v in row) + "\n")


def feature_dump_paths(out_dir):
    return os.path.join(out_dir, "features.bin"), os.path.join(out_dir, "features.csv")
