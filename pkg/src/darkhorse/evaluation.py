"""Betting gains, baselines, horse classes and the repeated-split trial harness.

Every bet stakes $1.  A match's gain is the closing odds of the outcome backed
when it wins and 0 otherwise, so a gain of 1.0 means breaking even.

Policies:
    one_bet  back the argmax outcome
    s_bet    split the dollar across outcomes by predicted probability
    d_bet    like one_bet but skip matches where the argmax is the favourite
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import Enum

import numpy as np

from darkhorse import _rng
from darkhorse.features import apply_normalizer, fit_normalizer
from darkhorse.market_data import Outcome
from darkhorse.model import DarkhorseNet, Prediction
from darkhorse.train import TrainConfig, train

log = logging.getLogger(__name__)

TEST_FRACTION = 0.1
VAL_FRACTION = 0.1
MIN_DATASET = 30
DEFAULT_TRIALS = 87
DEFAULT_COVERAGE_CAP = 50
GAIN_KEYS = ("G_1bet", "G_sbet", "G_dbet", "G_rand", "G_min", "G_max", "G_middle", "G_best")


class HorseClass(str, Enum):
    HOT = "hot"
    MIDDLE = "middle"
    BIG_DARK = "big_dark"

    def __str__(self):
        return self.value


HORSE_CLASSES = (HorseClass.HOT, HorseClass.MIDDLE, HorseClass.BIG_DARK)


class Policy(str, Enum):
    ONE_BET = "one_bet"
    S_BET = "s_bet"
    D_BET = "d_bet"

    def __str__(self):
        return self.value


class EvalError(ValueError):
    pass


# ---------------------------------------------------------------- taxonomy


def odds_order(odds):
    """Outcome indices sorted by odds, shortest first; ties keep win < draw < lose."""
    odds = np.asarray(odds, dtype=np.float64)
    return np.argsort(odds, axis=-1, kind="stable")


def horse_codes(odds, outcomes):
    """0 hot, 1 middle, 2 big dark, per match."""
    order = odds_order(np.atleast_2d(odds))
    outcomes = np.atleast_1d(np.asarray(outcomes, dtype=np.int64))
    return np.argmax(order == outcomes[:, None], axis=1)


def classify_horse(closing_odds, true_outcome) -> HorseClass:
    return HORSE_CLASSES[int(horse_codes(closing_odds, [int(true_outcome)])[0])]


def horse_distribution(odds, outcomes):
    codes = horse_codes(odds, outcomes)
    counts = np.bincount(codes, minlength=3)
    total = max(len(codes), 1)
    return {str(c): float(counts[i] / total) for i, c in enumerate(HORSE_CLASSES)}


# ---------------------------------------------------------------- single bets


@dataclass(frozen=True)
class BetResult:
    match_id: str
    policy: Policy
    stake: float
    gain: float
    predicted: Outcome | None


def _probs(pred):
    probs = np.asarray(getattr(pred, "probs", pred), dtype=np.float64)
    if probs.shape != (3,):
        raise EvalError(f"expected 3 probabilities, got shape {probs.shape}")
    return probs


def gain_1bet(pred, odds, outcome, match_id="") -> BetResult:
    probs = _probs(pred)
    pick = int(np.argmax(probs))
    gain = float(odds[pick]) if pick == int(outcome) else 0.0
    return BetResult(match_id, Policy.ONE_BET, 1.0, gain, Outcome(pick))


def gain_sbet(pred, odds, outcome, match_id="") -> BetResult:
    probs = _probs(pred)
    y = int(outcome)
    return BetResult(match_id, Policy.S_BET, 1.0, float(probs[y] * odds[y]), Outcome(int(np.argmax(probs))))


@dataclass(frozen=True)
class DBetResult:
    gain: float | None  # None when every match abstained
    n_staked: int
    n_abstained: int
    total_return: float


def gain_dbet(probs, odds, outcomes, normalize="staked") -> DBetResult:
    """Skip matches whose argmax is the shortest-odds outcome, 1-bet the rest.

    ``normalize="staked"`` reports return per dollar staked; ``"all"`` divides
    the same total return by the number of matches instead.
    """
    if normalize not in ("staked", "all"):
        raise EvalError(f"normalize must be 'staked' or 'all', got {normalize!r}")
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    odds = np.atleast_2d(np.asarray(odds, dtype=np.float64))
    outcomes = np.atleast_1d(np.asarray(outcomes, dtype=np.int64))
    pick = probs.argmax(axis=1)
    staked = pick != odds_order(odds)[:, 0]
    rows = np.arange(len(pick))
    ret = np.where(pick == outcomes, odds[rows, pick], 0.0)
    total = float(ret[staked].sum())
    n_staked = int(staked.sum())
    n_abs = len(pick) - n_staked
    if n_staked == 0:
        return DBetResult(None, 0, n_abs, 0.0)
    if normalize == "staked":
        return DBetResult(total / n_staked, n_staked, n_abs, total)
    return DBetResult(total / len(pick), n_staked, n_abs, total)


def policy_gains(probs, odds, outcomes, normalize="staked"):
    """Mean gain of each model policy over a set of matches."""
    probs = np.asarray(probs, dtype=np.float64)
    odds = np.asarray(odds, dtype=np.float64)
    outcomes = np.asarray(outcomes, dtype=np.int64)
    rows = np.arange(len(outcomes))
    pick = probs.argmax(axis=1)
    true_odds = odds[rows, outcomes]
    dbet = gain_dbet(probs, odds, outcomes, normalize)
    return {
        "G_1bet": float(np.mean(np.where(pick == outcomes, true_odds, 0.0))),
        "G_sbet": float(np.mean(probs[rows, outcomes] * true_odds)),
        "G_dbet": dbet.gain,
    }, dbet


# ---------------------------------------------------------------- baselines


def baseline_picks(odds, rng):
    order = odds_order(odds)
    return {
        "G_rand": rng.integers(0, 3, size=len(order)),
        "G_min": order[:, 0],
        "G_middle": order[:, 1],
        "G_max": order[:, 2],
    }


def baselines(odds, outcomes, rng):
    """Mean gains of the odds-only strategies and of perfect foresight."""
    odds = np.asarray(odds, dtype=np.float64)
    outcomes = np.asarray(outcomes, dtype=np.int64)
    if len(outcomes) == 0:
        raise EvalError("baselines need at least one match")
    rows = np.arange(len(outcomes))
    true_odds = odds[rows, outcomes]
    out = {k: float(np.mean(np.where(p == outcomes, true_odds, 0.0))) for k, p in baseline_picks(odds, rng).items()}
    out["G_best"] = float(true_odds.mean())
    return out


def implied_probability(odds):
    return 1.0 / np.asarray(odds, dtype=np.float64)


# ---------------------------------------------------------------- trials


def _half_up(x):
    return int(math.floor(x + 0.5))


def split_indices(n, rng):
    """Random (train, val, test) index arrays: 10% test, then 10% of the rest."""
    if n < MIN_DATASET:
        raise EvalError(f"dataset too small for splitting: {n} matches (need >= {MIN_DATASET})")
    perm = rng.permutation(n)
    n_test = _half_up(TEST_FRACTION * n)
    test, rest = perm[:n_test], perm[n_test:]
    n_val = _half_up(VAL_FRACTION * len(rest))
    return rest[n_val:], rest[:n_val], test


@dataclass
class TrialReport:
    trial: int
    seed: int
    test_ids: list
    gains: dict
    n_dbet_staked: int
    accuracy_total: float
    accuracy_dark: float | None
    horse_distribution: dict
    convergence_epoch: int
    best_epoch: int
    best_val_loss: float

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


@dataclass
class FittedTrial:
    report: TrialReport
    net: DarkhorseNet
    stats: object
    history: object
    test: object  # normalised test FeatureSet


def fit_trial(dataset, seed, config: TrainConfig, trial=0, per_window=True, log_path=None):
    """Split, normalise on the training part, train, and score the test part."""
    train_idx, val_idx, test_idx = split_indices(len(dataset), _rng.stream(seed, "split"))
    stats = fit_normalizer(dataset.subset(train_idx), per_window=per_window)
    tr, va, te = (apply_normalizer(stats, dataset.subset(i)) for i in (train_idx, val_idx, test_idx))
    net = DarkhorseNet(seq_len=dataset.X.shape[1], n_features=dataset.X.shape[2], seed=seed)
    history = train(net, tr, va, replace(config, seed=seed), log_path=log_path)

    probs = net.predict_proba(te.X)
    gains, dbet = policy_gains(probs, te.odds, te.labels)
    gains.update(baselines(te.odds, te.labels, _rng.stream(seed, "baseline")))
    hit = probs.argmax(axis=1) == te.labels
    dark = horse_codes(te.odds, te.labels) > 0
    report = TrialReport(
        trial=trial,
        seed=seed,
        test_ids=list(te.match_ids),
        gains={k: gains[k] for k in GAIN_KEYS},
        n_dbet_staked=dbet.n_staked,
        accuracy_total=float(hit.mean()),
        accuracy_dark=float(hit[dark].mean()) if dark.any() else None,
        horse_distribution=horse_distribution(te.odds, te.labels),
        convergence_epoch=history.convergence_epoch,
        best_epoch=history.best_epoch,
        best_val_loss=float(history.best_val_loss),
    )
    return FittedTrial(report, net, stats, history, te)


def run_trial(dataset, seed, config: TrainConfig, trial=0, per_window=True) -> TrialReport:
    return fit_trial(dataset, seed, config, trial, per_window).report


def trial_seed(base_seed, index):
    return _rng.derive_seed(base_seed, index)


def _trial_job(args):
    dataset, base_seed, index, config, per_window = args
    return run_trial(dataset, trial_seed(base_seed, index), config, index, per_window)


@dataclass
class TrialsResult:
    reports: list
    n_requested: int
    n_extra: int
    uncovered: int
    n_matches: int
    warnings: list = field(default_factory=list)

    def mean(self, key):
        vals = [r.gains[key] for r in self.reports if r.gains[key] is not None]
        return float(np.mean(vals)) if vals else None

    def summary(self):
        acc_dark = [r.accuracy_dark for r in self.reports if r.accuracy_dark is not None]
        return {
            "trials": len(self.reports),
            "requested_trials": self.n_requested,
            "extra_trials": self.n_extra,
            "matches": self.n_matches,
            "uncovered_matches": self.uncovered,
            "mean_gains": {k: self.mean(k) for k in GAIN_KEYS},
            "mean_accuracy_total": float(np.mean([r.accuracy_total for r in self.reports])),
            "mean_accuracy_dark": float(np.mean(acc_dark)) if acc_dark else None,
            "mean_horse_distribution": {
                str(c): float(np.mean([r.horse_distribution[str(c)] for r in self.reports])) for c in HORSE_CLASSES
            },
            "mean_convergence_epoch": float(np.mean([r.convergence_epoch for r in self.reports])),
            "warnings": list(self.warnings),
        }


def _run_batch(dataset, base_seed, indices, config, per_window, pool):
    jobs = [(dataset, base_seed, i, config, per_window) for i in indices]
    if pool is None:
        return [_trial_job(j) for j in jobs]
    return list(pool.map(_trial_job, jobs))


def run_trials(
    dataset,
    n_trials=DEFAULT_TRIALS,
    base_seed=0,
    config: TrainConfig | None = None,
    ensure_coverage=True,
    coverage_cap=DEFAULT_COVERAGE_CAP,
    workers=1,
    per_window=True,
) -> TrialsResult:
    """Independent random-split trials, topped up until every match was tested once.

    Trial ``i`` always uses seed ``trial_seed(base_seed, i)``, so results do
    not depend on ``workers``; top-up trials are added in index order and the
    run stops at the first trial that completes coverage.
    """
    if n_trials < 1:
        raise EvalError(f"n_trials must be >= 1, got {n_trials}")
    config = config or TrainConfig()
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        reports = _run_batch(dataset, base_seed, range(n_trials), config, per_window, pool)
        ids = set(dataset.match_ids)
        covered = set()
        for r in reports:
            covered.update(r.test_ids)
        extra = 0
        while ensure_coverage and len(covered) < len(ids) and extra < coverage_cap:
            step = min(max(workers, 1), coverage_cap - extra)
            batch = _run_batch(dataset, base_seed, range(n_trials + extra, n_trials + extra + step), config, per_window, pool)
            for r in batch:
                reports.append(r)
                extra += 1
                covered.update(r.test_ids)
                if len(covered) == len(ids):
                    break
    finally:
        if pool is not None:
            pool.shutdown()
    result = TrialsResult(reports, n_trials, extra, len(ids) - len(covered), len(ids))
    if ensure_coverage and result.uncovered:
        msg = f"coverage cap of {coverage_cap} extra trials reached; {result.uncovered} matches never tested"
        result.warnings.append(msg)
        warnings.warn(msg, stacklevel=2)
    return result


# ---------------------------------------------------------------- reports

REPORT_SCHEMA = {
    "gains_sorted.csv": {
        "rank": "position after sorting by G_1bet ascending (ties by trial)",
        "trial": "trial index",
        **{k: f"mean {k} over the trial's test set" for k in GAIN_KEYS},
    },
    "gain_vs_accuracy.csv": {
        "rank": "position after sorting by G_1bet",
        "trial": "trial index",
        "G_1bet": "mean 1-bet gain",
        "accuracy_total": "fraction of test matches whose argmax is the true outcome",
        "accuracy_dark": "same, over test matches whose true outcome is not the favourite (empty if none)",
    },
    "gain_vs_horse_dist.csv": {
        "rank": "position after sorting by G_1bet",
        "trial": "trial index",
        "G_1bet": "mean 1-bet gain",
        "hot": "fraction of test matches won by the shortest-odds outcome",
        "middle": "fraction won by the middle-odds outcome",
        "big_dark": "fraction won by the longest-odds outcome",
    },
    "gain_vs_epochs.csv": {
        "rank": "position after sorting by G_1bet",
        "trial": "trial index",
        "G_1bet": "mean 1-bet gain",
        "convergence_epoch": "epochs run before early stopping",
        "best_epoch": "epoch whose weights were kept",
    },
    "indicators.csv": {
        "group": "darkest or hottest",
        "rank": "1-based rank within the group",
        "match_id": "match identifier",
        "horse_class": "hot, middle or big_dark",
        "true_odds": "closing odds of the true outcome",
        **{f"f4_{i}": f"recurrent summary unit {i}" for i in range(9)},
    },
}


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def sorted_reports(reports):
    return sorted(reports, key=lambda r: (r.gains["G_1bet"], r.trial))


def write_reports(result: TrialsResult, out_dir):
    """Per-trial JSON, the four sorted CSV tables, a summary and the schema."""
    trial_dir = os.path.join(out_dir, "trials")
    os.makedirs(trial_dir, exist_ok=True)
    for r in result.reports:
        with open(os.path.join(trial_dir, f"trial_{r.trial:03d}.json"), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(r.to_json())
    ranked = list(enumerate(sorted_reports(result.reports), start=1))
    _write_csv(
        os.path.join(out_dir, "gains_sorted.csv"),
        ["rank", "trial", *GAIN_KEYS],
        [[i, r.trial, *(r.gains[k] for k in GAIN_KEYS)] for i, r in ranked],
    )
    _write_csv(
        os.path.join(out_dir, "gain_vs_accuracy.csv"),
        ["rank", "trial", "G_1bet", "accuracy_total", "accuracy_dark"],
        [[i, r.trial, r.gains["G_1bet"], r.accuracy_total, r.accuracy_dark] for i, r in ranked],
    )
    _write_csv(
        os.path.join(out_dir, "gain_vs_horse_dist.csv"),
        ["rank", "trial", "G_1bet", "hot", "middle", "big_dark"],
        [[i, r.trial, r.gains["G_1bet"], *(r.horse_distribution[str(c)] for c in HORSE_CLASSES)] for i, r in ranked],
    )
    _write_csv(
        os.path.join(out_dir, "gain_vs_epochs.csv"),
        ["rank", "trial", "G_1bet", "convergence_epoch", "best_epoch"],
        [[i, r.trial, r.gains["G_1bet"], r.convergence_epoch, r.best_epoch] for i, r in ranked],
    )
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(result.summary(), indent=2, sort_keys=True) + "\n")
    write_schema(out_dir)


def write_schema(out_dir):
    with open(os.path.join(out_dir, "schema.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(REPORT_SCHEMA, indent=2) + "\n")


# ---------------------------------------------------------------- indicators


@dataclass(frozen=True)
class IndicatorRow:
    group: str
    rank: int
    match_id: str
    horse_class: HorseClass
    true_odds: float
    f4: tuple


def dump_indicators(net: DarkhorseNet, dataset, top_k=50):
    """Recurrent summaries of the ``top_k`` darkest and hottest matches.

    ``dataset`` must already be normalised.  Darkest means the longest odds
    on the true outcome; ties keep dataset order.
    """
    if top_k < 1:
        raise EvalError(f"top_k must be >= 1, got {top_k}")
    n = len(dataset)
    k = top_k
    if k > n:
        warnings.warn(f"top_k={top_k} exceeds {n} available matches; truncated", stacklevel=2)
        k = n
    true_odds = dataset.true_odds
    darkest = np.argsort(-true_odds, kind="stable")[:k]
    hottest = np.argsort(true_odds, kind="stable")[:k]
    index = np.concatenate([darkest, hottest])
    f4 = net.dump_f4(dataset.X[index]) if len(index) else np.zeros((0, 9))
    codes = horse_codes(dataset.odds[index], dataset.labels[index]) if len(index) else []
    rows = []
    for j, i in enumerate(index):
        rows.append(
            IndicatorRow(
                "darkest" if j < k else "hottest",
                j % k + 1,
                dataset.match_ids[i],
                HORSE_CLASSES[int(codes[j])],
                float(true_odds[i]),
                tuple(float(v) for v in f4[j]),
            )
        )
    return rows


def write_indicators(rows, path):
    header = list(REPORT_SCHEMA["indicators.csv"])
    _write_csv(path, header, [[r.group, r.rank, r.match_id, str(r.horse_class), r.true_odds, *r.f4] for r in rows])


__all__ = [
    "BetResult",
    "DBetResult",
    "EvalError",
    "FittedTrial",
    "HorseClass",
    "IndicatorRow",
    "Policy",
    "Prediction",
    "TrialReport",
    "TrialsResult",
    "baselines",
    "classify_horse",
    "dump_indicators",
    "fit_trial",
    "gain_1bet",
    "gain_dbet",
    "gain_sbet",
    "horse_codes",
    "horse_distribution",
    "policy_gains",
    "run_trial",
    "run_trials",
    "split_indices",
    "trial_seed",
    "write_indicators",
    "write_reports",
]
