"""Synthetic prediction-market generator with a planted insider signal.

Each match gets a public belief ``p_public ~ Dirichlet(prior)`` from which
the closing odds are priced, and a true outcome distribution ``p_true`` that
scatters around it (``Dirichlet(p_public / noise_scale**2)``, so
``E[p_true | p_public] = p_public``).  The final outcome is drawn from
``p_true``.  Because odds are unbiased given public information, betting any
fixed rule returns ``1 / (1 + overround)`` per dollar on average, and betting
the true outcome returns 3 / (1 + overround).

Background traders arrive as a Poisson process over the two hours before
kickoff.  After ``insider_onset`` a ``signal_strength`` fraction of executed
trades come from insiders who know ``p_true``: they Buy outcomes the market
underprices and Sell the ones it overprices.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, fields

import numpy as np

from darkhorse import _rng
from darkhorse._parallel import chunk_ranges, ordered_map
from darkhorse.market_data import (
    DEFAULT_MAX_ODDS,
    DEFAULT_MIN_EVENTS,
    MIN_ODDS,
    WINDOW_SECONDS,
    EventTable,
    Kind,
    MatchRecord,
    Outcome,
    Side,
    format_match,
    write_event_table,
)

LEAGUES = ("EPL", "LaLiga", "Ligue1")
KIND_PROBS = (0.45, 0.20, 0.35)  # submitted, cancelled, executed
_BLOCK = 1024  # matches held in memory at once while writing


class ConfigError(ValueError):
    """Invalid configuration value; the message names the field."""


@dataclass(frozen=True)
class GeneratorConfig:
    n_matches: int = 1000
    seed: int = 0
    overround: float = 0.05
    signal_strength: float = 0.6
    base_event_rate: float = 0.15
    noise_scale: float = 0.3
    odds_jitter: float = 0.02
    prior: tuple = (2.0, 2.0, 2.0)
    onset_min: float = 300.0
    onset_max: float = 1800.0
    min_events: int = DEFAULT_MIN_EVENTS

    def __post_init__(self):
        if int(self.n_matches) != self.n_matches or self.n_matches < 1:
            raise ConfigError(f"n_matches must be an integer >= 1, got {self.n_matches!r}")
        if not 0.0 <= self.signal_strength <= 1.0:
            raise ConfigError(f"signal_strength must lie in [0, 1], got {self.signal_strength!r}")
        if self.overround < 0:
            raise ConfigError(f"overround must be >= 0, got {self.overround!r}")
        if not self.base_event_rate > 0:
            raise ConfigError(f"base_event_rate must be > 0, got {self.base_event_rate!r}")
        if self.noise_scale < 0:
            raise ConfigError(f"noise_scale must be >= 0, got {self.noise_scale!r}")
        if self.odds_jitter < 0:
            raise ConfigError(f"odds_jitter must be >= 0, got {self.odds_jitter!r}")
        if len(self.prior) != 3 or min(self.prior) <= 0:
            raise ConfigError(f"prior must be three positive concentrations, got {self.prior!r}")
        if not 0 < self.onset_min <= self.onset_max <= WINDOW_SECONDS:
            raise ConfigError(
                f"onset range must satisfy 0 < onset_min <= onset_max <= {WINDOW_SECONDS}, "
                f"got ({self.onset_min!r}, {self.onset_max!r})"
            )
        if self.min_events < 0:
            raise ConfigError(f"min_events must be >= 0, got {self.min_events!r}")
        object.__setattr__(self, "prior", tuple(float(a) for a in self.prior))

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass(frozen=True)
class LatentState:
    p_true: np.ndarray
    p_public: np.ndarray
    insider_onset: float


def _draw_p_true(rng, p_public, noise_scale):
    if noise_scale == 0:
        return p_public.copy()
    alpha = np.maximum(p_public / noise_scale**2, 1e-3)
    p = rng.dirichlet(alpha)
    # tiny gamma draws can underflow to exactly 0
    p = np.maximum(p, 1e-12)
    return p / p.sum()


def price_odds(p_public, overround):
    """Decimal odds whose reciprocals sum to ``1 + overround``."""
    odds = 1.0 / ((1.0 + overround) * np.asarray(p_public, dtype=np.float64))
    return np.clip(odds, MIN_ODDS, DEFAULT_MAX_ODDS)


def generate_match(config: GeneratorConfig, rng, match_id="m0"):
    """Draw one match: its record, event stream (oldest first) and latent state."""
    p_public = rng.dirichlet(config.prior)
    p_public = np.maximum(p_public, 1e-12)
    p_public /= p_public.sum()
    p_true = _draw_p_true(rng, p_public, config.noise_scale)
    closing = price_odds(p_public, config.overround)
    final = Outcome(int(rng.choice(3, p=p_true)))
    onset = float(rng.uniform(config.onset_min, config.onset_max))
    league = LEAGUES[int(rng.integers(len(LEAGUES)))]

    n = max(int(rng.poisson(config.base_event_rate * WINDOW_SECONDS)), config.min_events)
    # 1 - U lies in (0, 1], so t lies in (0, WINDOW]
    t = np.sort(WINDOW_SECONDS * (1.0 - rng.random(n)))[::-1]
    interest = 0.5 * p_public + 0.5 / 3.0
    outcome = rng.choice(3, size=n, p=interest)
    kind = rng.choice(3, size=n, p=KIND_PROBS)
    side = rng.integers(0, 2, size=n)

    insider = (kind == Kind.EXECUTED) & (t <= onset) & (rng.random(n) < config.signal_strength)
    insider_u = rng.random(n)
    edge = p_true - p_public
    weight = np.abs(edge)
    if weight.sum() > 0:
        cdf = np.cumsum(weight / weight.sum())
        insider_outcome = np.minimum(np.searchsorted(cdf, insider_u, side="right"), 2)
        outcome = np.where(insider, insider_outcome, outcome)
        insider_side = np.where(edge[outcome] > 0, Side.BACK, Side.LAY)
        side = np.where(insider, insider_side, side)

    jitter = np.exp(config.odds_jitter * rng.standard_normal(n))
    odds = np.maximum(np.round(closing[outcome] * jitter, 2), MIN_ODDS)
    odds = np.minimum(odds, DEFAULT_MAX_ODDS)
    volume = np.round(rng.lognormal(2.5, 1.0, size=n), 2)

    record = MatchRecord(match_id, league, tuple(float(o) for o in closing), final)
    table = EventTable(match_id, t, outcome, side, kind, odds, volume)
    return record, table, LatentState(p_true, p_public, onset)


def match_id_for(index):
    return f"m{index:06d}"


def _generate_range(job):
    config, start, stop = job
    return [generate_match(config, _rng.stream(config.seed, "generate", i), match_id_for(i)) for i in range(start, stop)]


def generate_matches(config: GeneratorConfig, workers=1, start=0, stop=None):
    """Generate matches ``start..stop`` in memory; one independent stream per match.

    Match ``i`` depends only on ``(seed, i)``, so ``workers`` never changes
    the result.
    """
    stop = config.n_matches if stop is None else stop
    jobs = [(config, a + start, b + start) for a, b in chunk_ranges(stop - start, 4 * max(workers, 1))]
    return [m for part in ordered_map(_generate_range, jobs, workers) for m in part]


def generate_dataset(config: GeneratorConfig, out_dir, matches_name="matches.csv", events_name="events.csv", workers=1):
    """Write the match file and event file for ``config`` into ``out_dir``.

    Returns ``(match_path, event_path, summary)``.
    """
    out_dir = os.fspath(out_dir)
    match_path = os.path.join(out_dir, matches_name)
    event_path = os.path.join(out_dir, events_name)
    n_events = 0
    overround = 0.0
    try:
        os.makedirs(out_dir, exist_ok=True)
        with open(match_path, "w", encoding="utf-8", newline="\n") as mf, open(
            event_path, "w", encoding="utf-8", newline="\n"
        ) as ef:
            mf.write("# match_id,league,odds_win,odds_draw,odds_lose,final_outcome\n")
            ef.write("# match_id,t,outcome,side,kind,odds,volume\n")
            for start in range(0, config.n_matches, _BLOCK):
                stop = min(start + _BLOCK, config.n_matches)
                for record, table, _ in generate_matches(config, workers, start, stop):
                    mf.write(format_match(record) + "\n")
                    write_event_table(table, ef)
                    n_events += len(table)
                    overround += sum(1.0 / o for o in record.closing_odds) - 1.0
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write dataset: {exc.strerror}", exc.filename) from exc
    summary = {
        "matches": config.n_matches,
        "events": n_events,
        "mean_overround": overround / config.n_matches,
    }
    return match_path, event_path, summary
