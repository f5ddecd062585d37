"""
Betting arithmetic on a single match, then on a fair synthetic market
======================================================================

Run with ``python3 demos/01_betting_arithmetic.py``.
"""
import numpy as np

from darkhorse import evaluation as ev
from darkhorse.market_data import Outcome
from darkhorse.model import data_term
from darkhorse.synth import GeneratorConfig, generate_matches

# One match: the home side is a strong favourite, the draw is at 9.8 and
# the away win at 22.  The game ends in a draw.
odds = (1.17, 9.8, 22.0)
probs = (0.4075, 0.5777, 0.0147)  # what a model might predict
print("true outcome class:", ev.classify_horse(odds, Outcome.DRAW))

# $1 on the argmax pays 9.8; splitting the dollar by probability pays less
print("1-bet gain:", ev.gain_1bet(probs, odds, Outcome.DRAW).gain)
print("s-bet gain: %.4f" % ev.gain_sbet(probs, odds, Outcome.DRAW).gain)
# the favourite-backer loses the stake here
print("G_min on this match:", ev.baselines([odds], [1], np.random.default_rng(0))["G_min"])
print("implied probability of the favourite: %.4f" % (1 / odds[0]))

# The training loss weights the log-loss by the true outcome's odds,
# so this single example costs 9.8 * -ln(0.5777).
print("weighted log-loss: %.4f" % data_term([probs], [1], [9.8]))

# With no bookmaker margin every odds-only strategy returns about $1 per
# dollar, while perfect foresight returns the mean winning odds (about 3
# for three outcomes).
matches = generate_matches(GeneratorConfig(n_matches=5000, seed=1, overround=0.0, base_event_rate=0.001))
O = np.array([m[0].closing_odds for m in matches])
y = np.array([int(m[0].final_outcome) for m in matches])
for k, v in ev.baselines(O, y, np.random.default_rng(2)).items():
    print(f"{k:9s} {v:.3f}")
print("share of favourites that win: %.3f" % ev.horse_distribution(O, y)["hot"])

# A 5% margin shaves every odds-only strategy to roughly 1/1.05
matches = generate_matches(GeneratorConfig(n_matches=5000, seed=1, overround=0.05, base_event_rate=0.001))
O = np.array([m[0].closing_odds for m in matches])
y = np.array([int(m[0].final_outcome) for m in matches])
print("mean G_min with 5%% margin: %.3f" % ev.baselines(O, y, np.random.default_rng(2))["G_min"])
