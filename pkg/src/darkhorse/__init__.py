"""Dark-horse detection in three-way match-odds markets.

Synthetic exchange order flow -> 240x60 sequential features -> a small
CNN/GRU/MLP trained with an odds-weighted cross-entropy -> betting gains
against odds-only baselines over repeated random splits.
"""
from darkhorse.evaluation import HorseClass, classify_horse, run_trial, run_trials
from darkhorse.features import FeatureSet, build_feature_set
from darkhorse.market_data import EventTable, MatchRecord, Outcome, TradeEvent
from darkhorse.model import DarkhorseNet, LossConfig, batch_loss
from darkhorse.synth import GeneratorConfig, generate_dataset, generate_matches
from darkhorse.train import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "DarkhorseNet",
    "EventTable",
    "FeatureSet",
    "GeneratorConfig",
    "HorseClass",
    "LossConfig",
    "MatchRecord",
    "Outcome",
    "TradeEvent",
    "TrainConfig",
    "batch_loss",
    "build_feature_set",
    "classify_horse",
    "generate_dataset",
    "generate_matches",
    "run_trial",
    "run_trials",
    "train",
]
