"""Mini-batch Adam with validation early stopping."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from darkhorse import _rng
from darkhorse.model import LossConfig, batch_loss, evaluate_loss

log = logging.getLogger(__name__)


INIT_MODES = ("glorot", "calibrated")


class NumericalError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 1e-4
    decay: float = 1e-5
    patience: int = 8
    max_epochs: int = 500
    l1: float = 1e-3
    l2: float = 1e-3
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    # "glorot" keeps the constructor's weights; "calibrated" rescales them on
    # the first ``calibration_size`` training matches (see DarkhorseNet.calibrate)
    init: str = "glorot"
    calibration_size: int = 512

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.decay < 0:
            raise ValueError(f"decay must be >= 0, got {self.decay}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.l1 < 0 or self.l2 < 0:
            raise ValueError(f"l1 and l2 must be >= 0, got l1={self.l1}, l2={self.l2}")
        if self.init not in INIT_MODES:
            raise ValueError(f"init must be one of {INIT_MODES}, got {self.init!r}")
        if self.calibration_size < 1:
            raise ValueError(f"calibration_size must be >= 1, got {self.calibration_size}")

    @property
    def loss(self):
        return LossConfig(self.l1, self.l2)


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def create(cls, params):
        return cls([np.zeros_like(p.value) for p in params], [np.zeros_like(p.value) for p in params])


def current_lr(config, t):
    """Inverse-time decay: ``lr / (1 + decay * t)`` with ``t`` updates already taken."""
    return config.learning_rate / (1.0 + config.decay * t)


def adam_step(params, state: AdamState, config):
    """One bias-corrected Adam update from the gradients stored on ``params``."""
    lr = current_lr(config, state.t)
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.value -= lr * (m / c1) / (np.sqrt(v / c2) + config.epsilon)
    return lr


class EarlyStopping:
    """Stop once the monitored loss has not strictly improved for ``patience`` epochs."""

    def __init__(self, patience):
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.wait = 0

    def update(self, loss, epoch):
        """Record ``loss`` for ``epoch`` (1-based); True when training should stop."""
        if loss < self.best:
            self.best = loss
            self.best_epoch = epoch
            self.wait = 0
            return False
        self.wait += 1
        return self.wait >= self.patience

    @property
    def improved(self):
        return self.wait == 0


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)
    best_epoch: int = 0
    convergence_epoch: int = 0

    @property
    def best_val_loss(self):
        return self.val_loss[self.best_epoch - 1]

    def to_csv(self):
        rows = ["epoch,train_loss,val_loss,lr"]
        for i, (tr, va, lr) in enumerate(zip(self.train_loss, self.val_loss, self.lr), start=1):
            rows.append(f"{i},{tr!r},{va!r},{lr!r}")
        return "\n".join(rows) + "\n"


def _val_loss(net, val_set, cfg):
    return evaluate_loss(net, val_set.X, val_set.labels, val_set.true_odds, cfg)


def train(net, train_set, val_set, config: TrainConfig, log_path=None, checkpoint_path=None, val_loss_fn=None):
    """Fit ``net`` in place and return its :class:`TrainHistory`.

    ``train_set`` and ``val_set`` are normalised ``FeatureSet`` objects.  On
    return the net holds the weights of the epoch with the lowest validation
    loss.  ``val_loss_fn(net, val_set, loss_cfg)`` replaces the validation
    evaluation (used for scripted-loss tests).
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("train and validation sets must be non-empty")
    val_loss_fn = val_loss_fn or _val_loss
    if config.init == "calibrated":
        net.calibrate(train_set.X[: config.calibration_size])
    cfg = config.loss
    params = net.params()
    state = AdamState.create(params)
    stopper = EarlyStopping(config.patience)
    history = TrainHistory()
    best_weights = net.get_weights()
    true_odds = train_set.true_odds
    n = len(train_set)

    for epoch in range(1, config.max_epochs + 1):
        start = time.perf_counter()
        order = _rng.stream(config.seed, "shuffle", epoch).permutation(n)
        total = 0.0
        lr = current_lr(config, state.t)
        for i in range(0, n, config.batch_size):
            idx = order[i : i + config.batch_size]
            loss = batch_loss(net, train_set.X[idx], train_set.labels[idx], true_odds[idx], cfg)
            if not math.isfinite(loss):
                raise NumericalError(f"non-finite training loss at epoch {epoch}")
            total += loss * len(idx)
            adam_step(params, state, config)
        val = float(val_loss_fn(net, val_set, cfg))
        if not math.isfinite(val):
            raise NumericalError(f"non-finite validation loss at epoch {epoch}")
        history.train_loss.append(total / n)
        history.val_loss.append(val)
        history.lr.append(lr)
        history.epoch_seconds.append(time.perf_counter() - start)
        stop = stopper.update(val, epoch)
        if stopper.improved:
            best_weights = net.get_weights()
        log.debug("epoch %d train %.5f val %.5f", epoch, history.train_loss[-1], val)
        if stop:
            break

    history.convergence_epoch = len(history.val_loss)
    history.best_epoch = stopper.best_epoch
    net.set_weights(best_weights)
    if log_path is not None:
        with open(log_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(history.to_csv())
    if checkpoint_path is not None:
        net.save(checkpoint_path)
    return history
