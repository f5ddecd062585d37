"""CNN -> GRU -> MLP classifier and the odds-weighted training loss.

Pipeline for one match (shapes without the batch axis)::

    x_t (240, 60)
    f1 = sigmoid(conv1d(window 1, 9 filters))            (240, 9)
    f2 = maxpool2(sigmoid(local_conv1d(window 5, 3)))    (240, 3) -> (120, 3)
    f3 = maxpool2(relu(conv1d(window 3, 3)))             (120, 3) -> (60, 3)
    f4 = relu(gru(9 units))                              (9,)
    concat(f4, x_s)                                      (9 + |x_s|,)
    relu(dense 18)                                       (18,)
    softmax(dense 3)                                     (3,)

The loss for a batch of B matches is

    (1/B) sum_m Odds[m, y_m] * -log(max(p[m, y_m], 1e-12))
        + l1 * sum|theta| + l2 * sum(theta**2)

so a correct call on a long-odds outcome is worth proportionally more.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from darkhorse import _rng
from darkhorse.market_data import MIN_ODDS, Outcome
from darkhorse.nn import (
    GRU,
    CheckpointError,
    Conv1D,
    Dense,
    LocalConv1D,
    MaxPool1D,
    ReLU,
    ShapeError,
    Sigmoid,
    Softmax,
    WeightedCrossEntropy,
    load_params,
    save_params,
)

LOG_CLAMP = 1e-12
_INPUT_TOL = 1e-9


@dataclass(frozen=True)
class LossConfig:
    l1: float = 1e-3
    l2: float = 1e-3
    # smallest accepted loss weight; 1.0 allows the unweighted cross-entropy case
    min_odds: float = MIN_ODDS

    def __post_init__(self):
        if self.l1 < 0 or self.l2 < 0:
            raise ValueError(f"regularisation weights must be >= 0, got l1={self.l1}, l2={self.l2}")
        if not self.min_odds >= 1.0:
            raise ValueError(f"min_odds must be >= 1, got {self.min_odds}")


@dataclass(frozen=True)
class Prediction:
    probs: np.ndarray
    argmax: Outcome

    @classmethod
    def from_probs(cls, probs):
        probs = np.asarray(probs, dtype=np.float64)
        return cls(probs, Outcome(int(np.argmax(probs))))


def concat_static(f4, x_s=None):
    """Append per-match static features to the recurrent summary."""
    f4 = np.asarray(f4, dtype=np.float64)
    if x_s is None:
        return f4
    x_s = np.asarray(x_s, dtype=np.float64)
    if x_s.shape[-1] == 0:
        return f4
    if f4.ndim == 2 and x_s.ndim == 1:
        x_s = np.broadcast_to(x_s, (len(f4), len(x_s)))
    return np.concatenate([f4, x_s], axis=-1)


class DarkhorseNet:
    """The full network; ``layers`` is the ordered layer stack.

    ``static_dim`` is the width of the optional non-sequential features
    appended to the GRU summary (0 by default).
    """

    def __init__(self, seq_len=240, n_features=60, static_dim=0, seed=0, rng=None):
        self.seq_len, self.n_features, self.static_dim = seq_len, n_features, static_dim
        rng = rng if rng is not None else _rng.stream(seed, "init")
        self.conv1 = Conv1D(n_features, 9, 1, rng)
        self.conv1.input_grad = False
        self.act1 = Sigmoid()
        self.local = LocalConv1D(seq_len, 9, 3, 5, rng)
        self.act2 = Sigmoid()
        self.pool2 = MaxPool1D(2)
        self.conv3 = Conv1D(3, 3, 3, rng)
        self.act3 = ReLU()
        self.pool3 = MaxPool1D(2)
        self.gru = GRU(3, 9, rng)
        self.act4 = ReLU()
        self.hidden = Dense(9 + static_dim, 18, rng)
        self.act5 = ReLU()
        self.out = Dense(18, 3, rng)
        self.softmax = Softmax()
        self.trunk = [
            self.conv1, self.act1, self.local, self.act2, self.pool2,
            self.conv3, self.act3, self.pool3, self.gru, self.act4,
        ]  # fmt: skip
        self.head = [self.hidden, self.act5, self.out, self.softmax]
        self.layers = self.trunk + self.head
        self.activations = {}

    # ------------------------------------------------------------ parameters

    def named_params(self):
        """``[(layer_index, name, Param)]`` in a fixed order."""
        out = []
        for i, layer in enumerate(self.layers):
            for name, p in layer.params().items():
                out.append((i, name, p))
        return out

    def params(self):
        return [p for _, _, p in self.named_params()]

    @property
    def n_params(self):
        return sum(p.value.size for p in self.params())

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def get_weights(self):
        return [p.value.copy() for p in self.params()]

    def set_weights(self, weights):
        for p, w in zip(self.params(), weights, strict=True):
            if p.value.shape != w.shape:
                raise ShapeError(f"weight shape {w.shape} does not match parameter {p.value.shape}")
            p.value[...] = w

    # --------------------------------------------------------------- forward

    def _check_input(self, X, x_s, check_range):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            X = X[None]
        expected = (self.seq_len, self.n_features)
        if X.ndim != 3 or X.shape[1:] != expected:
            raise ShapeError(f"expected input of shape (N, {expected[0]}, {expected[1]}), got {X.shape}")
        if not np.all(np.isfinite(X)):
            raise ValueError("input contains NaN or Inf")
        if check_range and X.size and (X.min() < -_INPUT_TOL or X.max() > 1 + _INPUT_TOL):
            raise ValueError(f"input is not normalised to [0, 1] (range {X.min():.4g}..{X.max():.4g})")
        width = 0 if x_s is None else np.shape(x_s)[-1]
        if width != self.static_dim:
            raise ShapeError(f"net built for {self.static_dim} static features, got {width}")
        return X

    def features(self, X, keep=False):
        """Trunk output ``f4`` for a batch, shape ``(N, 9)``."""
        h = X
        names = ("conv1", "f1", "local", "f2_pre", "f2", "conv3", "f3_pre", "f3", "gru", "f4")
        for name, layer in zip(names, self.trunk):
            h = layer.forward(h)
            if keep:
                self.activations[name] = h
        return h

    def forward_batch(self, X, x_s=None, check_range=True, keep=False):
        """Class probabilities ``(N, 3)``; caches everything for :meth:`backward`."""
        X = self._check_input(X, x_s, check_range)
        f4 = self.features(X, keep=keep)
        h = concat_static(f4, x_s)
        if keep:
            self.activations["concat"] = h
        for name, layer in zip(("hidden_pre", "hidden", "logits", "probs"), self.head):
            h = layer.forward(h)
            if keep:
                self.activations[name] = h
        return h

    def forward(self, seq, x_s=None) -> Prediction:
        frames = getattr(seq, "frames", seq)
        probs = self.forward_batch(frames, None if x_s is None else np.asarray(x_s)[None])[0]
        return Prediction.from_probs(probs)

    def predict_proba(self, X, x_s=None, chunk=256):
        X = np.asarray(X, dtype=np.float64)
        out = [
            self.forward_batch(X[i : i + chunk], None if x_s is None else x_s[i : i + chunk])
            for i in range(0, len(X), chunk)
        ]
        return np.concatenate(out) if out else np.zeros((0, 3))

    def dump_f4(self, X, chunk=256):
        """Post-relu recurrent summary, ``(9,)`` for one match or ``(N, 9)`` for a batch."""
        frames = getattr(X, "frames", X)
        frames = np.asarray(frames, dtype=np.float64)
        single = frames.ndim == 2
        frames = self._check_input(frames, None if self.static_dim == 0 else np.zeros((1, self.static_dim)), True)
        out = np.concatenate([self.features(frames[i : i + chunk]) for i in range(0, len(frames), chunk)])
        return out[0] if single else out

    def backward(self, dprobs):
        d = dprobs
        for layer in reversed(self.head):
            d = layer.backward(d)
        d = d[:, :9]
        for layer in reversed(self.trunk):
            d = layer.backward(d)
        return d

    def calibrate(self, X, x_s=None, out_scale=0.1):
        """Data-dependent initialisation from a sample of normalised inputs.

        Walks the stack once; every affine layer is rescaled so that its
        pre-activations have zero mean and unit spread over the sample (the
        local convolution per position, the GRU per gate), and the output
        layer is shrunk to ``out_scale`` so the first predictions stay close
        to uniform.  Without this the sigmoid outputs sit near 0.5 with
        per-match variation around 1e-3, each ReLU downstream is either
        always on or always off, and training stalls on the constant
        prediction.
        """
        X = self._check_input(X, x_s, True)

        def fix(layer, pre, axes, out_shape):
            mean = pre.mean(axis=axes)
            std = pre.std(axis=axes)
            std = np.where(std > 1e-8, std, 1.0)
            layer.W.value /= std.reshape(out_shape)
            layer.b.value[...] = (layer.b.value - mean) / std

        h = X
        for layer in self.trunk:
            if isinstance(layer, LocalConv1D):
                fix(layer, layer.forward(h), 0, (layer.length, 1, 1, layer.filters))
            elif isinstance(layer, Conv1D):
                fix(layer, layer.forward(h), (0, 1), (1, 1, layer.filters))
            elif isinstance(layer, GRU):
                # centre and scale the input drive of each gate unit
                xw = h @ layer.W.value
                mean = xw.mean(axis=(0, 1))
                std = xw.std(axis=(0, 1))
                std = np.where(std > 1e-8, std, 1.0)
                layer.W.value /= std
                layer.b.value[...] = -mean / std
            h = layer.forward(h)
        h = concat_static(h, x_s)
        fix(self.hidden, self.hidden.forward(h), 0, (1, self.hidden.units))
        h = self.act5.forward(self.hidden.forward(h))
        logits = self.out.forward(h)
        std = logits.std(axis=0)
        std = np.where(std > 1e-8, std, 1.0)
        self.out.W.value *= out_scale / std
        self.out.b.value[...] = 0.0
        return self

    # ------------------------------------------------------------ persistence

    def save(self, path):
        save_params(((i, name, p.value) for i, name, p in self.named_params()), path)

    def load(self, path):
        entries = load_params(path)
        mine = self.named_params()
        if len(entries) != len(mine):
            raise CheckpointError(f"{path}: {len(entries)} parameters, net has {len(mine)}")
        for (i, name, value), (j, my_name, p) in zip(entries, mine):
            if (i, name) != (j, my_name) or value.shape != p.value.shape:
                raise CheckpointError(
                    f"{path}: parameter {i}/{name}{value.shape} does not match {j}/{my_name}{p.value.shape}"
                )
        for (_, _, value), (_, _, p) in zip(entries, mine):
            p.value[...] = value
        return self

    @classmethod
    def from_checkpoint(cls, path):
        entries = load_params(path)
        shapes = {(i, name): value.shape for i, name, value in entries}
        try:
            seq_len, _, _, _ = shapes[(2, "W")]
            _, n_features, _ = shapes[(0, "W")]
            hidden_in, _ = shapes[(10, "W")]
        except (KeyError, ValueError):
            raise CheckpointError(f"{path}: not a DarkhorseNet checkpoint") from None
        return cls(seq_len, n_features, hidden_in - 9).load(path)

    def model_card(self, extra=None):
        lines = [
            "DarkhorseNet",
            f"input: ({self.seq_len}, {self.n_features})",
            f"static features: {self.static_dim}",
            f"parameters: {self.n_params}",
            "pipeline:",
        ]
        for i, layer in enumerate(self.layers):
            shapes = ", ".join(f"{n}{p.value.shape}" for n, p in layer.params().items())
            lines.append(f"  [{i}] {layer!r}" + (f"  {shapes}" if shapes else ""))
        for key, value in (extra or {}).items():
            lines.append(f"{key}: {value}")
        return "\n".join(lines) + "\n"

    def shape_trace(self, X):
        """Intermediate shapes (without batch axis) of a forward pass on ``X``."""
        self.forward_batch(X, keep=True, check_range=False)
        return {k: v.shape[1:] for k, v in self.activations.items()}


# ------------------------------------------------------------------- losses


def _check_odds(odds_true, min_odds=MIN_ODDS):
    odds_true = np.asarray(odds_true, dtype=np.float64)
    if odds_true.size and (not np.all(np.isfinite(odds_true)) or odds_true.min() < min_odds):
        raise ValueError(f"odds below {min_odds} in loss weights")
    return odds_true


def data_term(probs, labels, odds_true, min_odds=MIN_ODDS):
    """Odds-weighted cross-entropy averaged over the batch."""
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    return WeightedCrossEntropy(labels, _check_odds(odds_true, min_odds), LOG_CLAMP).forward(probs)


def regularisation(params, cfg: LossConfig):
    l1 = sum(np.abs(p.value).sum() for p in params)
    l2 = sum(np.square(p.value).sum() for p in params)
    return cfg.l1 * l1 + cfg.l2 * l2


def batch_loss(net: DarkhorseNet, X, labels, odds_true, cfg: LossConfig, x_s=None, grad=True):
    """Loss of one mini-batch; with ``grad`` the parameter gradients are refilled."""
    labels = np.asarray(labels, dtype=np.int64)
    odds_true = _check_odds(odds_true, cfg.min_odds)
    if len(labels) < 1:
        raise ValueError("empty batch")
    probs = net.forward_batch(X, x_s)
    ce = WeightedCrossEntropy(labels, odds_true, LOG_CLAMP)
    loss = ce.forward(probs)
    params = net.params()
    loss += regularisation(params, cfg)
    if grad:
        net.zero_grad()
        net.backward(ce.backward())
        for p in params:
            if cfg.l1:
                p.grad += cfg.l1 * np.sign(p.value)
            if cfg.l2:
                p.grad += 2.0 * cfg.l2 * p.value
    return float(loss)


def evaluate_loss(net: DarkhorseNet, X, labels, odds_true, cfg: LossConfig, chunk=256):
    """Full-set loss, same form as the training objective (regularisation included)."""
    labels = np.asarray(labels, dtype=np.int64)
    odds_true = _check_odds(odds_true, cfg.min_odds)
    probs = net.predict_proba(X, chunk=chunk)
    return data_term(probs, labels, odds_true, cfg.min_odds) + regularisation(net.params(), cfg)
