"""Layers with hand-written backward passes.

Arrays carry a leading batch axis: sequence layers take ``(N, L, C)``,
dense layers ``(N, n)``.  ``forward`` caches what ``backward`` needs;
``backward`` accumulates into each ``Param.grad`` and returns the gradient
with respect to the layer input.
"""
from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


class Param:
    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = np.ascontiguousarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad[...] = 0.0

    @property
    def shape(self):
        return self.value.shape


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _expect(name, actual, expected):
    if tuple(actual) != tuple(expected):
        raise ShapeError(f"{name}: expected input shape {tuple(expected)}, got {tuple(actual)}")


class Layer:
    kind = "layer"
    # first layer of a network can skip computing the gradient w.r.t. its input
    input_grad = True

    def params(self) -> dict[str, Param]:
        return {}

    def zero_grad(self):
        for p in self.params().values():
            p.zero_grad()

    def output_shape(self, input_shape):
        return tuple(input_shape)

    def __repr__(self):
        return f"{type(self).__name__}()"


def _shifted(xpad, window, length):
    # (N, L + w - 1, C) -> (N, L, w, C) without copying
    n, _, c = xpad.shape
    s0, s1, s2 = xpad.strides
    return np.lib.stride_tricks.as_strided(xpad, shape=(n, length, window, c), strides=(s0, s1, s1, s2), writeable=False)


def _unshift(dcols, window, length):
    # adjoint of _shifted followed by cropping the zero padding
    n, _, _, c = dcols.shape
    pad = window // 2
    dxpad = np.zeros((n, length + window - 1, c))
    for d in range(window):
        dxpad[:, d : d + length, :] += dcols[:, :, d, :]
    return dxpad[:, pad : pad + length, :]


class Conv1D(Layer):
    """Shared-weight 1-D convolution (cross-correlation), ``same`` zero padding."""

    kind = "conv1d"

    def __init__(self, in_channels, filters, window, rng=None):
        if window % 2 != 1:
            raise ShapeError(f"conv1d window must be odd, got {window}")
        self.in_channels, self.filters, self.window = in_channels, filters, window
        rng = rng if rng is not None else np.random.default_rng(0)
        self.W = Param(glorot_uniform(rng, (window, in_channels, filters), window * in_channels, window * filters))
        self.b = Param(np.zeros(filters))

    def params(self):
        return {"W": self.W, "b": self.b}

    def output_shape(self, input_shape):
        n, length, c = input_shape
        if c != self.in_channels:
            raise ShapeError(f"conv1d: expected {self.in_channels} input channels, got {c}")
        return (n, length, self.filters)

    def forward(self, x):
        self.output_shape(x.shape)
        length = x.shape[1]
        if self.window == 1:
            self._cache = x
            return x @ self.W.value[0] + self.b.value
        pad = self.window // 2
        xpad = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
        cols = _shifted(xpad, self.window, length)
        self._cache = cols
        w = self.W.value.reshape(-1, self.filters)
        return cols.reshape(x.shape[0], length, -1) @ w + self.b.value

    def backward(self, dout):
        if self.window == 1:
            x = self._cache
            n, length, c = x.shape
            d2 = dout.reshape(n * length, self.filters)
            self.W.grad[0] += x.reshape(n * length, c).T @ d2
            self.b.grad += d2.sum(axis=0)
            return dout @ self.W.value[0].T if self.input_grad else None
        cols = self._cache
        n, length, window, c = cols.shape
        flat = cols.reshape(n * length, window * c)
        d2 = dout.reshape(n * length, self.filters)
        self.W.grad += (flat.T @ d2).reshape(self.W.shape)
        self.b.grad += d2.sum(axis=0)
        if not self.input_grad:
            return None
        dcols = (d2 @ self.W.value.reshape(-1, self.filters).T).reshape(n, length, window, c)
        return _unshift(dcols, window, length)

    def __repr__(self):
        return f"Conv1D(window={self.window}, filters={self.filters})"


class LocalConv1D(Layer):
    """1-D convolution with an independent kernel at every output position."""

    kind = "local_conv1d"

    def __init__(self, length, in_channels, filters, window, rng=None):
        if window % 2 != 1:
            raise ShapeError(f"local_conv1d window must be odd, got {window}")
        self.length, self.in_channels, self.filters, self.window = length, in_channels, filters, window
        rng = rng if rng is not None else np.random.default_rng(0)
        shape = (length, window, in_channels, filters)
        self.W = Param(glorot_uniform(rng, shape, window * in_channels, window * filters))
        self.b = Param(np.zeros((length, filters)))

    def params(self):
        return {"W": self.W, "b": self.b}

    def output_shape(self, input_shape):
        n, length, c = input_shape
        _expect("local_conv1d", (length, c), (self.length, self.in_channels))
        return (n, length, self.filters)

    def forward(self, x):
        self.output_shape(x.shape)
        n, length, c = x.shape
        pad = self.window // 2
        xpad = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
        # (L, N, w*C) @ (L, w*C, k) -> (L, N, k)
        cols = _shifted(xpad, self.window, length).reshape(n, length, -1).transpose(1, 0, 2).copy()
        self._cache = cols
        w = self.W.value.reshape(length, -1, self.filters)
        return (cols @ w).transpose(1, 0, 2) + self.b.value

    def backward(self, dout):
        cols = self._cache
        length, n, _ = cols.shape
        d = dout.transpose(1, 0, 2)
        w = self.W.value.reshape(length, -1, self.filters)
        self.W.grad += (cols.transpose(0, 2, 1) @ d).reshape(self.W.shape)
        self.b.grad += dout.sum(axis=0)
        dcols = (d @ w.transpose(0, 2, 1)).transpose(1, 0, 2).reshape(n, length, self.window, self.in_channels)
        return _unshift(dcols, self.window, length)

    def __repr__(self):
        return f"LocalConv1D(length={self.length}, window={self.window}, filters={self.filters})"


class MaxPool1D(Layer):
    """Non-overlapping max pooling along time; odd lengths repeat the last step.

    Ties route the gradient to the first maximum.
    """

    kind = "maxpool1d"

    def __init__(self, pool=2):
        self.pool = pool

    def output_shape(self, input_shape):
        n, length, c = input_shape
        return (n, -(-length // self.pool), c)

    def forward(self, x):
        n, length, c = x.shape
        out_len = -(-length // self.pool)
        padded = out_len * self.pool
        if padded != length:
            x = np.concatenate([x, np.repeat(x[:, -1:, :], padded - length, axis=1)], axis=1)
        grouped = x.reshape(n, out_len, self.pool, c)
        idx = grouped.argmax(axis=2)
        self._cache = (idx, length, out_len)
        return np.take_along_axis(grouped, idx[:, :, None, :], axis=2)[:, :, 0, :]

    def backward(self, dout):
        idx, length, out_len = self._cache
        n, _, c = dout.shape
        dgrouped = np.zeros((n, out_len, self.pool, c))
        np.put_along_axis(dgrouped, idx[:, :, None, :], dout[:, :, None, :], axis=2)
        dx = dgrouped.reshape(n, out_len * self.pool, c)
        if out_len * self.pool != length:
            # replicated tail steps feed back into the last real step
            tail = dx[:, length:, :].sum(axis=1)
            dx = dx[:, :length, :].copy()
            dx[:, -1, :] += tail
        return dx

    def __repr__(self):
        return f"MaxPool1D(pool={self.pool})"


def _sigmoid(a):
    # tanh form: overflow-free for any finite input
    return 0.5 * (1.0 + np.tanh(0.5 * a))


class GRU(Layer):
    """Single-layer GRU returning the final hidden state, zero initial state.

    Gate layout in ``W`` (C x 3u), ``U`` (u x 3u) and ``b`` (3u): update ``z``,
    reset ``r``, candidate ``h~``::

        z  = sigmoid(x Wz + h Uz + bz)
        r  = sigmoid(x Wr + h Ur + br)
        h~ = tanh(x Wh + (r * h) Uh + bh)
        h' = z * h + (1 - z) * h~
    """

    kind = "gru"

    def __init__(self, in_channels, units, rng=None):
        self.in_channels, self.units = in_channels, units
        rng = rng if rng is not None else np.random.default_rng(0)
        u = units
        self.W = Param(np.concatenate([glorot_uniform(rng, (in_channels, u), in_channels, u) for _ in range(3)], axis=1))
        self.U = Param(np.concatenate([glorot_uniform(rng, (u, u), u, u) for _ in range(3)], axis=1))
        self.b = Param(np.zeros(3 * u))

    def params(self):
        return {"W": self.W, "U": self.U, "b": self.b}

    def output_shape(self, input_shape):
        n, _, c = input_shape
        if c != self.in_channels:
            raise ShapeError(f"gru: expected {self.in_channels} input channels, got {c}")
        return (n, self.units)

    def forward(self, x):
        self.output_shape(x.shape)
        n, length, _ = x.shape
        u = self.units
        U = self.U.value
        xw = x @ self.W.value + self.b.value  # (N, L, 3u)
        h = np.zeros((n, u))
        hs, zs, rs, hhs = [h], [], [], []
        for t in range(length):
            a = xw[:, t, :]
            zr = _sigmoid(a[:, : 2 * u] + h @ U[:, : 2 * u])
            z, r = zr[:, :u], zr[:, u:]
            hh = np.tanh(a[:, 2 * u :] + (r * h) @ U[:, 2 * u :])
            h = z * h + (1.0 - z) * hh
            hs.append(h)
            zs.append(z)
            rs.append(r)
            hhs.append(hh)
        self._cache = (x, hs, zs, rs, hhs)
        return h

    def backward(self, dout):
        x, hs, zs, rs, hhs = self._cache
        n, length, _ = x.shape
        u = self.units
        U = self.U.value
        dxw = np.empty((n, length, 3 * u))
        dU = np.zeros_like(U)
        dh = dout.copy()
        for t in reversed(range(length)):
            h_prev, z, r, hh = hs[t], zs[t], rs[t], hhs[t]
            dz = dh * (h_prev - hh)
            dhh = dh * (1.0 - z)
            dh_next = dh * z
            da_h = dhh * (1.0 - hh * hh)
            rh = r * h_prev
            dU[:, 2 * u :] += rh.T @ da_h
            drh = da_h @ U[:, 2 * u :].T
            dr = drh * h_prev
            dh_next += drh * r
            da_zr = np.concatenate([dz * z * (1.0 - z), dr * r * (1.0 - r)], axis=1)
            dU[:, : 2 * u] += h_prev.T @ da_zr
            dh_next += da_zr @ U[:, : 2 * u].T
            dxw[:, t, : 2 * u] = da_zr
            dxw[:, t, 2 * u :] = da_h
            dh = dh_next
        self.U.grad += dU
        flat = dxw.reshape(n * length, 3 * u)
        self.W.grad += x.reshape(n * length, -1).T @ flat
        self.b.grad += flat.sum(axis=0)
        return dxw @ self.W.value.T

    def __repr__(self):
        return f"GRU(units={self.units})"


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features, units, rng=None):
        self.in_features, self.units = in_features, units
        rng = rng if rng is not None else np.random.default_rng(0)
        self.W = Param(glorot_uniform(rng, (in_features, units), in_features, units))
        self.b = Param(np.zeros(units))

    def params(self):
        return {"W": self.W, "b": self.b}

    def output_shape(self, input_shape):
        n, f = input_shape
        if f != self.in_features:
            raise ShapeError(f"dense: expected {self.in_features} input features, got {f}")
        return (n, self.units)

    def forward(self, x):
        self.output_shape(x.shape)
        self._cache = x
        return x @ self.W.value + self.b.value

    def backward(self, dout):
        x = self._cache
        self.W.grad += x.T @ dout
        self.b.grad += dout.sum(axis=0)
        return dout @ self.W.value.T

    def __repr__(self):
        return f"Dense(units={self.units})"


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x):
        self._out = _sigmoid(x)
        return self._out

    def backward(self, dout):
        s = self._out
        return dout * s * (1.0 - s)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dout):
        return np.where(self._mask, dout, 0.0)


class Softmax(Layer):
    """Softmax over the last axis."""

    kind = "softmax"

    def forward(self, x):
        e = np.exp(x - x.max(axis=-1, keepdims=True))
        self._out = e / e.sum(axis=-1, keepdims=True)
        return self._out

    def backward(self, dout):
        s = self._out
        return s * (dout - (dout * s).sum(axis=-1, keepdims=True))


class WeightedCrossEntropy:
    """Mean of ``weight * -log(max(p[label], clamp))`` over the batch.

    With unit weights this is ordinary categorical cross-entropy.
    """

    def __init__(self, labels, weights=None, clamp=1e-12):
        self.labels = np.asarray(labels, dtype=np.int64)
        self.weights = np.ones(len(self.labels)) if weights is None else np.asarray(weights, dtype=np.float64)
        self.clamp = clamp

    def forward(self, probs):
        n = len(self.labels)
        self._probs = probs
        picked = probs[np.arange(n), self.labels]
        self._picked = picked
        return float(np.mean(self.weights * -np.log(np.maximum(picked, self.clamp))))

    def backward(self):
        n = len(self.labels)
        probs, picked = self._probs, self._picked
        grad = np.zeros_like(probs)
        live = picked > self.clamp
        grad[np.arange(n)[live], self.labels[live]] = -self.weights[live] / (picked[live] * n)
        return grad
