"""Central finite-difference checks for the hand-written backward passes."""
from __future__ import annotations

import numpy as np

from darkhorse.nn.layers import Layer


def relative_error(analytic, numeric):
    """``|a - n| / max(|a|, |n|)`` in the Euclidean norm over a whole tensor.

    Norm-wise rather than entry-wise, so entries whose true gradient is ~0 do
    not turn round-off in the finite difference into a large ratio.
    """
    analytic = np.ravel(analytic)
    numeric = np.ravel(numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def numeric_grad(f, array, eps=1e-5, index=None):
    """Central differences of scalar ``f()`` w.r.t. entries of ``array`` (perturbed in place).

    ``index`` restricts the check to a subset of flat positions; the result
    then has one entry per position.
    """
    flat = array.reshape(-1)
    positions = range(flat.size) if index is None else index
    out = np.empty(len(positions))
    for j, i in enumerate(positions):
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        out[j] = (fp - fm) / (2.0 * eps)
    return out


def _sample(size, max_entries, rng):
    if max_entries is None or size <= max_entries:
        return None
    return np.sort(rng.choice(size, size=max_entries, replace=False))


def grad_check(layers, x, loss=None, eps=1e-5, rng=None, max_entries=None):
    """Worst relative error between analytic and numeric gradients.

    ``layers`` is a layer or a list applied in sequence.  Without ``loss``
    the scalar is a random projection ``sum(out * R)``; otherwise ``loss``
    must offer ``forward(out) -> float`` and ``backward() -> dout``.  Both the
    input gradient and every parameter gradient are checked.
    """
    if isinstance(layers, Layer):
        layers = [layers]
    rng = rng if rng is not None else np.random.default_rng(0)
    x = np.array(x, dtype=np.float64)

    def run(inp):
        for layer in layers:
            inp = layer.forward(inp)
        return inp

    out = run(x)
    if loss is None:
        proj = rng.standard_normal(out.shape)

        def scalar():
            return float(np.sum(run(x) * proj))

        dout = proj
    else:

        def scalar():
            return loss.forward(run(x))

        loss.forward(out)
        dout = loss.backward()

    for layer in layers:
        layer.zero_grad()
    run(x)
    d = dout
    for layer in reversed(layers):
        d = layer.backward(d)
    checks = [(d, x)]
    for layer in layers:
        for p in layer.params().values():
            checks.append((p.grad.copy(), p.value))

    worst = 0.0
    for analytic, array in checks:
        idx = _sample(array.size, max_entries, rng)
        numeric = numeric_grad(scalar, array, eps, idx)
        a = analytic.reshape(-1) if idx is None else analytic.reshape(-1)[idx]
        worst = max(worst, relative_error(a, numeric))
    return worst
