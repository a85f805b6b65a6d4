"""Dense networks with swish hidden activations and jet evaluation."""

from dataclasses import dataclass, field

import numpy as np

from . import tape
from .jet import Jet
from .tape import sigmoid, value

__all__ = ["MlpParams", "mlp_init", "mlp_eval", "mlp_eval_jet", "swish"]


@dataclass
class MlpParams:
    """Layer list (weights (in, out), biases (out,)); swish hidden, linear output."""

    weights: list
    biases: list

    @property
    def sizes(self):
        return [value(self.weights[0]).shape[0]] + [value(w).shape[1] for w in self.weights]

    def validate(self):
        ws, bs = self.weights, self.biases
        if len(ws) != len(bs):
            raise ValueError("weight/bias count mismatch")
        for i, (w, b) in enumerate(zip(ws, bs)):
            wv, bv = value(w), value(b)
            if wv.ndim != 2 or bv.ndim != 1 or wv.shape[1] != bv.shape[0]:
                raise ValueError(f"layer {i}: bad shapes {wv.shape} / {bv.shape}")
            if i > 0 and value(ws[i - 1]).shape[1] != wv.shape[0]:
                raise ValueError(f"layer {i}: width chain broken")
            if not (np.all(np.isfinite(wv)) and np.all(np.isfinite(bv))):
                raise ValueError(f"layer {i}: non-finite entries")
        return self


def mlp_init(sizes, rng):
    """Fan-in scaled uniform init: W, b ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    ws, bs = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(n_in)
        ws.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
        bs.append(rng.uniform(-bound, bound, size=(n_out,)))
    return MlpParams(ws, bs)


def swish(y):
    return y * sigmoid(y)


def _check_input(params, x):
    xv = value(x)
    n_in = value(params.weights[0]).shape[0]
    if xv.ndim != 2 or xv.shape[1] != n_in:
        raise ValueError(f"input shape {xv.shape} does not match first layer width {n_in}")
    return xv


def mlp_eval(params, x):
    """Forward pass; x is (batch, n_in), result (batch, n_out)."""
    _check_input(params, x)
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = tape.matmul(h, w) + b
        if i < last:
            h = h * sigmoid(h)
    return h


def mlp_eval_jet(params, x, wrt, hess=None, mixed=False):
    """Forward pass carrying first/second partials w.r.t. input columns.

    ``wrt`` lists the input-column indices to differentiate against.
    ``hess`` optionally restricts which wrt slots get second derivatives
    (indices into ``wrt``; default all).  ``mixed=True`` additionally
    propagates cross partials for every wrt pair.  The value stream is
    computed with the exact op sequence of :func:`mlp_eval`.
    """
    xv = _check_input(params, x)
    k = xv.shape[1]
    wrt = tuple(int(c) for c in wrt)
    for c in wrt:
        if not 0 <= c < k:
            raise ValueError(f"wrt index {c} out of range for input width {k}")
    hess_slots = tuple(range(len(wrt))) if hess is None else tuple(int(i) for i in hess)
    mixed_keys = [(i, j) for i in range(len(wrt)) for j in range(len(wrt)) if i < j] if mixed else None

    last = len(params.weights) - 1
    w0, b0 = params.weights[0], params.biases[0]
    h = tape.matmul(x, w0) + b0
    g = [w0[c] for c in wrt]          # d(first linear)/dx_c is the c-th weight row
    hs = [0.0 if i in hess_slots else None for i in range(len(wrt))]
    mx = {key: 0.0 for key in mixed_keys} if mixed else None

    for i in range(len(params.weights)):
        if i > 0:
            w, b = params.weights[i], params.biases[i]
            h = tape.matmul(h, w) + b
            g = [tape.matmul(gc, w) for gc in g]
            hs = [None if hc is None else (tape.matmul(hc, w) if not np.isscalar(hc) else hc) for hc in hs]
            if mx is not None:
                mx = {key: (tape.matmul(m, w) if not np.isscalar(m) else m) for key, m in mx.items()}
        if i < last:
            s = sigmoid(h)
            s1 = s * (1.0 + h * (1.0 - s))                    # swish'
            s2 = s * (1.0 - s) * (2.0 + h * (1.0 - 2.0 * s))  # swish''
            if mx is not None:
                mx = {(a, b_): s2 * g[a] * g[b_] + s1 * m for (a, b_), m in mx.items()}
            hs = [None if hc is None else s2 * gc * gc + s1 * hc for gc, hc in zip(g, hs)]
            g = [s1 * gc for gc in g]
            h = h * s
    return Jet(h, g, hs, mx)
