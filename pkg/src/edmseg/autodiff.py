"""Tape-based reverse-mode differentiation over dense float64 matrices.

Only the handful of primitives the segmenter needs are provided. Every
primitive checks its output for NaN/Inf, and backward accumulates gradients
in reverse tape order so repeated runs are bit-identical.

Example
-------
>>> tape = Tape()
>>> w = tape.leaf(np.array(3.0), name="w")
>>> loss = tape.weighted_sum(tape.mask(w, np.array(3.0)), np.array(1.0))
>>> float(tape.backward(loss)["w"])
3.0
"""

from __future__ import annotations

import numpy as np

from .errors import NotScalarLoss, NumericFault, ShapeMismatch

LN_EPS = 1e-5
GELU_C = 0.7978845608
GELU_A = 0.044715


class Tensor:
    """A value recorded on a :class:`Tape`."""

    __slots__ = ("value", "index", "requires_grad", "name")

    def __init__(self, value, index, requires_grad, name=None):
        self.value = value
        self.index = index
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.value.shape})"


# --- primitive forward/backward rules -------------------------------------
# forward(values, attrs) -> (out, ctx); backward(g, values, out, ctx, attrs) -> grads

def _matmul_fwd(vals, attrs):
    a, b = vals
    tb = attrs.get("transpose_b", False)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatch(f"matmul needs matrices, got {a.shape} and {b.shape}")
    inner = b.shape[1] if tb else b.shape[0]
    if a.shape[1] != inner:
        raise ShapeMismatch(f"matmul {a.shape} x {b.shape}{'^T' if tb else ''}")
    return (a @ b.T if tb else a @ b), None


def _matmul_bwd(g, vals, out, ctx, attrs):
    a, b = vals
    if attrs.get("transpose_b", False):
        return [g @ b, g.T @ a]
    return [g @ b.T, a.T @ g]


def _add_fwd(vals, attrs):
    a, b = vals
    if a.shape == b.shape:
        return a + b, False
    if a.ndim == 2 and b.ndim == 1 and b.shape[0] == a.shape[1]:
        return a + b, True
    raise ShapeMismatch(f"add {a.shape} + {b.shape}")


def _add_bwd(g, vals, out, rowbias, attrs):
    return [g, g.sum(axis=0) if rowbias else g]


def _scale_fwd(vals, attrs):
    return vals[0] * attrs["factor"], None


def _scale_bwd(g, vals, out, ctx, attrs):
    return [g * attrs["factor"]]


def _mask_fwd(vals, attrs):
    m = attrs["mask"]
    if np.shape(m) not in ((), vals[0].shape):
        raise ShapeMismatch(f"mask {np.shape(m)} for {vals[0].shape}")
    return vals[0] * m, None


def _mask_bwd(g, vals, out, ctx, attrs):
    return [g * attrs["mask"]]


def _softmax_fwd(vals, attrs):
    x = vals[0]
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True), None


def _softmax_bwd(g, vals, y, ctx, attrs):
    return [y * (g - (g * y).sum(axis=-1, keepdims=True))]


def _log_softmax_fwd(vals, attrs):
    x = vals[0]
    shifted = x - x.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    return shifted - lse, None


def _log_softmax_bwd(g, vals, y, ctx, attrs):
    return [g - np.exp(y) * g.sum(axis=-1, keepdims=True)]


def _layer_norm_fwd(vals, attrs):
    x = vals[0]
    if x.ndim != 2:
        raise ShapeMismatch(f"layer_norm_rows needs a matrix, got {x.shape}")
    mu = x.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(x.var(axis=-1, keepdims=True) + LN_EPS)
    xhat = (x - mu) * inv
    out = xhat
    if len(vals) == 3:
        gamma, beta = vals[1], vals[2]
        if gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
            raise ShapeMismatch("layer_norm_rows scale/offset must be row vectors")
        out = xhat * gamma + beta
    return out, (xhat, inv)


def _layer_norm_bwd(g, vals, out, ctx, attrs):
    xhat, inv = ctx
    grads = []
    if len(vals) == 3:
        gxhat = g * vals[1]
    else:
        gxhat = g
    gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
    grads.append(gx)
    if len(vals) == 3:
        grads.append((g * xhat).sum(axis=0))
        grads.append(g.sum(axis=0))
    return grads


def _gelu_fwd(vals, attrs):
    x = vals[0]
    t = np.tanh(GELU_C * (x + GELU_A * (x * x * x)))
    return 0.5 * x * (1.0 + t), t


def _gelu_bwd(g, vals, out, t, attrs):
    x = vals[0]
    dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
    return [g * (0.5 * (1.0 + t) + 0.5 * x * dt)]


def _softplus_fwd(vals, attrs):
    return np.logaddexp(0.0, vals[0]), None


def _softplus_bwd(g, vals, out, ctx, attrs):
    x = vals[0]
    return [g * np.exp(-np.logaddexp(0.0, -x))]


def _embedding_slice_fwd(vals, attrs):
    table = vals[0]
    start, stop = attrs["start"], attrs["stop"]
    if not (0 <= start <= stop <= table.shape[0]):
        raise ShapeMismatch(f"rows {start}:{stop} of table with {table.shape[0]} rows")
    return table[start:stop].copy(), None


def _embedding_slice_bwd(g, vals, out, ctx, attrs):
    full = np.zeros_like(vals[0])
    full[attrs["start"]:attrs["stop"]] = g
    return [full]


def _slice_cols_fwd(vals, attrs):
    a = vals[0]
    start, stop = attrs["start"], attrs["stop"]
    if a.ndim != 2 or not (0 <= start <= stop <= a.shape[1]):
        raise ShapeMismatch(f"columns {start}:{stop} of {a.shape}")
    return a[:, start:stop].copy(), None


def _slice_cols_bwd(g, vals, out, ctx, attrs):
    full = np.zeros_like(vals[0])
    full[:, attrs["start"]:attrs["stop"]] = g
    return [full]


def _concat_cols_fwd(vals, attrs):
    rows = {v.shape[0] for v in vals}
    if len(rows) != 1 or any(v.ndim != 2 for v in vals):
        raise ShapeMismatch("concat_cols needs matrices with equal row counts")
    return np.concatenate(vals, axis=1), np.cumsum([0] + [v.shape[1] for v in vals])


def _concat_cols_bwd(g, vals, out, offsets, attrs):
    return [g[:, offsets[i]:offsets[i + 1]] for i in range(len(vals))]


def _weighted_sum_fwd(vals, attrs):
    w = attrs["weights"]
    if np.shape(w) not in ((), vals[0].shape):
        raise ShapeMismatch(f"weights {np.shape(w)} for {vals[0].shape}")
    return np.array(float(np.sum(vals[0] * w))), None


def _weighted_sum_bwd(g, vals, out, ctx, attrs):
    return [g * np.broadcast_to(attrs["weights"], vals[0].shape)]


PRIMITIVES = {
    "matmul": (_matmul_fwd, _matmul_bwd),
    "add": (_add_fwd, _add_bwd),
    "scale": (_scale_fwd, _scale_bwd),
    "mask": (_mask_fwd, _mask_bwd),
    "softmax_rows": (_softmax_fwd, _softmax_bwd),
    "log_softmax_rows": (_log_softmax_fwd, _log_softmax_bwd),
    "layer_norm_rows": (_layer_norm_fwd, _layer_norm_bwd),
    "gelu": (_gelu_fwd, _gelu_bwd),
    "softplus": (_softplus_fwd, _softplus_bwd),
    "embedding_slice": (_embedding_slice_fwd, _embedding_slice_bwd),
    "slice_cols": (_slice_cols_fwd, _slice_cols_bwd),
    "concat_cols": (_concat_cols_fwd, _concat_cols_bwd),
    "weighted_sum": (_weighted_sum_fwd, _weighted_sum_bwd),
}


class Tape:
    """Records primitive applications for one forward pass."""

    def __init__(self):
        self.tensors = []
        self.leaves = []
        self.nodes = []  # (out_index, kind, input_indices, ctx, attrs)

    def _new(self, value, requires_grad, name=None):
        t = Tensor(value, len(self.tensors), requires_grad, name)
        self.tensors.append(t)
        return t

    def leaf(self, value, name=None, requires_grad=True):
        value = np.array(value, dtype=np.float64)
        if not np.isfinite(value).all():
            raise NumericFault(f"leaf {name!r} is not finite")
        t = self._new(value, requires_grad, name)
        self.leaves.append(t)
        return t

    def const(self, value, name=None):
        return self.leaf(value, name, requires_grad=False)

    def apply(self, kind, inputs, **attrs):
        """Run primitive ``kind`` on ``inputs`` and record it."""
        try:
            fwd, _ = PRIMITIVES[kind]
        except KeyError:
            raise ValueError(f"unknown primitive {kind!r}") from None
        for t in inputs:
            if t.index >= len(self.tensors) or self.tensors[t.index] is not t:
                raise ValueError("input tensor belongs to another tape")
        out, ctx = fwd([t.value for t in inputs], attrs)
        if not np.isfinite(out).all():
            raise NumericFault(f"{kind} produced a non-finite value")
        needs = any(t.requires_grad for t in inputs)
        t = self._new(out, needs)
        if needs:
            self.nodes.append((t.index, kind, [i.index for i in inputs], ctx, attrs))
        return t

    # thin wrappers, one per primitive
    def matmul(self, a, b, transpose_b=False):
        return self.apply("matmul", [a, b], transpose_b=transpose_b)

    def add(self, a, b):
        return self.apply("add", [a, b])

    def scale(self, a, factor):
        return self.apply("scale", [a], factor=float(factor))

    def mask(self, a, mask):
        return self.apply("mask", [a], mask=mask)

    def softmax_rows(self, a):
        return self.apply("softmax_rows", [a])

    def log_softmax_rows(self, a):
        return self.apply("log_softmax_rows", [a])

    def layer_norm_rows(self, a, gamma=None, beta=None):
        ins = [a] if gamma is None else [a, gamma, beta]
        return self.apply("layer_norm_rows", ins)

    def gelu(self, a):
        return self.apply("gelu", [a])

    def softplus(self, a):
        return self.apply("softplus", [a])

    def embedding_slice(self, table, start, stop):
        return self.apply("embedding_slice", [table], start=start, stop=stop)

    def slice_cols(self, a, start, stop):
        return self.apply("slice_cols", [a], start=start, stop=stop)

    def concat_cols(self, parts):
        return self.apply("concat_cols", list(parts))

    def weighted_sum(self, a, weights):
        return self.apply("weighted_sum", [a], weights=weights)

    def backward(self, loss):
        """Reverse-mode sweep from a scalar ``loss``.

        Returns a dict mapping each named, differentiable leaf to its
        gradient. Leaves that do not influence ``loss`` get zeros.
        """
        if loss.value.size != 1:
            raise NotScalarLoss(f"loss has shape {loss.value.shape}")
        if not self.nodes and not loss.requires_grad:
            raise NotScalarLoss("tape has nothing to differentiate")
        grads = [None] * len(self.tensors)
        grads[loss.index] = np.ones_like(loss.value)
        for out_i, kind, in_idx, ctx, attrs in reversed(self.nodes):
            if out_i > loss.index or grads[out_i] is None:
                continue
            _, bwd = PRIMITIVES[kind]
            g = grads[out_i]
            vals = [self.tensors[i].value for i in in_idx]
            for i, gi in zip(in_idx, bwd(g, vals, self.tensors[out_i].value, ctx, attrs)):
                if not self.tensors[i].requires_grad:
                    continue
                grads[i] = gi if grads[i] is None else grads[i] + gi
        out = {}
        for t in self.leaves:
            if t.name is not None and t.requires_grad:
                g = grads[t.index]
                out[t.name] = np.zeros_like(t.value) if g is None else g.reshape(t.value.shape)
        return out


def grad_check(build, params, h=1e-5, tol=1e-4, analytic=None, floor=1e-6):
    """Compare reverse-mode gradients with central finite differences.

    Parameters
    ----------
    build : callable
        ``build(tape, leaves) -> loss`` where ``leaves`` maps names to Tensors.
    params : dict of str -> ndarray
        Point at which to check; not modified.
    h : float
        Finite-difference step.
    tol : float
        Relative-error threshold used to fill ``failures``.
    analytic : dict, optional
        Gradients to test instead of running backward (harness self-check).
    floor : float
        Lower bound on the denominator, so near-zero gradients are judged
        by absolute error.

    Returns
    -------
    dict
        ``{"errors": {name: max relative error}, "max": float,
        "failures": [names above tol]}``; relative error is
        ``|analytic - numeric| / max(|numeric|, floor)``.
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def loss_at(p):
        tape = Tape()
        leaves = {k: tape.leaf(v, name=k) for k, v in p.items()}
        loss = build(tape, leaves)
        return tape, loss

    if analytic is None:
        tape, loss = loss_at(params)
        analytic = tape.backward(loss)

    errors = {}
    for name, value in params.items():
        numeric = np.zeros_like(value)
        flat = value.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(loss_at(params)[1].value)
            flat[i] = orig - h
            fm = float(loss_at(params)[1].value)
            flat[i] = orig
            nflat[i] = (fp - fm) / (2.0 * h)
        a = np.asarray(analytic[name], dtype=np.float64).reshape(numeric.shape)
        rel = np.abs(a - numeric) / np.maximum(np.abs(numeric), floor)
        errors[name] = float(rel.max()) if rel.size else 0.0
    worst = max(errors.values(), default=0.0)
    return {"errors": errors, "max": worst,
            "failures": sorted(k for k, e in errors.items() if not e <= tol)}
