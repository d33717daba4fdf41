"""Transformer segmenter: fused embeddings in, per-frame boundary and label logits out.

Pipeline: linear projection -> sinusoidal positions -> pre-norm encoder
blocks (multi-head self-attention, GELU feed-forward) -> final layer norm ->
a boundary head (1 logit per frame) and a label head (one logit per class).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .annotation import N_LABELS
from .autodiff import Tape
from .errors import BadConfig, ShapeMismatch, TooLong


@dataclass(frozen=True)
class ModelConfig:
    d_in: int
    d_model: int = 32
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int | None = None
    n_labels: int = N_LABELS
    max_frames: int = 2048
    dropout_rate: float = 0.1
    use_positional: bool = True
    frame_rate: float = 2.0  # input frame grid the model is trained on

    def __post_init__(self):
        if self.d_ff is None:
            object.__setattr__(self, "d_ff", 4 * self.d_model)
        self.validate()

    def validate(self):
        if min(self.d_in, self.d_model, self.n_heads, self.d_ff, self.max_frames) < 1 or self.n_layers < 0:
            raise BadConfig("sizes must be positive")
        if self.d_model % self.n_heads:
            raise BadConfig(f"n_heads={self.n_heads} does not divide d_model={self.d_model}")
        if self.n_labels != N_LABELS:
            raise BadConfig(f"n_labels must equal the taxonomy size {N_LABELS}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise BadConfig("dropout_rate must be in [0, 1)")
        if not self.frame_rate > 0:
            raise BadConfig("frame_rate must be positive")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def param_shapes(config):
    """Ordered ``name -> shape`` map; this order is the canonical parameter order."""
    d, f = config.d_model, config.d_ff
    shapes = {"proj.w": (config.d_in, d), "proj.b": (d,)}
    for i in range(config.n_layers):
        p = f"layer{i}."
        shapes.update({
            p + "ln1.g": (d,), p + "ln1.b": (d,),
            p + "attn.q": (d, d), p + "attn.k": (d, d), p + "attn.v": (d, d), p + "attn.o": (d, d),
            p + "ln2.g": (d,), p + "ln2.b": (d,),
            p + "ff.w1": (d, f), p + "ff.b1": (f,), p + "ff.w2": (f, d), p + "ff.b2": (d,),
        })
    shapes.update({
        "final_ln.g": (d,), "final_ln.b": (d,),
        "head_boundary.w": (d, 1), "head_boundary.b": (1,),
        "head_label.w": (d, config.n_labels), "head_label.b": (config.n_labels,),
    })
    return shapes


def init_params(config, seed=0):
    """Xavier-uniform weights, zero biases, unit layer-norm scales."""
    config.validate()
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".g"):
            params[name] = np.ones(shape)
        elif len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            bound = math.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


@lru_cache(maxsize=8)
def sinusoidal_table(n, d):
    pos = np.arange(n)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    table.setflags(write=False)
    return table


@dataclass
class ForwardOutput:
    boundary_logits: np.ndarray
    label_logits: np.ndarray
    attention: list  # per layer, per head: n x n weights


def build_forward(tape, config, leaves, x, training=False, rng=None):
    """Record the forward pass on ``tape``.

    ``leaves`` maps parameter names to tape tensors, ``x`` is an ``n x d_in``
    array. Returns ``(boundary_logits, label_logits, attention)`` where the
    first two are tensors (``n x 1`` and ``n x n_labels``) and ``attention``
    holds the attention-weight tensors per layer and head.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != config.d_in:
        raise ShapeMismatch(f"input is {x.shape}, model expects n x {config.d_in}")
    n = x.shape[0]
    if n > config.max_frames:
        raise TooLong(f"{n} frames exceed max_frames={config.max_frames}")
    p_drop = config.dropout_rate if training else 0.0
    if p_drop > 0 and rng is None:
        raise ValueError("training with dropout needs an rng")

    def dropout(t):
        if p_drop == 0.0:
            return t
        keep = (rng.random(t.shape) >= p_drop) / (1.0 - p_drop)
        return tape.mask(t, keep)

    L = leaves
    h = tape.add(tape.matmul(tape.const(x), L["proj.w"]), L["proj.b"])
    if config.use_positional:
        table = tape.const(sinusoidal_table(config.max_frames, config.d_model))
        h = tape.add(h, tape.embedding_slice(table, 0, n))
    h = dropout(h)

    d, heads = config.d_model, config.n_heads
    dh = d // heads
    attention = []
    for i in range(config.n_layers):
        p = f"layer{i}."
        a = tape.layer_norm_rows(h, L[p + "ln1.g"], L[p + "ln1.b"])
        q = tape.matmul(a, L[p + "attn.q"])
        k = tape.matmul(a, L[p + "attn.k"])
        v = tape.matmul(a, L[p + "attn.v"])
        outs, weights = [], []
        for j in range(heads):
            lo, hi = j * dh, (j + 1) * dh
            qh = tape.scale(tape.slice_cols(q, lo, hi), 1.0 / math.sqrt(dh))
            scores = tape.matmul(qh, tape.slice_cols(k, lo, hi), transpose_b=True)
            w = tape.softmax_rows(scores)
            weights.append(w)
            outs.append(tape.matmul(w, tape.slice_cols(v, lo, hi)))
        attention.append(weights)
        merged = outs[0] if heads == 1 else tape.concat_cols(outs)
        h = tape.add(h, dropout(tape.matmul(merged, L[p + "attn.o"])))

        f = tape.layer_norm_rows(h, L[p + "ln2.g"], L[p + "ln2.b"])
        f = tape.gelu(tape.add(tape.matmul(f, L[p + "ff.w1"]), L[p + "ff.b1"]))
        f = tape.add(tape.matmul(f, L[p + "ff.w2"]), L[p + "ff.b2"])
        h = tape.add(h, dropout(f))

    h = tape.layer_norm_rows(h, L["final_ln.g"], L["final_ln.b"])
    b = tape.add(tape.matmul(h, L["head_boundary.w"]), L["head_boundary.b"])
    y = tape.add(tape.matmul(h, L["head_label.w"]), L["head_label.b"])
    return b, y, attention


def forward(config, params, x, training=False, seed=None):
    """Evaluate the model on one input.

    ``x`` is an ``n x d_in`` array or a :class:`~edmseg.embedio.FusedInput`.
    Dropout is applied only when ``training`` is true, with masks drawn from
    ``numpy.random.default_rng(seed)``; inference is deterministic.
    """
    matrix = getattr(x, "matrix", x)
    tape = Tape()
    leaves = {k: tape.const(v, name=k) for k, v in params.items()}
    rng = np.random.default_rng(seed) if training else None
    b, y, attn = build_forward(tape, config, leaves, matrix, training, rng)
    return ForwardOutput(b.value[:, 0].copy(), y.value.copy(),
                         [[w.value for w in layer] for layer in attn])
