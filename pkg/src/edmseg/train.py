"""Targets, loss, Adam, the training loop and binary checkpoints."""

from __future__ import annotations

import dataclasses
import io
import json
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from .annotation import N_LABELS, boundaries_of, frame_labels, label_indices
from .autodiff import Tape
from .errors import (CheckpointError, EmptyDataset, InconsistentDuration, NumericFault,
                     ShapeMismatch)
from .model import ModelConfig, build_forward, init_params, param_shapes
from .rng import Xoshiro256

log = logging.getLogger(__name__)

CKPT_MAGIC = b"EDMC"
CKPT_VERSION = 1
_TIME_EPS = 1e-9


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 10
    label_loss_weight: float = 1.0
    smear_s: float = 0.5
    seed: int = 0
    patience: int | None = None

    def __post_init__(self):
        if not (self.learning_rate > 0 and 0 <= self.beta1 < 1 and 0 <= self.beta2 < 1
                and self.adam_eps > 0 and self.smear_s >= 0):
            raise ValueError("invalid optimizer or smear settings")
        if self.label_loss_weight < 0 or self.epochs < 0:
            raise ValueError("label_loss_weight and epochs must be non-negative")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# --- targets and loss ------------------------------------------------------

def build_targets(ann, n_frames, frame_rate, smear_s=0.5):
    """Frame targets for one track.

    Returns ``(boundary, labels)``: ``boundary[i]`` is 1 when frame center
    ``(i + 0.5) / frame_rate`` lies within ``smear_s`` of an internal
    boundary, and ``labels`` holds taxonomy indices from :func:`frame_labels`.
    """
    if abs(n_frames / frame_rate - ann.duration_s) > 1.0 / frame_rate + _TIME_EPS:
        raise InconsistentDuration(
            f"{n_frames} frames at {frame_rate} fps vs duration {ann.duration_s} s")
    centers = (np.arange(n_frames) + 0.5) / frame_rate
    boundary = np.zeros(n_frames)
    for t in boundaries_of(ann):
        boundary[np.abs(centers - t) <= smear_s + _TIME_EPS] = 1.0
    labels = label_indices(frame_labels(ann, frame_rate))
    if labels.size < n_frames:
        labels = np.concatenate([labels, np.full(n_frames - labels.size, labels[-1])])
    return boundary, labels[:n_frames]


def positive_weight(boundary_target):
    n_pos = float(np.sum(boundary_target))
    return 1.0 if n_pos == 0 else (boundary_target.size - n_pos) / n_pos


def loss_tensor(tape, b_logits, y_logits, boundary_target, label_target, lam):
    """Weighted BCE on boundary logits + ``lam`` * mean cross-entropy on labels."""
    n = b_logits.shape[0]
    if y_logits.shape != (n, N_LABELS) or boundary_target.shape[0] != n or label_target.shape[0] != n:
        raise ShapeMismatch("logits and targets disagree in length")
    bt = np.asarray(boundary_target, dtype=np.float64).reshape(n, 1)
    pw = positive_weight(bt)
    pos = tape.weighted_sum(tape.softplus(tape.scale(b_logits, -1.0)), pw * bt / n)
    neg = tape.weighted_sum(tape.softplus(b_logits), (1.0 - bt) / n)
    onehot = np.zeros((n, N_LABELS))
    onehot[np.arange(n), label_target] = 1.0
    ce = tape.weighted_sum(tape.log_softmax_rows(y_logits), onehot * (-lam / n))
    return tape.add(tape.add(pos, neg), ce)


def compute_loss(boundary_logits, label_logits, targets, lam=1.0):
    """Loss value for numpy logits; ``targets`` is ``(boundary, labels)``."""
    tape = Tape()
    b = tape.const(np.reshape(boundary_logits, (-1, 1)))
    y = tape.const(label_logits)
    return float(loss_tensor(tape, b, y, np.asarray(targets[0]), np.asarray(targets[1]), lam).value)


# --- optimizer -------------------------------------------------------------

@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros(cls, params):
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_update(params, grads, state, cfg):
    """One bias-corrected Adam step, applied in place in parameter order."""
    state.step += 1
    c1 = 1.0 - cfg.beta1 ** state.step
    c2 = 1.0 - cfg.beta2 ** state.step
    for k in params:
        g = grads[k]
        m = state.m[k] = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * g
        v = state.v[k] = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * g * g
        params[k] = params[k] - cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)


# --- checkpoint ------------------------------------------------------------

@dataclass
class Checkpoint:
    model_config: ModelConfig
    train_config: TrainConfig
    params: dict
    adam: AdamState
    rng_state: list
    epoch: int = 0
    loss_history: list = field(default_factory=list)
    version: int = CKPT_VERSION

    def to_bytes(self):
        sections = [
            ("model_config", _json_bytes(self.model_config.to_dict())),
            ("train_config", _json_bytes(self.train_config.to_dict())),
            ("state", _json_bytes({"epoch": self.epoch, "adam_step": self.adam.step,
                                   "rng_state": [int(w) for w in self.rng_state],
                                   "loss_history": [float(x) for x in self.loss_history]})),
        ]
        for prefix, tensors in (("param/", self.params), ("adam_m/", self.adam.m), ("adam_v/", self.adam.v)):
            for name, arr in tensors.items():
                sections.append((prefix + name, _tensor_bytes(arr)))
        out = io.BytesIO()
        out.write(CKPT_MAGIC + struct.pack("<II", self.version, len(sections)))
        for name, payload in sections:
            raw = name.encode("utf-8")
            kind = 1 if "/" in name else 0
            out.write(struct.pack("<H", len(raw)) + raw + struct.pack("<BQ", kind, len(payload)))
            out.write(payload)
        return out.getvalue()

    @classmethod
    def from_bytes(cls, data):
        if data[:4] != CKPT_MAGIC:
            raise CheckpointError(f"bad checkpoint magic {data[:4]!r}")
        try:
            version, count = struct.unpack_from("<II", data, 4)
            if version != CKPT_VERSION:
                raise CheckpointError(f"unsupported checkpoint version {version}")
            pos = 12
            sections = {}
            for _ in range(count):
                (nlen,) = struct.unpack_from("<H", data, pos)
                pos += 2
                name = data[pos:pos + nlen].decode("utf-8")
                pos += nlen
                kind, plen = struct.unpack_from("<BQ", data, pos)
                pos += 9
                payload = data[pos:pos + plen]
                if len(payload) != plen:
                    raise CheckpointError("truncated checkpoint")
                pos += plen
                sections[name] = _read_tensor(payload) if kind == 1 else json.loads(payload)
        except struct.error as exc:
            raise CheckpointError(f"truncated checkpoint: {exc}") from None
        if pos != len(data):
            raise CheckpointError("trailing bytes in checkpoint")
        mc = ModelConfig.from_dict(sections["model_config"])
        tc = TrainConfig.from_dict(sections["train_config"])
        st = sections["state"]
        names = list(param_shapes(mc))

        def group(prefix):
            got = {k[len(prefix):]: v for k, v in sections.items() if k.startswith(prefix)}
            if sorted(got) != sorted(names):
                raise CheckpointError(f"checkpoint {prefix} tensors do not match the model config")
            return {k: got[k] for k in names}

        adam = AdamState(group("adam_m/"), group("adam_v/"), int(st["adam_step"]))
        return cls(mc, tc, group("param/"), adam, list(st["rng_state"]), int(st["epoch"]),
                   list(st["loss_history"]), version)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def _json_bytes(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _tensor_bytes(arr):
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return (struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape) + arr.tobytes())


def _read_tensor(payload):
    (ndim,) = struct.unpack_from("<I", payload, 0)
    shape = struct.unpack_from(f"<{ndim}Q", payload, 4)
    start = 4 + 8 * ndim
    count = int(np.prod(shape)) if ndim else 1
    if len(payload) - start != 8 * count:
        raise CheckpointError("tensor payload size mismatch")
    return np.frombuffer(payload, dtype="<f8", offset=start).reshape(shape).astype(np.float64)


def format_log(history, start_epoch=1):
    return "".join(f"{start_epoch + i}\t{loss!r}\n" for i, loss in enumerate(history))


# --- training loop ---------------------------------------------------------

def prepare(dataset, config, smear_s):
    """Turn ``(FusedInput, Annotation)`` pairs into ``(x, boundary, labels)``."""
    out = []
    for fused, ann in dataset:
        x = getattr(fused, "matrix", fused)
        if x.shape[1] != config.d_in:
            raise ShapeMismatch(f"track {ann.track_id}: input width {x.shape[1]} != d_in {config.d_in}")
        rate = getattr(fused, "frame_rate", config.frame_rate)
        bt, lt = build_targets(ann, x.shape[0], rate, smear_s)
        out.append((np.asarray(x, dtype=np.float64), bt, lt))
    return out


def train_step(config, params, x, bt, lt, lam, training, rng=None):
    """Forward + backward for one track; returns ``(loss, grads)``."""
    tape = Tape()
    leaves = {k: tape.leaf(v, name=k) for k, v in params.items()}
    b, y, _ = build_forward(tape, config, leaves, x, training, rng)
    loss = loss_tensor(tape, b, y, bt, lt, lam)
    return float(loss.value), tape.backward(loss)


def fit(model_config, train_config, dataset, init=None, resume=False, on_epoch=None):
    """Train the segmenter with Adam, one track per step.

    Parameters
    ----------
    model_config, train_config : ModelConfig, TrainConfig
    dataset : list of (FusedInput, Annotation)
    init : Checkpoint, optional
        Starting weights. With ``resume=True`` the optimizer moments, RNG
        state, epoch counter and loss history are restored too, and training
        continues up to ``train_config.epochs``; otherwise only the weights
        are reused (fine-tuning).
    on_epoch : callable, optional
        Called as ``on_epoch(epoch, mean_loss)`` after every epoch.

    Returns
    -------
    Checkpoint
    """
    if not dataset:
        raise EmptyDataset("no training tracks")
    data = prepare(dataset, model_config, train_config.smear_s)

    if init is not None and resume:
        params = {k: v.copy() for k, v in init.params.items()}
        adam = AdamState({k: v.copy() for k, v in init.adam.m.items()},
                         {k: v.copy() for k, v in init.adam.v.items()}, init.adam.step)
        rng = Xoshiro256.from_state(init.rng_state)
        epoch, history = init.epoch, list(init.loss_history)
    else:
        params = ({k: v.copy() for k, v in init.params.items()} if init is not None
                  else init_params(model_config, train_config.seed))
        adam = AdamState.zeros(params)
        rng = Xoshiro256(train_config.seed)
        epoch, history = 0, []

    lam = train_config.label_loss_weight
    best, stale = min(history, default=float("inf")), 0
    while epoch < train_config.epochs:
        order = rng.shuffle(list(range(len(data))))
        total = 0.0
        for idx in order:
            x, bt, lt = data[idx]
            drop_rng = np.random.default_rng(rng.next_u64())
            try:
                loss, grads = train_step(model_config, params, x, bt, lt, lam, True, drop_rng)
            except NumericFault as exc:
                raise NumericFault(str(exc), step=adam.step + 1) from None
            if not np.isfinite(loss):
                raise NumericFault("non-finite loss", step=adam.step + 1)
            adam_update(params, grads, adam, train_config)
            total += loss
        epoch += 1
        mean = total / len(data)
        history.append(mean)
        log.info("epoch %d mean loss %.6f", epoch, mean)
        if on_epoch is not None:
            on_epoch(epoch, mean)
        if train_config.patience:
            if mean < best:
                best, stale = mean, 0
            else:
                stale += 1
                if stale >= train_config.patience:
                    break
    return Checkpoint(model_config, train_config, params, adam, rng.state, epoch, history)
