"""Turn per-frame model outputs into a predicted annotation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .annotation import LABELS, Annotation, n_frames_for
from .errors import BadBoundaries


@dataclass(frozen=True)
class DecodeConfig:
    boundary_threshold: float = 0.5
    min_gap_s: float = 2.0
    min_segment_s: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.boundary_threshold < 1.0:
            raise ValueError("boundary_threshold must be in (0, 1)")
        if self.min_gap_s <= 0 or self.min_segment_s <= 0:
            raise ValueError("min_gap_s and min_segment_s must be positive")


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    return np.exp(-np.logaddexp(0.0, -z))


def peak_pick(probs, frame_rate, cfg=DecodeConfig()):
    """Boundary times from a boundary-probability curve.

    Candidates are frames at least as high as both neighbours and above the
    threshold. Non-maximum suppression then keeps the highest candidate
    (earlier frame on ties) and discards every other candidate closer than
    ``min_gap_s``. Times are frame centers, returned sorted.
    """
    p = np.asarray(probs, dtype=np.float64)
    n = p.size
    if n == 0:
        return []
    left = np.concatenate([[-np.inf], p[:-1]])
    right = np.concatenate([p[1:], [-np.inf]])
    cand = np.flatnonzero((p >= left) & (p >= right) & (p > cfg.boundary_threshold))
    order = sorted(cand, key=lambda i: (-p[i], i))
    kept = []
    gap_frames = cfg.min_gap_s * frame_rate
    for i in order:
        if all(abs(i - j) >= gap_frames - 1e-9 for j in kept):
            kept.append(i)
    return [(i + 0.5) / frame_rate for i in sorted(kept)]


def _region_frames(lo, hi, n, frame_rate):
    """Frames whose centers fall in ``[lo, hi)``."""
    first = int(np.ceil(lo * frame_rate - 0.5 - 1e-9))
    last = int(np.ceil(hi * frame_rate - 0.5 - 1e-9))  # exclusive
    return max(first, 0), min(max(last, 0), n)


def _profile(logits):
    """Softmax of the mean logit vector; ``None`` for an empty region."""
    if logits.shape[0] == 0:
        return None
    m = logits.mean(axis=0)
    e = np.exp(m - m.max())
    return e / e.sum()


def decode_segments(label_logits, boundaries, duration_s, frame_rate, cfg=DecodeConfig(),
                    track_id="pred"):
    """Label the regions between boundaries and merge too-short regions.

    Each region ``[b_k, b_{k+1})`` takes the argmax of its summed label
    logits (lowest taxonomy index on ties). Regions shorter than
    ``min_segment_s`` are merged, shortest first, into whichever neighbour
    has the closer profile (softmax of mean logits, L2 distance; earlier
    neighbour on ties).
    """
    logits = np.asarray(label_logits, dtype=np.float64)
    bounds = [float(b) for b in boundaries]
    if any(b2 <= b1 for b1, b2 in zip(bounds, bounds[1:])):
        raise BadBoundaries("boundaries must be strictly increasing")
    if bounds and (bounds[0] <= 0 or bounds[-1] >= duration_s):
        raise BadBoundaries("boundaries must lie strictly inside (0, duration)")
    n = logits.shape[0]
    edges = [0.0, *bounds, float(duration_s)]

    def rows(k):
        lo, hi = _region_frames(edges[k], edges[k + 1], n, frame_rate)
        return logits[lo:hi]

    while len(edges) > 2:
        lengths = [edges[k + 1] - edges[k] for k in range(len(edges) - 1)]
        short = [k for k, L in enumerate(lengths) if L < cfg.min_segment_s - 1e-9]
        if not short:
            break
        k = min(short, key=lambda j: (lengths[j], j))
        if k == 0:
            del edges[1]
        elif k == len(lengths) - 1:
            del edges[k]
        else:
            mine = _profile(rows(k))
            prev, nxt = _profile(rows(k - 1)), _profile(rows(k + 1))
            if mine is None or prev is None or nxt is None:
                merge_prev = prev is not None or nxt is None
            else:
                merge_prev = np.linalg.norm(mine - prev) <= np.linalg.norm(mine - nxt)
            del edges[k if merge_prev else k + 1]

    segments = []
    for k in range(len(edges) - 1):
        r = rows(k)
        if r.shape[0]:
            label = LABELS[int(np.argmax(r.sum(axis=0)))]
        else:
            label = LABELS[int(np.argmax(logits.sum(axis=0)))] if n else LABELS[0]
        segments.append((round(edges[k], 3), round(edges[k + 1], 3), label))
    return Annotation.build(track_id, round(float(duration_s), 3), segments)


def predict_annotation(boundary_logits, label_logits, duration_s, frame_rate,
                       cfg=DecodeConfig(), track_id="pred"):
    """Peak-pick, then decode, keeping only boundaries inside the track."""
    times = [t for t in peak_pick(sigmoid(boundary_logits), frame_rate, cfg)
             if 0.0 < round(t, 3) < duration_s]
    times = sorted({round(t, 3) for t in times})
    return decode_segments(label_logits, times, duration_s, frame_rate, cfg, track_id)


def one_hot_encoding(ann, frame_rate):
    """Boundary probabilities and label logits that decode back to ``ann``.

    Frame boundaries must sit on frame centers for an exact round trip.
    """
    n = n_frames_for(ann.duration_s, frame_rate)
    probs = np.zeros(n)
    for seg in ann.segments[1:]:
        i = int(round(seg.start_s * frame_rate - 0.5))
        probs[min(max(i, 0), n - 1)] = 1.0
    logits = np.zeros((n, len(LABELS)))
    centers = (np.arange(n) + 0.5) / frame_rate
    starts = np.array([s.start_s for s in ann.segments])
    idx = np.maximum(np.searchsorted(starts, centers + 1e-9, side="right") - 1, 0)
    for i, k in enumerate(idx):
        logits[i, ann.segments[k].label.ordinal] = 1.0
    return probs, logits
