"""Boundary hit rates at a tolerance and per-frame label accuracy.

Boundaries are matched one-to-one: an estimate and a reference boundary can
pair when they are at most ``tol`` seconds apart, and the pairing has maximum
cardinality. "HR" in reports is the hit-rate precision (matched / estimated)
unless asked for the F-measure.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .annotation import N_LABELS, boundaries_of, frame_labels, label_indices
from .errors import DurationMismatch, Unsorted

_COST_TOL = 1e-9


@dataclass(frozen=True)
class BoundaryScore:
    tolerance_s: float
    n_ref: int
    n_est: int
    n_matched: int
    hit_rate_precision: float
    hit_rate_recall: float
    f1: float


@dataclass(frozen=True)
class LabelScore:
    acc: float
    confusion: np.ndarray  # rows: reference label, columns: estimate
    n_frames: int


def _check_sorted(xs, what):
    if any(b < a for a, b in zip(xs, xs[1:])):
        raise Unsorted(f"{what} boundaries are not sorted")


def _better(a, b):
    """Order on (count, cost, pairs): more pairs, then lower cost, then lexicographic."""
    if a[0] != b[0]:
        return a[0] > b[0]
    if abs(a[1] - b[1]) > _COST_TOL:
        return a[1] < b[1]
    return a[2] < b[2]


def match_boundaries(est, ref, tol):
    """Maximum one-to-one matching of ``est`` to ``ref`` within ``tol`` seconds.

    Among maximum matchings the one with the smallest total ``|e - r|`` is
    returned, ties broken by lexicographic order of the sorted pair list.
    On sorted inputs an optimal matching never needs crossing pairs (two
    crossing feasible pairs can always be uncrossed without losing
    feasibility or adding cost), so a suffix dynamic program over
    ``(i, j)`` finds it in ``O(len(est) * len(ref))`` states.

    Returns
    -------
    list of (est_index, ref_index)
    """
    est = [float(e) for e in est]
    ref = [float(r) for r in ref]
    _check_sorted(est, "estimated")
    _check_sorted(ref, "reference")
    if tol < 0:
        raise ValueError("tol must be non-negative")
    n, m = len(est), len(ref)
    # best[i][j] = (count, cost, pairs) for est[i:], ref[j:]
    empty = (0, 0.0, ())
    nxt = [empty] * (m + 1)
    for i in range(n - 1, -1, -1):
        cur = [empty] * (m + 1)
        for j in range(m - 1, -1, -1):
            cand = nxt[j]  # skip est[i]
            skip_ref = cur[j + 1]
            if _better(skip_ref, cand):
                cand = skip_ref
            d = abs(est[i] - ref[j])
            if d <= tol:
                c, cost, pairs = nxt[j + 1]
                take = (c + 1, cost + d, ((i, j),) + pairs)
                if _better(take, cand):
                    cand = take
            cur[j] = cand
        nxt = cur
    return list(nxt[0][2]) if n else []


def _rates(n_matched, n_est, n_ref):
    if n_est == 0 and n_ref == 0:
        return 1.0, 1.0, 1.0
    p = n_matched / n_est if n_est else 0.0
    r = n_matched / n_ref if n_ref else 0.0
    f = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return p, r, f


def boundary_scores(est_ann, ref_ann, tolerances=(0.5, 3.0)):
    """Hit-rate precision/recall/F at each tolerance, on internal boundaries."""
    est, ref = boundaries_of(est_ann), boundaries_of(ref_ann)
    out = []
    for tol in tolerances:
        k = len(match_boundaries(est, ref, tol))
        p, r, f = _rates(k, len(est), len(ref))
        out.append(BoundaryScore(float(tol), len(ref), len(est), k, p, r, f))
    return out


def frame_accuracy(est_ann, ref_ann, frame_rate=10.0):
    """Per-frame label agreement over the shorter of the two durations."""
    if abs(est_ann.duration_s - ref_ann.duration_s) > 1.0 / frame_rate + 1e-9:
        raise DurationMismatch(
            f"durations {est_ann.duration_s} and {ref_ann.duration_s} differ by more than one frame")
    est = label_indices(frame_labels(est_ann, frame_rate))
    ref = label_indices(frame_labels(ref_ann, frame_rate))
    n = min(est.size, ref.size)
    est, ref = est[:n], ref[:n]
    confusion = np.zeros((N_LABELS, N_LABELS), dtype=np.int64)
    np.add.at(confusion, (ref, est), 1)
    acc = float(np.trace(confusion)) / n if n else 1.0
    return LabelScore(acc, confusion, int(n))


def _tol_key(t):
    return f"{float(t):g}"


def evaluate(pairs, tolerances=(0.5, 3.0), frame_rate=10.0, acc_mode="micro"):
    """Score ``(est, ref)`` annotation pairs and build the report dict.

    Corpus boundary rates pool matched/estimated/reference counts over all
    tracks (micro average). Corpus ``acc`` is frame-weighted by default;
    ``acc_mode="macro"`` averages per-track accuracies instead.
    """
    if acc_mode not in ("micro", "macro"):
        raise ValueError("acc_mode must be 'micro' or 'macro'")
    per_track = []
    pooled = {t: [0, 0, 0] for t in tolerances}
    correct = frames = 0
    accs = []
    for est, ref in pairs:
        entry = {"track_id": ref.track_id}
        for s in boundary_scores(est, ref, tolerances):
            key = _tol_key(s.tolerance_s)
            entry[f"hr_p@{key}"] = s.hit_rate_precision
            entry[f"hr_r@{key}"] = s.hit_rate_recall
            entry[f"f1@{key}"] = s.f1
            pooled[s.tolerance_s][0] += s.n_matched
            pooled[s.tolerance_s][1] += s.n_est
            pooled[s.tolerance_s][2] += s.n_ref
        ls = frame_accuracy(est, ref, frame_rate)
        entry["acc"] = ls.acc
        entry["n_frames"] = ls.n_frames
        per_track.append(entry)
        correct += int(np.trace(ls.confusion))
        frames += ls.n_frames
        accs.append(ls.acc)
    corpus = {}
    for t in tolerances:
        p, r, f = _rates(*pooled[t])
        key = _tol_key(t)
        corpus[f"hr_p@{key}"], corpus[f"hr_r@{key}"], corpus[f"f1@{key}"] = p, r, f
    if acc_mode == "micro":
        corpus["acc"] = correct / frames if frames else 1.0
    else:
        corpus["acc"] = float(np.mean(accs)) if accs else 1.0
    return {"per_track": per_track, "corpus": corpus}


def headline(report, tolerances=(0.5, 3.0), hr_mode="precision"):
    """The HR@tol and ACC numbers a results table would show."""
    prefix = {"precision": "hr_p", "f1": "f1"}[hr_mode]
    c = report["corpus"]
    row = {f"HR@{_tol_key(t)}": c[f"{prefix}@{_tol_key(t)}"] for t in tolerances}
    row["ACC"] = c["acc"]
    return row


def report_json(report):
    return json.dumps(report, indent=2, sort_keys=False) + "\n"


def score_dict(score):
    d = asdict(score)
    if isinstance(score, LabelScore):
        d["confusion"] = score.confusion.tolist()
    return d
