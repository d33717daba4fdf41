"""EDM section taxonomy and contiguous segment annotations.

An annotation is an ordered, gap-free list of labeled segments covering
``[0, duration_s]``. Times live on a millisecond grid. Files are JSON::

    {"track_id": "t001", "duration_s": 30.0,
     "segments": [{"start_s": 0.0, "end_s": 10.0, "label": "intro"}, ...]}
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import AnnotationError, EmptyAnnotation, Violation

GRID = 1000  # ticks per second
_GRID_TOL = 1e-6


class Label(str, enum.Enum):
    """Section labels, in declaration order (this order is the label index)."""

    INTRO = "intro"
    BUILDUP = "buildup"
    DROP = "drop"
    BREAKDOWN = "breakdown"
    OUTRO = "outro"
    SILENCE = "silence"
    END = "end"

    @property
    def ordinal(self):
        return _ORDINAL[self]

    @classmethod
    def parse(cls, text):
        """Parse a label name; ``build-up`` is accepted and normalized."""
        key = str(text).strip().lower()
        if key == "build-up":
            key = "buildup"
        return cls(key)

    def __str__(self):
        return self.value


LABELS = tuple(Label)
N_LABELS = len(LABELS)
_ORDINAL = {lab: i for i, lab in enumerate(LABELS)}


def n_frames_for(duration_s, frame_rate):
    """``floor(duration_s * frame_rate)`` computed exactly on decimal inputs."""
    exact = Fraction(repr(float(duration_s))) * Fraction(repr(float(frame_rate)))
    return math.floor(exact)


def _on_grid(t):
    return abs(t * GRID - round(t * GRID)) < _GRID_TOL * GRID


def _snap(t):
    return round(float(t), 3)


@dataclass(frozen=True)
class Segment:
    start_s: float
    end_s: float
    label: Label

    def to_dict(self):
        return {"start_s": self.start_s, "end_s": self.end_s, "label": self.label.value}


@dataclass(frozen=True)
class Annotation:
    """A validated, contiguous labeling of one track.

    Construct through :meth:`build` (or :func:`parse_annotation`) to get
    validation; the raw constructor trusts its inputs.
    """

    track_id: str
    duration_s: float
    segments: tuple

    @classmethod
    def build(cls, track_id, duration_s, segments):
        """Validate and construct. ``segments`` holds Segments or ``(start, end, label)`` triples."""
        segs = []
        violations = []
        for i, seg in enumerate(segments):
            if isinstance(seg, Segment):
                segs.append(seg)
                continue
            start, end, label = seg
            try:
                label = label if isinstance(label, Label) else Label.parse(label)
            except ValueError:
                violations.append(Violation("UnknownLabel", i, f"unknown label {label!r}"))
                label = None
            segs.append(Segment(float(start), float(end), label))
        violations.extend(_validate(duration_s, segs))
        if violations:
            raise AnnotationError(violations)
        segs = tuple(Segment(_snap(s.start_s), _snap(s.end_s), s.label) for s in segs)
        return cls(str(track_id), _snap(duration_s), segs)

    @property
    def labels(self):
        return [s.label for s in self.segments]

    def to_dict(self):
        return {
            "track_id": self.track_id,
            "duration_s": self.duration_s,
            "segments": [s.to_dict() for s in self.segments],
        }


def _validate(duration_s, segs):
    out = []
    try:
        duration_s = float(duration_s)
    except (TypeError, ValueError):
        return [Violation("BadDuration", None, f"duration {duration_s!r} is not a number")]
    if not math.isfinite(duration_s) or duration_s <= 0:
        out.append(Violation("BadDuration", None, f"duration {duration_s} must be positive"))
    elif not _on_grid(duration_s):
        out.append(Violation("BadDuration", None, f"duration {duration_s} is off the 1 ms grid"))
    if not segs:
        out.append(Violation("Gap", None, "annotation has no segments"))
        return out
    for i, s in enumerate(segs):
        if not (math.isfinite(s.start_s) and math.isfinite(s.end_s)) or s.start_s < 0:
            out.append(Violation("BadDuration", i, f"bad times [{s.start_s}, {s.end_s}]"))
            continue
        if s.start_s >= s.end_s:
            out.append(Violation("BadDuration", i, f"start {s.start_s} is not before end {s.end_s}"))
        if not (_on_grid(s.start_s) and _on_grid(s.end_s)):
            out.append(Violation("BadDuration", i, "segment times are off the 1 ms grid"))
    if abs(segs[0].start_s) > _GRID_TOL:
        out.append(Violation("Gap", 0, f"first segment starts at {segs[0].start_s}, not 0"))
    for i in range(1, len(segs)):
        prev, cur = segs[i - 1], segs[i]
        if cur.start_s < prev.start_s:
            out.append(Violation("Unsorted", i, f"starts at {cur.start_s} before segment {i - 1}"))
        elif cur.start_s < prev.end_s - _GRID_TOL:
            out.append(Violation("Overlap", i, f"starts at {cur.start_s} inside segment {i - 1} (ends {prev.end_s})"))
        elif cur.start_s > prev.end_s + _GRID_TOL:
            out.append(Violation("Gap", i, f"gap from {prev.end_s} to {cur.start_s}"))
    if math.isfinite(duration_s) and abs(segs[-1].end_s - duration_s) > _GRID_TOL:
        out.append(Violation("BadDuration", len(segs) - 1,
                             f"last segment ends at {segs[-1].end_s}, duration is {duration_s}"))
    return out


def parse_annotation(text):
    """Parse annotation JSON text, reporting every violation at once."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise AnnotationError([Violation("SyntaxError", None, str(exc))]) from None
    if not isinstance(obj, dict):
        raise AnnotationError([Violation("SyntaxError", None, "top level must be an object")])
    missing = [k for k in ("track_id", "duration_s", "segments") if k not in obj]
    if missing:
        raise AnnotationError([Violation("SyntaxError", None, f"missing keys {missing}")])
    if not isinstance(obj["segments"], list):
        raise AnnotationError([Violation("SyntaxError", None, "'segments' must be a list")])

    syntax = []
    triples = []
    for i, seg in enumerate(obj["segments"]):
        if not isinstance(seg, dict) or not {"start_s", "end_s", "label"} <= seg.keys():
            syntax.append(Violation("SyntaxError", i, "segment needs start_s, end_s and label"))
            continue
        start, end = seg["start_s"], seg["end_s"]
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in (start, end)):
            syntax.append(Violation("SyntaxError", i, "start_s and end_s must be numbers"))
            continue
        triples.append((start, end, seg["label"]))
    if syntax:
        raise AnnotationError(syntax)
    return Annotation.build(obj["track_id"], obj["duration_s"], triples)


def serialize_annotation(ann):
    return json.dumps(ann.to_dict(), indent=2) + "\n"


def read_annotation(path):
    with open(path, encoding="utf-8") as fh:
        return parse_annotation(fh.read())


def write_annotation(ann, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_annotation(ann))


def boundaries_of(ann, include_endpoints=False):
    """Segment join times; with ``include_endpoints`` also 0 and the duration."""
    inner = [s.start_s for s in ann.segments[1:]]
    if include_endpoints:
        return [0.0, *inner, ann.duration_s]
    return inner


def frame_labels(ann, frame_rate):
    """Label of the segment containing each frame center ``(i + 0.5) / frame_rate``.

    A center exactly on a boundary takes the later segment.
    """
    if frame_rate <= 0:
        raise ValueError("frame_rate must be positive")
    if not ann.segments:
        raise EmptyAnnotation(f"annotation {ann.track_id!r} has no segments")
    starts = np.array([s.start_s for s in ann.segments])
    n = n_frames_for(ann.duration_s, frame_rate)
    centers = (np.arange(n) + 0.5) / frame_rate
    idx = np.maximum(np.searchsorted(starts, centers, side="right") - 1, 0)
    return [ann.segments[k].label for k in idx]


def label_indices(labels):
    return np.array([lab.ordinal for lab in labels], dtype=np.int64)
