"""Embedding stream files, four-stream fusion and synthetic tracks.

Stream file layout (little-endian)::

    offset  size  field
    0       4     magic b"EDMF"
    4       4     version (u32, = 1)
    8       8     n_frames (u64)
    16      4     dim (u32)
    20      8     frame_rate (f64)
    28      2     source tag length L (u16)
    30      L     source tag, UTF-8
    30+L    4*n*dim  frames, f32, row-major
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .annotation import Annotation, Label, n_frames_for
from .errors import (BadMagic, BadSpec, BadVersion, EmptyStream, NonFiniteValue,
                     StreamError, TruncatedFile, WrongStreamCount)

MAGIC = b"EDMF"
VERSION = 1
_HEADER = struct.Struct("<4sIQIdH")

# Column order of the fused input; matches the manifest columns.
STREAM_TAGS = ("muq_short", "muq_long", "mfm_short", "mfm_long")


@dataclass(frozen=True, eq=False)
class EmbeddingStream:
    frames: np.ndarray
    frame_rate: float
    source_tag: str = ""

    def __post_init__(self):
        frames = np.ascontiguousarray(self.frames, dtype="<f4")
        if frames.ndim != 2 or frames.shape[0] < 1 or frames.shape[1] < 1:
            raise EmptyStream(f"stream {self.source_tag!r} must be a non-empty n x dim matrix")
        if not np.isfinite(frames).all():
            raise NonFiniteValue(f"stream {self.source_tag!r} contains NaN or Inf")
        if not (self.frame_rate > 0 and np.isfinite(self.frame_rate)):
            raise StreamError(f"bad frame rate {self.frame_rate}")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "frame_rate", float(self.frame_rate))

    @property
    def n_frames(self):
        return self.frames.shape[0]

    @property
    def dim(self):
        return self.frames.shape[1]

    @property
    def duration_s(self):
        return self.n_frames / self.frame_rate

    def __eq__(self, other):
        if not isinstance(other, EmbeddingStream):
            return NotImplemented
        return (self.frame_rate == other.frame_rate and self.source_tag == other.source_tag
                and self.frames.shape == other.frames.shape
                and self.frames.tobytes() == other.frames.tobytes())


@dataclass(frozen=True, eq=False)
class FusedInput:
    matrix: np.ndarray
    frame_rate: float

    @property
    def n_frames(self):
        return self.matrix.shape[0]

    @property
    def dim(self):
        return self.matrix.shape[1]


def stream_to_bytes(stream):
    tag = stream.source_tag.encode("utf-8")
    if len(tag) > 0xFFFF:
        raise StreamError("source tag too long")
    header = _HEADER.pack(MAGIC, VERSION, stream.n_frames, stream.dim, stream.frame_rate, len(tag))
    return header + tag + stream.frames.astype("<f4").tobytes()


def stream_from_bytes(data):
    if len(data) < 4:
        raise TruncatedFile("file shorter than the magic")
    if data[:4] != MAGIC:
        raise BadMagic(f"bad magic {data[:4]!r}")
    if len(data) < _HEADER.size:
        raise TruncatedFile("file shorter than the header")
    _, version, n, dim, rate, tag_len = _HEADER.unpack_from(data)
    if version != VERSION:
        raise BadVersion(f"unsupported version {version}")
    start = _HEADER.size + tag_len
    if len(data) < start:
        raise TruncatedFile("file ends inside the source tag")
    tag = data[_HEADER.size:start].decode("utf-8")
    need = 4 * n * dim
    if len(data) - start < need:
        raise TruncatedFile(f"payload has {len(data) - start} bytes, expected {need}")
    if len(data) - start > need:
        raise StreamError("trailing bytes after payload")
    frames = np.frombuffer(data, dtype="<f4", count=n * dim, offset=start).reshape(n, dim)
    if not np.isfinite(frames).all():
        raise NonFiniteValue("payload contains NaN or Inf")
    return EmbeddingStream(frames.copy(), rate, tag)


def write_stream(stream, path):
    with open(path, "wb") as fh:
        fh.write(stream_to_bytes(stream))


def read_stream(path):
    with open(path, "rb") as fh:
        return stream_from_bytes(fh.read())


def read_stream_header(path):
    """Header fields only, without reading the payload."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if head[:4] != MAGIC:
            raise BadMagic(f"bad magic {head[:4]!r}")
        if len(head) < _HEADER.size:
            raise TruncatedFile("file shorter than the header")
        _, version, n, dim, rate, tag_len = _HEADER.unpack(head)
        tag = fh.read(tag_len).decode("utf-8")
    return {"magic": MAGIC.decode(), "version": version, "n_frames": n, "dim": dim,
            "frame_rate": rate, "source_tag": tag}


def fuse_streams(streams, target_rate):
    """Resample four streams onto one frame grid and concatenate their columns.

    Target frame ``i`` (center ``(i + 0.5) / target_rate``) takes, from every
    stream, the source frame whose center is nearest; equidistant centers
    resolve to the later frame, and indices are clamped to the stream.
    """
    streams = list(streams)
    if len(streams) != 4:
        raise WrongStreamCount(f"expected 4 streams, got {len(streams)}")
    for s in streams:
        if s.n_frames < 1:
            raise EmptyStream(f"stream {s.source_tag!r} is empty")
    min_dur = min(s.n_frames / s.frame_rate for s in streams)
    n = min(n_frames_for(s.n_frames / s.frame_rate, target_rate) for s in streams)
    n = max(n, 0)
    if n == 0:
        raise EmptyStream(f"shortest stream ({min_dur:.3f} s) yields no frame at {target_rate} fps")
    centers = (np.arange(n) + 0.5) / target_rate
    cols = []
    for s in streams:
        if s.frame_rate == target_rate:
            idx = np.arange(n)
        else:
            idx = np.floor(centers * s.frame_rate + 1e-9).astype(np.int64)
        idx = np.clip(idx, 0, s.n_frames - 1)
        cols.append(s.frames[idx].astype(np.float64))
    return FusedInput(np.concatenate(cols, axis=1), float(target_rate))


# --- synthetic tracks ------------------------------------------------------

@dataclass
class SyntheticSpec:
    """Piecewise-constant (or ramped) embedding streams with known sections.

    ``means`` maps each label to four vectors (one per stream). Frames in a
    ramp-label section interpolate from the previous section's mean to the
    next one's, reaching the next mean at the section end.
    """

    sections: list
    means: dict
    noise_sigma: float = 0.0
    ramp_labels: frozenset = field(default_factory=frozenset)
    frame_rate: float = 5.0
    seed: int = 0
    track_id: str = "synth"

    def validate(self):
        if not self.sections:
            raise BadSpec("no sections")
        if self.noise_sigma < 0 or self.frame_rate <= 0:
            raise BadSpec("noise_sigma must be >= 0 and frame_rate > 0")
        dims = None
        for label, dur in self.sections:
            if dur <= 0:
                raise BadSpec(f"section {label} has non-positive duration {dur}")
            key = Label.parse(label)
            if key not in self.means:
                raise BadSpec(f"no mean vectors for label {key}")
            mu = self.means[key]
            if len(mu) != 4:
                raise BadSpec(f"label {key} needs 4 mean vectors")
            d = [len(np.atleast_1d(v)) for v in mu]
            if dims is None:
                dims = d
            elif d != dims:
                raise BadSpec("mean vector widths differ between labels")


def synth_track(spec):
    """Generate four streams plus the matching annotation for ``spec``.

    Frame ``i`` (center ``(i + 0.5) / frame_rate``) belongs to the section
    containing its center. Noise is drawn from ``numpy`` PCG64 seeded with
    ``spec.seed``.
    """
    spec.validate()
    labels = [Label.parse(lab) for lab, _ in spec.sections]
    durs = [float(d) for _, d in spec.sections]
    edges = np.concatenate([[0.0], np.cumsum(durs)])
    duration = round(float(edges[-1]), 3)
    ann = Annotation.build(spec.track_id, duration,
                           [(round(float(edges[k]), 3), round(float(edges[k + 1]), 3), labels[k])
                            for k in range(len(labels))])

    n = n_frames_for(duration, spec.frame_rate)
    if n < 1:
        raise BadSpec("track shorter than one frame")
    centers = (np.arange(n) + 0.5) / spec.frame_rate
    sec = np.clip(np.searchsorted(edges, centers, side="right") - 1, 0, len(labels) - 1)
    means = {lab: [np.atleast_1d(np.asarray(v, dtype=np.float64)) for v in vs]
             for lab, vs in spec.means.items()}
    rng = np.random.default_rng(spec.seed)
    streams = []
    for j, tag in enumerate(STREAM_TAGS):
        d = means[labels[0]][j].size
        clean = np.empty((n, d))
        for k, lab in enumerate(labels):
            rows = sec == k
            if not rows.any():
                continue
            if lab in spec.ramp_labels:
                prev_mu = means[labels[k - 1]][j] if k > 0 else means[lab][j]
                next_mu = means[labels[k + 1]][j] if k + 1 < len(labels) else means[lab][j]
                frac = (centers[rows] - edges[k]) / (edges[k + 1] - edges[k])
                clean[rows] = (1.0 - frac)[:, None] * prev_mu + frac[:, None] * next_mu
            else:
                clean[rows] = means[lab][j]
        noise = rng.standard_normal((n, d)) * spec.noise_sigma if spec.noise_sigma > 0 else 0.0
        streams.append(EmbeddingStream((clean + noise).astype(np.float32), spec.frame_rate, tag))
    return streams, ann


def random_means(dim, seed, scale=1.0):
    """Per-label, per-stream mean vectors drawn i.i.d. N(0, scale^2)."""
    rng = np.random.default_rng(seed)
    return {lab: [rng.standard_normal(dim) * scale for _ in STREAM_TAGS] for lab in Label}


def random_sections(rng, min_s=8, max_s=40):
    """A plausible EDM section sequence with integer-second durations.

    ``rng`` is a :class:`~edmseg.rng.Xoshiro256`. The form is an intro, two or
    three build-up/drop/breakdown cycles (with an occasional silence before
    a drop), an outro and an end section.
    """
    def dur():
        return min_s + rng.below(max_s - min_s + 1)

    out = [(Label.INTRO, dur())]
    cycles = 2 + rng.below(2)
    for c in range(cycles):
        out.append((Label.BUILDUP, dur()))
        if rng.below(3) == 0:
            out.append((Label.SILENCE, dur()))
        out.append((Label.DROP, dur()))
        if c < cycles - 1:
            out.append((Label.BREAKDOWN, dur()))
    out.append((Label.OUTRO, dur()))
    out.append((Label.END, dur()))
    return out
