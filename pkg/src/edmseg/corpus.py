"""Stratified corpus curation: manifests, equal allocation, sampling, splits.

The curation procedure mirrors how a balanced evaluation subset is drawn from
a tempo-skewed source corpus:

1. every track is assigned to a stratum (declared genre stratum, or a BPM
   bucket when none is declared; tracks without BPM cannot be bucketed),
2. a total of ``n`` tracks is spread as evenly as possible over the strata
   with :func:`allocate_equal`,
3. each stratum is sampled without replacement with a seeded shuffle,
4. the selection is split into train/test and k cross-validation folds.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from .errors import BadCounts, CorpusError, Infeasible, ShortStratum, Unbucketable
from .rng import Xoshiro256

STREAM_COLUMNS = ("emb_muq_short", "emb_muq_long", "emb_mfm_short", "emb_mfm_long")
MANIFEST_COLUMNS = ("track_id", "bpm", "stratum", "duration_s", *STREAM_COLUMNS, "annotation")


@dataclass(frozen=True)
class TrackRecord:
    track_id: str
    bpm: float | None = None
    stratum: str | None = None
    duration_s: float = 0.0
    embedding_paths: tuple = ("", "", "", "")
    annotation_path: str = ""

    def __post_init__(self):
        if self.bpm is not None and not (0 < self.bpm < 400):
            raise CorpusError(f"track {self.track_id}: bpm {self.bpm} outside (0, 400)")
        if len(self.embedding_paths) != 4:
            raise CorpusError(f"track {self.track_id}: expected 4 embedding paths")


@dataclass(frozen=True)
class StratumTable:
    """BPM buckets ``[lo, hi)`` per stratum plus the residual priority order."""

    buckets: tuple
    residual_priority: tuple = ()

    def __post_init__(self):
        names = [b[0] for b in self.buckets]
        if len(set(names)) != len(names):
            raise CorpusError("duplicate stratum names")
        ranges = sorted((lo, hi) for _, lo, hi in self.buckets)
        for (lo1, hi1), (lo2, _) in zip(ranges, ranges[1:]):
            if lo2 < hi1:
                raise CorpusError("BPM bucket ranges overlap")
        if any(lo >= hi for _, lo, hi in self.buckets):
            raise CorpusError("empty BPM bucket")
        if not self.residual_priority:
            object.__setattr__(self, "residual_priority", tuple(names))
        elif sorted(self.residual_priority) != sorted(names):
            raise CorpusError("residual_priority must be a permutation of the stratum names")

    @property
    def names(self):
        return tuple(b[0] for b in self.buckets)

    def bucket_of(self, bpm):
        for name, lo, hi in self.buckets:
            if lo <= bpm < hi:
                return name
        return None


# Illustrative tempo buckets for the seven genre strata. They are a working
# convention for synthetic manifests, not a claim about any published buckets.
DEFAULT_TABLE = StratumTable(
    buckets=(
        ("house", 118.0, 126.0),
        ("electro", 126.0, 131.0),
        ("techno", 131.0, 136.0),
        ("trance", 136.0, 145.0),
        ("dubstep", 145.0, 160.0),
        ("dnb", 160.0, 185.0),
        ("chill", 60.0, 118.0),
    ),
)


@dataclass
class AllocationPlan:
    available: dict
    allocated: dict
    total_n: int

    def __post_init__(self):
        for s, a in self.allocated.items():
            if a > self.available.get(s, 0):
                raise Infeasible(f"stratum {s}: allocated {a} > available {self.available.get(s, 0)}")
        if sum(self.allocated.values()) != self.total_n:
            raise Infeasible("allocations do not sum to total_n")


@dataclass
class SplitSpec:
    train_ids: list
    test_ids: list
    folds: list
    seed: int = 0

    def to_json(self):
        obj = {"seed": self.seed, "train_ids": self.train_ids,
               "test_ids": self.test_ids, "folds": self.folds}
        return json.dumps(obj, indent=2) + "\n"

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        spec = cls(list(obj["train_ids"]), list(obj["test_ids"]),
                   [list(f) for f in obj["folds"]], int(obj["seed"]))
        spec.check()
        return spec

    def check(self):
        train, test = set(self.train_ids), set(self.test_ids)
        if len(train) != len(self.train_ids) or len(test) != len(self.test_ids):
            raise BadCounts("duplicate ids in split")
        if train & test:
            raise BadCounts("train and test overlap")
        flat = [t for f in self.folds for t in f]
        if sorted(flat) != sorted(self.train_ids):
            raise BadCounts("folds do not partition the training ids")
        sizes = [len(f) for f in self.folds]
        if sizes and max(sizes) - min(sizes) > 1:
            raise BadCounts("fold sizes differ by more than one")


# --- manifest I/O ----------------------------------------------------------

def _fmt_num(x):
    if x is None:
        return ""
    return repr(float(x))


def write_manifest(records, path_or_buf):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MANIFEST_COLUMNS)
    for r in records:
        w.writerow([r.track_id, _fmt_num(r.bpm), r.stratum or "", _fmt_num(r.duration_s),
                    *r.embedding_paths, r.annotation_path])
    text = buf.getvalue()
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(text)
    else:
        with open(path_or_buf, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def read_manifest(path_or_buf):
    if hasattr(path_or_buf, "read"):
        text = path_or_buf.read()
    else:
        with open(path_or_buf, encoding="utf-8", newline="") as fh:
            text = fh.read()
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != MANIFEST_COLUMNS:
        raise CorpusError(f"manifest header must be {','.join(MANIFEST_COLUMNS)}")
    records = []
    for line, row in enumerate(reader, start=2):
        try:
            records.append(TrackRecord(
                track_id=row["track_id"],
                bpm=float(row["bpm"]) if row["bpm"] else None,
                stratum=row["stratum"] or None,
                duration_s=float(row["duration_s"]) if row["duration_s"] else 0.0,
                embedding_paths=tuple(row[c] for c in STREAM_COLUMNS),
                annotation_path=row["annotation"],
            ))
        except ValueError as exc:
            raise CorpusError(f"manifest line {line}: {exc}") from None
    return records


# --- curation --------------------------------------------------------------

def resolve_stratum(record, table):
    """Declared stratum wins; otherwise the BPM bucket; otherwise ``None``."""
    if record.stratum:
        return record.stratum
    if record.bpm is None:
        return None
    return table.bucket_of(record.bpm)


def stratum_counts(manifest, table):
    counts = {name: 0 for name in table.names}
    for r in manifest:
        s = resolve_stratum(r, table)
        if s is not None:
            counts[s] = counts.get(s, 0) + 1
    return counts


def allocate_equal(available, n, priority=None):
    """Spread ``n`` units over strata as evenly as capacities allow.

    The equal share ``n // k`` goes to every stratum, and the ``n % k``
    remainder is handed out one unit per stratum in priority order, so with
    ample capacity every stratum gets the floor or ceiling share. Strata
    that cannot take their share are capped; the shortfall is water-filled
    equally over strata with spare capacity, and whatever does not divide
    evenly goes to the highest-priority stratum that still has room.

    Parameters
    ----------
    available : dict
        Stratum name to number of available tracks.
    n : int
        Total number of tracks to allocate.
    priority : sequence of str, optional
        Residual order; defaults to the key order of ``available``.

    Returns
    -------
    AllocationPlan
    """
    priority = list(priority) if priority is not None else list(available)
    if sorted(priority) != sorted(available):
        raise CorpusError("priority must list every stratum exactly once")
    if n < 0:
        raise CorpusError("n must be non-negative")
    total = sum(available.values())
    if n > total:
        raise Infeasible(f"requested {n} tracks but only {total} available")

    k = len(priority)
    base, extra = divmod(n, k) if k else (0, 0)
    alloc = {}
    for rank, s in enumerate(priority):
        alloc[s] = min(base + (1 if rank < extra else 0), available[s])
    shortfall = n - sum(alloc.values())
    while shortfall > 0:
        open_ = [s for s in priority if alloc[s] < available[s]]
        share = shortfall // len(open_)
        if share == 0:
            for s in open_:
                take = min(shortfall, available[s] - alloc[s])
                alloc[s] += take
                shortfall -= take
            break
        for s in open_:
            alloc[s] += min(share, available[s] - alloc[s])
        shortfall = n - sum(alloc.values())
    return AllocationPlan(dict(available), {s: alloc[s] for s in available}, n)


def select_tracks(manifest, plan, table=DEFAULT_TABLE, seed=0, priority=None):
    """Draw ``plan.allocated[s]`` distinct tracks from every stratum.

    Each stratum's records are sorted by id and Fisher-Yates shuffled by a
    generator forked (in priority order) from ``Xoshiro256(seed)``; the first
    ``allocated`` are kept. Output is ordered by stratum priority, then id.
    """
    priority = list(priority or table.residual_priority)
    for s in plan.allocated:
        if s not in priority:
            priority.append(s)
    pools = {}
    for r in manifest:
        s = resolve_stratum(r, table)
        if s is None:
            raise Unbucketable(f"track {r.track_id} has no stratum and its BPM matches no bucket")
        pools.setdefault(s, []).append(r)

    root = Xoshiro256(seed)
    out = []
    for s in priority:
        rng = root.fork()
        want = plan.allocated.get(s, 0)
        pool = sorted(pools.get(s, []), key=lambda r: r.track_id)
        if want > len(pool):
            raise ShortStratum(f"stratum {s}: plan wants {want}, manifest has {len(pool)}")
        rng.shuffle(pool)
        out.extend(sorted(pool[:want], key=lambda r: r.track_id))
    return out


def make_splits(selection, test_count, k, seed=0):
    """Shuffle, hold out the last ``test_count`` ids, deal the rest into k folds."""
    ids = [r.track_id if isinstance(r, TrackRecord) else str(r) for r in selection]
    n = len(ids)
    if len(set(ids)) != n:
        raise BadCounts("selection has duplicate track ids")
    if not (0 <= test_count < n) or k < 1 or k > n - test_count:
        raise BadCounts(f"cannot split {n} tracks into test={test_count}, folds={k}")
    Xoshiro256(seed).shuffle(ids)
    train, test = ids[: n - test_count], ids[n - test_count:]
    folds = [train[f::k] for f in range(k)]
    return SplitSpec(train, test, folds, seed)


# --- BPM statistics --------------------------------------------------------

@dataclass(frozen=True)
class BpmStats:
    n: int
    mean: float
    median: float
    sd: float
    min: float
    max: float


def bpm_stats(records):
    """Descriptive BPM statistics; ``sd`` is the population deviation (ddof=0)."""
    bpms = np.array([r.bpm for r in records if r.bpm is not None], dtype=float)
    if bpms.size == 0:
        raise CorpusError("no BPM values")
    return BpmStats(int(bpms.size), float(bpms.mean()), float(np.median(bpms)),
                    float(bpms.std()), float(bpms.min()), float(bpms.max()))
