"""Corpus-level workflows shared by the command line and the demos."""

from __future__ import annotations

import os

from .annotation import Label, read_annotation, write_annotation
from .corpus import DEFAULT_TABLE, TrackRecord, write_manifest
from .embedio import (STREAM_TAGS, SyntheticSpec, fuse_streams, random_means, random_sections,
                      read_stream, synth_track, write_stream)
from .model import forward
from .rng import Xoshiro256
from .segment import DecodeConfig, predict_annotation


def synth_corpus(out_dir, tracks, seed=0, dim=8, frame_rate=5.0, noise_sigma=0.5,
                 ramp=False, table=DEFAULT_TABLE, min_s=8, max_s=40):
    """Write a synthetic corpus (streams, annotations, manifest) to ``out_dir``.

    Label means are shared by the whole corpus; section sequences, strata,
    BPMs and noise differ per track. Returns the manifest records.
    """
    os.makedirs(os.path.join(out_dir, "emb"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "ann"), exist_ok=True)
    records = []
    for spec, stratum, bpm in iter_synthetic_specs(tracks, seed, dim, frame_rate, noise_sigma,
                                                   ramp, table, min_s, max_s):
        streams, ann = synth_track(spec)
        paths = []
        for tag, s in zip(STREAM_TAGS, streams):
            rel = f"emb/{spec.track_id}.{tag}.edmf"
            write_stream(s, os.path.join(out_dir, rel))
            paths.append(rel)
        ann_rel = f"ann/{spec.track_id}.json"
        write_annotation(ann, os.path.join(out_dir, ann_rel))
        records.append(TrackRecord(spec.track_id, bpm, stratum, ann.duration_s, tuple(paths), ann_rel))
    write_manifest(records, os.path.join(out_dir, "manifest.csv"))
    return records


def iter_synthetic_specs(tracks, seed=0, dim=8, frame_rate=5.0, noise_sigma=0.5, ramp=False,
                         table=DEFAULT_TABLE, min_s=8, max_s=40):
    """Yield ``(SyntheticSpec, stratum, bpm)`` for ``tracks`` synthetic tracks."""
    rng = Xoshiro256(seed)
    means = random_means(dim, rng.next_u64())
    ramps = frozenset({Label.BUILDUP}) if ramp else frozenset()
    names = table.names
    for k in range(tracks):
        stratum = names[rng.below(len(names))]
        _, lo, hi = table.buckets[names.index(stratum)]
        bpm = round(lo + (hi - lo) * rng.random(), 2)
        bpm = min(bpm, hi - 0.01)
        sections = random_sections(rng, min_s, max_s)
        spec = SyntheticSpec(sections, means, noise_sigma, ramps, frame_rate,
                             seed=rng.next_u64(), track_id=f"trk{k:04d}")
        yield spec, stratum, bpm


def load_track(record, base_dir, frame_rate):
    streams = [read_stream(os.path.join(base_dir, p)) for p in record.embedding_paths]
    fused = fuse_streams(streams, frame_rate)
    ann = read_annotation(os.path.join(base_dir, record.annotation_path))
    return fused, ann


def load_dataset(records, base_dir, frame_rate):
    return [load_track(r, base_dir, frame_rate) for r in records]


def predict(checkpoint, fused, duration_s, cfg=DecodeConfig(), track_id="pred"):
    """Run the trained model on one fused input and decode an annotation."""
    out = forward(checkpoint.model_config, checkpoint.params, fused)
    return predict_annotation(out.boundary_logits, out.label_logits, duration_s,
                              fused.frame_rate, cfg, track_id)


def write_predictions(annotations, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    for ann in annotations:
        write_annotation(ann, os.path.join(out_dir, f"{ann.track_id}.json"))


def in_memory_corpus(tracks, seed=0, dim=8, frame_rate=5.0, noise_sigma=0.5, model_rate=1.0,
                     ramp=False):
    """Synthesize and fuse a corpus without touching the disk."""
    data = []
    for spec, _, _ in iter_synthetic_specs(tracks, seed, dim, frame_rate, noise_sigma, ramp):
        streams, ann = synth_track(spec)
        data.append((fuse_streams(streams, model_rate), ann))
    return data

