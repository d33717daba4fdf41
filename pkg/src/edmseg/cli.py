"""``edmseg`` command line: synth, curate, split, train, infer, eval, plot, inspect.

Settings come from flags and an optional ``--config`` file of ``key=value``
lines (``#`` starts a comment). Flags override the file. Exit status is 0 on
success, 1 on a domain error and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from . import annotation as annmod
from .corpus import (DEFAULT_TABLE, SplitSpec, allocate_equal, bpm_stats, make_splits,
                     read_manifest, select_tracks, stratum_counts, write_manifest)
from .embedio import MAGIC as STREAM_MAGIC
from .embedio import read_stream_header
from .errors import EdmsegError
from .metrics import evaluate, headline, report_json
from .model import ModelConfig
from .pipeline import load_track, predict, synth_corpus, write_predictions
from .render import load_palette, render_svg
from .segment import DecodeConfig
from .train import CKPT_MAGIC, Checkpoint, TrainConfig, fit, format_log

# config-file keys and their types, per subcommand
_SETTINGS = {
    "synth": {"tracks": int, "seed": int, "frame_rate": float, "dim": int, "noise_sigma": float,
              "ramp": "bool", "min_section_s": int, "max_section_s": int},
    "curate": {"n": int, "seed": int, "priority": "list"},
    "split": {"test": int, "folds": int, "seed": int},
    "train": {"seed": int, "epochs": int, "frame_rate": float, "learning_rate": float,
              "label_loss_weight": float, "smear_s": float, "patience": int, "d_model": int,
              "n_layers": int, "n_heads": int, "d_ff": int, "max_frames": int,
              "dropout_rate": float, "use_positional": "bool"},
    "infer": {"boundary_threshold": float, "min_gap_s": float, "min_segment_s": float},
    "eval": {"tolerances": "floats", "frame_rate": float, "hr_mode": str, "acc_mode": str},
    "plot": {"palette": str, "width": int, "tolerance_s": float},
    "inspect": {},
}

_DEFAULTS = {
    "synth": {"tracks": 20, "seed": 0, "frame_rate": 5.0, "dim": 8, "noise_sigma": 0.5,
              "ramp": False, "min_section_s": 8, "max_section_s": 40},
    "curate": {"n": 98, "seed": 0, "priority": None},
    "split": {"test": 10, "folds": 5, "seed": 0},
    "train": {"seed": 0, "epochs": 40, "frame_rate": 1.0, "learning_rate": 3e-3,
              "label_loss_weight": 1.0, "smear_s": 0.5, "patience": None, "d_model": 32,
              "n_layers": 2, "n_heads": 4, "d_ff": None, "max_frames": 2048,
              "dropout_rate": 0.0, "use_positional": True},
    "infer": {"boundary_threshold": 0.5, "min_gap_s": 2.0, "min_segment_s": 1.0},
    "eval": {"tolerances": [0.5, 3.0], "frame_rate": 10.0, "hr_mode": "precision", "acc_mode": "micro"},
    "plot": {"palette": None, "width": 960, "tolerance_s": 0.5},
    "inspect": {},
}


class UsageError(Exception):
    pass


def _convert(kind, text):
    if kind == "bool":
        low = str(text).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if kind == "list":
        return [s.strip() for s in str(text).split(",") if s.strip()]
    if kind == "floats":
        return [float(s) for s in str(text).split(",") if s.strip()]
    return kind(text)


def read_config(path, command):
    """Parse a ``key=value`` file into typed settings for ``command``."""
    allowed = _SETTINGS[command]
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in allowed:
                raise UsageError(f"{path}:{lineno}: unknown setting {key!r} for {command}")
            try:
                out[key] = _convert(allowed[key], value)
            except ValueError as exc:
                raise UsageError(f"{path}:{lineno}: {exc}") from None
    return out


def _settings(args):
    cfg = dict(_DEFAULTS[args.command])
    if getattr(args, "config", None):
        cfg.update(read_config(args.config, args.command))
    for key in _SETTINGS[args.command]:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


# --- parser ------------------------------------------------------------------

def _floats(text):
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser():
    p = argparse.ArgumentParser(prog="edmseg", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic corpus with planted structure")
    s.add_argument("--out", required=True)
    s.add_argument("--tracks", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--frame-rate", dest="frame_rate", type=float, help="stream frame rate")
    s.add_argument("--config")

    s = sub.add_parser("curate", help="stratified equal-allocation selection from a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True, help="output manifest CSV")
    s.add_argument("--n", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--config")

    s = sub.add_parser("split", help="train/test split with k cross-validation folds")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True, help="output split JSON")
    s.add_argument("--test", type=int)
    s.add_argument("--folds", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--config")

    s = sub.add_parser("train", help="train the segmenter")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True, help="output checkpoint")
    s.add_argument("--split", help="split JSON; trains on its train ids")
    s.add_argument("--checkpoint", help="initial checkpoint (fine-tune)")
    s.add_argument("--resume", action="store_true", help="continue the --checkpoint run")
    s.add_argument("--log", help="training log path (default: OUT.log)")
    s.add_argument("--seed", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--frame-rate", dest="frame_rate", type=float, help="model input frame rate")
    s.add_argument("--config")

    s = sub.add_parser("infer", help="predict annotations")
    s.add_argument("--manifest", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--split", help="split JSON; predicts its test ids")
    s.add_argument("--config")

    s = sub.add_parser("eval", help="score predictions against references")
    s.add_argument("--pred", required=True, help="annotation file or directory")
    s.add_argument("--ref", required=True, help="annotation file or directory")
    s.add_argument("--report", help="output report JSON")
    s.add_argument("--tolerances", type=_floats)
    s.add_argument("--frame-rate", dest="frame_rate", type=float)
    s.add_argument("--hr-mode", dest="hr_mode", choices=("precision", "f1"))
    s.add_argument("--acc-mode", dest="acc_mode", choices=("micro", "macro"))
    s.add_argument("--config")

    s = sub.add_parser("plot", help="SVG timeline of an annotation")
    s.add_argument("--ref", required=True)
    s.add_argument("--pred")
    s.add_argument("--out", required=True)
    s.add_argument("--config")

    s = sub.add_parser("inspect", help="print file headers")
    s.add_argument("paths", nargs="+")
    return p


# --- commands ------------------------------------------------------------------

def _need(path, what):
    if not os.path.exists(path):
        raise UsageError(f"{what} not found: {path}")


def _need_parent(path):
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise UsageError(f"output directory does not exist: {parent}")


def cmd_synth(args, cfg):
    _need_parent(args.out.rstrip("/") or ".")
    recs = synth_corpus(args.out, cfg["tracks"], cfg["seed"], cfg["dim"], cfg["frame_rate"],
                        cfg["noise_sigma"], cfg["ramp"], min_s=cfg["min_section_s"],
                        max_s=cfg["max_section_s"])
    print(f"wrote {len(recs)} tracks to {args.out}")


def _rebase(records, src_dir, dst_dir):
    """Rewrite manifest paths so they resolve from ``dst_dir``."""
    def move(p):
        return os.path.relpath(os.path.join(src_dir, p), dst_dir) if p else p

    return [dataclasses.replace(r, embedding_paths=tuple(move(p) for p in r.embedding_paths),
                                annotation_path=move(r.annotation_path)) for r in records]


def cmd_curate(args, cfg):
    _need(args.manifest, "manifest")
    _need_parent(args.out)
    records = read_manifest(args.manifest)
    counts = stratum_counts(records, DEFAULT_TABLE)
    priority = cfg["priority"] or list(DEFAULT_TABLE.residual_priority)
    extra = [s for s in counts if s not in priority]
    plan = allocate_equal(counts, cfg["n"], priority + extra)
    chosen = select_tracks(records, plan, DEFAULT_TABLE, cfg["seed"], priority + extra)
    src, dst = os.path.dirname(os.path.abspath(args.manifest)), os.path.dirname(os.path.abspath(args.out))
    write_manifest(_rebase(chosen, src, dst), args.out)
    for s in priority + extra:
        print(f"{s}\t{plan.allocated[s]}/{plan.available[s]}")
    try:
        st = bpm_stats(chosen)
        print(f"bpm mean {st.mean:.2f} median {st.median:.2f} sd {st.sd:.2f} "
              f"range {st.min:g}-{st.max:g}")
    except EdmsegError:
        pass


def cmd_split(args, cfg):
    _need(args.manifest, "manifest")
    _need_parent(args.out)
    spec = make_splits(read_manifest(args.manifest), cfg["test"], cfg["folds"], cfg["seed"])
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(spec.to_json())
    print(f"train {len(spec.train_ids)} test {len(spec.test_ids)} "
          f"folds {[len(f) for f in spec.folds]}")


def _read_split(path):
    with open(path, encoding="utf-8") as fh:
        return SplitSpec.from_json(fh.read())


def _subset(records, ids):
    by_id = {r.track_id: r for r in records}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise EdmsegError(f"split ids not in manifest: {missing[:5]}")
    return [by_id[i] for i in sorted(ids)]


def cmd_train(args, cfg):
    _need(args.manifest, "manifest")
    if args.split:
        _need(args.split, "split")
    if args.checkpoint:
        _need(args.checkpoint, "checkpoint")
    _need_parent(args.out)
    records = read_manifest(args.manifest)
    if args.split:
        records = _subset(records, _read_split(args.split).train_ids)
    base = os.path.dirname(os.path.abspath(args.manifest))
    data = [load_track(r, base, cfg["frame_rate"]) for r in records]
    if not data:
        raise EdmsegError("no training tracks")
    init = Checkpoint.load(args.checkpoint) if args.checkpoint else None
    if init is not None and args.resume:
        mc = init.model_config
        tc = TrainConfig(**{**init.train_config.to_dict(), "epochs": cfg["epochs"]})
    else:
        mc = ModelConfig(d_in=data[0][0].dim, d_model=cfg["d_model"], n_layers=cfg["n_layers"],
                         n_heads=cfg["n_heads"], d_ff=cfg["d_ff"], max_frames=cfg["max_frames"],
                         dropout_rate=cfg["dropout_rate"], use_positional=cfg["use_positional"],
                         frame_rate=cfg["frame_rate"])
        tc = TrainConfig(learning_rate=cfg["learning_rate"], epochs=cfg["epochs"],
                         label_loss_weight=cfg["label_loss_weight"], smear_s=cfg["smear_s"],
                         seed=cfg["seed"], patience=cfg["patience"])
    ckpt = fit(mc, tc, data, init=init, resume=args.resume,
               on_epoch=lambda e, loss: print(f"epoch {e}\t{loss:.6f}", flush=True))
    ckpt.save(args.out)
    with open(args.log or args.out + ".log", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_log(ckpt.loss_history))


def cmd_infer(args, cfg):
    _need(args.manifest, "manifest")
    _need(args.checkpoint, "checkpoint")
    if args.split:
        _need(args.split, "split")
    records = read_manifest(args.manifest)
    if args.split:
        records = _subset(records, _read_split(args.split).test_ids)
    ckpt = Checkpoint.load(args.checkpoint)
    dcfg = DecodeConfig(cfg["boundary_threshold"], cfg["min_gap_s"], cfg["min_segment_s"])
    base = os.path.dirname(os.path.abspath(args.manifest))
    preds = []
    for r in records:
        fused, ref = load_track(r, base, ckpt.model_config.frame_rate)
        preds.append(predict(ckpt, fused, ref.duration_s, dcfg, track_id=r.track_id))
    write_predictions(preds, args.out)
    print(f"wrote {len(preds)} predictions to {args.out}")


def _annotation_pairs(pred, ref):
    if os.path.isdir(ref):
        refs = sorted(f for f in os.listdir(ref) if f.endswith(".json"))
        if not os.path.isdir(pred):
            raise UsageError("--pred must be a directory when --ref is one")
        pairs = []
        for f in refs:
            pf = os.path.join(pred, f)
            if os.path.exists(pf):
                pairs.append((pf, os.path.join(ref, f)))
        if not pairs:
            raise EdmsegError(f"no predictions in {pred} match references in {ref}")
        return pairs
    return [(pred, ref)]


def _load_ann(path):
    try:
        return annmod.read_annotation(path)
    except EdmsegError as exc:
        raise EdmsegError(f"{path}: {exc}") from None


def cmd_eval(args, cfg):
    _need(args.pred, "prediction")
    _need(args.ref, "reference")
    if args.report:
        _need_parent(args.report)
    pairs = [(_load_ann(p), _load_ann(r)) for p, r in _annotation_pairs(args.pred, args.ref)]
    report = evaluate(pairs, cfg["tolerances"], cfg["frame_rate"], cfg["acc_mode"])
    report["settings"] = {"tolerances": cfg["tolerances"], "frame_rate": cfg["frame_rate"],
                          "hr_mode": cfg["hr_mode"], "acc_mode": cfg["acc_mode"]}
    if args.report:
        with open(args.report, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(report_json(report))
    row = headline(report, cfg["tolerances"], cfg["hr_mode"])
    print("  ".join(f"{k} {v:.3f}" for k, v in row.items()))


def cmd_plot(args, cfg):
    _need(args.ref, "reference")
    if args.pred:
        _need(args.pred, "prediction")
    _need_parent(args.out)
    ref = _load_ann(args.ref)
    pred = _load_ann(args.pred) if args.pred else None
    svg = render_svg(ref, pred, width_px=cfg["width"], palette=load_palette(cfg["palette"]),
                     tolerance_s=cfg["tolerance_s"])
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(svg)


def describe(path):
    """One-line-per-field summary of any file type the toolkit writes."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == STREAM_MAGIC:
        return read_stream_header(path)
    if head == CKPT_MAGIC:
        ck = Checkpoint.load(path)
        n_params = sum(v.size for v in ck.params.values())
        return {"magic": "EDMC", "version": ck.version, "epoch": ck.epoch,
                "adam_step": ck.adam.step, "n_params": int(n_params),
                "model_config": ck.model_config.to_dict(),
                "train_config": ck.train_config.to_dict(),
                "last_loss": ck.loss_history[-1] if ck.loss_history else None}
    if path.endswith(".csv"):
        recs = read_manifest(path)
        return {"manifest_tracks": len(recs),
                "strata": dict(sorted(stratum_counts(recs, DEFAULT_TABLE).items()))}
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    obj = json.loads(text)
    if isinstance(obj, dict) and "segments" in obj:
        ann = annmod.parse_annotation(text)
        return {"track_id": ann.track_id, "duration_s": ann.duration_s,
                "segments": len(ann.segments), "labels": [s.label.value for s in ann.segments]}
    if isinstance(obj, dict) and "folds" in obj:
        spec = SplitSpec.from_json(text)
        return {"seed": spec.seed, "train": len(spec.train_ids), "test": len(spec.test_ids),
                "folds": [len(f) for f in spec.folds]}
    if isinstance(obj, dict) and "corpus" in obj:
        return obj["corpus"]
    raise EdmsegError(f"{path}: unrecognized file type")


def cmd_inspect(args, cfg):
    for path in args.paths:
        _need(path, "file")
    for path in args.paths:
        print(f"== {path}")
        for k, v in describe(path).items():
            print(f"{k}: {v}")


COMMANDS = {"synth": cmd_synth, "curate": cmd_curate, "split": cmd_split, "train": cmd_train,
            "infer": cmd_infer, "eval": cmd_eval, "plot": cmd_plot, "inspect": cmd_inspect}


def main(argv=None):
    """Run one subcommand; returns the process exit code (0, 1 or 2)."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors (and --help) this way
        return exc.code if isinstance(exc.code, int) else 2
    try:
        cfg = _settings(args)
        COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"edmseg {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (EdmsegError, OSError, ValueError) as exc:
        print(f"edmseg {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
