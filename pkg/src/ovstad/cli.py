"""Command-line entry point: ``ovstad <command> [flags]``.

Exit codes: 0 success, 1 data error, 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .encoders import DualEncoder, EncoderConfig, TokenizationError, Vocabulary
from .evaluation import DetectionInstance, GroundTruthInstance, ReportError, evaluate
from .experiment import make_proposals
from .forge.splits import BenchmarkSplit, ClassInfo, build_split
from .forge.synthetic import (
    GenerationError,
    SyntheticConfig,
    caption,
    default_classes,
    gen_synthetic,
    load_synthetic,
    motion_axis,
    save_synthetic,
)
from .forge.text import SentenceError
from .forge.tubes import RegionTextPair, TubeError, convert_hcstvg, convert_vidstg, dataset_stats
from .objectives import LabelError
from .pipeline import (
    STAGES,
    AlignSource,
    FinetuneSource,
    LabeledClip,
    LeakageError,
    NonFiniteLossError,
    PromptSet,
    StageError,
    WarmstartSource,
    detect,
    load_model,
    parse_run_config,
    read_jsonl,
    run_stage,
    save_model,
    stage_config_from_mapping,
    write_jsonl,
)
from .regions import BoundingBox, RegionError

log = logging.getLogger("ovstad")

EXIT_OK, EXIT_DATA, EXIT_CONFIG = 0, 1, 2


class ConfigError(Exception):
    pass


DATA_ERRORS = (OSError, ValueError, KeyError, checkpoint.CheckpointError, TubeError, SentenceError,
               RegionError, ReportError, LeakageError, LabelError, TokenizationError, GenerationError,
               NonFiniteLossError, json.JSONDecodeError)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _threads(args) -> int:
    raw = args.threads if args.threads is not None else os.environ.get("OVSK_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"--threads / OVSK_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"thread count must be >= 1, got {n}")
    return n


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        raise ConfigError("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _floats(text: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise ConfigError("empty value list")
    return vals


def _write_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _clips(data_dir) -> tuple[dict[str, np.ndarray], dict[str, int]]:
    ds = load_synthetic(data_dir)
    return {c.video_id: c.frames for c in ds.clips}, {c.video_id: c.keyframe_index for c in ds.clips}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_convert(args, flavor: str) -> int:
    _require(args, "input", "output")
    skipped: list = []
    records = list(read_jsonl(args.input))
    convert = convert_hcstvg if flavor == "hcstvg" else convert_vidstg
    pairs = convert(records, skipped=skipped)
    write_jsonl(args.output, (p.to_record() for p in pairs))
    log.info("%d pairs written, %d records skipped", len(pairs), len(skipped))
    if args.skipped:
        write_jsonl(args.skipped, ({"video_id": v, "reason": r} for v, r in skipped))
    return EXIT_OK


def cmd_stats(args) -> int:
    _require(args, "pairs")
    stats = dataset_stats(read_jsonl(args.pairs))
    doc = dict(stats.to_dict(), avg_boxes_per_sentence_rounded=round(stats.avg_boxes_per_sentence, 1))
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.output:
        _write_text(args.output, text)
    sys.stdout.write(text)
    return EXIT_OK


def _proposal_record(video_id: str, frame: int, box: BoundingBox) -> dict:
    rec = {"video_id": video_id, "frame_index": frame}
    rec.update(zip(("x1", "y1", "x2", "y2"), box.as_list()))
    if box.score is not None:
        rec["score"] = box.score
    return rec


def cmd_gen_synthetic(args) -> int:
    _require(args, "out")
    if args.per_class < 0:
        raise ConfigError("--per-class must be >= 0")
    classes = default_classes()
    names = [c.name for c in classes]
    primary = None
    if args.classes:
        wanted = [n.strip() for n in args.classes.split(",") if n.strip()]
        unknown = [n for n in wanted if n not in names]
        if unknown:
            raise ConfigError(f"unknown classes {unknown}; available: {names}")
        primary = [names.index(n) for n in wanted]
    cfg = SyntheticConfig(extra_actor_prob=args.extra_actor_prob)
    ds = gen_synthetic(classes, args.per_class, args.seed, cfg, prefix=args.prefix, primary_classes=primary)
    out = Path(args.out)
    save_synthetic(ds, out)
    write_jsonl(out / "tubes.jsonl", (t.to_record() for t in ds.tubes()))
    write_jsonl(out / "gt.jsonl", (GroundTruthInstance(v, k, b, frozenset([c])).to_record()
                                   for v, k, b, c in ds.labels()))
    props = make_proposals(ds, args.seed, args.box_jitter, args.distractors)
    write_jsonl(out / "proposals.jsonl",
                (_proposal_record(v, ds.clip_map()[v].keyframe_index, b) for v in sorted(props) for b in props[v]))
    counts = ds.instance_counts()
    classes_doc = [{"name": n, "count": counts[i], "type": motion_axis(n)} for i, n in enumerate(names)]
    _write_text(out / "classes.json", json.dumps(classes_doc, indent=2) + "\n")
    log.info("wrote %d clips to %s", len(ds.clips), out)
    return EXIT_OK


def cmd_build_split(args) -> int:
    _require(args, "classes", "output")
    doc = json.loads(Path(args.classes).read_text())
    infos = []
    for rec in doc:
        if rec.get("count", 0) <= 0:
            log.warning("class %r has no instances; kept out of the split", rec.get("name"))
            continue
        infos.append(ClassInfo(str(rec["name"]), int(rec["count"]), rec.get("type"), rec.get("ap")))
    split = build_split(infos, seed=args.seed, restarts=args.restarts)
    split.save(args.output)
    log.info("base=%s novel=%s", split.base, split.novel)
    return EXIT_OK


def _stage_values(args, file_values: dict[str, str]) -> dict[str, str]:
    """Config-file values overridden by explicitly given command-line flags."""
    values = dict(file_values)
    cli = {"stage": args.stage, "lr": args.lr, "iters": args.iters, "batch": args.batch, "beta": args.beta,
           "gamma": args.gamma, "tau_init": args.tau_init, "preset": args.preset,
           "checkpoint_every": args.checkpoint_every}
    for k, v in cli.items():
        if v is not None:
            values[k] = str(v)
    if args.seed_given:
        values["seed"] = str(args.seed)
    values.setdefault("seed", str(args.seed))
    for flag in ("freeze_text", "no_flip", "no_scale", "no_jitter"):
        if getattr(args, flag):
            values[flag] = "true"
    for neg, pos in (("no_flip", "horizontal_flip"), ("no_scale", "random_scale"), ("no_jitter", "color_jitter")):
        if values.pop(neg, "false").lower() in ("1", "true", "yes", "on"):
            values[pos] = "false"
    return values


PATH_KEYS = ("data", "pairs", "split", "gt", "init", "output", "metrics", "resume", "vocab")


def _new_model(clips: dict[str, np.ndarray], texts: list[str], seed: int, tau_init: float) -> DualEncoder:
    any_clip = next(iter(clips.values()))
    T_, C, H, _ = any_clip.shape
    cfg = EncoderConfig(clip_length=T_, channels=C, image_size=H)
    return DualEncoder(cfg, Vocabulary.build(texts), seed=seed, tau_init=tau_init)


def cmd_train(args) -> int:
    file_values = parse_run_config(Path(args.config).read_text()) if args.config else {}
    for key in PATH_KEYS:
        if getattr(args, key, None) is None and key in file_values:
            setattr(args, key, file_values[key])
    cfg = stage_config_from_mapping(_stage_values(args, file_values))
    _require(args, "data", "output")
    clips, keyframes = _clips(args.data)
    ds_classes = [c.name for c in load_synthetic(args.data).classes]

    split = BenchmarkSplit.load(args.split) if args.split else None
    vocab_texts = [caption(n) for n in ds_classes] + ds_classes + (split.classes if split else [])
    if args.init:
        model, _ = load_model(args.init)
    else:
        model = _new_model(clips, vocab_texts, cfg.seed, cfg.tau_init)

    if cfg.stage == "align":
        _require(args, "pairs")
        source = AlignSource([RegionTextPair.from_record(r) for r in read_jsonl(args.pairs)], clips)
    elif cfg.stage == "finetune":
        _require(args, "split", "gt")
        base = set(split.base_ids)
        by_clip: dict[str, list[GroundTruthInstance]] = {}
        for r in read_jsonl(args.gt):
            g = GroundTruthInstance.from_record(r)
            by_clip.setdefault(g.video_id, []).append(g)
        items, dropped = [], 0
        for vid in sorted(by_clip):
            gts = [g for g in by_clip[vid] if g.frame_index == keyframes.get(vid)]
            if any(not g.class_ids <= base for g in gts):
                dropped += 1
                continue
            if gts:
                items.append(LabeledClip(vid, tuple(g.box for g in gts), tuple(g.class_ids for g in gts)))
        if dropped:
            log.warning("finetuning skips %d clips that contain novel-class actors", dropped)
        source = FinetuneSource(items, clips, split.base, split.base_ids)
    else:
        captions = {}
        for r in read_jsonl(Path(args.data) / "tubes.jsonl"):
            captions.setdefault(str(r["video_id"]), str(r["description"]))
        source = WarmstartSource(captions, clips)

    resume = checkpoint.load(args.resume) if args.resume else None
    if resume is not None and not args.init:
        model, _ = load_model(args.resume)
    try:
        run = run_stage(cfg, source, model, checkpoint_path=args.output, metrics_path=args.metrics,
                        resume=resume)
    except NonFiniteLossError as exc:
        log.error("%s", exc)
        return EXIT_DATA
    log.info("stage %s finished after %d iterations", cfg.stage, run.iterations_done)
    return EXIT_OK


def _load_proposals(path, threshold: float) -> dict[tuple[str, int], list[BoundingBox]]:
    """Proposal lines carry either ``x1 y1 x2 y2`` fields or a ``box`` list, plus an optional ``score``."""
    out: dict[tuple[str, int], list[BoundingBox]] = {}
    for r in read_jsonl(path):
        s = r.get("score")
        if s is not None and float(s) < threshold:
            continue
        key = (str(r["video_id"]), int(r["frame_index"]))
        coords = r["box"][:4] if "box" in r else [r["x1"], r["y1"], r["x2"], r["y2"]]
        box = BoundingBox(*map(float, coords), None if s is None else float(s))
        out.setdefault(key, []).append(box)
    return out


def _prompt_names(args) -> tuple[list[str], list[int], BenchmarkSplit | None]:
    split = BenchmarkSplit.load(args.split) if args.split else None
    if args.prompts:
        names = [p.strip() for p in args.prompts.split(",") if p.strip()]
        ids = [split.class_id(n) for n in names] if split else list(range(len(names)))
        return names, ids, split
    if split is None:
        raise ConfigError("give --prompts or --split")
    return list(split.classes), list(range(len(split.classes))), split


def _detect(model, clips, proposals, prompts: PromptSet, beta: float) -> list[DetectionInstance]:
    dets = []
    for (vid, frame), boxes in sorted(proposals.items()):
        if vid not in clips:
            raise KeyError(f"proposals reference unknown clip {vid!r}")
        dets.extend(detect(model, vid, frame, clips[vid], boxes, prompts, beta))
    return dets


def cmd_detect(args) -> int:
    _require(args, "model", "data", "proposals", "output")
    if not 0.0 <= args.beta <= 1.0:
        raise ConfigError(f"--beta {args.beta} outside [0, 1]")
    names, ids, _ = _prompt_names(args)
    model, _ = load_model(args.model)
    clips, _ = _clips(args.data)
    prompts = PromptSet.encode(model, names, ids)
    dets = _detect(model, clips, _load_proposals(args.proposals, args.proposal_threshold), prompts, args.beta)
    write_jsonl(args.output, (d.to_record() for d in dets))
    log.info("%d detections written", len(dets))
    return EXIT_OK


def cmd_eval(args) -> int:
    _require(args, "dets", "gt", "split")
    split = BenchmarkSplit.load(args.split)
    dets = [DetectionInstance.from_record(r) for r in read_jsonl(args.dets)]
    gts = [GroundTruthInstance.from_record(r) for r in read_jsonl(args.gt)]
    report = evaluate(dets, gts, split, thr=args.iou, threads=_threads(args))
    text = report.dumps()
    if args.output:
        _write_text(args.output, text)
    if args.pr_csv:
        report.write_pr_csv(args.pr_csv)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_sweep_beta(args) -> int:
    _require(args, "model", "data", "proposals", "gt", "split", "output")
    betas = _floats(args.values)
    if any(not 0.0 <= b <= 1.0 for b in betas):
        raise ConfigError(f"beta values must lie in [0, 1], got {betas}")
    split = BenchmarkSplit.load(args.split)
    model, _ = load_model(args.model)
    clips, _ = _clips(args.data)
    proposals = _load_proposals(args.proposals, args.proposal_threshold)
    gts = [GroundTruthInstance.from_record(r) for r in read_jsonl(args.gt)]
    prompts = PromptSet.encode(model, split.classes)
    rows = []
    reports_dir = Path(args.reports_dir) if args.reports_dir else None
    if reports_dir:
        reports_dir.mkdir(parents=True, exist_ok=True)
    for beta in betas:
        report = evaluate(_detect(model, clips, proposals, prompts, beta), gts, split, threads=_threads(args))
        if reports_dir:
            _write_text(reports_dir / f"beta_{beta:g}.json", report.dumps())
        rows.append([f"{beta:g}", report.map_base, report.map_novel, report.map_all])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["beta", "map_base", "map_novel", "map_all"])
    for r in rows:
        w.writerow([r[0]] + ["" if v is None else f"{100 * v:.2f}" for v in r[1:]])
    _write_text(args.output, buf.getvalue())
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


class _SeedAction(argparse.Action):
    def __call__(self, parser, namespace, values, option_string=None):
        setattr(namespace, self.dest, values)
        namespace.seed_given = True


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, action=_SeedAction, help="seed for all randomness")
    common.add_argument("--threads", type=int, default=None,
                        help="worker cap (default: $OVSK_THREADS or 1)")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    p = _Parser(prog="ovstad", description="Open-vocabulary spatio-temporal action detection toolkit.")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    for name, help_ in (("convert-hcstvg", "multi-sentence tubes -> region-text pairs"),
                        ("convert-vidstg", "single-sentence tubes -> region-text pairs")):
        c = sub.add_parser(name, parents=[common], help=help_)
        c.add_argument("--input", help="tube annotations (JSON lines)")
        c.add_argument("--output", help="region-text pairs (JSON lines)")
        c.add_argument("--skipped", help="optional JSON-lines log of skipped records")

    c = sub.add_parser("stats", parents=[common], help="pair count, unique sentences, boxes per sentence")
    c.add_argument("--pairs")
    c.add_argument("--output")

    c = sub.add_parser("gen-synthetic", parents=[common], help="render the synthetic action benchmark")
    c.add_argument("--out", help="output directory")
    c.add_argument("--per-class", type=int, default=10)
    c.add_argument("--classes", help="comma-separated class names for the primary actors (default: all)")
    c.add_argument("--prefix", default="syn")
    c.add_argument("--extra-actor-prob", type=float, default=0.5)
    c.add_argument("--box-jitter", type=float, default=0.1)
    c.add_argument("--distractors", type=int, default=1)

    c = sub.add_parser("build-split", parents=[common], help="base/novel class split")
    c.add_argument("--classes", help="JSON list of {name, count, type, ap}")
    c.add_argument("--output")
    c.add_argument("--restarts", type=int, default=8)

    c = sub.add_parser("train", parents=[common], help="run one training stage")
    c.add_argument("--config", help="key=value run-config file; explicit flags win")
    c.add_argument("--stage", choices=STAGES)
    c.add_argument("--preset", choices=["full", "desk"])
    c.add_argument("--lr", type=float)
    c.add_argument("--iters", type=int)
    c.add_argument("--batch", type=int)
    c.add_argument("--beta", type=float)
    c.add_argument("--gamma", type=float)
    c.add_argument("--tau-init", type=float)
    c.add_argument("--checkpoint-every", type=int)
    c.add_argument("--freeze-text", action="store_true", help="keep the text tower fixed in finetuning")
    c.add_argument("--no-flip", action="store_true")
    c.add_argument("--no-scale", action="store_true")
    c.add_argument("--no-jitter", action="store_true")
    c.add_argument("--data", help="synthetic dataset directory")
    c.add_argument("--pairs", help="region-text pairs for alignment")
    c.add_argument("--split")
    c.add_argument("--gt", help="ground-truth instances for finetuning")
    c.add_argument("--init", help="input model checkpoint (default: fresh model)")
    c.add_argument("--resume", help="checkpoint written by an interrupted run of this stage")
    c.add_argument("--output", help="output checkpoint")
    c.add_argument("--metrics", help="JSON-lines metrics log")

    for name, help_ in (("detect", "score proposals against prompts"),
                        ("sweep-beta", "evaluate several fusion ratios")):
        c = sub.add_parser(name, parents=[common], help=help_)
        c.add_argument("--model")
        c.add_argument("--data")
        c.add_argument("--proposals")
        c.add_argument("--split")
        c.add_argument("--proposal-threshold", type=float, default=0.3,
                       help="drop proposals whose detector score is below this")
        c.add_argument("--output")
        if name == "detect":
            c.add_argument("--prompts", help="comma-separated class names (default: split classes)")
            c.add_argument("--beta", type=float, default=0.3)
        else:
            c.add_argument("--values", default="0,0.1,0.3,0.5,0.7,0.9,1")
            c.add_argument("--gt")
            c.add_argument("--reports-dir")

    c = sub.add_parser("eval", parents=[common], help="frame mAP report")
    c.add_argument("--dets")
    c.add_argument("--gt")
    c.add_argument("--split")
    c.add_argument("--iou", type=float, default=0.5)
    c.add_argument("--output")
    c.add_argument("--pr-csv")
    return p


COMMANDS = {
    "convert-hcstvg": lambda a: cmd_convert(a, "hcstvg"),
    "convert-vidstg": lambda a: cmd_convert(a, "vidstg"),
    "stats": cmd_stats,
    "gen-synthetic": cmd_gen_synthetic,
    "build-split": cmd_build_split,
    "train": cmd_train,
    "detect": cmd_detect,
    "eval": cmd_eval,
    "sweep-beta": cmd_sweep_beta,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not hasattr(args, "seed_given"):
        args.seed_given = False
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        _threads(args)
        return COMMANDS[args.command](args)
    except (ConfigError, StageError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except DATA_ERRORS as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
