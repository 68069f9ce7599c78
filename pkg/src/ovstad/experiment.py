"""Desk-scale open-vocabulary experiment on the synthetic benchmark.

Eight compositional motion classes are split 6 base / 2 novel. The grounding
corpus (captions of every class) drives alignment; finetuning sees only clips
whose actors all belong to base classes. Test clips contain every class.
Three models are compared on novel-class mAP: untrained, finetuned only, and
aligned then finetuned; a random-score baseline and a fusion-ratio sweep are
reported alongside.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoders import DualEncoder, EncoderConfig, Vocabulary
from .evaluation import DetectionInstance, EvalReport, GroundTruthInstance, evaluate, iou
from .forge.splits import BenchmarkSplit, ClassInfo, build_split
from .forge.synthetic import (
    SyntheticConfig,
    SyntheticDataset,
    caption,
    default_classes,
    gen_synthetic,
    motion_axis,
)
from .forge.tubes import convert_vidstg
from .pipeline import (
    AlignSource,
    FinetuneSource,
    LabeledClip,
    PromptSet,
    StageConfig,
    detect,
    run_stage,
)
from .regions import BoundingBox

log = logging.getLogger(__name__)

BETA_VALUES = (0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0)


@dataclass
class DeskConfig:
    seed: int = 0
    align_clips_per_class: int = 40
    finetune_clips_per_class: int = 60
    test_clips_per_class: int = 10
    align_iters: int = 1500
    finetune_iters: int = 1500
    learning_rate: float = 1e-4
    batch_size: int = 8
    beta: float = 0.3
    gamma: float = 2.0
    random_trials: int = 20
    box_jitter: float = 0.1
    distractors: int = 1
    betas: tuple[float, ...] = BETA_VALUES
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder"] = self.encoder.to_dict()
        return d


@dataclass
class Benchmark:
    classes: list[str]
    split: BenchmarkSplit
    vocab: Vocabulary
    align: SyntheticDataset
    finetune: SyntheticDataset
    test: SyntheticDataset
    proposals: dict[str, list[BoundingBox]]
    ground_truth: list[GroundTruthInstance]

    def clips(self) -> dict[str, np.ndarray]:
        out = {}
        for ds in (self.align, self.finetune, self.test):
            out.update({c.video_id: c.frames for c in ds.clips})
        return out


def make_proposals(ds: SyntheticDataset, seed: int, jitter: float, distractors: int) -> dict[str, list[BoundingBox]]:
    """Stand-in person detector: jittered ground truth plus background boxes."""
    out = {}
    size = ds.config.image_size
    for n, clip in enumerate(ds.clips):
        rng = np.random.default_rng([seed, 1009, n])
        gts = clip.boxes_at(ds.classes, clip.keyframe_index)
        boxes = []
        for g in gts:
            w, h = g.x2 - g.x1, g.y2 - g.y1
            dx, dy, sw, sh = rng.uniform(-jitter, jitter, 4)
            cx, cy = (g.x1 + g.x2) / 2 + dx * w, (g.y1 + g.y2) / 2 + dy * h
            w, h = w * (1 + sw), h * (1 + sh)
            boxes.append(BoundingBox.ingest(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2, (size, size)))
        placed = 0
        for _ in range(50):
            if placed == distractors:
                break
            w, h = rng.uniform(6, 12, 2)
            x, y = rng.uniform(0, size - w), rng.uniform(0, size - h)
            cand = BoundingBox(x, y, x + w, y + h)
            if all(iou(cand, g) < 0.2 for g in gts):
                boxes.append(cand)
                placed += 1
        out[clip.video_id] = boxes
    return out


def build_benchmark(cfg: DeskConfig) -> Benchmark:
    classes = default_classes()
    names = [c.name for c in classes]
    syn = SyntheticConfig(clip_length=cfg.encoder.clip_length, image_size=cfg.encoder.image_size,
                          channels=cfg.encoder.channels)
    align = gen_synthetic(classes, cfg.align_clips_per_class, cfg.seed, syn, prefix="aln")
    counts = align.instance_counts()
    split = build_split([ClassInfo(n, c, motion_axis(n)) for n, c in zip(names, counts)], seed=cfg.seed)
    finetune = gen_synthetic(classes, cfg.finetune_clips_per_class, cfg.seed + 1, syn, prefix="ft",
                             primary_classes=split.base_ids)
    test = gen_synthetic(classes, cfg.test_clips_per_class, cfg.seed + 2, syn, prefix="tst")
    vocab = Vocabulary.build([caption(n) for n in names] + [f"a person {n}" for n in names])
    gts = [GroundTruthInstance(v, k, b, frozenset([c])) for v, k, b, c in test.labels()]
    proposals = make_proposals(test, cfg.seed, cfg.box_jitter, cfg.distractors)
    return Benchmark(names, split, vocab, align, finetune, test, proposals, gts)


def labeled_clips(ds: SyntheticDataset) -> list[LabeledClip]:
    out = []
    for clip in ds.clips:
        k = clip.keyframe_index
        boxes = tuple(a.box_at(ds.classes[a.class_id], k) for a in clip.actors)
        out.append(LabeledClip(clip.video_id, boxes, tuple(frozenset([a.class_id]) for a in clip.actors)))
    return out


def stage_config(cfg: DeskConfig, stage: str, beta: float | None = None) -> StageConfig:
    # Flipping a clip swaps "left" and "right", which would corrupt the labels.
    return StageConfig(stage=stage, preset="desk", learning_rate=cfg.learning_rate,
                       iterations=cfg.align_iters if stage == "align" else cfg.finetune_iters,
                       batch_size=cfg.batch_size, beta=cfg.beta if beta is None else beta, gamma=cfg.gamma,
                       seed=cfg.seed, horizontal_flip=False)


def train_align(model: DualEncoder, bench: Benchmark, cfg: DeskConfig, metrics_path=None):
    pairs = convert_vidstg(t.to_record() for t in bench.align.tubes())
    source = AlignSource(pairs, bench.clips())
    return run_stage(stage_config(cfg, "align"), source, model, metrics_path=metrics_path)


def train_finetune(model: DualEncoder, bench: Benchmark, cfg: DeskConfig, beta: float | None = None,
                   metrics_path=None):
    split = bench.split
    source = FinetuneSource(labeled_clips(bench.finetune), bench.clips(), split.base, split.base_ids)
    return run_stage(stage_config(cfg, "finetune", beta), source, model, metrics_path=metrics_path)


def detect_all(model: DualEncoder, bench: Benchmark, beta: float) -> list[DetectionInstance]:
    prompts = PromptSet.encode(model, bench.classes)
    dets = []
    for clip in bench.test.clips:
        dets.extend(detect(model, clip.video_id, clip.keyframe_index, clip.frames,
                           bench.proposals[clip.video_id], prompts, beta))
    return dets


def random_baseline(dets: Sequence[DetectionInstance], bench: Benchmark, trials: int,
                    seed: int) -> list[float]:
    out = []
    for t in range(trials):
        rng = np.random.default_rng([seed, 7919, t])
        scores = rng.uniform(0.0, 1.0, len(dets))
        shuffled = [DetectionInstance(d.video_id, d.frame_index, d.box, d.class_id, float(s))
                    for d, s in zip(dets, scores)]
        out.append(evaluate(shuffled, bench.ground_truth, bench.split).map_novel)
    return out


def _summary(report: EvalReport) -> dict:
    return {"novel": report.map_novel, "base": report.map_base, "all": report.map_all,
            "per_class": {report.classes[i]: r.ap for i, r in sorted(report.per_class.items())}}


@dataclass
class ExperimentResult:
    zero: dict
    finetune_only: dict
    align_finetune: dict
    random_novel: list[float]
    sweep: dict[float, dict]
    losses: dict[str, list]
    split: dict
    seconds: float = 0.0

    @property
    def random_mean(self) -> float:
        return float(np.mean(self.random_novel))

    @property
    def random_std(self) -> float:
        return float(np.std(self.random_novel))

    def to_json(self) -> dict:
        d = asdict(self)
        d["sweep"] = {repr(k): v for k, v in self.sweep.items()}
        d["random_mean"], d["random_std"] = self.random_mean, self.random_std
        return d


def run_experiment(cfg: DeskConfig | None = None, out_dir=None, sweep: bool = True) -> ExperimentResult:
    cfg = cfg or DeskConfig()
    t0 = time.perf_counter()
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    def mpath(name):
        return None if out_dir is None else out_dir / f"{name}.metrics.jsonl"

    bench = build_benchmark(cfg)
    log.info("split: base=%s novel=%s", bench.split.base, bench.split.novel)

    def fresh():
        return DualEncoder(cfg.encoder, bench.vocab, seed=cfg.seed)

    losses = {}
    zero = fresh()
    zero_dets = detect_all(zero, bench, cfg.beta)
    zero_rep = evaluate(zero_dets, bench.ground_truth, bench.split)

    ft = fresh()
    losses["finetune_only"] = train_finetune(ft, bench, cfg, metrics_path=mpath("finetune_only")).losses
    ft_rep = evaluate(detect_all(ft, bench, cfg.beta), bench.ground_truth, bench.split)

    aligned = fresh()
    losses["align"] = train_align(aligned, bench, cfg, metrics_path=mpath("align")).losses
    aligned_state = {k: v.copy() for k, v in aligned.state_dict().items()}
    losses["align_finetune"] = train_finetune(aligned, bench, cfg, metrics_path=mpath("align_finetune")).losses
    af_rep = evaluate(detect_all(aligned, bench, cfg.beta), bench.ground_truth, bench.split)

    sweep_out: dict[float, dict] = {}
    if sweep:
        for beta in cfg.betas:
            if beta == cfg.beta:
                sweep_out[beta] = _summary(af_rep)
                continue
            m = fresh()
            m.load_state_dict(aligned_state)
            losses[f"sweep_{beta!r}"] = train_finetune(m, bench, cfg, beta).losses
            sweep_out[beta] = _summary(evaluate(detect_all(m, bench, beta), bench.ground_truth, bench.split))

    result = ExperimentResult(_summary(zero_rep), _summary(ft_rep), _summary(af_rep),
                              random_baseline(zero_dets, bench, cfg.random_trials, cfg.seed), sweep_out, losses,
                              bench.split.to_json())
    result.seconds = time.perf_counter() - t0
    if out_dir is not None:
        doc = result.to_json()
        doc.pop("seconds")
        (out_dir / "experiment.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return result
