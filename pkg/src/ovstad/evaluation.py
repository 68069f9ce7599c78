"""Frame-level mAP at an IoU threshold.

Conventions pinned for reproducibility:

* a detection is a true positive when IoU with an unmatched ground truth of
  the same class is strictly greater than the threshold;
* detections are matched greedily in descending score order, ties broken by
  ingestion order; each claims the highest-IoU unmatched ground truth;
* AP is the all-point interpolated area under the monotone precision
  envelope;
* each class of a multi-label ground-truth box is evaluated independently.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .forge.splits import BenchmarkSplit
from .regions import BoundingBox

IOU_THRESHOLD = 0.5


class ReportError(ValueError):
    pass


@dataclass(frozen=True)
class DetectionInstance:
    video_id: str
    frame_index: int
    box: BoundingBox
    class_id: int
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ReportError(f"detection score {self.score} outside [0, 1]")

    def to_record(self) -> dict:
        return {"video_id": self.video_id, "frame_index": self.frame_index,
                "box": self.box.as_list(), "class_id": self.class_id, "score": self.score}

    @classmethod
    def from_record(cls, rec: Mapping) -> "DetectionInstance":
        return cls(str(rec["video_id"]), int(rec["frame_index"]), BoundingBox(*map(float, rec["box"][:4])),
                   int(rec["class_id"]), float(rec["score"]))


@dataclass(frozen=True)
class GroundTruthInstance:
    video_id: str
    frame_index: int
    box: BoundingBox
    class_ids: frozenset[int]

    def __post_init__(self):
        if not self.class_ids:
            raise ValueError("ground-truth instance needs at least one class")

    def to_record(self) -> dict:
        return {"video_id": self.video_id, "frame_index": self.frame_index,
                "box": self.box.as_list(), "class_ids": sorted(self.class_ids)}

    @classmethod
    def from_record(cls, rec: Mapping) -> "GroundTruthInstance":
        ids = rec["class_ids"] if "class_ids" in rec else [rec["class_id"]]
        return cls(str(rec["video_id"]), int(rec["frame_index"]), BoundingBox(*map(float, rec["box"][:4])),
                   frozenset(int(i) for i in ids))


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def match_frame(dets: Sequence[BoundingBox], gts: Sequence[BoundingBox], thr: float = IOU_THRESHOLD) -> list[bool]:
    """TP flags for detections already sorted by descending score (one frame, one class)."""
    taken = [False] * len(gts)
    flags = []
    for d in dets:
        best, best_iou = -1, thr
        for j, g in enumerate(gts):
            if taken[j]:
                continue
            v = iou(d, g)
            if v > best_iou:
                best, best_iou = j, v
        if best >= 0:
            taken[best] = True
        flags.append(best >= 0)
    return flags


def precision_recall(flags: Sequence[bool], n_gt: int) -> tuple[np.ndarray, np.ndarray]:
    tp = np.cumsum(np.asarray(flags, dtype=np.float64))
    fp = np.cumsum(1.0 - np.asarray(flags, dtype=np.float64))
    return tp / np.maximum(tp + fp, np.finfo(np.float64).tiny), tp / n_gt


def average_precision(flags: Sequence[bool], scores: Sequence[float], n_gt: int) -> float:
    """All-point interpolated AP; ``flags``/``scores`` cover every detection of one class."""
    if n_gt < 1:
        raise ReportError("average precision is undefined without ground truth")
    if len(flags) == 0:
        return 0.0
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    prec, rec = precision_recall([flags[i] for i in order], n_gt)
    mrec = np.concatenate([[0.0], rec, [1.0]])
    mpre = np.concatenate([[0.0], prec, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


@dataclass
class ClassResult:
    ap: float | None
    n_gt: int
    tp: int
    fp: int
    fn: int
    precision: list[float] = field(default_factory=list)
    recall: list[float] = field(default_factory=list)
    scores: list[float] = field(default_factory=list)


@dataclass
class EvalReport:
    classes: list[str]
    per_class: dict[int, ClassResult]
    base_ids: list[int]
    novel_ids: list[int]
    threshold: float = IOU_THRESHOLD

    def _mean(self, ids: Iterable[int]) -> float | None:
        vals = [self.per_class[i].ap for i in ids if self.per_class[i].ap is not None]
        return float(np.mean(vals)) if vals else None

    @property
    def map_base(self) -> float | None:
        return self._mean(self.base_ids)

    @property
    def map_novel(self) -> float | None:
        return self._mean(self.novel_ids)

    @property
    def map_all(self) -> float | None:
        return self._mean(range(len(self.classes)))

    def to_json(self) -> dict:
        return {
            "iou_threshold": self.threshold,
            "map": {"base": self.map_base, "novel": self.map_novel, "all": self.map_all},
            "classes": [
                {"class_id": i, "name": self.classes[i],
                 "split": "base" if i in self.base_ids else "novel",
                 "ap": r.ap, "n_gt": r.n_gt, "tp": r.tp, "fp": r.fp, "fn": r.fn}
                for i, r in sorted(self.per_class.items())
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    def write_pr_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["class_id", "name", "rank", "score", "precision", "recall"])
            for i, r in sorted(self.per_class.items()):
                for k, (s, p, rc) in enumerate(zip(r.scores, r.precision, r.recall)):
                    w.writerow([i, self.classes[i], k, repr(s), repr(p), repr(rc)])


def evaluate_class(dets: Sequence[DetectionInstance], gts: Sequence[GroundTruthInstance], class_id: int,
                   thr: float = IOU_THRESHOLD) -> ClassResult:
    """Match one class frame by frame, then rank its detections across frames."""
    gt_by_frame: dict[tuple[str, int], list[BoundingBox]] = {}
    for g in gts:
        if class_id in g.class_ids:
            gt_by_frame.setdefault((g.video_id, g.frame_index), []).append(g.box)
    n_gt = sum(len(v) for v in gt_by_frame.values())

    mine = [(i, d) for i, d in enumerate(dets) if d.class_id == class_id]
    mine.sort(key=lambda x: (-x[1].score, x[0]))
    by_frame: dict[tuple[str, int], list[tuple[int, DetectionInstance]]] = {}
    for rank, (_, d) in enumerate(mine):
        by_frame.setdefault((d.video_id, d.frame_index), []).append((rank, d))
    flags = [False] * len(mine)
    for key, items in by_frame.items():
        for (rank, _), ok in zip(items, match_frame([d.box for _, d in items], gt_by_frame.get(key, []), thr)):
            flags[rank] = ok
    scores = [d.score for _, d in mine]
    tp = int(sum(flags))
    if n_gt == 0:
        return ClassResult(None, 0, tp, len(flags) - tp, 0, scores=scores)
    prec, rec = precision_recall(flags, n_gt) if flags else (np.zeros(0), np.zeros(0))
    return ClassResult(average_precision(flags, scores, n_gt), n_gt, tp, len(flags) - tp, n_gt - tp,
                       prec.tolist(), rec.tolist(), scores)


def evaluate(dets: Sequence[DetectionInstance], gts: Sequence[GroundTruthInstance], split: BenchmarkSplit,
             thr: float = IOU_THRESHOLD, threads: int = 1) -> EvalReport:
    n = len(split.classes)
    for d in dets:
        if not 0 <= d.class_id < n:
            raise ReportError(f"detection class id {d.class_id} is not in the split")
    for g in gts:
        bad = [c for c in g.class_ids if not 0 <= c < n]
        if bad:
            raise ReportError(f"ground-truth class ids {bad} are not in the split")
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda c: evaluate_class(dets, gts, c, thr), range(n)))
    else:
        results = [evaluate_class(dets, gts, c, thr) for c in range(n)]
    return EvalReport(list(split.classes), dict(enumerate(results)), split.base_ids, split.novel_ids, thr)
