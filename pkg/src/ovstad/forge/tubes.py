"""Tube annotations -> region-text pairs, plus corpus statistics."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Mapping

from ..regions import BoundingBox, RegionError
from .text import SentenceError, is_human_declarative, normalize_sentence, split_sentences

log = logging.getLogger(__name__)


class TubeError(ValueError):
    pass


@dataclass
class Tube:
    video_id: str
    person_id: str
    frames: list[int]
    boxes: list[BoundingBox]
    description: str = ""

    def __post_init__(self):
        if len(self.frames) != len(self.boxes):
            raise TubeError(f"{len(self.frames)} frame indices for {len(self.boxes)} boxes")
        if not self.frames:
            raise TubeError("empty tube")
        if any(b <= a for a, b in zip(self.frames, self.frames[1:])):
            raise TubeError("tube frame indices must be strictly increasing")

    def __len__(self) -> int:
        return len(self.frames)

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "Tube":
        try:
            boxes = [BoundingBox(*map(float, b[:4])) for b in rec["boxes"]]
            return cls(str(rec["video_id"]), str(rec.get("person_id", "0")),
                       [int(f) for f in rec["frames"]], boxes, str(rec.get("description", "")))
        except (KeyError, TypeError, ValueError) as exc:
            raise TubeError(f"malformed tube record: {exc}") from exc

    def to_record(self) -> dict:
        return {
            "video_id": self.video_id,
            "person_id": self.person_id,
            "frames": list(self.frames),
            "boxes": [b.as_list() for b in self.boxes],
            "description": self.description,
        }


@dataclass(frozen=True)
class RegionTextPair:
    video_id: str
    frame_index: int
    box: BoundingBox
    sentence: str

    def to_record(self) -> dict:
        return {"video_id": self.video_id, "frame_index": self.frame_index,
                "box": self.box.as_list(), "sentence": self.sentence}

    @classmethod
    def from_record(cls, rec: Mapping[str, Any]) -> "RegionTextPair":
        return cls(str(rec["video_id"]), int(rec["frame_index"]),
                   BoundingBox(*map(float, rec["box"][:4])), str(rec["sentence"]))


def segment_tube(tube: Tube, k: int) -> list[Tube]:
    """Cut a tube into ``k`` contiguous, chronologically ordered sub-tubes.

    Lengths differ by at most one; the first ``len % k`` sub-tubes are the
    longer ones.
    """
    n = len(tube)
    if not 1 <= k <= n:
        raise TubeError(f"cannot cut a tube of length {n} into {k} sub-tubes")
    base, extra = divmod(n, k)
    out, start = [], 0
    for m in range(k):
        stop = start + base + (1 if m < extra else 0)
        out.append(Tube(tube.video_id, tube.person_id, tube.frames[start:stop],
                        tube.boxes[start:stop], tube.description))
        start = stop
    return out


def _sorted(pairs: list[RegionTextPair]) -> list[RegionTextPair]:
    return sorted(pairs, key=lambda p: (p.video_id, p.frame_index))


def _records(records: Iterable[Mapping | Tube], skipped: list | None):
    for rec in records:
        try:
            yield rec if isinstance(rec, Tube) else Tube.from_record(rec)
        except TubeError as exc:
            vid = rec.get("video_id", "?") if isinstance(rec, Mapping) else "?"
            log.warning("skipping record %s: %s", vid, exc)
            if skipped is not None:
                skipped.append((vid, str(exc)))


def convert_hcstvg(records: Iterable[Mapping | Tube], skipped: list | None = None) -> list[RegionTextPair]:
    """Multi-sentence descriptions: sentence ``m`` goes with every box of sub-tube ``m``."""
    pairs = []
    for tube in _records(records, skipped):
        try:
            sentences = split_sentences(tube.description)
            parts = segment_tube(tube, len(sentences))
        except (SentenceError, TubeError) as exc:
            log.warning("skipping %s/%s: %s", tube.video_id, tube.person_id, exc)
            if skipped is not None:
                skipped.append((tube.video_id, str(exc)))
            continue
        for sentence, part in zip(sentences, parts):
            pairs.extend(RegionTextPair(tube.video_id, f, b, sentence) for f, b in zip(part.frames, part.boxes))
    return _sorted(pairs)


def convert_vidstg(records: Iterable[Mapping | Tube], skipped: list | None = None,
                   keep: Callable[[str], bool] = is_human_declarative) -> list[RegionTextPair]:
    """Single-sentence descriptions attached to every box of the tube.

    Records whose sentence fails ``keep`` (default: human subject, declarative)
    are dropped.
    """
    pairs = []
    for tube in _records(records, skipped):
        if not keep(tube.description):
            log.info("filtered %s/%s: %r", tube.video_id, tube.person_id, tube.description)
            if skipped is not None:
                skipped.append((tube.video_id, "filtered"))
            continue
        sentence = normalize_sentence(tube.description)
        if not sentence:
            if skipped is not None:
                skipped.append((tube.video_id, "empty sentence"))
            continue
        pairs.extend(RegionTextPair(tube.video_id, f, b, sentence) for f, b in zip(tube.frames, tube.boxes))
    return _sorted(pairs)


@dataclass(frozen=True)
class DatasetStats:
    pair_count: int
    unique_sentences: int
    avg_boxes_per_sentence: float

    def to_dict(self) -> dict:
        return {"pair_count": self.pair_count, "unique_sentences": self.unique_sentences,
                "avg_boxes_per_sentence": self.avg_boxes_per_sentence}


def dataset_stats(pairs: Iterable) -> DatasetStats:
    """Counts over pairs (objects with ``.sentence`` or dicts with ``"sentence"``); streams."""
    count = 0
    sentences: set[str] = set()
    for p in pairs:
        count += 1
        sentences.add(p["sentence"] if isinstance(p, Mapping) else p.sentence)
    avg = count / len(sentences) if sentences else 0.0
    return DatasetStats(count, len(sentences), avg)


__all__ = [
    "Tube", "TubeError", "RegionTextPair", "RegionError", "segment_tube",
    "convert_hcstvg", "convert_vidstg", "DatasetStats", "dataset_stats",
]
