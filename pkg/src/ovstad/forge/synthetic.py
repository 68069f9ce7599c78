"""Desk-scale synthetic action benchmark.

Actors are axis-aligned rectangles moving over a static textured background.
Each action class is a closed-form motion pattern (constant velocity plus an
optional sinusoidal oscillation), and class names are compositional phrases
such as ``"moves left fast"`` so held-out classes recombine seen words.

Every clip is generated from its own RNG stream seeded by ``(seed, clip
index)``; pixel data are reproducible bit-for-bit.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import checkpoint
from ..regions import BoundingBox
from .tubes import Tube

log = logging.getLogger(__name__)

DIRECTIONS = {"left": (-1.0, 0.0), "right": (1.0, 0.0), "up": (0.0, -1.0), "down": (0.0, 1.0)}
SPEEDS = {"slow": 0.5, "fast": 1.5}


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ActionClass:
    name: str
    vx: float
    vy: float
    amp_x: float = 0.0
    amp_y: float = 0.0
    period: float = 8.0

    def offset(self, t: float, phase: float = 0.0) -> tuple[float, float]:
        """Displacement of the actor's top-left corner at frame ``t``."""
        s = math.sin(2.0 * math.pi * t / self.period + phase)
        return self.vx * t + self.amp_x * s, self.vy * t + self.amp_y * s


def default_classes() -> list[ActionClass]:
    out = []
    for d, (ux, uy) in DIRECTIONS.items():
        for s, v in SPEEDS.items():
            out.append(ActionClass(f"moves {d} {s}", ux * v, uy * v))
    return out


def motion_axis(class_name: str) -> str:
    """Action type used when splitting: ``"horizontal"`` or ``"vertical"``."""
    words = class_name.split()
    return "vertical" if ("up" in words or "down" in words) else "horizontal"


def caption(class_name: str) -> str:
    return f"the person {class_name}"


@dataclass
class SyntheticConfig:
    clip_length: int = 8
    image_size: int = 32
    channels: int = 3
    actor_size: tuple[int, int] = (7, 10)
    extra_actor_prob: float = 0.5
    max_actors: int = 2
    retry_cap: int = 200
    margin: float = 1.0
    background_range: tuple[float, float] = (0.05, 0.45)
    actor_range: tuple[float, float] = (0.65, 1.0)


@dataclass
class Actor:
    actor_id: int
    class_id: int
    x0: float
    y0: float
    width: float
    height: float
    phase: float
    color: tuple[float, ...]

    def box_at(self, cls: ActionClass, t: int) -> BoundingBox:
        dx, dy = cls.offset(t, self.phase)
        x, y = self.x0 + dx, self.y0 + dy
        return BoundingBox(x, y, x + self.width, y + self.height)


@dataclass
class SyntheticClip:
    video_id: str
    frames: np.ndarray  # [T, C, H, W]
    actors: list[Actor]
    keyframe_index: int

    def boxes_at(self, classes: Sequence[ActionClass], t: int) -> list[BoundingBox]:
        return [a.box_at(classes[a.class_id], t) for a in self.actors]


@dataclass
class SyntheticDataset:
    classes: list[ActionClass]
    clips: list[SyntheticClip]
    config: SyntheticConfig = field(default_factory=SyntheticConfig)

    @property
    def prompts(self) -> list[str]:
        return [c.name for c in self.classes]

    def clip_map(self) -> dict[str, SyntheticClip]:
        return {c.video_id: c for c in self.clips}

    def tubes(self) -> list[Tube]:
        out = []
        T = self.config.clip_length
        for clip in self.clips:
            for a in clip.actors:
                cls = self.classes[a.class_id]
                out.append(Tube(clip.video_id, str(a.actor_id), list(range(T)),
                                [a.box_at(cls, t) for t in range(T)], caption(cls.name)))
        return out

    def labels(self) -> list[tuple[str, int, BoundingBox, int]]:
        """(video_id, keyframe, box, class_id) for every actor."""
        out = []
        for clip in self.clips:
            k = clip.keyframe_index
            for a in clip.actors:
                out.append((clip.video_id, k, a.box_at(self.classes[a.class_id], k), a.class_id))
        return out

    def instance_counts(self) -> list[int]:
        counts = [0] * len(self.classes)
        for clip in self.clips:
            for a in clip.actors:
                counts[a.class_id] += 1
        return counts


def _bilinear_upsample(grid: np.ndarray, size: int) -> np.ndarray:
    """[C, g, g] -> [C, size, size] with half-pixel centers."""
    g = grid.shape[-1]
    src = np.clip((np.arange(size) + 0.5) * g / size - 0.5, 0, g - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, g - 1)
    f = src - lo
    rows = grid[:, lo, :] * (1 - f)[None, :, None] + grid[:, hi, :] * f[None, :, None]
    return rows[:, :, lo] * (1 - f)[None, None, :] + rows[:, :, hi] * f[None, None, :]


def _coverage(lo: float, hi: float, n: int) -> np.ndarray:
    """Fraction of each unit pixel interval [j, j+1) covered by [lo, hi)."""
    j = np.arange(n, dtype=np.float64)
    return np.clip(np.minimum(hi, j + 1) - np.maximum(lo, j), 0.0, 1.0)


def render(background: np.ndarray, actors: Sequence[Actor], classes: Sequence[ActionClass],
           length: int) -> np.ndarray:
    C, H, W = background.shape
    frames = np.empty((length, C, H, W))
    for t in range(length):
        img = background.copy()
        for a in actors:
            b = a.box_at(classes[a.class_id], t)
            cov = np.outer(_coverage(b.y1, b.y2, H), _coverage(b.x1, b.x2, W))
            img = img * (1.0 - cov) + np.asarray(a.color)[:, None, None] * cov
        frames[t] = img
    return np.clip(frames, 0.0, 1.0)


def _trajectory_range(cls: ActionClass, phase: float, length: int) -> tuple[float, float, float, float]:
    offs = [cls.offset(t, phase) for t in range(length)]
    xs, ys = [o[0] for o in offs], [o[1] for o in offs]
    return min(xs), max(xs), min(ys), max(ys)


def _overlaps(a: Actor, b: Actor, classes, length: int, margin: float) -> bool:
    for t in range(length):
        p, q = a.box_at(classes[a.class_id], t), b.box_at(classes[b.class_id], t)
        if (p.x1 - margin < q.x2 and q.x1 - margin < p.x2
                and p.y1 - margin < q.y2 and q.y1 - margin < p.y2):
            return True
    return False


def _spawn(rng, actor_id: int, class_id: int, classes, cfg: SyntheticConfig, others: list[Actor]) -> Actor | None:
    cls = classes[class_id]
    lo, hi = cfg.actor_size
    for _ in range(cfg.retry_cap):
        w = float(rng.integers(lo, hi + 1))
        h = float(rng.integers(lo, hi + 1))
        phase = float(rng.uniform(0, 2 * math.pi)) if (cls.amp_x or cls.amp_y) else 0.0
        mnx, mxx, mny, mxy = _trajectory_range(cls, phase, cfg.clip_length)
        x_lo, x_hi = -mnx, cfg.image_size - w - mxx
        y_lo, y_hi = -mny, cfg.image_size - h - mxy
        color = tuple(float(v) for v in rng.uniform(*cfg.actor_range, cfg.channels))
        if x_lo > x_hi or y_lo > y_hi:
            continue
        actor = Actor(actor_id, class_id, float(rng.uniform(x_lo, x_hi)), float(rng.uniform(y_lo, y_hi)),
                      w, h, phase, color)
        if not any(_overlaps(actor, o, classes, cfg.clip_length, cfg.margin) for o in others):
            return actor
    return None


def generate_clip(index: int, video_id: str, class_id: int, classes: Sequence[ActionClass],
                  seed: int, cfg: SyntheticConfig, extra_classes: Sequence[int] | None = None) -> SyntheticClip:
    rng = np.random.default_rng([seed, index])
    coarse = rng.uniform(*cfg.background_range, (cfg.channels, 4, 4))
    background = np.clip(_bilinear_upsample(coarse, cfg.image_size)
                         + rng.normal(0.0, 0.03, (cfg.channels, cfg.image_size, cfg.image_size)), 0.0, 1.0)
    primary = _spawn(rng, 0, class_id, classes, cfg, [])
    if primary is None:
        raise GenerationError(f"could not place an actor in clip {video_id} within {cfg.retry_cap} tries")
    actors = [primary]
    pool = list(range(len(classes))) if extra_classes is None else list(extra_classes)
    while len(actors) < cfg.max_actors and pool and rng.uniform() < cfg.extra_actor_prob:
        extra = _spawn(rng, len(actors), int(pool[rng.integers(len(pool))]), classes, cfg, actors)
        if extra is None:
            log.info("clip %s: dropped an extra actor after %d tries", video_id, cfg.retry_cap)
            break
        actors.append(extra)
    frames = render(background, actors, classes, cfg.clip_length)
    return SyntheticClip(video_id, frames, actors, cfg.clip_length // 2)


def gen_synthetic(classes: Sequence[ActionClass] | None = None, n_per_class: int | Sequence[int] = 1,
                  seed: int = 0, config: SyntheticConfig | None = None, prefix: str = "syn",
                  primary_classes: Sequence[int] | None = None,
                  extra_classes: Sequence[int] | None = None) -> SyntheticDataset:
    """Generate ``n_per_class`` clips whose primary actor performs each class.

    ``primary_classes`` restricts which classes get clips; ``extra_classes``
    restricts the classes of additional actors (defaults: all classes).
    """
    classes = list(classes) if classes is not None else default_classes()
    cfg = config or SyntheticConfig()
    ids = list(range(len(classes))) if primary_classes is None else list(primary_classes)
    if isinstance(n_per_class, int):
        counts = {c: n_per_class for c in ids}
    else:
        counts = dict(zip(ids, n_per_class))
    if extra_classes is None and primary_classes is not None:
        extra_classes = ids
    clips, index = [], 0
    for c in ids:
        for _ in range(counts[c]):
            clips.append(generate_clip(index, f"{prefix}{index:05d}", c, classes, seed, cfg, extra_classes))
            index += 1
    return SyntheticDataset(classes, clips, cfg)


# ---------------------------------------------------------------------------
# persistence: clip pixels in the tensor container, everything else in JSON
# ---------------------------------------------------------------------------


def save_synthetic(ds: SyntheticDataset, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    checkpoint.save(directory / "clips.ovsk", {c.video_id: c.frames for c in ds.clips})
    cfg = asdict(ds.config)
    manifest = {
        "config": cfg,
        "classes": [asdict(c) for c in ds.classes],
        "clips": [{"video_id": c.video_id, "keyframe_index": c.keyframe_index,
                   "actors": [asdict(a) for a in c.actors]} for c in ds.clips],
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def load_synthetic(directory) -> SyntheticDataset:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    pixels = checkpoint.load(directory / "clips.ovsk")
    cfg_d = manifest["config"]
    for k in ("actor_size", "background_range", "actor_range"):
        cfg_d[k] = tuple(cfg_d[k])
    classes = [ActionClass(**c) for c in manifest["classes"]]
    clips = []
    for c in manifest["clips"]:
        actors = [Actor(**{**a, "color": tuple(a["color"])}) for a in c["actors"]]
        clips.append(SyntheticClip(c["video_id"], pixels[c["video_id"]], actors, c["keyframe_index"]))
    return SyntheticDataset(classes, clips, SyntheticConfig(**cfg_d))
