"""Training stages and open-vocabulary inference.

Three stages share one :class:`~ovstad.encoders.DualEncoder`:

* ``warmstart``: optional clip-caption contrastive training of both towers;
* ``align``: region-text alignment with the text tower frozen;
* ``finetune``: focal classification against base-class prompts.

Inference scores every proposal against an arbitrary prompt list, so classes
that never appeared during finetuning can be detected.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import checkpoint
from . import tensor as T
from .encoders import DualEncoder, EncoderConfig, TokenizationError, Vocabulary
from .evaluation import DetectionInstance
from .objectives import focal_align_loss, focal_cls_loss, info_nce_loss, score
from .optim import SGD
from .regions import BoundingBox, RegionError, batched_region_features, fuse
from .forge.tubes import RegionTextPair

log = logging.getLogger(__name__)

STAGES = ("warmstart", "align", "finetune")

# (learning rate, iterations, batch size) used for the full-scale runs.
FULL_SCHEDULES = {
    "warmstart": (1e-5, 60000, 16),
    "align": (1e-5, 60000, 16),
    "finetune": (5e-5, 70000, 32),
}
# Rescaled for the 32x32 synthetic benchmark on one CPU core.
DESK_SCHEDULES = {
    "warmstart": (1e-4, 500, 8),
    "align": (1e-4, 1500, 8),
    "finetune": (1e-4, 1500, 8),
}
MIN_TEMPERATURE = 0.03
SCALE_RANGE = (0.8, 1.2)
JITTER = 0.1


class StageError(RuntimeError):
    pass


class LeakageError(ValueError):
    """A finetuning label points at a class outside the base set."""


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass
class StageConfig:
    stage: str = "align"
    learning_rate: float | None = None
    iterations: int | None = None
    batch_size: int | None = None
    beta: float = 0.3
    gamma: float = 2.0
    tau_init: float = 0.07
    seed: int = 0
    random_scale: bool = True
    horizontal_flip: bool = True
    color_jitter: bool = True
    freeze_text: bool = False
    checkpoint_every: int = 0
    preset: str = "full"

    def __post_init__(self):
        if self.stage not in STAGES:
            raise StageError(f"unknown stage {self.stage!r}; expected one of {STAGES}")
        if self.preset not in ("full", "desk"):
            raise StageError(f"unknown preset {self.preset!r}")
        table = FULL_SCHEDULES if self.preset == "full" else DESK_SCHEDULES
        lr, iters, batch = table[self.stage]
        self.learning_rate = lr if self.learning_rate is None else float(self.learning_rate)
        self.iterations = iters if self.iterations is None else int(self.iterations)
        self.batch_size = batch if self.batch_size is None else int(self.batch_size)
        if self.learning_rate < 0 or self.iterations < 0:
            raise StageError("learning rate and iteration count must be non-negative")
        if self.batch_size < 1 or (self.stage != "finetune" and self.batch_size < 2):
            raise StageError(f"batch size {self.batch_size} too small for stage {self.stage}")
        if not 0.0 <= self.beta <= 1.0:
            raise StageError(f"beta={self.beta} outside [0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["full_schedule"] = dict(zip(("learning_rate", "iterations", "batch_size"),
                                       FULL_SCHEDULES[self.stage]))
        return d


# ---------------------------------------------------------------------------
# run-config file: flat key=value lines
# ---------------------------------------------------------------------------

_CONFIG_KEYS = {"lr": "learning_rate", "iters": "iterations", "batch": "batch_size"}


def parse_run_config(text: str) -> dict[str, str]:
    out = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise StageError(f"config line {n}: expected key=value, got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        if not k:
            raise StageError(f"config line {n}: empty key")
        out[k] = v
    return out


def _coerce(value: str, kind):
    if kind is bool or kind == "bool":
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise StageError(f"not a boolean: {value!r}")
    return kind(value)


def stage_config_from_mapping(values: Mapping[str, str]) -> StageConfig:
    """Build a :class:`StageConfig` from string values; unknown keys are ignored by the caller."""
    types = {"learning_rate": float, "iterations": int, "batch_size": int, "beta": float, "gamma": float,
             "tau_init": float, "seed": int, "random_scale": bool, "horizontal_flip": bool,
             "color_jitter": bool, "freeze_text": bool, "checkpoint_every": int, "stage": str, "preset": str}
    kwargs = {}
    for k, v in values.items():
        name = _CONFIG_KEYS.get(k, k)
        if name in types and v is not None:
            try:
                kwargs[name] = _coerce(str(v), types[name])
            except ValueError as exc:
                raise StageError(f"bad value for {k}: {v!r}") from exc
    return StageConfig(**kwargs)


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------


def _resize_matrix(n_out: int, n_in: int) -> np.ndarray:
    m = np.zeros((n_out, n_in))
    src = np.clip((np.arange(n_out) + 0.5) * n_in / n_out - 0.5, 0.0, n_in - 1.0)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    np.add.at(m, (np.arange(n_out), lo), 1.0 - frac)
    np.add.at(m, (np.arange(n_out), hi), frac)
    return m


def resize_frames(frames: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize over the last two axes."""
    h, w = frames.shape[-2:]
    if (h, w) == (height, width):
        return frames
    return _resize_matrix(height, h) @ frames @ _resize_matrix(width, w).T


@dataclass(frozen=True)
class Augmentation:
    """One draw of the augmentation parameters, shared by every clip in a batch."""

    size: tuple[int, int]
    flip: bool
    brightness: float
    contrast: float

    @classmethod
    def identity(cls, size: tuple[int, int]) -> "Augmentation":
        return cls(size, False, 0.0, 1.0)

    @classmethod
    def draw(cls, rng: np.random.Generator, cfg: StageConfig, size: tuple[int, int], multiple: int):
        h, w = size
        if cfg.random_scale:
            s = rng.uniform(*SCALE_RANGE)
            h = max(multiple, int(round(h * s / multiple)) * multiple)
            w = max(multiple, int(round(w * s / multiple)) * multiple)
        flip = bool(cfg.horizontal_flip and rng.uniform() < 0.5)
        b, c = 0.0, 1.0
        if cfg.color_jitter:
            b = rng.uniform(-JITTER, JITTER)
            c = 1.0 + rng.uniform(-JITTER, JITTER)
        return cls((h, w), flip, b, c)

    def frames(self, x: np.ndarray) -> np.ndarray:
        x = resize_frames(x, *self.size)
        if self.flip:
            x = x[..., ::-1]
        if self.contrast != 1.0 or self.brightness != 0.0:
            mean = x.mean(axis=(-3, -2, -1), keepdims=True)
            x = np.clip((x - mean) * self.contrast + mean + self.brightness, 0.0, 1.0)
        return np.ascontiguousarray(x)

    def box(self, b: BoundingBox, frame_size: tuple[int, int]) -> BoundingBox:
        fw, fh = frame_size
        sx, sy = self.size[1] / fw, self.size[0] / fh
        x1, x2 = b.x1 * sx, b.x2 * sx
        if self.flip:
            x1, x2 = self.size[1] - x2, self.size[1] - x1
        return BoundingBox(x1, b.y1 * sy, x2, b.y2 * sy, b.score)


# ---------------------------------------------------------------------------
# shared forward pieces
# ---------------------------------------------------------------------------


def _stack_clips(clips: Mapping[str, np.ndarray], video_ids: Sequence[str]):
    order = list(dict.fromkeys(video_ids))
    frames = np.stack([np.asarray(clips[v], dtype=np.float64) for v in order])
    return frames, {v: i for i, v in enumerate(order)}


def fused_region_features(model: DualEncoder, frames: np.ndarray, clip_ids: Sequence[int],
                          boxes: Sequence[BoundingBox], beta: float) -> T.Tensor:
    """Encode ``frames [B,T,C,H,W]`` and return fused features ``[K, d]`` for the boxes."""
    f_g, f_v = model.video_encode_batch(frames)
    frame_size = (frames.shape[-1], frames.shape[-2])
    f_r = batched_region_features(f_v, clip_ids, boxes, frame_size, model.project)
    return fuse(f_r, T.index_rows(f_g, np.asarray(clip_ids)), beta)


def _check_finite(loss: T.Tensor, what: str) -> None:
    if not np.isfinite(loss.data).all():
        raise NonFiniteLossError(f"{what} loss is {float(loss.data)}")


def _apply(model: DualEncoder, opt: SGD, loss: T.Tensor) -> None:
    opt.zero_grad()
    T.backward(loss)
    opt.step()
    floor = math.log(MIN_TEMPERATURE)
    if model.log_tau.requires_grad and float(model.log_tau.data) < floor:
        model.log_tau.set_data(np.array(floor))


@dataclass
class StepResult:
    loss: float | None
    used: int
    skipped: int


# ---------------------------------------------------------------------------
# stage steps
# ---------------------------------------------------------------------------


def align_step(model: DualEncoder, opt: SGD, pairs: Sequence[RegionTextPair], clips: Mapping[str, np.ndarray],
               cfg: StageConfig, aug: Augmentation | None = None) -> StepResult:
    """One region-text alignment update; the text tower must be frozen.

    Pairs with an unusable box or sentence are skipped with a warning and
    counted in ``skipped``. Fewer than two usable pairs means no update.
    """
    if "text" not in model.frozen:
        raise StageError("alignment requires a frozen text tower")
    good, skipped = [], 0
    for p in pairs:
        try:
            clip = clips[p.video_id]
            h, w = clip.shape[-2:]
            box = p.box.clipped((w, h))
            model.tokenize(p.sentence)
        except (KeyError, RegionError, TokenizationError) as exc:
            log.warning("skipping pair %s@%d: %s", p.video_id, p.frame_index, exc)
            skipped += 1
            continue
        good.append((p, box))
    if len(good) < 2:
        log.warning("alignment batch has %d usable pairs; no update", len(good))
        return StepResult(None, len(good), skipped)

    frames, index = _stack_clips(clips, [p.video_id for p, _ in good])
    boxes = [b for _, b in good]
    if aug is not None:
        fs = (frames.shape[-1], frames.shape[-2])
        boxes = [aug.box(b, fs) for b in boxes]
        frames = aug.frames(frames)
    regions = fused_region_features(model, frames, [index[p.video_id] for p, _ in good], boxes, cfg.beta)
    texts = model.text_encode_batch([p.sentence for p, _ in good])
    loss = focal_align_loss(score(regions, texts, model.temperature()), cfg.gamma)
    _check_finite(loss, "alignment")
    _apply(model, opt, loss)
    return StepResult(float(loss.data), len(good), skipped)


@dataclass(frozen=True)
class LabeledClip:
    """Ground-truth boxes of one clip's keyframe with their class-id sets."""

    video_id: str
    boxes: tuple[BoundingBox, ...]
    labels: tuple[frozenset[int], ...]

    def __post_init__(self):
        if len(self.boxes) != len(self.labels):
            raise ValueError(f"{len(self.boxes)} boxes but {len(self.labels)} label sets")


def finetune_step(model: DualEncoder, opt: SGD, items: Sequence[LabeledClip], clips: Mapping[str, np.ndarray],
                  prompts: Sequence[str], base_ids: Sequence[int], cfg: StageConfig,
                  aug: Augmentation | None = None) -> StepResult:
    """One base-class update. Labels are full class ids; ``base_ids[j]`` is prompt ``j``'s id."""
    if len(prompts) != len(base_ids) or not prompts:
        raise StageError(f"{len(prompts)} prompts for {len(base_ids)} base classes")
    column = {c: j for j, c in enumerate(base_ids)}
    vids, boxes, labels = [], [], []
    for it in items:
        for b, lab in zip(it.boxes, it.labels):
            leaked = [c for c in lab if c not in column]
            if leaked:
                raise LeakageError(f"clip {it.video_id}: labels {sorted(leaked)} are not base classes")
            vids.append(it.video_id)
            boxes.append(b)
            labels.append([column[c] for c in sorted(lab)])
    if not boxes:
        return StepResult(None, 0, 0)
    frames, index = _stack_clips(clips, vids)
    if aug is not None:
        fs = (frames.shape[-1], frames.shape[-2])
        boxes = [aug.box(b, fs) for b in boxes]
        frames = aug.frames(frames)
    regions = fused_region_features(model, frames, [index[v] for v in vids], boxes, cfg.beta)
    text = T.stack([model.prompt_embed(p) for p in prompts])
    loss = focal_cls_loss(score(regions, text, model.temperature()), labels, cfg.gamma, multi_label=True)
    _check_finite(loss, "finetuning")
    _apply(model, opt, loss)
    return StepResult(float(loss.data), len(boxes), 0)


def warmstart_step(model: DualEncoder, opt: SGD, video_ids: Sequence[str], captions: Sequence[str],
                   clips: Mapping[str, np.ndarray], cfg: StageConfig,
                   aug: Augmentation | None = None) -> StepResult:
    """Clip-caption contrastive update of both towers."""
    frames = np.stack([np.asarray(clips[v], dtype=np.float64) for v in video_ids])
    if aug is not None:
        frames = aug.frames(frames)
    f_g, _ = model.video_encode_batch(frames)
    loss = info_nce_loss(f_g, model.text_encode_batch(captions), model.temperature())
    _check_finite(loss, "warm-start")
    _apply(model, opt, loss)
    return StepResult(float(loss.data), len(video_ids), 0)


# ---------------------------------------------------------------------------
# data sources: each iteration draws from its own RNG stream
# ---------------------------------------------------------------------------


def _rng(seed: int, iteration: int) -> np.random.Generator:
    return np.random.default_rng([seed, iteration])


class AlignSource:
    """Samples batches of pairs with pairwise-distinct sentences."""

    def __init__(self, pairs: Sequence[RegionTextPair], clips: Mapping[str, np.ndarray]):
        self.clips = clips
        self.by_sentence: dict[str, list[RegionTextPair]] = {}
        for p in pairs:
            self.by_sentence.setdefault(p.sentence, []).append(p)
        self.sentences = sorted(self.by_sentence)
        if len(self.sentences) < 2:
            raise StageError("alignment needs at least two distinct sentences")

    def step(self, model, opt, cfg: StageConfig, iteration: int) -> StepResult:
        rng = _rng(cfg.seed, iteration)
        n = min(cfg.batch_size, len(self.sentences))
        chosen = rng.choice(len(self.sentences), size=n, replace=False)
        batch = []
        for i in chosen:
            group = self.by_sentence[self.sentences[i]]
            batch.append(group[rng.integers(len(group))])
        aug = _draw_aug(rng, cfg, self.clips[batch[0].video_id], model)
        return align_step(model, opt, batch, self.clips, cfg, aug)


class FinetuneSource:
    def __init__(self, items: Sequence[LabeledClip], clips: Mapping[str, np.ndarray],
                 prompts: Sequence[str], base_ids: Sequence[int]):
        if not items:
            raise StageError("finetuning needs at least one labeled clip")
        self.items, self.clips = list(items), clips
        self.prompts, self.base_ids = list(prompts), list(base_ids)

    def step(self, model, opt, cfg: StageConfig, iteration: int) -> StepResult:
        rng = _rng(cfg.seed, iteration)
        n = min(cfg.batch_size, len(self.items))
        batch = [self.items[i] for i in rng.choice(len(self.items), size=n, replace=False)]
        aug = _draw_aug(rng, cfg, self.clips[batch[0].video_id], model)
        return finetune_step(model, opt, batch, self.clips, self.prompts, self.base_ids, cfg, aug)


class WarmstartSource:
    def __init__(self, captions: Mapping[str, str], clips: Mapping[str, np.ndarray]):
        self.by_caption: dict[str, list[str]] = {}
        for vid, cap in sorted(captions.items()):
            self.by_caption.setdefault(cap, []).append(vid)
        self.captions = sorted(self.by_caption)
        self.clips = clips
        if len(self.captions) < 2:
            raise StageError("warm-start needs at least two distinct captions")

    def step(self, model, opt, cfg: StageConfig, iteration: int) -> StepResult:
        rng = _rng(cfg.seed, iteration)
        n = min(cfg.batch_size, len(self.captions))
        caps = [self.captions[i] for i in rng.choice(len(self.captions), size=n, replace=False)]
        vids = [self.by_caption[c][rng.integers(len(self.by_caption[c]))] for c in caps]
        aug = _draw_aug(rng, cfg, self.clips[vids[0]], model)
        return warmstart_step(model, opt, vids, caps, self.clips, cfg, aug)


def _draw_aug(rng, cfg: StageConfig, clip: np.ndarray, model: DualEncoder) -> Augmentation | None:
    if not (cfg.random_scale or cfg.horizontal_flip or cfg.color_jitter):
        return None
    return Augmentation.draw(rng, cfg, clip.shape[-2:], model.config.patch)


# ---------------------------------------------------------------------------
# model bundles: parameters, optimizer state and model description in one file
# ---------------------------------------------------------------------------

_META_MODEL = "meta.model"
_META_ITER = "meta.iteration"


def _encode_json(obj) -> np.ndarray:
    return np.frombuffer(json.dumps(obj, sort_keys=True).encode(), dtype=np.uint8).astype(np.float64)


def _decode_json(arr: np.ndarray):
    return json.loads(bytes(np.asarray(arr, dtype=np.uint8)).decode())


def bundle_arrays(model: DualEncoder, opt: SGD | None = None, iteration: int | None = None) -> dict:
    arrays = {f"param.{k}": v for k, v in model.state_dict().items()}
    arrays[_META_MODEL] = _encode_json({"config": model.config.to_dict(), "vocab": model.vocab.tokens})
    if opt is not None:
        arrays.update(opt.state_dict())
    if iteration is not None:
        arrays[_META_ITER] = np.array(float(iteration))
    return arrays


def save_model(path, model: DualEncoder, opt: SGD | None = None, iteration: int | None = None) -> None:
    checkpoint.save(path, bundle_arrays(model, opt, iteration))


def load_model(path) -> tuple[DualEncoder, dict[str, np.ndarray]]:
    """Rebuild a model from a bundle; returns it with the raw arrays (for optimizer state)."""
    arrays = checkpoint.load(path)
    if _META_MODEL not in arrays:
        raise checkpoint.CheckpointError(f"{path} does not describe a model")
    meta = _decode_json(arrays[_META_MODEL])
    model = DualEncoder(EncoderConfig.from_dict(meta["config"]), Vocabulary(meta["vocab"]))
    model.load_state_dict({k[len("param."):]: v for k, v in arrays.items() if k.startswith("param.")})
    return model, arrays


def parameter_digest(model: DualEncoder, tower: str | None = None) -> str:
    h = hashlib.sha256()
    for k in sorted(model.params):
        if tower is None or k.startswith(tower + "."):
            h.update(k.encode())
            h.update(model.params[k].data.tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# stage driver
# ---------------------------------------------------------------------------


@dataclass
class StageRun:
    losses: list[float | None] = field(default_factory=list)
    iterations_done: int = 0
    skipped: int = 0


def prepare_model(model: DualEncoder, cfg: StageConfig) -> None:
    """Set tower freezing for a stage."""
    model.unfreeze("video")
    if cfg.stage == "align" or (cfg.stage == "finetune" and cfg.freeze_text):
        model.freeze("text")
    else:
        model.unfreeze("text")


def run_stage(cfg: StageConfig, source, model: DualEncoder, checkpoint_path=None, metrics_path=None,
              resume: Mapping[str, np.ndarray] | None = None, clock=time.perf_counter) -> StageRun:
    """Run ``cfg.iterations`` steps, logging each loss and checkpointing periodically.

    With ``resume`` (arrays of a checkpoint written by this function) the run
    continues from the stored iteration with the stored momentum. A
    non-finite loss aborts before any update; the last checkpoint on disk
    stays valid.
    """
    prepare_model(model, cfg)
    opt = SGD(model.params, cfg.learning_rate)
    start = 0
    if resume is not None:
        model.load_state_dict({k[len("param."):]: v for k, v in resume.items() if k.startswith("param.")})
        opt.load_state_dict(resume)
        start = int(resume[_META_ITER]) if _META_ITER in resume else 0
    if start > cfg.iterations:
        raise StageError(f"checkpoint is at iteration {start}, beyond the configured {cfg.iterations}")

    out = None
    if metrics_path is not None:
        out = open(metrics_path, "a" if start else "w")
        if not start:
            out.write(json.dumps({"config": cfg.to_dict()}, sort_keys=True) + "\n")
    run = StageRun(iterations_done=start)

    def snapshot(it):
        if checkpoint_path is not None:
            save_model(checkpoint_path, model, opt, it)

    try:
        if not start:
            snapshot(0)
        t0 = clock()
        for it in range(start, cfg.iterations):
            res = source.step(model, opt, cfg, it)
            run.losses.append(res.loss)
            run.skipped += res.skipped
            run.iterations_done = it + 1
            if out is not None:
                out.write(json.dumps({"iteration": it + 1, "loss": res.loss, "lr": cfg.learning_rate,
                                      "used": res.used, "skipped": res.skipped,
                                      "wall_time": round(clock() - t0, 6)}, sort_keys=True) + "\n")
            if cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
                snapshot(it + 1)
        if cfg.iterations > start:
            snapshot(cfg.iterations)
    except NonFiniteLossError:
        log.error("non-finite loss at iteration %d; keeping the last checkpoint", run.iterations_done + 1)
        raise
    finally:
        if out is not None:
            out.close()
    return run


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------


@dataclass
class PromptSet:
    """Prompt embeddings and the class ids they report detections under."""

    names: list[str]
    class_ids: list[int]
    embeddings: np.ndarray

    @classmethod
    def encode(cls, model: DualEncoder, names: Sequence[str], class_ids: Sequence[int] | None = None):
        if not names:
            raise ValueError("empty prompt list")
        with T.no_grad():
            emb = np.stack([model.prompt_embed(n).data for n in names])
        ids = list(range(len(names))) if class_ids is None else [int(c) for c in class_ids]
        return cls(list(names), ids, emb)

    def __len__(self) -> int:
        return len(self.names)


def proposal_features(model: DualEncoder, frames: np.ndarray, proposals: Sequence[BoundingBox],
                      beta: float) -> np.ndarray:
    """Fused region features ``[K, d]`` of proposals in one clip ``[T,C,H,W]``."""
    with T.no_grad():
        return fused_region_features(model, np.asarray(frames)[None], [0] * len(proposals),
                                     list(proposals), beta).data


def score_proposals(model: DualEncoder, frames: np.ndarray, proposals: Sequence[BoundingBox],
                    prompts: PromptSet, beta: float) -> np.ndarray:
    if len(prompts) == 0:
        raise ValueError("empty prompt list")
    if not proposals:
        return np.zeros((0, len(prompts)))
    feats = proposal_features(model, frames, proposals, beta)
    with T.no_grad():
        return score(T.as_tensor(feats), T.as_tensor(prompts.embeddings), model.temperature()).data


def detect(model: DualEncoder, video_id: str, frame_index: int, frames: np.ndarray,
           proposals: Sequence[BoundingBox], prompts: PromptSet, beta: float = 0.3) -> list[DetectionInstance]:
    """One instance per (proposal, prompt), proposal-major; no thresholding or suppression."""
    s = score_proposals(model, frames, proposals, prompts, beta)
    return [DetectionInstance(video_id, frame_index, box, prompts.class_ids[j], float(s[i, j]))
            for i, box in enumerate(proposals) for j in range(len(prompts))]


def read_jsonl(path) -> Iterable[dict]:
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if line:
                try:
                    yield json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}:{n}: {exc}") from exc


def write_jsonl(path, records: Iterable[dict]) -> None:
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    tmp.replace(path)


__all__ = [
    "STAGES", "FULL_SCHEDULES", "DESK_SCHEDULES", "StageConfig", "StageError", "LeakageError",
    "NonFiniteLossError", "Augmentation", "LabeledClip", "align_step", "finetune_step", "warmstart_step",
    "AlignSource", "FinetuneSource", "WarmstartSource", "run_stage", "PromptSet", "detect",
    "score_proposals", "proposal_features", "save_model", "load_model", "parameter_digest",
]
