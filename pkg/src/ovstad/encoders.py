"""Small trainable video and text towers sharing one embedding space.

Each tower is a linear patch/token embedding, learned positions, a stack of
pre-norm multi-head self-attention blocks, a final LayerNorm and a linear
projection. The video tower returns both the pooled clip feature and the
per-position feature map that region pooling operates on.
"""

from __future__ import annotations

import math
import re
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

PAD, UNK = "<pad>", "<unk>"
TOWERS = ("video", "text")
PROMPT_TEMPLATE = "a person {}"


class TokenizationError(ValueError):
    pass


class ClipError(ValueError):
    pass


@dataclass
class EncoderConfig:
    clip_length: int = 8
    image_size: int = 32
    channels: int = 3
    patch: int = 8
    temporal_stride: int = 4
    width: int = 64
    heads: int = 4
    depth: int = 2
    mlp_ratio: int = 2
    max_text_len: int = 16
    pixel_mean: float = 0.5
    pixel_std: float = 0.25

    def __post_init__(self):
        if self.width % self.heads:
            raise ValueError(f"width {self.width} not divisible by heads {self.heads}")
        if self.image_size % self.patch:
            raise ValueError(f"image_size {self.image_size} not divisible by patch {self.patch}")
        if self.clip_length % self.temporal_stride:
            raise ValueError("clip_length must be a multiple of temporal_stride")

    @property
    def grid(self) -> int:
        return self.image_size // self.patch

    @property
    def time_steps(self) -> int:
        return self.clip_length // self.temporal_stride

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        kinds = {f.name: type(f.default) for f in fields(cls)}
        return cls(**{k: kinds[k](v) for k, v in d.items() if k in kinds})


@dataclass
class VideoClip:
    frames: np.ndarray  # [T, C, H, W], values in [0, 1]
    keyframe_index: int

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 4:
            raise ClipError(f"clip frames must be [T,C,H,W], got shape {self.frames.shape}")
        if not 0 <= self.keyframe_index < self.frames.shape[0]:
            raise ClipError(f"keyframe index {self.keyframe_index} outside clip of {self.frames.shape[0]} frames")
        if not np.all(np.isfinite(self.frames)) or self.frames.min() < 0 or self.frames.max() > 1:
            raise ClipError("clip pixel values must be finite and within [0, 1]")

    @property
    def frame_size(self) -> tuple[int, int]:
        """(width, height) in pixels."""
        return self.frames.shape[3], self.frames.shape[2]


# ---------------------------------------------------------------------------
# tokenization
# ---------------------------------------------------------------------------

_PUNCT = re.compile(r"[^\w\s]|_")


def normalize_text(text: str) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace."""
    return _PUNCT.sub(" ", text.lower()).split()


def render_prompt(class_name: str) -> str:
    return PROMPT_TEMPLATE.format(class_name.replace("_", " ").strip())


class Vocabulary:
    """Dense token ids; 0 is padding and 1 is the unknown token."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tokens[:2] != [PAD, UNK]:
            raise ValueError("vocabulary must start with the padding and unknown tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate token in vocabulary")
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}

    @classmethod
    def build(cls, corpus: Iterable[str]) -> "Vocabulary":
        words = sorted({w for text in corpus for w in normalize_text(text)})
        return cls([PAD, UNK] + [w for w in words if w not in (PAD, UNK)])

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, text: str) -> list[int]:
        words = normalize_text(text)
        if not words:
            raise TokenizationError(f"text {text!r} is empty after normalization")
        ids = [self.index.get(w, 1) for w in words]
        if all(i == 1 for i in ids):
            raise TokenizationError(f"every token of {text!r} is unknown")
        return ids

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls(Path(path).read_text(encoding="utf-8").splitlines())


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    lead = x.shape[:-1]
    y = T.matmul(T.reshape(x, (-1, x.shape[-1])), w)
    if b is not None:
        y = y + T.broadcast_to(b, y.shape)
    return T.reshape(y, lead + (w.shape[1],))


def attention_block(x: Tensor, p: dict[str, Tensor], prefix: str, heads: int) -> Tensor:
    """Pre-norm block: x + MHSA(LN(x)), then x + MLP(LN(x)). ``x`` is [B, N, d]."""
    B, N, d = x.shape
    dh = d // heads
    h = T.layer_norm(x, p[prefix + "ln1.w"], p[prefix + "ln1.b"])

    def split(t):
        return T.transpose(T.reshape(t, (B, N, heads, dh)), (0, 2, 1, 3))

    q = split(linear(h, p[prefix + "attn.q.w"], p[prefix + "attn.q.b"]))
    k = split(linear(h, p[prefix + "attn.k.w"]))
    v = split(linear(h, p[prefix + "attn.v.w"], p[prefix + "attn.v.b"]))
    att = T.softmax(T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh)))
    ctx = T.reshape(T.transpose(T.matmul(att, v), (0, 2, 1, 3)), (B, N, d))
    x = x + linear(ctx, p[prefix + "attn.o.w"], p[prefix + "attn.o.b"])
    h = T.layer_norm(x, p[prefix + "ln2.w"], p[prefix + "ln2.b"])
    h = T.gelu(linear(h, p[prefix + "mlp.fc1.w"], p[prefix + "mlp.fc1.b"]))
    return x + linear(h, p[prefix + "mlp.fc2.w"], p[prefix + "mlp.fc2.b"])


def _interp_matrix(n_out: int, n_in: int) -> np.ndarray:
    """1-d bilinear resampling weights, half-pixel centers, edge-clamped."""
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        src = (i + 0.5) * n_in / n_out - 0.5
        src = min(max(src, 0.0), n_in - 1.0)
        lo = int(math.floor(src))
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        m[i, lo] += 1.0 - frac
        m[i, hi] += frac
    return m


def resize_position_grid(pos: Tensor, rows: int, cols: int) -> Tensor:
    """Bilinearly resize a learned ``[H0, W0, d]`` position grid to ``[rows*cols, d]``."""
    h0, w0, d = pos.shape
    flat = T.reshape(pos, (h0 * w0, d))
    if (rows, cols) == (h0, w0):
        return flat
    weights = np.kron(_interp_matrix(rows, h0), _interp_matrix(cols, w0))
    return T.matmul(T.as_tensor(weights), flat)


# ---------------------------------------------------------------------------
# the dual encoder
# ---------------------------------------------------------------------------


class DualEncoder:
    """Video and text towers plus the shared learnable temperature.

    Parameters are plain :class:`Tensor` objects in ``self.params`` keyed by
    dotted names (``video.*``, ``text.*``, ``head.log_tau``).
    """

    def __init__(self, config: EncoderConfig, vocab: Vocabulary, seed: int = 0,
                 tau_init: float = 0.07):
        self.config = config
        self.vocab = vocab
        self.params: dict[str, Tensor] = {}
        self.frozen: set[str] = set()
        rng = np.random.default_rng(seed)
        c = config
        d = c.width
        patch_dim = c.temporal_stride * c.channels * c.patch * c.patch

        def add(name, arr):
            self.params[name] = Tensor(arr, requires_grad=True, name=name)

        def dense(name, fan_in, fan_out, bias=True):
            add(name + ".w", rng.normal(0.0, 1.0 / math.sqrt(fan_in), (fan_in, fan_out)))
            if bias:
                add(name + ".b", np.zeros(fan_out))

        def blocks(tower):
            for i in range(c.depth):
                pre = f"{tower}.blocks.{i}."
                add(pre + "ln1.w", np.ones(d))
                add(pre + "ln1.b", np.zeros(d))
                for n in ("q", "k", "v", "o"):
                    # a key bias only shifts each query's logits uniformly, which softmax ignores
                    dense(pre + f"attn.{n}", d, d, bias=n != "k")
                add(pre + "ln2.w", np.ones(d))
                add(pre + "ln2.b", np.zeros(d))
                dense(pre + "mlp.fc1", d, c.mlp_ratio * d)
                dense(pre + "mlp.fc2", c.mlp_ratio * d, d)
            add(f"{tower}.ln_out.w", np.ones(d))
            add(f"{tower}.ln_out.b", np.zeros(d))
            dense(f"{tower}.proj", d, d)

        dense("video.patch", patch_dim, d)
        add("video.pos_spatial", rng.normal(0.0, 0.1, (c.grid, c.grid, d)))
        add("video.pos_temporal", rng.normal(0.0, 0.1, (c.time_steps, d)))
        blocks("video")
        add("text.tok_emb", rng.normal(0.0, 1.0, (len(vocab), d)))
        add("text.pos", rng.normal(0.0, 0.1, (c.max_text_len, d)))
        blocks("text")
        add("head.log_tau", np.array(math.log(tau_init)))

    # -- parameter management ----------------------------------------------
    def tower_params(self, tower: str) -> dict[str, Tensor]:
        if tower not in TOWERS:
            raise ValueError(f"unknown tower {tower!r}")
        return {k: v for k, v in self.params.items() if k.startswith(tower + ".")}

    def freeze(self, tower: str) -> None:
        for p in self.tower_params(tower).values():
            p.requires_grad = False
            p.grad = None
        self.frozen.add(tower)

    def unfreeze(self, tower: str) -> None:
        for p in self.tower_params(tower).values():
            p.requires_grad = True
        self.frozen.discard(tower)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
        for k, p in self.params.items():
            p.set_data(state[k])

    @property
    def log_tau(self) -> Tensor:
        return self.params["head.log_tau"]

    def temperature(self) -> Tensor:
        return T.exp(self.log_tau)

    # -- video tower ------------------------------------------------------------
    def _tubelets(self, frames: np.ndarray) -> tuple[np.ndarray, int, int]:
        c = self.config
        B, Tn, C, H, W = frames.shape
        if Tn != c.clip_length:
            raise ClipError(f"clip has {Tn} frames, encoder expects {c.clip_length}")
        if C != c.channels:
            raise ClipError(f"clip has {C} channels, encoder expects {c.channels}")
        if H % c.patch or W % c.patch:
            raise ClipError(f"frame size {H}x{W} is not a multiple of patch {c.patch}")
        p, ts = c.patch, c.temporal_stride
        gh, gw = H // p, W // p
        x = frames.reshape(B, Tn // ts, ts, C, gh, p, gw, p)
        x = x.transpose(0, 1, 4, 6, 2, 3, 5, 7)
        return x.reshape(B * (Tn // ts) * gh * gw, ts * C * p * p), gh, gw

    def video_encode_batch(self, frames: np.ndarray) -> tuple[Tensor, Tensor]:
        """``frames [B,T,C,H,W]`` -> (f^G ``[B,d]``, f^V ``[B,T',d,H',W']``)."""
        c, p = self.config, self.params
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim != 5:
            raise ClipError(f"expected [B,T,C,H,W] frames, got {frames.shape}")
        B = frames.shape[0]
        tokens, gh, gw = self._tubelets((frames - c.pixel_mean) / c.pixel_std)
        tp, d = c.time_steps, c.width
        x = linear(T.as_tensor(tokens), p["video.patch.w"], p["video.patch.b"])
        x = T.reshape(x, (B, tp, gh * gw, d))
        pos = resize_position_grid(p["video.pos_spatial"], gh, gw)
        x = x + T.broadcast_to(pos, x.shape)
        x = x + T.broadcast_to(T.reshape(p["video.pos_temporal"], (tp, 1, d)), x.shape)
        x = T.reshape(x, (B, tp * gh * gw, d))
        for i in range(c.depth):
            x = attention_block(x, p, f"video.blocks.{i}.", c.heads)
        x = T.layer_norm(x, p["video.ln_out.w"], p["video.ln_out.b"])
        f_v = T.transpose(T.reshape(x, (B, tp, gh, gw, d)), (0, 1, 4, 2, 3))
        f_g = self.project(T.mean(x, axes=1))
        return f_g, f_v

    def video_encode(self, clip: VideoClip) -> tuple[Tensor, Tensor]:
        f_g, f_v = self.video_encode_batch(clip.frames[None])
        return T.reshape(f_g, (self.config.width,)), T.reshape(f_v, f_v.shape[1:])

    def project(self, pooled: Tensor) -> Tensor:
        """Shared video projection into the text space, ``[..., d] -> [..., d]``."""
        return linear(pooled, self.params["video.proj.w"], self.params["video.proj.b"])

    # -- text tower ---------------------------------------------------------------
    def tokenize(self, text: str) -> list[int]:
        return self.vocab.encode(text)[: self.config.max_text_len]

    def _text_forward(self, ids: np.ndarray) -> Tensor:
        c, p = self.config, self.params
        B, L = ids.shape
        d = c.width
        x = T.reshape(T.take_rows(p["text.tok_emb"], ids.reshape(-1)), (B, L, d))
        pos = T.take_rows(p["text.pos"], np.arange(L))
        x = x + T.broadcast_to(pos, x.shape)
        for i in range(c.depth):
            x = attention_block(x, p, f"text.blocks.{i}.", c.heads)
        x = T.layer_norm(x, p["text.ln_out.w"], p["text.ln_out.b"])
        return linear(T.mean(x, axes=1), p["text.proj.w"], p["text.proj.b"])

    def text_encode_batch(self, texts: Sequence[str]) -> Tensor:
        """Encode many texts; each one's result equals :meth:`text_encode` on it alone."""
        rows = [self.text_encode(t) for t in texts]
        return T.stack(rows, axis=0)

    def text_encode(self, text: str) -> Tensor:
        ids = np.asarray(self.tokenize(text), dtype=np.int64)[None]
        return T.reshape(self._text_forward(ids), (self.config.width,))

    def prompt_embed(self, class_name: str) -> Tensor:
        if not class_name or not class_name.strip():
            raise TokenizationError("empty class name")
        return self.text_encode(render_prompt(class_name))
