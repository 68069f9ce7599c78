"""Contrastive, scoring and focal objectives.

All losses are sums over the batch (no averaging); learning rates are tuned
against that convention.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

DEFAULT_GAMMA = 2.0
DEFAULT_TAU = 0.07


class LabelError(ValueError):
    pass


def _tau(tau) -> Tensor:
    tau = T.as_tensor(tau)
    if tau.ndim != 0:
        raise T.DimensionError(f"temperature must be a 0-d tensor, got shape {tau.shape}")
    if not tau.data > 0:
        raise ValueError(f"temperature must be positive, got {float(tau.data)}")
    return tau


def info_nce_loss(f_g: Tensor, f_t: Tensor, tau, symmetric: bool = False) -> Tensor:
    """Video-to-text InfoNCE over a batch of matched rows.

    ``-sum_i log softmax_j(sim(g_i, t_j) / tau)[i]``. With ``symmetric`` the
    text-to-video term is added as well.
    """
    if f_g.ndim != 2 or f_g.shape != f_t.shape:
        raise T.DimensionError(f"info_nce_loss needs matching [N,d] batches, got {f_g.shape} and {f_t.shape}")
    n = f_g.shape[0]
    if n < 2:
        raise ValueError("InfoNCE needs at least two pairs per batch")
    logits = T.div(T.cosine_matrix(f_g, f_t), _tau(tau))
    eye = T.as_tensor(np.eye(n))
    loss = T.neg(T.sum_(T.mul(T.log_softmax(logits, axis=1), eye)))
    if symmetric:
        loss = loss - T.sum_(T.mul(T.log_softmax(logits, axis=0), eye))
    return loss


def score(f_regions: Tensor, f_prompts: Tensor, tau) -> Tensor:
    """``S_ij = sigmoid(cos(r_i, p_j) / tau)`` -> ``[N, C]``."""
    return T.sigmoid(T.div(T.cosine_matrix(f_regions, f_prompts), _tau(tau)))


def _focal(s: Tensor, positive: np.ndarray, gamma: float) -> Tensor:
    if gamma < 0:
        raise ValueError(f"focal exponent gamma must be >= 0, got {gamma}")
    pos = T.as_tensor(positive.astype(np.float64))
    negm = T.as_tensor(1.0 - positive.astype(np.float64))
    one_minus = T.sub(1.0, s)
    pos_term = T.mul(T.mul(pos, T.power(one_minus, gamma)), T.log(s))
    neg_term = T.mul(T.mul(negm, T.power(s, gamma)), T.log(one_minus))
    return T.neg(T.sum_(T.add(pos_term, neg_term)))


def label_mask(labels: Sequence[Iterable[int]], num_classes: int, multi_label: bool = True) -> np.ndarray:
    """Rows of positive class sets -> boolean ``[N, C]`` mask."""
    mask = np.zeros((len(labels), num_classes), dtype=bool)
    for i, row in enumerate(labels):
        row = list(row)
        if not row and not multi_label:
            raise LabelError(f"row {i} has an empty label set")
        for j in row:
            if not 0 <= j < num_classes:
                raise LabelError(f"label {j} in row {i} outside [0, {num_classes})")
            mask[i, j] = True
    return mask


def focal_cls_loss(s: Tensor, labels: Sequence[Iterable[int]], gamma: float = DEFAULT_GAMMA,
                   multi_label: bool = False) -> Tensor:
    """Focal classification loss over proposals x base classes.

    Entry ``(i, j)`` is positive iff ``j`` is in row ``i``'s label set.
    """
    if s.ndim != 2:
        raise T.DimensionError(f"score matrix must be [N, C], got {s.shape}")
    if len(labels) != s.shape[0]:
        raise LabelError(f"{len(labels)} label rows for {s.shape[0]} score rows")
    return _focal(s, label_mask(labels, s.shape[1], multi_label), gamma)


def focal_align_loss(p: Tensor, gamma: float = DEFAULT_GAMMA) -> Tensor:
    """Focal region-text alignment loss; the diagonal holds the matched pairs."""
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise T.DimensionError(f"alignment score matrix must be square, got {p.shape}")
    return _focal(p, np.eye(p.shape[0], dtype=bool), gamma)
