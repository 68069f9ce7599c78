"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor, detect_anomaly, no_grad


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tol: float
    analytic: dict[str, np.ndarray] = field(repr=False, default_factory=dict)
    numeric: dict[str, np.ndarray] = field(repr=False, default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def failed(self) -> list[str]:
        return [k for k, v in self.errors.items() if not v < self.tol]

    @property
    def passed(self) -> bool:
        return not self.failed

    def __str__(self) -> str:
        lines = [f"{k}: rel_err={v:.3e}" + ("" if v < self.tol else "  FAIL") for k, v in self.errors.items()]
        return "\n".join(lines)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """||a - n|| / max(||a||, ||n||, floor); the floor makes near-zero blocks absolute."""
    diff = float(np.linalg.norm(analytic - numeric))
    if diff == 0.0:
        return 0.0
    scale = max(float(np.linalg.norm(analytic)), float(np.linalg.norm(numeric)), floor)
    return diff / scale


def grad_check(
    f: Callable[..., Tensor],
    inputs: Mapping[str, np.ndarray],
    h: float = 1e-5,
    tol: float = 1e-4,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare analytic gradients of scalar ``f(**tensors)`` with central differences.

    ``inputs`` maps argument names to arrays; each becomes a grad-requiring
    tensor passed to ``f`` by keyword. Non-finite intermediates raise
    :class:`~ovstad.tensor.NonFiniteError` naming the offending operation.
    """
    base = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    for k, v in base.items():
        if not np.all(np.isfinite(v)):
            raise ValueError(f"input '{k}' is not finite")

    params = {k: Tensor(v, requires_grad=True, name=k) for k, v in base.items()}
    with detect_anomaly():
        out = f(**params)
    if out.size != 1:
        raise ValueError(f"grad_check needs a scalar function, got shape {out.shape}")
    out.backward()
    analytic = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}

    def evaluate(name: str, arr: np.ndarray) -> float:
        args = {k: Tensor(arr if k == name else base[k]) for k in base}
        with no_grad(), detect_anomaly():
            return f(**args).item()

    numeric: dict[str, np.ndarray] = {}
    for name, arr in base.items():
        g = np.zeros_like(arr)
        flat = g.reshape(-1)
        for i in range(arr.size):
            plus = arr.copy().reshape(-1)
            minus = arr.copy().reshape(-1)
            plus[i] += h
            minus[i] -= h
            fp = evaluate(name, plus.reshape(arr.shape))
            fm = evaluate(name, minus.reshape(arr.shape))
            flat[i] = (fp - fm) / (2 * h)
        numeric[name] = g

    errors = {k: relative_error(analytic[k], numeric[k], floor) for k in base}
    return GradCheckReport(errors, tol, analytic, numeric)
