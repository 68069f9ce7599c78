"""Base/novel class split construction.

A split must (i) keep roughly three base classes per novel class, globally
and within each action type; (ii) give base and novel classes similar
long-tailed instance-count distributions; and (iii) when fully supervised
per-class APs are known, give both halves similar mean AP.

Search: a systematic-sampling start per type, steepest-descent pair swaps
within types, then seeded random restarts refined the same way.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

QUANTILES = (0.1, 0.25, 0.5, 0.75, 0.9)
NOVEL_FRACTION = 0.25
RESTARTS = 8


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class ClassInfo:
    name: str
    count: int
    type: str | None = None
    ap: float | None = None


@dataclass
class BenchmarkSplit:
    classes: list[str]
    base: list[str]
    novel: list[str]
    counts: dict[str, int] = field(default_factory=dict)
    report: dict = field(default_factory=dict)

    def __post_init__(self):
        b, n = set(self.base), set(self.novel)
        if b & n:
            raise SplitError(f"classes in both halves: {sorted(b & n)}")
        if b | n != set(self.classes):
            raise SplitError("base and novel must together cover exactly the class list")

    def class_id(self, name: str) -> int:
        return self.classes.index(name)

    @property
    def base_ids(self) -> list[int]:
        return [self.classes.index(c) for c in self.base]

    @property
    def novel_ids(self) -> list[int]:
        return [self.classes.index(c) for c in self.novel]

    def to_json(self) -> dict:
        return {"classes": self.classes, "base": self.base, "novel": self.novel,
                "counts": self.counts, "report": self.report}

    @classmethod
    def from_json(cls, d: dict) -> "BenchmarkSplit":
        classes = d.get("classes") or list(d["base"]) + list(d["novel"])
        return cls(list(classes), list(d["base"]), list(d["novel"]),
                   dict(d.get("counts", {})), dict(d.get("report", {})))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "BenchmarkSplit":
        return cls.from_json(json.loads(Path(path).read_text()))


def novel_quota(type_sizes: dict[str, int]) -> dict[str, int]:
    """Apportion round(N/4) novel slots across types by largest remainder."""
    total = sum(type_sizes.values())
    target = int(np.floor(total * NOVEL_FRACTION + 0.5))
    if target < 1 or target >= total:
        raise SplitError(f"a 3:1 split is infeasible for {total} classes")
    exact = {t: n * target / total for t, n in type_sizes.items()}
    quota = {t: int(np.floor(v)) for t, v in exact.items()}
    spare = target - sum(quota.values())
    for t in sorted(exact, key=lambda t: (-(exact[t] - quota[t]), t))[:spare]:
        quota[t] += 1
    return quota


def quantile_distance(base_counts: Sequence[float], novel_counts: Sequence[float]) -> float:
    """Sum over fixed quantiles of the gap between log-count distributions."""
    b = np.quantile(np.log(np.asarray(base_counts, dtype=float)), QUANTILES)
    n = np.quantile(np.log(np.asarray(novel_counts, dtype=float)), QUANTILES)
    return float(np.abs(b - n).sum())


def split_objective(classes: Sequence[ClassInfo], novel: frozenset[str]) -> tuple[float, float, float]:
    """(total, quantile distance, mean-AP gap) for a candidate novel set."""
    base_c = [c.count for c in classes if c.name not in novel]
    novel_c = [c.count for c in classes if c.name in novel]
    qd = quantile_distance(base_c, novel_c)
    gap = 0.0
    if all(c.ap is not None for c in classes):
        gap = abs(np.mean([c.ap for c in classes if c.name not in novel])
                  - np.mean([c.ap for c in classes if c.name in novel]))
    return qd + gap, qd, float(gap)


def _key(classes, novel):
    return (split_objective(classes, novel)[0], tuple(sorted(novel)))


def _local_search(classes, groups, novel: frozenset[str]) -> frozenset[str]:
    best = _key(classes, novel)
    while True:
        move = None
        for members in groups.values():
            ins = [c for c in members if c in novel]
            outs = [c for c in members if c not in novel]
            for a in ins:
                for b in outs:
                    cand = (novel - {a}) | {b}
                    k = _key(classes, cand)
                    if k < best:
                        best, move = k, cand
        if move is None:
            return novel
        novel = move


def build_split(classes: Sequence[ClassInfo], seed: int = 0, restarts: int = RESTARTS) -> BenchmarkSplit:
    if len(classes) < 4:
        raise SplitError(f"need at least 4 classes, got {len(classes)}")
    names = [c.name for c in classes]
    if len(set(names)) != len(names):
        raise SplitError("duplicate class names")
    if any(c.count <= 0 for c in classes):
        raise SplitError("instance counts must be positive")

    groups: dict[str, list[str]] = {}
    for c in classes:
        groups.setdefault(c.type or "all", []).append(c.name)
    quota = novel_quota({t: len(m) for t, m in groups.items()})
    by_name = {c.name: c for c in classes}

    start = set()
    for t, members in groups.items():
        ranked = sorted(members, key=lambda n: (-by_name[n].count, n))
        k = quota[t]
        start.update(ranked[int((i + 0.5) * len(ranked) / k)] for i in range(k))
    candidates = [_local_search(classes, groups, frozenset(start))]

    rng = np.random.default_rng(seed)
    for _ in range(restarts):
        pick = set()
        for t, members in groups.items():
            if quota[t]:
                pick.update(rng.choice(members, size=quota[t], replace=False).tolist())
        candidates.append(_local_search(classes, groups, frozenset(pick)))
    novel = min(candidates, key=lambda s: _key(classes, s))

    total, qd, gap = split_objective(classes, novel)
    report = {
        "objective": total,
        "quantile_distance": qd,
        "ap_gap": gap,
        "per_type": {t: {"base": len(m) - sum(n in novel for n in m),
                         "novel": sum(n in novel for n in m)} for t, m in sorted(groups.items())},
        "seed": seed,
    }
    return BenchmarkSplit(
        classes=names,
        base=[n for n in names if n not in novel],
        novel=[n for n in names if n in novel],
        counts={c.name: int(c.count) for c in classes},
        report=report,
    )

