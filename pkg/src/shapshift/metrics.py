"""Fidelity, importance ranks, and rank-movement summaries of explanations.

All metrics consume grouped explanations (one weight per logical feature).
Ranks order features by descending absolute weight, rank 1 most important;
ties resolve to the earlier feature in the explanation's feature order.
Rank shifts are ``rank_before - rank_after``: positive means the feature
became more important (was promoted).
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .data import ConfusionPartition
from .explain import GroupedExplanation, reconstruct_label


@dataclass(frozen=True)
class FidelityReport:
    """Agreement between explanation-implied labels and reference labels."""

    agreement: float
    faithful: int
    total: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.agreement <= 1.0:
            raise ValueError("agreement must lie in [0, 1]")


@dataclass(frozen=True)
class RankTable:
    """Per-observation feature ranks; ``ranks[i, j]`` ranks feature j for row i."""

    indices: tuple[int, ...]
    features: tuple[str, ...]
    ranks: np.ndarray

    def __post_init__(self) -> None:
        if self.ranks.shape != (len(self.indices), len(self.features)):
            raise ValueError("rank matrix shape does not match indices/features")
        self.ranks.setflags(write=False)

    def column(self, feature: str) -> np.ndarray:
        try:
            j = self.features.index(feature)
        except ValueError:
            raise KeyError(f"no feature named {feature!r}") from None
        return self.ranks[:, j]

    def rank_of(self, index: int, feature: str) -> int:
        return int(self.column(feature)[self.indices.index(index)])


def rank(explanation: GroupedExplanation) -> np.ndarray:
    """Ranks aligned to ``explanation.features``; 1 = largest |weight|."""
    w = np.abs(explanation.weights)
    order = sorted(range(w.shape[0]), key=lambda j: (-w[j], j))
    ranks = np.empty(w.shape[0], dtype=int)
    for pos, j in enumerate(order):
        ranks[j] = pos + 1
    return ranks


def rank_table(explanations: list[GroupedExplanation]) -> RankTable:
    if not explanations:
        raise ValueError("no explanations given")
    features = explanations[0].features
    indices = []
    rows = []
    for e in explanations:
        if e.features != features:
            raise ValueError("explanations disagree on feature order")
        if e.index is None:
            raise ValueError("explanations must carry observation indices")
        indices.append(int(e.index))
        rows.append(rank(e))
    if len(set(indices)) != len(indices):
        raise ValueError("duplicate observation indices")
    return RankTable(indices=tuple(indices), features=features, ranks=np.array(rows, dtype=int))


def fidelity(explanations: list[GroupedExplanation] | list, reference_labels) -> FidelityReport:
    """Fraction of observations whose reconstructed label matches the reference."""
    ref = np.asarray(reference_labels, dtype=int)
    if len(explanations) == 0:
        raise ValueError("no explanations given")
    if ref.shape[0] != len(explanations):
        raise ValueError("reference labels must match the number of explanations")
    hits = sum(int(reconstruct_label(e) == r) for e, r in zip(explanations, ref))
    return FidelityReport(agreement=hits / len(explanations), faithful=hits, total=len(explanations))


def avg_abs_shap(explanations: list[GroupedExplanation], feature: str,
                 top_only: bool = False) -> float | None:
    """Mean |weight| of ``feature``; with ``top_only`` restricted to rows where
    it ranks first.  Returns None when no row qualifies."""
    if not explanations:
        raise ValueError("no explanations given")
    values = []
    for e in explanations:
        if top_only and rank(e)[e.features.index(feature)] != 1:
            continue
        values.append(abs(e.weight_of(feature)))
    if not values:
        return None
    return float(np.mean(values))


def avg_rank(explanations: list[GroupedExplanation], feature: str) -> float:
    if not explanations:
        raise ValueError("no explanations given")
    return float(np.mean([rank(e)[e.features.index(feature)] for e in explanations]))


def top1_frequency(explanations: list[GroupedExplanation], feature: str) -> float:
    if not explanations:
        raise ValueError("no explanations given")
    tops = [int(rank(e)[e.features.index(feature)] == 1) for e in explanations]
    return float(np.mean(tops))


def _aligned_shifts(before: RankTable, after: RankTable, feature: str) -> np.ndarray:
    if set(before.indices) != set(after.indices):
        raise ValueError("rank tables cover different observation sets")
    pos_after = {idx: i for i, idx in enumerate(after.indices)}
    b = before.column(feature)
    a = after.column(feature)
    return np.array([b[i] - a[pos_after[idx]] for i, idx in enumerate(before.indices)], dtype=int)


def rank_shift_histogram(before: RankTable, after: RankTable, feature: str) -> dict[int, int]:
    """Count observations by rank shift; counts sum to the observation count."""
    shifts = _aligned_shifts(before, after, feature)
    return {int(s): int(c) for s, c in sorted(Counter(shifts.tolist()).items())}


def subgroup_rank_stats(table: RankTable, parts: ConfusionPartition,
                        feature: str) -> dict[str, dict[int, int]]:
    """Rank distribution of ``feature`` within each confusion cell."""
    pos = {idx: i for i, idx in enumerate(table.indices)}
    col = table.column(feature)
    out: dict[str, dict[int, int]] = {}
    for cell, members in parts.cells().items():
        counts = Counter(int(col[pos[idx]]) for idx in members if idx in pos)
        missing = [idx for idx in members if idx not in pos]
        if missing:
            raise ValueError(f"{cell}: indices {missing[:3]} not present in the rank table")
        out[cell] = {r: counts[r] for r in sorted(counts)}
    return out


def per_bucket_shift_counts(before: RankTable, after: RankTable, feature: str,
                            bucket_assignment) -> dict[int, dict[str, int]]:
    """Promoted/demoted/unchanged tallies of ``feature`` per bucket.

    ``bucket_assignment`` gives each observation's bucket, aligned with
    ``before.indices``.
    """
    buckets = np.asarray(bucket_assignment, dtype=int)
    if buckets.shape[0] != len(before.indices):
        raise ValueError("bucket assignment must align with the before-table rows")
    shifts = _aligned_shifts(before, after, feature)
    out: dict[int, dict[str, int]] = {}
    for b in sorted(set(buckets.tolist())):
        sel = shifts[buckets == b]
        out[b] = {
            "promoted": int(np.sum(sel > 0)),
            "demoted": int(np.sum(sel < 0)),
            "unchanged": int(np.sum(sel == 0)),
        }
    return out
