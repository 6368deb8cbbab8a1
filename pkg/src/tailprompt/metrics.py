"""Ranking metrics: per-class average precision and grouped mAP.

AP here is the plain mean of precision-at-rank over the positive ranks, no
interpolation. Ranking is by descending score with ties broken by ascending
sample index, so results are reproducible across runs and platforms. Final
sums use math.fsum (exactly rounded), which makes the value independent of
summation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .data_model import ClassStats, GROUPS, MultiLabelDataset
from .encoders import FrozenTextEncoder, PromptSet, encode_all
from .errors import ConfigError


def average_precision(scores: np.ndarray, labels: np.ndarray) -> float:
    """AP of one class: mean over positives of precision at each positive rank.

    scores: (N,) real; labels: (N,) binary. Raises ConfigError when the class
    has no positives (callers exclude such classes instead).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 1 or scores.shape != labels.shape:
        raise ConfigError("scores and labels must be 1-d and the same length")
    if not np.isfinite(scores).all():
        raise ConfigError("scores must be finite")
    npos = int((labels == 1).sum())
    if npos == 0:
        raise ConfigError("average precision is undefined without positives")
    # stable sort on negated scores = descending score, ties by ascending index
    order = np.argsort(-scores, kind="stable")
    hits = (labels[order] == 1).astype(np.float64)
    ranks = np.arange(1, scores.size + 1, dtype=np.float64)
    precisions = np.cumsum(hits) / ranks
    return math.fsum(precisions[hits == 1.0]) / npos


def brute_force_ap(scores, labels) -> float:
    """Definition-chasing AP for tiny inputs (N <= 8), no sorting library.

    Builds the ranking by repeated argmax with explicit tie handling, then
    walks it accumulating precision at every positive.
    """
    scores = [float(s) for s in scores]
    labels = [int(y) for y in labels]
    n = len(scores)
    if n != len(labels):
        raise ConfigError("scores and labels must be the same length")
    if n > 8:
        raise ConfigError("brute-force path is restricted to N <= 8")
    if sum(labels) == 0:
        raise ConfigError("average precision is undefined without positives")
    remaining = list(range(n))
    ranking = []
    while remaining:
        best = remaining[0]
        for j in remaining[1:]:
            if scores[j] > scores[best] or (scores[j] == scores[best] and j < best):
                best = j
        ranking.append(best)
        remaining.remove(best)
    precisions = []
    true_pos = 0
    for rank, j in enumerate(ranking, start=1):
        if labels[j] == 1:
            true_pos += 1
            precisions.append(true_pos / rank)
    return math.fsum(precisions) / len(precisions)


@dataclass(frozen=True)
class EvalResult:
    """Grouped mAP summary.

    per_class_ap holds NaN for excluded (zero-positive) classes; group means
    are None when a group has no scoreable class. map_total averages over
    every scoreable class regardless of group.
    """

    per_class_ap: np.ndarray
    map_total: float
    map_head: float | None
    map_medium: float | None
    map_tail: float | None
    excluded: tuple[int, ...]

    def group_map(self, group: str) -> float | None:
        if group not in GROUPS:
            raise ConfigError(f"unknown group: {group!r}")
        return {"head": self.map_head, "medium": self.map_medium, "tail": self.map_tail}[group]


def evaluate_scores(scores: np.ndarray, labels: np.ndarray, stats: ClassStats) -> EvalResult:
    """Per-class AP from a score matrix plus head/medium/tail means."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 2 or scores.shape != labels.shape:
        raise ConfigError("scores and labels must be matching (N, C) matrices")
    num_classes = scores.shape[1]
    if num_classes != len(stats.counts):
        raise ConfigError("stats cover a different number of classes")
    per_class = np.full(num_classes, np.nan)
    excluded = []
    for i in range(num_classes):
        if (labels[:, i] == 1).any():
            per_class[i] = average_precision(scores[:, i], labels[:, i])
        else:
            excluded.append(i)
    scoreable = ~np.isnan(per_class)
    if not scoreable.any():
        raise ConfigError("no class has positives; nothing to evaluate")
    map_total = math.fsum(per_class[scoreable]) / int(scoreable.sum())
    group_tags = np.asarray(stats.group)
    group_means = {}
    for group in GROUPS:
        members = scoreable & (group_tags == group)
        if members.any():
            group_means[group] = math.fsum(per_class[members]) / int(members.sum())
        else:
            group_means[group] = None
    return EvalResult(
        per_class_ap=per_class,
        map_total=map_total,
        map_head=group_means["head"],
        map_medium=group_means["medium"],
        map_tail=group_means["tail"],
        excluded=tuple(excluded),
    )


def evaluate(
    dataset: MultiLabelDataset,
    prompts: PromptSet,
    encoder: FrozenTextEncoder,
    tau: float,
    stats: ClassStats,
) -> EvalResult:
    """Score every sample against every class prompt and rank."""
    if tau <= 0:
        raise ConfigError("temperature must be > 0")
    encoding = encode_all(encoder, prompts)
    scores = dataset.images @ encoding.embeddings.T / tau
    return evaluate_scores(scores, dataset.labels, stats)


def all_binary_label_patterns(n: int, require_positive: bool = True):
    """Every length-n binary vector, optionally only those with >= 1 positive."""
    patterns = []
    for k in range(0 if not require_positive else 1, n + 1):
        for pos in combinations(range(n), k):
            row = [0] * n
            for j in pos:
                row[j] = 1
            patterns.append(row)
    return patterns
