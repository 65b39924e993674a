"""Interest-aware retrieval metrics: IC@k, IR@k, ED@k and TEI@k.

All functions take a ``RetrievalRun`` (or anything with ``.items`` mapping a
user to a ranked item list), a mapping ``user -> holdout item list`` and the
catalog.  Each returns a ``MetricValue`` holding per-user values and their
mean.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .dataset import interests_of

__all__ = [
    "MetricError",
    "MetricValue",
    "MetricReport",
    "SimilarityOracle",
    "interest_coverage",
    "interest_relevance",
    "exposure_vector",
    "exposure_deviation",
    "tail_exposure_improvement",
    "tail_categories",
    "evaluate",
    "write_report",
]

METRICS = ("IC", "IR", "ED", "TEI")


class MetricError(ValueError):
    pass


class MetricValue(NamedTuple):
    per_user: dict
    mean: float


def _mean(per_user: dict) -> MetricValue:
    if not per_user:
        raise MetricError("no users to evaluate")
    vals = [per_user[u] for u in sorted(per_user)]
    return MetricValue(per_user, math.fsum(vals) / len(vals))


def _ranked(run):
    return run.items if hasattr(run, "items") and not isinstance(run, Mapping) else run


def _holdout_interests(holdout, catalog, user):
    cats = interests_of(holdout, catalog)
    if not cats:
        raise MetricError(f"user {user}: holdout has no categories")
    return cats


class SimilarityOracle:
    """Cosine similarity between items under a reference embedding matrix."""

    def __init__(self, item_ids: Sequence, matrix):
        matrix = np.asarray(matrix, dtype=float)
        norms = np.linalg.norm(matrix, axis=1, keepdims=True)
        self._unit = np.divide(matrix, norms, out=np.zeros_like(matrix), where=norms > 0)
        self._index = {i: n for n, i in enumerate(item_ids)}
        self.dim = matrix.shape[1]

    @classmethod
    def from_store(cls, store) -> "SimilarityOracle":
        return cls(store.item_ids, store.item_matrix)

    def rows(self, items: Iterable) -> np.ndarray:
        try:
            return np.array([self._index[i] for i in items], dtype=np.intp)
        except KeyError as exc:
            raise MetricError(f"item {exc.args[0]!r} unknown to the similarity oracle") from None

    def __call__(self, a, b) -> float:
        ra, rb = self.rows([a, b])
        return float(np.clip(self._unit[ra] @ self._unit[rb], -1.0, 1.0))

    def matrix(self, left: Sequence, right: Sequence) -> np.ndarray:
        return np.clip(self._unit[self.rows(left)] @ self._unit[self.rows(right)].T, -1.0, 1.0)


def interest_coverage(run, holdouts: Mapping, catalog, k: int) -> MetricValue:
    ranked = _ranked(run)
    out = {}
    for user, holdout in holdouts.items():
        target = _holdout_interests(holdout, catalog, user)
        got = interests_of(ranked[user][:k], catalog)
        out[user] = len(target & got) / len(target)
    return _mean(out)


def _user_relevance(holdout, retrieved, catalog, oracle):
    target = sorted(interests_of(holdout, catalog))
    if not retrieved:
        return 0.0
    sims = oracle.matrix(holdout, retrieved)
    total = 0.0
    for c in target:
        rows = [n for n, v in enumerate(holdout) if c in catalog.categories_of(v)]
        cols = [n for n, v in enumerate(retrieved) if c in catalog.categories_of(v)]
        if cols:
            total += float(sims[np.ix_(rows, cols)].max())
    return total / len(target)


def interest_relevance(run, holdouts: Mapping, catalog, oracle: SimilarityOracle,
                       k: int) -> MetricValue:
    """Per holdout category, the best same-category cosine similarity.

    A category counts for an item when the item lists it among its categories;
    categories with no same-category retrieved item contribute 0.
    """
    ranked = _ranked(run)
    out = {}
    for user, holdout in holdouts.items():
        _holdout_interests(holdout, catalog, user)
        out[user] = _user_relevance(list(holdout), list(ranked[user][:k]), catalog, oracle)
    return _mean(out)


def exposure_vector(items: Sequence, catalog, categories: Sequence = None) -> np.ndarray:
    """Share of category occurrences, one unit per (item, category) pair."""
    if len(items) == 0:
        raise MetricError("exposure of an empty list")
    categories = list(catalog.categories if categories is None else categories)
    index = {c: n for n, c in enumerate(categories)}
    counts = np.zeros(len(categories))
    for item in items:
        for c in catalog.categories_of(item):
            counts[index[c]] += 1.0
    return counts / counts.sum()


def exposure_deviation(run, holdouts: Mapping, catalog, k: int) -> MetricValue:
    ranked = _ranked(run)
    cats = catalog.categories
    out = {}
    for user, holdout in holdouts.items():
        diff = exposure_vector(holdout, catalog, cats) - exposure_vector(ranked[user][:k], catalog, cats)
        out[user] = float(diff @ diff)
    return _mean(out)


def tail_categories(histories: Iterable[Sequence], catalog, tail_fraction: float) -> list:
    """The least exposed ``ceil(tail_fraction * |C|)`` categories.

    Popularity counts exposure units over the given item sequences; ties are
    broken by category id.
    """
    if not 0.0 < tail_fraction <= 1.0:
        raise MetricError("tail_fraction must lie in (0, 1]")
    units = Counter({c: 0 for c in catalog.categories})
    for seq in histories:
        for item in seq:
            units.update(catalog.categories_of(item))
    ranked = sorted(units, key=lambda c: (units[c], c))
    return ranked[:math.ceil(tail_fraction * len(ranked))]


def tail_exposure_improvement(run, holdouts: Mapping, catalog, k: int,
                              tail: Sequence) -> MetricValue:
    ranked = _ranked(run)
    cats = catalog.categories
    pos = [cats.index(c) for c in tail]
    out = {}
    for user, holdout in holdouts.items():
        target = exposure_vector(holdout, catalog, cats)[pos]
        got = exposure_vector(ranked[user][:k], catalog, cats)[pos]
        out[user] = float(np.sum((got - target)[target > 0]))
    return _mean(out)


@dataclass
class MetricReport:
    cutoffs: tuple
    values: dict = field(default_factory=dict)  # (metric, k) -> MetricValue
    tail: tuple = ()

    def mean(self, metric: str, k: int) -> float:
        return self.values[(metric, k)].mean

    def rows(self):
        for metric in METRICS:
            for k in self.cutoffs:
                if (metric, k) in self.values:
                    yield metric, k, self.values[(metric, k)]


def evaluate(run, holdouts: Mapping, catalog, oracle: SimilarityOracle,
             cutoffs: Sequence[int], tail: Sequence) -> MetricReport:
    report = MetricReport(tuple(cutoffs), tail=tuple(tail))
    for k in cutoffs:
        report.values[("IC", k)] = interest_coverage(run, holdouts, catalog, k)
        report.values[("IR", k)] = interest_relevance(run, holdouts, catalog, oracle, k)
        report.values[("ED", k)] = exposure_deviation(run, holdouts, catalog, k)
        report.values[("TEI", k)] = tail_exposure_improvement(run, holdouts, catalog, k, tail)
    return report


def write_report(report: MetricReport, path, per_user: bool = False, label: str = "") -> None:
    prefix = f"{label}\t" if label else ""
    with open(path, "w", encoding="utf-8") as fh:
        for metric, k, value in report.rows():
            fh.write(f"{prefix}{metric}\t{k}\t{value.mean:.4f}\n")
        if per_user:
            for metric, k, value in report.rows():
                for user in sorted(value.per_user):
                    fh.write(f"{prefix}{metric}\t{k}\t{user}\t{value.per_user[user]:.4f}\n")
