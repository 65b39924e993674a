"""Interaction-log ingestion, filtering and user-level splitting."""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "DatasetError",
    "InteractionLog",
    "Catalog",
    "UserHistory",
    "SplitSpec",
    "Splits",
    "load_interactions",
    "load_catalog",
    "filter_and_split",
    "interests_of",
    "write_manifest",
    "synthetic_dataset",
]

DELIMITERS = {"csv": ",", "tsv": "\t"}


class DatasetError(ValueError):
    pass


class EmptyInputError(DatasetError):
    pass


@dataclass(frozen=True)
class InteractionLog:
    """Interaction records ``(user, item, rating, timestamp)``.

    Records are grouped by user in ascending user id; within a user they are
    sorted by timestamp with ties kept in input order.
    """

    records: tuple

    def __len__(self):
        return len(self.records)

    @classmethod
    def from_records(cls, records: Iterable[tuple]) -> "InteractionLog":
        indexed = [(int(u), int(i), float(r), int(t), n)
                   for n, (u, i, r, t) in enumerate(records)]
        indexed.sort(key=lambda rec: (rec[0], rec[3], rec[4]))
        return cls(tuple(rec[:4] for rec in indexed))

    @property
    def users(self) -> list[int]:
        return sorted({r[0] for r in self.records})

    def by_user(self) -> dict[int, list[tuple]]:
        out: dict[int, list[tuple]] = defaultdict(list)
        for rec in self.records:
            out[rec[0]].append(rec)
        return dict(out)


@dataclass(frozen=True)
class Catalog:
    item_categories: Mapping[int, frozenset]
    users: frozenset = frozenset()

    def __post_init__(self):
        for item, cats in self.item_categories.items():
            if not cats:
                raise DatasetError(f"item {item} has no category")

    @property
    def items(self) -> list[int]:
        return sorted(self.item_categories)

    @property
    def categories(self) -> list[str]:
        return sorted({c for cats in self.item_categories.values() for c in cats})

    def categories_of(self, item) -> frozenset:
        try:
            return self.item_categories[item]
        except KeyError:
            raise KeyError(f"unknown item id {item!r}") from None

    def restrict(self, items: Iterable[int]) -> "Catalog":
        return Catalog({i: self.item_categories[i] for i in items}, self.users)


@dataclass(frozen=True)
class UserHistory:
    user_id: int
    items: tuple
    observations: tuple
    history_len: int
    timestamps: tuple = ()

    def __post_init__(self):
        if len(self.items) != len(self.observations):
            raise DatasetError("observations must align with items")
        if not 0 < self.history_len < len(self.items):
            raise DatasetError(
                f"user {self.user_id}: history length {self.history_len} "
                f"must be in [1, {len(self.items) - 1}]")

    @property
    def length(self) -> int:
        return len(self.items)

    @property
    def history(self) -> tuple:
        return self.items[:self.history_len]

    @property
    def holdout(self) -> tuple:
        return self.items[self.history_len:]

    @property
    def history_observations(self) -> np.ndarray:
        return np.asarray(self.observations[:self.history_len], dtype=float)


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple = (0.8, 0.1, 0.1)
    history_fraction: float = 0.8
    history_cap: int = 175
    min_item_freq: int = 10
    min_user_len: int = 25
    seed: int = 0
    observations: str = "implicit"

    def __post_init__(self):
        if len(self.ratios) != 3 or any(r < 0 for r in self.ratios):
            raise DatasetError("ratios must be three non-negative numbers")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise DatasetError(f"ratios must sum to 1, got {sum(self.ratios)}")
        if not 0.0 < self.history_fraction < 1.0:
            raise DatasetError("history_fraction must lie in (0, 1)")
        if self.history_cap < 1:
            raise DatasetError("history_cap must be positive")
        if self.min_user_len < 2:
            # a retained user needs at least one history and one holdout item
            raise DatasetError("min_user_len must be at least 2")
        if self.observations not in ("implicit", "rating"):
            raise DatasetError(f"unknown observation mode {self.observations!r}")


@dataclass(frozen=True)
class Splits:
    train: tuple
    val: tuple
    test: tuple
    retained_items: tuple = field(default=())

    def __iter__(self):
        return iter((self.train, self.val, self.test))

    def tagged(self):
        for tag, part in (("train", self.train), ("val", self.val), ("test", self.test)):
            for user in part:
                yield tag, user


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_interactions(path, format: str = "csv") -> InteractionLog:
    """Read ``user,item,rating,timestamp`` rows; a non-numeric first field
    on the first line marks a header."""
    if format not in DELIMITERS:
        raise DatasetError(f"unsupported format {format!r}")
    sep = DELIMITERS[format]
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = [f.strip() for f in line.split(sep)]
            if lineno == 1 and fields and not _is_number(fields[0]):
                continue
            if len(fields) != 4:
                raise DatasetError(f"{path}:{lineno}: expected 4 fields, got {len(fields)}")
            try:
                rows.append((int(fields[0]), int(fields[1]), float(fields[2]), int(fields[3])))
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: malformed row ({exc})") from None
    if not rows:
        raise EmptyInputError(f"{path}: no interactions")
    return InteractionLog.from_records(rows)


def load_catalog(path, format: str = "csv") -> Catalog:
    """Read ``item<sep>cat1|cat2|...`` rows (header auto-detected)."""
    sep = DELIMITERS[format]
    item_categories = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split(sep)
            if lineno == 1 and not _is_number(fields[0]):
                continue
            if len(fields) != 2:
                raise DatasetError(f"{path}:{lineno}: expected 2 fields")
            cats = frozenset(c.strip() for c in fields[1].split("|") if c.strip())
            try:
                item_categories[int(fields[0])] = cats
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: malformed item id") from None
    if not item_categories:
        raise EmptyInputError(f"{path}: empty catalog")
    return Catalog(item_categories)


def write_interactions(log: InteractionLog, path, format: str = "csv") -> None:
    sep = DELIMITERS[format]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(sep.join(("user", "item", "rating", "timestamp")) + "\n")
        for u, i, r, t in log.records:
            fh.write(f"{u}{sep}{i}{sep}{r:g}{sep}{t}\n")


def write_catalog(catalog: Catalog, path, format: str = "csv") -> None:
    sep = DELIMITERS[format]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"item{sep}categories\n")
        for item in catalog.items:
            fh.write(f"{item}{sep}{'|'.join(sorted(catalog.item_categories[item]))}\n")


# ---------------------------------------------------------------------------
# filtering and splitting
# ---------------------------------------------------------------------------


def _filter_fixpoint(by_user, min_item_freq, min_user_len):
    by_user = {u: list(recs) for u, recs in by_user.items()}
    while True:
        freq = Counter(rec[1] for recs in by_user.values() for rec in recs)
        changed = False
        for u in list(by_user):
            kept = [rec for rec in by_user[u] if freq[rec[1]] >= min_item_freq]
            if len(kept) != len(by_user[u]):
                changed = True
            if len(kept) < min_user_len:
                del by_user[u]
                changed = True
            else:
                by_user[u] = kept
        if not changed:
            return by_user


def _partition_sizes(n, ratios):
    cuts = [0]
    acc = 0.0
    for r in ratios:
        acc += r
        cuts.append(min(n, int(round(acc * n))))
    cuts[-1] = n
    return cuts


def _make_history(user, recs, spec: SplitSpec) -> UserHistory:
    n = len(recs)
    hist_len = min(max(1, int(math.floor(spec.history_fraction * n))), n - 1)
    start = max(0, hist_len - spec.history_cap)
    kept = recs[start:]
    if spec.observations == "implicit":
        obs = tuple(1.0 for _ in kept)
    else:
        obs = tuple(rec[2] for rec in kept)
    return UserHistory(
        user_id=user,
        items=tuple(rec[1] for rec in kept),
        observations=obs,
        history_len=hist_len - start,
        timestamps=tuple(rec[3] for rec in kept),
    )


def filter_and_split(log: InteractionLog, spec: SplitSpec, catalog: Catalog) -> Splits:
    """Filter to a fixpoint, shuffle users by seed and split 8:1:1 style.

    Per user the first ``history_fraction`` of the time-ordered sequence is the
    history (capped to its most recent ``history_cap`` items) and the rest is
    the holdout.
    """
    by_user = log.by_user()
    for recs in by_user.values():
        for rec in recs:
            if rec[1] not in catalog.item_categories:
                raise KeyError(f"unknown item id {rec[1]!r}")
    kept = _filter_fixpoint(by_user, spec.min_item_freq, spec.min_user_len)
    if not kept:
        raise EmptyInputError("all users were filtered out")
    users = np.array(sorted(kept))
    order = np.random.default_rng(spec.seed).permutation(len(users))
    shuffled = users[order]
    cuts = _partition_sizes(len(users), spec.ratios)
    parts = []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        part = sorted(int(u) for u in shuffled[lo:hi])
        parts.append(tuple(_make_history(u, kept[u], spec) for u in part))
    items = sorted({rec[1] for recs in kept.values() for rec in recs})
    return Splits(*parts, retained_items=tuple(items))


def interests_of(items: Sequence, catalog: Catalog) -> set:
    out: set = set()
    for item in items:
        out |= catalog.categories_of(item)
    return out


def write_manifest(splits: Splits, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tag, user in splits.tagged():
            fh.write(f"{tag}\t{user.user_id}\t{user.history_len}\t{user.length}\n")


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------


def synthetic_dataset(n_users: int = 200, n_items: int = 400, n_categories: int = 12,
                      min_len: int = 30, max_len: int = 80, interests: tuple = (2, 5),
                      stay_prob: float = 0.7, seed: int = 0):
    """A MovieLens-shaped log with multi-category items and multi-interest users.

    Each item has a primary category plus, with probability 0.3, a second one.
    Users pick a handful of preferred categories and walk between them as a
    sticky Markov chain, consuming a popularity-weighted item of the current
    category at each step.
    """
    rng = np.random.default_rng(seed)
    cats = [f"c{j:02d}" for j in range(n_categories)]
    primary = rng.integers(n_categories, size=n_items)
    item_categories = {}
    for i in range(n_items):
        cs = {cats[primary[i]]}
        if rng.random() < 0.3:
            cs.add(cats[rng.integers(n_categories)])
        item_categories[i + 1] = frozenset(cs)
    popularity = rng.pareto(1.5, size=n_items) + 1.0
    by_cat = [np.flatnonzero(primary == j) for j in range(n_categories)]
    # category popularity is skewed so some categories form a long tail
    cat_weight = 1.0 / np.arange(1, n_categories + 1) ** 0.8
    cat_weight /= cat_weight.sum()
    records = []
    for u in range(1, n_users + 1):
        k = int(rng.integers(interests[0], interests[1] + 1))
        mine = rng.choice(n_categories, size=k, replace=False, p=cat_weight)
        mine = [c for c in mine if len(by_cat[c])]
        length = int(rng.integers(min_len, max_len + 1))
        state = int(rng.integers(len(mine)))
        t = int(rng.integers(10 ** 8, 2 * 10 ** 8))
        for _ in range(length):
            pool = by_cat[mine[state]]
            w = popularity[pool] / popularity[pool].sum()
            item = int(pool[rng.choice(len(pool), p=w)]) + 1
            records.append((u, item, float(rng.integers(1, 6)), t))
            t += int(rng.integers(1, 5000))
            if len(mine) > 1 and rng.random() > stay_prob:
                state = int(rng.choice([s for s in range(len(mine)) if s != state]))
    return InteractionLog.from_records(records), Catalog(item_categories)
