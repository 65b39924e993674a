"""Top-N retrieval from per-user GP posteriors (Thompson sampling, UCB, greedy)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import gpr
from .gpr import GPConfig, Predictions, UserPosterior

__all__ = [
    "Policy",
    "RetrievalRun",
    "RetrievalError",
    "policy_rng",
    "score_thompson",
    "score_ucb",
    "scores_from_predictions",
    "top_n",
    "retrieve",
    "write_run",
    "read_run",
]

POLICY_KINDS = ("thompson", "ucb", "greedy", "random")


class RetrievalError(RuntimeError):
    pass


@dataclass(frozen=True)
class Policy:
    kind: str = "thompson"
    beta: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy {self.kind!r}")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")

    @property
    def label(self) -> str:
        if self.kind == "ucb":
            return f"ucb(beta={self.beta:g})"
        return self.kind


def policy_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent stream per (seed, user, ...) so parallel order is irrelevant."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFF] + [int(k) & 0xFFFFFFFF for k in keys])


def _draws(pred: Predictions, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal(len(pred.mean))
    return pred.mean + np.sqrt(pred.variance) * z


def score_thompson(post: UserPosterior, candidates, cfg: GPConfig, seed) -> np.ndarray:
    """One independent draw per candidate from its marginal posterior."""
    if len(candidates) == 0:
        raise RetrievalError("no candidates to score")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return _draws(gpr.predict_batch(post, candidates, cfg), rng)


def score_ucb(post: UserPosterior, candidates, cfg: GPConfig, beta: float) -> np.ndarray:
    if beta < 0:
        raise ValueError("beta must be >= 0")
    pred = gpr.predict_batch(post, candidates, cfg)
    return pred.mean + beta * np.sqrt(pred.variance)


def scores_from_predictions(pred: Predictions, policy: Policy, rng) -> np.ndarray:
    if policy.kind == "thompson":
        return _draws(pred, rng)
    if policy.kind == "ucb":
        return pred.mean + policy.beta * np.sqrt(pred.variance)
    if policy.kind == "greedy":
        return np.array(pred.mean, dtype=float)
    return rng.random(len(pred.mean))


def top_n(scores, candidate_ids, interacted, N: int) -> list:
    """Highest-scoring ``N`` candidates not in ``interacted``.

    Ties go to the lower item id.
    """
    if N <= 0:
        raise ValueError("N must be positive")
    scores = np.asarray(scores, dtype=float)
    ids = np.asarray(candidate_ids)
    if scores.shape != ids.shape:
        raise ValueError("scores and candidate ids must align")
    interacted = set(interacted)
    if interacted:
        keep = np.fromiter((i not in interacted for i in ids.tolist()), bool, len(ids))
        scores, ids = scores[keep], ids[keep]
    order = np.lexsort((ids, -scores))
    return ids[order[:N]].tolist()


@dataclass
class RetrievalRun:
    """Ranked lists per user; ``scores[u][r]`` is the score of ``items[u][r]``."""

    items: dict = field(default_factory=dict)
    scores: dict = field(default_factory=dict)
    policy: Optional[Policy] = None
    N: int = 0

    def prefix(self, user, k: int) -> list:
        return self.items[user][:k]

    @property
    def users(self) -> list:
        return sorted(self.items)


def retrieve(users: Sequence, store, gp_cfg: GPConfig, policy: Policy, N: int,
             candidate_items: Optional[Sequence] = None) -> RetrievalRun:
    """Fit each user's GP on their history and return the top-N eligible items.

    Candidates are all store items (or ``candidate_items``) minus the user's
    history items; holdout items stay eligible.
    """
    if N <= 0:
        raise ValueError("N must be positive")
    cand_ids = list(store.item_ids if candidate_items is None else candidate_items)
    cand_vecs = store.item_vectors(cand_ids)
    cand_arr = np.array(cand_ids)
    pos = {i: n for n, i in enumerate(cand_ids)}
    run = RetrievalRun(policy=policy, N=N)
    for user in users:
        rng = policy_rng(policy.seed, user.user_id)
        interacted = set(user.history)
        if policy.kind == "random":
            scores = rng.random(len(cand_ids))
        else:
            try:
                post = gpr.fit(user, store, gp_cfg)
                pred = gpr.predict_batch(post, cand_vecs, gp_cfg)
            except Exception as exc:
                raise RetrievalError(f"user {user.user_id}: {exc}") from exc
            scores = scores_from_predictions(pred, policy, rng)
        ranked = top_n(scores, cand_arr, interacted, N)
        run.items[user.user_id] = ranked
        run.scores[user.user_id] = [float(scores[pos[i]]) for i in ranked]
    return run


def write_run(run: RetrievalRun, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for user in run.users:
            for rank, (item, score) in enumerate(zip(run.items[user], run.scores[user]), 1):
                fh.write(f"{user}\t{rank}\t{item}\t{score:.17g}\n")


def read_run(path) -> RetrievalRun:
    run = RetrievalRun()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            user, rank, item, score = line.split("\t")
            run.items.setdefault(int(user), []).append(int(item))
            run.scores.setdefault(int(user), []).append(float(score))
    run.N = max((len(v) for v in run.items.values()), default=0)
    return run
