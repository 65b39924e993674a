"""Synthetic multi-interest world and online exploration with DCM users.

Items live in Gaussian interest clusters; each user owns a subset of the
clusters.  At every iteration each user's GP is refitted on their current
history, a policy recommends N unseen items, a dependent click model decides
which positions are examined and clicked, and examined items are appended to
the history with +1 (click) or -1 (skip).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import gpr
from .gpr import GPConfig
from .retrieval import Policy, policy_rng, scores_from_predictions

__all__ = [
    "WorldConfig",
    "SyntheticWorld",
    "DcmConfig",
    "Outcome",
    "OnlineTrace",
    "generate_world",
    "attractions",
    "examination_probabilities",
    "dcm_respond",
    "online_loop",
    "cumulative_ic",
    "write_trace",
    "summary_table",
]

# stream tags keep policy noise and user noise independent for equal seeds
_POLICY_STREAM = 0
_DCM_STREAM = 1


@dataclass(frozen=True)
class WorldConfig:
    n_clusters: int = 10
    dim: int = 32
    n_users: int = 1000
    n_items: int = 3000
    items_per_cluster: int = 300
    cluster_mean_scale: float = 2.0
    cluster_cov_scale: float = 0.3
    interests_per_user: tuple = (2, 5)
    self_transition: float = 0.6
    transition_matrix: Optional[tuple] = None
    history_steps: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.n_items != self.n_clusters * self.items_per_cluster:
            raise ValueError("n_items must equal n_clusters * items_per_cluster")
        lo, hi = self.interests_per_user
        if not 1 <= lo <= hi <= self.n_clusters:
            raise ValueError("interests_per_user must satisfy 1 <= lo <= hi <= n_clusters")
        if not 0.0 <= self.self_transition <= 1.0:
            raise ValueError("self_transition must be a probability")
        if self.transition_matrix is not None:
            P = np.asarray(self.transition_matrix, dtype=float)
            if P.shape != (self.n_clusters, self.n_clusters) or np.any(P < 0):
                raise ValueError("transition_matrix must be a non-negative |C| x |C| matrix")
            if not np.allclose(P.sum(axis=1), 1.0, atol=1e-9, rtol=0):
                raise ValueError("transition_matrix rows must sum to 1")
        if self.history_steps < 1:
            raise ValueError("history_steps must be >= 1")

    def user_transitions(self, interests: Sequence[int]) -> np.ndarray:
        """Chain over one user's interests (rows sum to 1)."""
        m = len(interests)
        if m == 1:
            return np.ones((1, 1))
        if self.transition_matrix is None:
            P = np.full((m, m), (1.0 - self.self_transition) / (m - 1))
            np.fill_diagonal(P, self.self_transition)
            return P
        P = np.asarray(self.transition_matrix, dtype=float)[np.ix_(interests, interests)]
        rows = P.sum(axis=1, keepdims=True)
        return np.divide(P, rows, out=np.full_like(P, 1.0 / m), where=rows > 0)


@dataclass(frozen=True, eq=False)
class SyntheticWorld:
    config: WorldConfig
    cluster_means: np.ndarray
    cluster_scales: np.ndarray
    item_embeddings: np.ndarray
    item_clusters: np.ndarray
    interests: tuple          # per user: frozenset of cluster ids
    histories: tuple          # per user: tuple of item ids
    observations: tuple       # per user: tuple of +/-1

    @property
    def n_users(self) -> int:
        return len(self.interests)

    @property
    def n_items(self) -> int:
        return len(self.item_clusters)


def generate_world(cfg: WorldConfig) -> SyntheticWorld:
    rng = np.random.default_rng(cfg.seed)
    C, d = cfg.n_clusters, cfg.dim
    means = rng.normal(0.0, cfg.cluster_mean_scale, (C, d))
    scales = np.full((C, d), cfg.cluster_cov_scale)
    clusters = np.repeat(np.arange(C), cfg.items_per_cluster)
    items = means[clusters] + rng.standard_normal((cfg.n_items, d)) * scales[clusters]
    members = [np.flatnonzero(clusters == c) for c in range(C)]

    lo, hi = cfg.interests_per_user
    interests, histories, observations = [], [], []
    for _ in range(cfg.n_users):
        m = int(rng.integers(lo, hi + 1))
        mine = sorted(rng.choice(C, size=m, replace=False).tolist())
        P = cfg.user_transitions(mine)
        state = int(rng.integers(m))
        hist: list[int] = []
        for _ in range(cfg.history_steps):
            pool = np.setdiff1d(members[mine[state]], hist, assume_unique=True)
            hist.append(int(rng.choice(pool)))
            state = int(rng.choice(m, p=P[state]))
        interests.append(frozenset(mine))
        histories.append(tuple(hist))
        observations.append(tuple(1.0 if clusters[i] in interests[-1] else -1.0 for i in hist))
    return SyntheticWorld(cfg, means, scales, items, clusters, tuple(interests),
                          tuple(histories), tuple(observations))


# ---------------------------------------------------------------------------
# dependent click model
# ---------------------------------------------------------------------------


class Outcome(enum.IntEnum):
    UNEXAMINED = 0
    SKIPPED = 1
    CLICKED = 2


@dataclass(frozen=True)
class DcmConfig:
    continue_after_click: float = 0.9
    continue_after_skip: float = 0.5
    redundancy_decay: float = 0.8
    relevance_fn: str = "identity"
    seed: int = 0

    def __post_init__(self):
        for p in (self.continue_after_click, self.continue_after_skip):
            if not 0.0 <= p <= 1.0:
                raise ValueError("continuation probabilities must lie in [0, 1]")
        if not 0.0 < self.redundancy_decay <= 1.0:
            raise ValueError("redundancy_decay must lie in (0, 1]")
        if self.relevance_fn not in ("identity", "clipped"):
            raise ValueError(f"unknown relevance_fn {self.relevance_fn!r}")


def relevance(world: SyntheticWorld, user: int, items: Sequence[int], mode: str) -> np.ndarray:
    items = np.asarray(items, dtype=np.intp)
    mine = world.interests[user]
    if mode == "identity":
        return np.array([1.0 if c in mine else 0.0 for c in world.item_clusters[items]])
    # dot product against each interest mean, scaled so the mean itself scores 1
    mu = world.cluster_means[sorted(mine)]
    raw = world.item_embeddings[items] @ mu.T / np.sum(mu * mu, axis=1)
    return np.clip(raw.max(axis=1), 0.0, 1.0)


def attractions(clusters: Sequence, rel: Sequence[float], decay: float) -> np.ndarray:
    """a_i = decay ** (earlier same-cluster items in the list) * r_i, clamped to [0, 1]."""
    seen: dict = {}
    out = np.empty(len(clusters))
    for i, (c, r) in enumerate(zip(clusters, rel)):
        n = seen.get(c, 0)
        out[i] = decay ** n * r
        seen[c] = n + 1
    return np.clip(out, 0.0, 1.0)


def examination_probabilities(attr: Sequence[float], p: float, q: float) -> np.ndarray:
    """Closed-form e_i = prod_{k<i} (p a_k + q (1 - a_k)), e_1 = 1."""
    attr = np.asarray(attr, dtype=float)
    step = p * attr + q * (1.0 - attr)
    return np.concatenate([[1.0], np.cumprod(step)[:-1]])


def simulate_clicks(attr: Sequence[float], p: float, q: float,
                    rng: np.random.Generator) -> list:
    """Walk the list top-down; stop with prob 1-p after a click, 1-q after a skip."""
    out = [Outcome.UNEXAMINED] * len(attr)
    for i, a in enumerate(attr):
        clicked = rng.random() < a
        out[i] = Outcome.CLICKED if clicked else Outcome.SKIPPED
        if rng.random() >= (p if clicked else q):
            break
    return out


def dcm_respond(user: int, ranked_list: Sequence[int], world: SyntheticWorld,
                cfg: DcmConfig, seed) -> list:
    if len(ranked_list) == 0:
        raise ValueError("cannot respond to an empty list")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    rel = relevance(world, user, ranked_list, cfg.relevance_fn)
    attr = attractions(world.item_clusters[np.asarray(ranked_list)], rel, cfg.redundancy_decay)
    return simulate_clicks(attr, cfg.continue_after_click, cfg.continue_after_skip, rng)


# ---------------------------------------------------------------------------
# online loop
# ---------------------------------------------------------------------------


@dataclass
class OnlineTrace:
    policy: Policy
    N: int
    recommended: list = field(default_factory=list)   # [t][user] -> item list
    outcomes: list = field(default_factory=list)      # [t][user] -> Outcome list
    ic: list = field(default_factory=list)            # cumulative IC after each t

    @property
    def T(self) -> int:
        return len(self.recommended)


def _top_eligible(scores, excluded, N):
    cand = np.flatnonzero(~excluded)
    order = np.lexsort((cand, -scores[cand]))
    return cand[order[:N]]


def online_loop(world: SyntheticWorld, gp_cfg: GPConfig, policy: Policy, N: int, T: int,
                dcm_cfg: DcmConfig, gram: Optional[np.ndarray] = None) -> OnlineTrace:
    """Run T recommend/respond/update rounds for every user.

    ``gram`` may carry a precomputed item kernel matrix to share across
    policies on the same world.
    """
    if T < 1 or N < 1:
        raise ValueError("T and N must be positive")
    X = world.item_embeddings
    if gram is None and policy.kind != "random":
        gram = gpr.kernel_matrix(gp_cfg.kernel, X, X, rowwise=False)
    kdiag = gpr.kernel_diag(gp_cfg.kernel, X)
    trace = OnlineTrace(policy, N)
    hist = [list(h) for h in world.histories]
    obs = [list(o) for o in world.observations]
    excluded = np.zeros((world.n_users, world.n_items), dtype=bool)
    for u, h in enumerate(hist):
        excluded[u, h] = True
    covered = [set() for _ in range(world.n_users)]

    for t in range(T):
        recs, outs = [], []
        for u in range(world.n_users):
            rng = policy_rng(policy.seed, _POLICY_STREAM, u, t)
            if policy.kind == "random":
                scores = rng.random(world.n_items)
            else:
                idx = np.asarray(hist[u])
                try:
                    post = gpr.fit_gram(gram[np.ix_(idx, idx)], obs[u], gp_cfg, user=u)
                    pred = gpr.predict_cross(post, gram[idx].T, kdiag, gp_cfg, rowwise=False)
                except gpr.GPError as exc:
                    raise RuntimeError(f"iteration {t + 1}, user {u}: {exc}") from exc
                scores = scores_from_predictions(pred, policy, rng)
            rec = _top_eligible(scores, excluded[u], N)
            out = dcm_respond(u, rec, world, dcm_cfg, policy_rng(dcm_cfg.seed, _DCM_STREAM, u, t))
            excluded[u, rec] = True
            for item, o in zip(rec.tolist(), out):
                if o is Outcome.UNEXAMINED:
                    break
                hist[u].append(item)
                obs[u].append(1.0 if o is Outcome.CLICKED else -1.0)
            covered[u].update(world.item_clusters[rec].tolist())
            recs.append(rec.tolist())
            outs.append(out)
        trace.recommended.append(recs)
        trace.outcomes.append(outs)
        trace.ic.append(float(np.mean([len(covered[u] & world.interests[u]) / len(world.interests[u])
                                       for u in range(world.n_users)])))
    return trace


def cumulative_ic(trace: OnlineTrace, world: SyntheticWorld, t: int,
                  basis: str = "recommended") -> float:
    """Mean fraction of each user's interest clusters hit by iterations 1..t.

    ``basis="recommended"`` counts every recommended item; ``"examined"``
    counts only items the simulated user actually looked at.
    """
    if not 1 <= t <= trace.T:
        raise ValueError(f"t must lie in [1, {trace.T}]")
    if basis not in ("recommended", "examined"):
        raise ValueError(f"unknown basis {basis!r}")
    total = 0.0
    for u in range(world.n_users):
        seen = set()
        for s in range(t):
            for item, o in zip(trace.recommended[s][u], trace.outcomes[s][u]):
                if basis == "recommended" or o is not Outcome.UNEXAMINED:
                    seen.add(int(world.item_clusters[item]))
        total += len(seen & world.interests[u]) / len(world.interests[u])
    return total / world.n_users


def write_trace(trace: OnlineTrace, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t, (recs, outs) in enumerate(zip(trace.recommended, trace.outcomes), start=1):
            fh.write(f"# iteration {t}\n")
            for u, (rec, out) in enumerate(zip(recs, outs)):
                for rank, (item, o) in enumerate(zip(rec, out), start=1):
                    fh.write(f"{u}\t{rank}\t{item}\t{o.name.lower()}\n")


def summary_table(rows: Sequence[tuple]) -> str:
    """Render ``(label, [ic_t1, ..., ic_tT])`` rows as a tab-separated table."""
    T = max(len(vals) for _, vals in rows)
    lines = ["policy\t" + "\t".join(f"t={t}" for t in range(1, T + 1))]
    for label, vals in rows:
        lines.append(label + "\t" + "\t".join(f"{v:.2f}" for v in vals))
    return "\n".join(lines) + "\n"
