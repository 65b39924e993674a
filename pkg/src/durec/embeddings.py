"""Item embedding pre-training with a joint user->item / item->category softmax.

The objective is

    L = sum_(u,v) -log p(v | u) + gamma * sum_(v,c) -log p(c | v)

with ``p(v | u)`` a softmax over all items of ``u . v`` and ``p(c | v)`` a
softmax over all categories of ``v . c``.  Training uses sampled softmax with
uniform negatives for the item term; the category term is cheap enough to
evaluate exactly.  Only the item matrix is used downstream.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.special import log_softmax, softmax

__all__ = [
    "EmbeddingStore",
    "PretrainConfig",
    "FrozenStoreError",
    "DivergenceError",
    "interaction_likelihood",
    "category_likelihood",
    "objective",
    "pretrain",
    "save_store",
    "load_store",
]

log = logging.getLogger(__name__)


class FrozenStoreError(RuntimeError):
    pass


class DivergenceError(FloatingPointError):
    pass


class EmbeddingStore:
    """Users, items and categories with their embedding rows.

    Once frozen, attribute assignment raises ``FrozenStoreError`` and the
    matrices are read-only arrays (in-place writes raise ``ValueError``).
    """

    def __init__(self, user_ids, item_ids, category_ids, user_matrix, item_matrix,
                 category_matrix):
        self.user_ids = tuple(user_ids)
        self.item_ids = tuple(item_ids)
        self.category_ids = tuple(category_ids)
        self.user_matrix = np.array(user_matrix, dtype=float)
        self.item_matrix = np.array(item_matrix, dtype=float)
        self.category_matrix = np.array(category_matrix, dtype=float)
        dims = {m.shape[1] for m in (self.user_matrix, self.item_matrix, self.category_matrix)
                if m.size}
        if len(dims) > 1:
            raise ValueError(f"inconsistent embedding dimensions {sorted(dims)}")
        for ids, mat in ((self.user_ids, self.user_matrix), (self.item_ids, self.item_matrix),
                         (self.category_ids, self.category_matrix)):
            if len(ids) != mat.shape[0]:
                raise ValueError("row count does not match id count")
            if not np.all(np.isfinite(mat)):
                raise ValueError("embeddings must be finite")
        self.dim = self.item_matrix.shape[1]
        self._user_index = {u: n for n, u in enumerate(self.user_ids)}
        self._item_index = {i: n for n, i in enumerate(self.item_ids)}
        self._category_index = {c: n for n, c in enumerate(self.category_ids)}
        self._frozen = False

    def __setattr__(self, name, value):
        if getattr(self, "_frozen", False):
            raise FrozenStoreError(f"embedding store is frozen; cannot set {name!r}")
        super().__setattr__(name, value)

    def freeze(self) -> "EmbeddingStore":
        for mat in (self.user_matrix, self.item_matrix, self.category_matrix):
            mat.setflags(write=False)
        self._frozen = True
        return self

    @property
    def frozen(self) -> bool:
        return self._frozen

    def _lookup(self, index, key, kind):
        try:
            return index[key]
        except KeyError:
            raise KeyError(f"unknown {kind} id {key!r}") from None

    def user_index(self, user) -> int:
        return self._lookup(self._user_index, user, "user")

    def item_index(self, item) -> int:
        return self._lookup(self._item_index, item, "item")

    def category_index(self, category) -> int:
        return self._lookup(self._category_index, category, "category")

    def item_rows(self, items: Iterable) -> np.ndarray:
        return np.array([self.item_index(i) for i in items], dtype=np.intp)

    def item_vectors(self, items: Iterable) -> np.ndarray:
        return self.item_matrix[self.item_rows(items)]

    def __eq__(self, other):
        if not isinstance(other, EmbeddingStore):
            return NotImplemented
        return (self.user_ids == other.user_ids and self.item_ids == other.item_ids
                and self.category_ids == other.category_ids
                and np.array_equal(self.user_matrix, other.user_matrix)
                and np.array_equal(self.item_matrix, other.item_matrix)
                and np.array_equal(self.category_matrix, other.category_matrix))

    __hash__ = None


def interaction_probabilities(user, store: EmbeddingStore) -> np.ndarray:
    u = store.user_matrix[store.user_index(user)]
    return softmax(store.item_matrix @ u)


def interaction_likelihood(user, item, store: EmbeddingStore) -> float:
    """p(item | user) under the full softmax over all items."""
    j = store.item_index(item)
    return float(interaction_probabilities(user, store)[j])


def category_probabilities(item, store: EmbeddingStore) -> np.ndarray:
    v = store.item_matrix[store.item_index(item)]
    return softmax(store.category_matrix @ v)


def category_likelihood(item, category, store: EmbeddingStore) -> float:
    k = store.category_index(category)
    return float(category_probabilities(item, store)[k])


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------


def objective(U, V, C, uv_pairs, vc_pairs, gamma: float, grad: bool = True):
    """Full-softmax loss and analytic gradients.

    ``uv_pairs`` and ``vc_pairs`` are integer arrays of row indices, shape
    (n, 2).  Returns ``loss`` or ``(loss, dU, dV, dC)``.
    """
    uv = np.asarray(uv_pairs, dtype=np.intp).reshape(-1, 2)
    vc = np.asarray(vc_pairs, dtype=np.intp).reshape(-1, 2)
    us, vs = uv[:, 0], uv[:, 1]
    logits = U[us] @ V.T
    logp = log_softmax(logits, axis=1)
    loss = -logp[np.arange(len(us)), vs].sum()
    if gamma:
        iv, cs = vc[:, 0], vc[:, 1]
        clogits = V[iv] @ C.T
        clogp = log_softmax(clogits, axis=1)
        loss += gamma * -clogp[np.arange(len(iv)), cs].sum()
    if not grad:
        return float(loss)

    dU = np.zeros_like(U)
    dV = np.zeros_like(V)
    dC = np.zeros_like(C)
    g = np.exp(logp)
    g[np.arange(len(us)), vs] -= 1.0
    np.add.at(dU, us, g @ V)
    dV += g.T @ U[us]
    if gamma:
        h = np.exp(clogp)
        h[np.arange(len(iv)), cs] -= 1.0
        h *= gamma
        np.add.at(dV, iv, h @ C)
        dC += h.T @ V[iv]
    return float(loss), dU, dV, dC


def _sampled_item_grad(U, V, us, vs, negs):
    """Sampled-softmax loss (mean over the batch) and sparse gradients."""
    Ub = U[us]
    cand = np.concatenate([vs[:, None], negs], axis=1)
    logits = np.einsum("bd,bkd->bk", Ub, V[cand])
    logp = log_softmax(logits, axis=1)
    loss = -logp[:, 0].mean()
    g = np.exp(logp)
    g[:, 0] -= 1.0
    g /= len(us)
    dU = np.zeros_like(U)
    dV = np.zeros_like(V)
    np.add.at(dU, us, np.einsum("bk,bkd->bd", g, V[cand]))
    np.add.at(dV, cand.ravel(), (g[:, :, None] * Ub[:, None, :]).reshape(-1, U.shape[1]))
    return loss, dU, dV


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PretrainConfig:
    dim: int = 16
    gamma: float = 1.0
    learning_rate: float = 0.01
    max_iters: int = 100_000
    patience: int = 50
    negatives_per_positive: int = 20
    batch_size: int = 256
    eval_every: int = 50
    full_softmax: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")


class _Adam:
    def __init__(self, shapes, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _pairs(train_histories, catalog, users, items, cats):
    u_index = {u: n for n, u in enumerate(users)}
    i_index = {i: n for n, i in enumerate(items)}
    c_index = {c: n for n, c in enumerate(cats)}
    uv = [(u_index[h.user_id], i_index[i]) for h in train_histories for i in h.history]
    vc = [(i_index[i], c_index[c]) for i in items for c in sorted(catalog.categories_of(i))]
    return np.array(uv, dtype=np.intp).reshape(-1, 2), np.array(vc, dtype=np.intp).reshape(-1, 2)


def _validation_pairs(histories, users, items):
    u_index = {u: n for n, u in enumerate(users)}
    i_index = {i: n for n, i in enumerate(items)}
    pairs = [(u_index[h.user_id], i_index[i]) for h in histories
             if h.user_id in u_index for i in h.holdout if i in i_index]
    return np.array(pairs, dtype=np.intp).reshape(-1, 2)


def pretrain(train_histories: Sequence, catalog, config: PretrainConfig,
             validation: Optional[Sequence] = None, items: Optional[Sequence] = None
             ) -> EmbeddingStore:
    """Train embeddings on the history sets of ``train_histories``.

    ``validation`` histories (defaulting to the training users themselves)
    supply held-out (user, item) pairs from their holdout sets; training stops
    once the validation NLL has not improved for ``patience`` evaluations and
    the best parameters seen are returned.
    """
    if not train_histories:
        raise ValueError("pretrain needs at least one training history")
    users = sorted(h.user_id for h in train_histories)
    items = sorted(items if items is not None else catalog.items)
    cats = sorted({c for i in items for c in catalog.categories_of(i)})
    uv, vc = _pairs(train_histories, catalog, users, items, cats)
    val = _validation_pairs(validation if validation is not None else train_histories,
                            users, items)

    rng = np.random.default_rng(config.seed)
    d = config.dim
    scale = 1.0 / np.sqrt(d)
    U = rng.normal(0.0, scale, (len(users), d))
    V = rng.normal(0.0, scale, (len(items), d))
    C = rng.normal(0.0, scale, (len(cats), d))
    opt = _Adam([U.shape, V.shape, C.shape], config.learning_rate)
    # the category term is rescaled so a step estimates L / |uv pairs|
    cat_weight = config.gamma * len(vc) / max(len(uv), 1)

    best = None
    best_val = np.inf
    stale = 0
    for it in range(1, config.max_iters + 1):
        b = rng.integers(len(uv), size=min(config.batch_size, len(uv)))
        us, vs = uv[b, 0], uv[b, 1]
        if config.full_softmax:
            loss, dU, dV, _ = objective(U, V, C, uv[b], vc[:0], 0.0)
            loss /= len(b)
            dU /= len(b)
            dV /= len(b)
        else:
            negs = rng.integers(len(items), size=(len(b), config.negatives_per_positive))
            loss, dU, dV = _sampled_item_grad(U, V, us, vs, negs)
        dC = np.zeros_like(C)
        if cat_weight and len(vc):
            cb = rng.integers(len(vc), size=min(config.batch_size, len(vc)))
            closs, _, dVc, dCc = objective(U, V, C, uv[:0], vc[cb], 1.0)
            loss += cat_weight * closs / len(cb)
            dV += dVc * (cat_weight / len(cb))
            dC = dCc * (cat_weight / len(cb))
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite pre-training loss at iteration {it}")
        opt.step([U, V, C], [dU, dV, dC])

        if len(val) and (it % config.eval_every == 0 or it == config.max_iters):
            vloss = objective(U, V, C, val, vc[:0], 0.0, grad=False) / len(val)
            if vloss < best_val - 1e-12:
                best_val = vloss
                best = (U.copy(), V.copy(), C.copy())
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    log.info("early stop at iteration %d (val nll %.4f)", it, best_val)
                    break
    if best is not None:
        U, V, C = best
    return EmbeddingStore(users, items, cats, U, V, C).freeze()


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

_KINDS = (("user", "user_ids", "user_matrix"), ("item", "item_ids", "item_matrix"),
          ("category", "category_ids", "category_matrix"))


def save_store(store: EmbeddingStore, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"embeddings users={len(store.user_ids)} items={len(store.item_ids)} "
                 f"categories={len(store.category_ids)} dim={store.dim}\n")
        for kind, ids_attr, mat_attr in _KINDS:
            ids, mat = getattr(store, ids_attr), getattr(store, mat_attr)
            for n in sorted(range(len(ids)), key=ids.__getitem__):
                fh.write(f"{kind} {ids[n]} " + " ".join(f"{x:.17g}" for x in mat[n]) + "\n")


def load_store(path) -> EmbeddingStore:
    rows = {"user": [], "item": [], "category": []}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if not header or header[0] != "embeddings":
            raise ValueError(f"{path}: not an embedding store")
        meta = dict(tok.split("=") for tok in header[1:])
        dim = int(meta["dim"])
        for lineno, line in enumerate(fh, start=2):
            parts = line.split()
            if not parts:
                continue
            kind, key, vals = parts[0], parts[1], parts[2:]
            if kind not in rows or len(vals) != dim:
                raise ValueError(f"{path}:{lineno}: malformed row")
            if kind != "category":
                key = int(key)
            rows[kind].append((key, [float(x) for x in vals]))
    mats = {k: (np.array([r[1] for r in v]).reshape(len(v), dim)) for k, v in rows.items()}
    return EmbeddingStore([r[0] for r in rows["user"]], [r[0] for r in rows["item"]],
                          [r[0] for r in rows["category"]], mats["user"], mats["item"],
                          mats["category"]).freeze()
