"""Exact Gaussian-process regression over item-embedding space.

Each user gets an independent zero-mean GP fitted to the embeddings of the
items they interacted with; the posterior assigns every item a mean affinity
and a predictive variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, NamedTuple, Optional

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular, LinAlgError

__all__ = [
    "KernelConfig",
    "GPConfig",
    "UserPosterior",
    "Prediction",
    "Predictions",
    "GPError",
    "IllConditionedError",
    "kernel_eval",
    "kernel_matrix",
    "kernel_diag",
    "fit",
    "fit_points",
    "fit_gram",
    "predict",
    "predict_batch",
    "predict_cross",
]

KERNEL_FAMILIES = ("rbf", "matern52", "dot_product")
JITTER_ESCALATIONS = 3
_ROW_CHUNK = 512


class GPError(ValueError):
    pass


class IllConditionedError(GPError):
    pass


@dataclass(frozen=True)
class KernelConfig:
    family: str = "rbf"
    length_scale: float = 1.0
    output_scale: float = 1.0

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise GPError(f"unknown kernel family {self.family!r}")
        if not (self.length_scale > 0 and self.output_scale > 0):
            raise GPError("kernel parameters must be strictly positive")


@dataclass(frozen=True)
class GPConfig:
    kernel: KernelConfig = field(default_factory=KernelConfig)
    noise_var: float = 0.1
    predict_noise_var: float = 0.0
    jitter: Optional[float] = None

    def __post_init__(self):
        if self.noise_var < 0 or self.predict_noise_var < 0:
            raise GPError("noise variances must be non-negative")
        if self.jitter is not None and self.jitter < 1e-12:
            raise GPError("jitter must be >= 1e-12")

    @property
    def base_jitter(self) -> float:
        if self.jitter is not None:
            return self.jitter
        return max(1e-8 * self.kernel.output_scale, 1e-12)


class Prediction(NamedTuple):
    mean: float
    variance: float


class Predictions(NamedTuple):
    mean: np.ndarray
    variance: np.ndarray

    def __len__(self):
        return len(self.mean)

    def __getitem__(self, i):
        if isinstance(i, str):
            return getattr(self, i)
        return Prediction(float(self.mean[i]), float(self.variance[i]))


@dataclass(frozen=True, eq=False)
class UserPosterior:
    """A fitted per-user GP.

    ``factor`` is the lower Cholesky factor of K + (noise_var + jitter) I and
    ``alpha`` the corresponding solve against the observations, so the
    posterior mean at any point is ``k @ alpha``.
    """

    user: Optional[Hashable]
    train_points: Optional[np.ndarray]
    train_obs: np.ndarray
    factor: np.ndarray
    alpha: np.ndarray
    jitter: float

    @property
    def n(self) -> int:
        return len(self.train_obs)


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------


def _sq_dist_rowwise(X, Y):
    # Row i of the result depends only on X[i] and Y, never on the batch.
    out = np.empty((X.shape[0], Y.shape[0]))
    for start in range(0, X.shape[0], _ROW_CHUNK):
        diff = X[start:start + _ROW_CHUNK, None, :] - Y[None, :, :]
        out[start:start + _ROW_CHUNK] = np.sum(diff * diff, axis=-1)
    return out


def _sq_dist_blas(X, Y):
    xx = np.einsum("ij,ij->i", X, X)
    yy = np.einsum("ij,ij->i", Y, Y)
    d = xx[:, None] + yy[None, :] - 2.0 * (X @ Y.T)
    return np.maximum(d, 0.0, out=d)


def _apply_family(cfg: KernelConfig, sq, dot=None):
    s, ell = cfg.output_scale, cfg.length_scale
    if cfg.family == "rbf":
        return s * np.exp(-sq / (2.0 * ell * ell))
    if cfg.family == "matern52":
        r = np.sqrt(sq) / ell
        return s * (1.0 + math.sqrt(5.0) * r + 5.0 / 3.0 * r * r) * np.exp(-math.sqrt(5.0) * r)
    return s * dot


def _as_2d(a, name):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise GPError(f"{name} must be a vector or matrix")
    return a


def kernel_matrix(cfg: KernelConfig, X, Y=None, rowwise: bool = True) -> np.ndarray:
    """Kernel matrix between the rows of X and Y.

    With ``rowwise=True`` every row is computed independently of the others,
    which keeps batched predictions bit-identical to one-at-a-time ones.
    ``rowwise=False`` uses BLAS products and is much faster on large inputs.
    """
    X = _as_2d(X, "X")
    Y = X if Y is None else _as_2d(Y, "Y")
    if X.shape[1] != Y.shape[1]:
        raise GPError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    if cfg.family == "dot_product":
        if rowwise:
            dot = np.empty((X.shape[0], Y.shape[0]))
            for start in range(0, X.shape[0], _ROW_CHUNK):
                dot[start:start + _ROW_CHUNK] = np.sum(
                    X[start:start + _ROW_CHUNK, None, :] * Y[None, :, :], axis=-1)
        else:
            dot = X @ Y.T
        return _apply_family(cfg, None, dot)
    sq = _sq_dist_rowwise(X, Y) if rowwise else _sq_dist_blas(X, Y)
    return _apply_family(cfg, sq)


def kernel_diag(cfg: KernelConfig, X) -> np.ndarray:
    X = _as_2d(X, "X")
    if cfg.family == "dot_product":
        return cfg.output_scale * np.sum(X * X, axis=1)
    return np.full(X.shape[0], cfg.output_scale)


def kernel_eval(cfg: KernelConfig, x, y) -> float:
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise GPError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    return float(kernel_matrix(cfg, x[None], y[None])[0, 0])


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------


def _factorize(K, noise_var, jitter):
    n = K.shape[0]
    eye = np.eye(n)
    for attempt in range(JITTER_ESCALATIONS + 1):
        try:
            L = cholesky(K + (noise_var + jitter) * eye, lower=True, check_finite=True)
            return L, jitter
        except LinAlgError:
            if attempt == JITTER_ESCALATIONS:
                break
            jitter *= 10.0
    raise IllConditionedError(
        f"kernel matrix not positive definite after {JITTER_ESCALATIONS} jitter escalations")


def fit_gram(K, obs, cfg: GPConfig, points=None, user=None) -> UserPosterior:
    """Fit from a precomputed train kernel matrix K(V_u, V_u)."""
    K = np.asarray(K, dtype=float)
    obs = np.asarray(obs, dtype=float).ravel()
    if obs.size == 0:
        raise GPError(f"user {user!r}: empty history")
    if K.shape != (obs.size, obs.size):
        raise GPError("kernel matrix does not match observation count")
    L, jitter = _factorize(K, cfg.noise_var, cfg.base_jitter)
    alpha = cho_solve((L, True), obs)
    pts = None if points is None else np.array(points, dtype=float)
    return UserPosterior(user, pts, obs.copy(), L, alpha, jitter)


def fit_points(points, obs, cfg: GPConfig, user=None) -> UserPosterior:
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[0] == 0:
        raise GPError(f"user {user!r}: empty history")
    K = kernel_matrix(cfg.kernel, points)
    return fit_gram(K, obs, cfg, points=points, user=user)


def fit(user, store, cfg: GPConfig) -> UserPosterior:
    """Fit the GP of one ``UserHistory`` on its history items."""
    items = list(user.history)
    if not items:
        raise GPError(f"user {user.user_id!r}: empty history")
    points = store.item_vectors(items)
    return fit_points(points, user.history_observations, cfg, user=user.user_id)


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------


def _forward_sub_rowwise(L, B):
    """Solve L W^T = B^T for W, one row of B at a time in lock-step.

    Row i of the result only depends on row i of B, so batch composition
    cannot change it (unlike blocked BLAS triangular solves).
    """
    m, n = B.shape
    W = np.empty((m, n))
    for i in range(n):
        if i:
            acc = np.sum(W[:, :i] * L[i, :i], axis=1)
            W[:, i] = (B[:, i] - acc) / L[i, i]
        else:
            W[:, 0] = B[:, 0] / L[0, 0]
    return W


def predict_cross(post: UserPosterior, k_cross, k_diag, cfg: GPConfig,
                  rowwise: bool = True) -> Predictions:
    """Posterior from precomputed k(items, train) and k(item, item) values."""
    Kx = np.asarray(k_cross, dtype=float)
    if Kx.ndim != 2 or Kx.shape[1] != post.n:
        raise GPError("cross-kernel shape does not match the posterior")
    if rowwise:
        Kx = np.ascontiguousarray(Kx)
        mean = np.sum(Kx * post.alpha, axis=1)
        W = _forward_sub_rowwise(post.factor, Kx)
        explained = np.sum(W * W, axis=1)
    else:
        mean = Kx @ post.alpha
        W = solve_triangular(post.factor, Kx.T, lower=True, check_finite=False)
        explained = np.einsum("ij,ij->j", W, W)
    var = np.asarray(k_diag, dtype=float) + cfg.predict_noise_var - explained
    return Predictions(mean, np.maximum(var, 0.0))


def predict_batch(post: UserPosterior, items, cfg: GPConfig) -> Predictions:
    items = _as_2d(items, "items")
    if post.train_points is None:
        raise GPError("posterior was fitted from a kernel matrix; use predict_cross")
    if items.shape[1] != post.train_points.shape[1]:
        raise GPError(
            f"dimension mismatch: {items.shape[1]} vs {post.train_points.shape[1]}")
    Kx = kernel_matrix(cfg.kernel, items, post.train_points)
    return predict_cross(post, Kx, kernel_diag(cfg.kernel, items), cfg)


def predict(post: UserPosterior, item_embedding, cfg: GPConfig) -> Prediction:
    v = np.asarray(item_embedding, dtype=float)
    if v.ndim != 1:
        raise GPError("item_embedding must be a vector")
    return predict_batch(post, v[None, :], cfg)[0]

