import math

import numpy as np
import pytest

import oracles
from durec import embeddings as emb
from durec.dataset import Catalog, UserHistory
from durec.embeddings import EmbeddingStore, PretrainConfig


def _store(U, V, C, cats=("a", "b")):
    return EmbeddingStore(range(1, len(U) + 1), range(1, len(V) + 1), cats[:len(C)], U, V, C)


def _fixture(seed=0, n_users=4, n_items=6, n_cats=3, d=3):
    rng = np.random.default_rng(seed)
    U = rng.normal(0, 0.7, (n_users, d))
    V = rng.normal(0, 0.7, (n_items, d))
    C = rng.normal(0, 0.7, (n_cats, d))
    uv = np.array([(u, int(rng.integers(n_items))) for u in range(n_users) for _ in range(3)])
    vc = np.array([(v, v % n_cats) for v in range(n_items)] + [(0, 1), (3, 2)])
    return U, V, C, uv, vc


# -- likelihoods -------------------------------------------------------------


def test_zero_embeddings_are_uniform():
    store = _store(np.zeros((2, 3)), np.zeros((5, 3)), np.zeros((2, 3)))
    assert emb.interaction_likelihood(1, 3, store) == pytest.approx(1 / 5)
    assert emb.category_likelihood(2, "b", store) == pytest.approx(1 / 2)


def test_two_item_softmax():
    store = _store(np.array([[1.0]]), np.array([[1.0], [0.0]]), np.array([[0.0], [0.0]]))
    p = emb.interaction_probabilities(1, store)
    np.testing.assert_allclose(p, [math.e / (math.e + 1), 1 / (math.e + 1)], rtol=1e-12)
    assert p[0] == pytest.approx(0.7311, abs=5e-5)
    np.testing.assert_allclose(emb.category_probabilities(1, store), [0.5, 0.5])


def test_probabilities_sum_to_one():
    rng = np.random.default_rng(0)
    store = _store(rng.normal(size=(3, 4)) * 5, rng.normal(size=(50, 4)) * 5,
                   rng.normal(size=(2, 4)))
    for u in (1, 2, 3):
        assert emb.interaction_probabilities(u, store).sum() == pytest.approx(1.0, abs=1e-9)
    assert emb.category_probabilities(7, store).sum() == pytest.approx(1.0, abs=1e-9)


def test_unknown_ids():
    store = _store(np.zeros((1, 2)), np.zeros((2, 2)), np.zeros((1, 2)))
    with pytest.raises(KeyError, match="unknown user"):
        emb.interaction_likelihood(9, 1, store)
    with pytest.raises(KeyError, match="unknown item"):
        emb.interaction_likelihood(1, 9, store)
    with pytest.raises(KeyError, match="unknown category"):
        emb.category_likelihood(1, "z", store)


# -- objective ---------------------------------------------------------------


def test_objective_matches_loop_oracle():
    U, V, C, uv, vc = _fixture()
    got = emb.objective(U, V, C, uv, vc, 0.7, grad=False)
    assert got == pytest.approx(oracles.softmax_objective(U, V, C, uv, vc, 0.7), rel=1e-12)


def _rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)


@pytest.mark.parametrize("gamma", [0.0, 0.5, 2.0])
def test_gradient_check(gamma):
    U, V, C, uv, vc = _fixture(seed=1, n_users=5)
    _, dU, dV, dC = emb.objective(U, V, C, uv, vc, gamma)
    h = 1e-6
    for mat, grad in ((U, dU), (V, dV), (C, dC)):
        fd = np.zeros_like(mat)
        for idx in np.ndindex(mat.shape):
            old = mat[idx]
            mat[idx] = old + h
            up = emb.objective(U, V, C, uv, vc, gamma, grad=False)
            mat[idx] = old - h
            down = emb.objective(U, V, C, uv, vc, gamma, grad=False)
            mat[idx] = old
            fd[idx] = (up - down) / (2 * h)
        if not np.any(grad) and not np.any(fd):
            continue
        assert _rel_err(grad, fd) < 1e-4


def test_gamma_zero_gives_no_category_gradient():
    U, V, C, uv, vc = _fixture()
    _, _, dV0, dC = emb.objective(U, V, C, uv, vc, 0.0)
    _, _, dV_items_only, _ = emb.objective(U, V, C, uv, vc[:0], 0.0)
    assert not np.any(dC)
    np.testing.assert_array_equal(dV0, dV_items_only)


def test_sampled_grad_matches_finite_differences():
    rng = np.random.default_rng(2)
    U, V = rng.normal(size=(3, 2)), rng.normal(size=(5, 2))
    us, vs = np.array([0, 1, 2, 0]), np.array([1, 2, 3, 4])
    negs = rng.integers(5, size=(4, 3))
    _, dU, dV = emb._sampled_item_grad(U, V, us, vs, negs)
    h = 1e-6
    for mat, grad in ((U, dU), (V, dV)):
        fd = np.zeros_like(mat)
        for idx in np.ndindex(mat.shape):
            old = mat[idx]
            mat[idx] = old + h
            up = emb._sampled_item_grad(U, V, us, vs, negs)[0]
            mat[idx] = old - h
            down = emb._sampled_item_grad(U, V, us, vs, negs)[0]
            mat[idx] = old
            fd[idx] = (up - down) / (2 * h)
        assert _rel_err(grad, fd) < 1e-4


# -- training ----------------------------------------------------------------


def _tiny_corpus():
    cat = Catalog({1: frozenset("x"), 2: frozenset("x"), 3: frozenset("y"),
                   4: frozenset("y"), 5: frozenset("xy")})
    hist = [UserHistory(1, (1, 2, 5, 1), (1.0,) * 4, 3),
            UserHistory(2, (3, 4, 3), (1.0,) * 3, 2),
            UserHistory(3, (5, 1, 3, 2), (1.0,) * 4, 3)]
    return hist, cat


def test_full_batch_descent_reduces_loss():
    # reference loop: plain gradient descent with the oracle objective as the judge
    hist, cat = _tiny_corpus()
    users, items, cats = [1, 2, 3], [1, 2, 3, 4, 5], ["x", "y"]
    uv, vc = emb._pairs(hist, cat, users, items, cats)
    rng = np.random.default_rng(0)
    U, V, C = (rng.normal(0, 0.5, (n, 4)) for n in (3, 5, 2))
    losses = [oracles.softmax_objective(U, V, C, uv, vc, 1.0)]
    for _ in range(10):
        _, dU, dV, dC = emb.objective(U, V, C, uv, vc, 1.0)
        U, V, C = U - 0.01 * dU, V - 0.01 * dV, C - 0.01 * dC
        losses.append(oracles.softmax_objective(U, V, C, uv, vc, 1.0))
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_single_positive_saturates():
    cat = Catalog({1: frozenset("x"), 2: frozenset("x")})
    hist = [UserHistory(1, (1, 1), (1.0, 1.0), 1)]
    cfg = PretrainConfig(dim=4, learning_rate=0.05, max_iters=400, patience=1000,
                         full_softmax=True, gamma=0.0, seed=0)
    store = emb.pretrain(hist, cat, cfg)
    assert emb.interaction_likelihood(1, 1, store) > 0.9


def test_pretrain_seed_determinism_and_freeze():
    hist, cat = _tiny_corpus()
    cfg = PretrainConfig(dim=3, max_iters=60, eval_every=10, negatives_per_positive=3, seed=4)
    a = emb.pretrain(hist, cat, cfg)
    b = emb.pretrain(hist, cat, cfg)
    assert a == b
    assert a.frozen
    with pytest.raises(emb.FrozenStoreError):
        a.item_matrix = np.zeros((5, 3))
    with pytest.raises(ValueError):
        a.item_matrix[0, 0] = 1.0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_iteration():
    hist, cat = _tiny_corpus()
    cfg = PretrainConfig(dim=3, learning_rate=1e308, max_iters=50, seed=0)
    with pytest.raises(emb.DivergenceError, match="iteration"):
        emb.pretrain(hist, cat, cfg)


def test_store_round_trip(tmp_path):
    hist, cat = _tiny_corpus()
    store = emb.pretrain(hist, cat, PretrainConfig(dim=3, max_iters=20, seed=1))
    emb.save_store(store, tmp_path / "e.txt")
    back = emb.load_store(tmp_path / "e.txt")
    assert back == store
    emb.save_store(back, tmp_path / "f.txt")
    assert (tmp_path / "e.txt").read_bytes() == (tmp_path / "f.txt").read_bytes()
