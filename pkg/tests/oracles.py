"""Independent reference implementations used by the tests.

These are written straight from the formulas, with explicit loops and
matrix inverses, and share no code with the package.
"""

import math
from fractions import Fraction
from itertools import product

import numpy as np


def kernel(family, x, y, ell=1.0, s=1.0):
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if family == "dot_product":
        return s * float(sum(a * b for a, b in zip(x, y)))
    r2 = float(sum((a - b) ** 2 for a, b in zip(x, y)))
    if family == "rbf":
        return s * math.exp(-r2 / (2 * ell ** 2))
    r = math.sqrt(r2) / ell
    return s * (1 + math.sqrt(5) * r + 5 * r * r / 3) * math.exp(-math.sqrt(5) * r)


def gram(family, A, B, ell=1.0, s=1.0):
    return np.array([[kernel(family, a, b, ell, s) for b in B] for a in A])


def gp_posterior(family, X, o, Z, ell, s, noise, jitter=0.0, pred_noise=0.0):
    """Posterior mean and variance by explicit inversion."""
    K = gram(family, X, X, ell, s) + (noise + jitter) * np.eye(len(X))
    Kinv = np.linalg.inv(K)
    kz = gram(family, Z, X, ell, s)
    mean = kz @ Kinv @ np.asarray(o, float)
    var = np.array([kernel(family, z, z, ell, s) for z in Z]) + pred_noise
    var = var - np.einsum("ij,jk,ik->i", kz, Kinv, kz)
    return mean, var


def softmax_objective(U, V, C, uv, vc, gamma):
    """Eq.-style joint negative log-likelihood, summed with Python loops."""
    total = 0.0
    for u, v in uv:
        logits = [float(U[u] @ V[j]) for j in range(len(V))]
        m = max(logits)
        lse = m + math.log(sum(math.exp(z - m) for z in logits))
        total += lse - logits[v]
    for v, c in vc:
        logits = [float(V[v] @ C[j]) for j in range(len(C))]
        m = max(logits)
        lse = m + math.log(sum(math.exp(z - m) for z in logits))
        total += gamma * (lse - logits[c])
    return total


def exposure(items, cats_of, categories):
    counts = {c: Fraction(0) for c in categories}
    for i in items:
        for c in cats_of[i]:
            counts[c] += 1
    total = sum(counts.values())
    return {c: counts[c] / total for c in categories}


def cosine(a, b):
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def ir_bruteforce(holdout, retrieved, cats_of, vecs):
    cats = sorted(set().union(*(cats_of[v] for v in holdout)))
    total = 0.0
    for c in cats:
        best = None
        for vi, vj in product(holdout, retrieved):
            if c in cats_of[vi] and c in cats_of[vj]:
                s = cosine(vecs[vi], vecs[vj])
                best = s if best is None else max(best, s)
        total += 0.0 if best is None else best
    return total / len(cats)


def cascade_examination(attr, p, q):
    e = [1.0]
    for a in attr[:-1]:
        e.append(e[-1] * (p * a + q * (1 - a)))
    return np.array(e)
