"""Hand-built metric fixtures with their expected values.

Rational cases carry exact ``Fraction`` answers worked out by hand; cosine
cases are checked against the brute-force oracle.
"""

from fractions import Fraction

import numpy as np

from durec.dataset import Catalog
from durec.metrics import SimilarityOracle


def ic_fixture():
    # holdout categories {a, b, c}; retrieved prefix categories {a, c, d}
    cat = Catalog({1: frozenset("a"), 2: frozenset("b"), 3: frozenset("c"),
                   4: frozenset("a"), 5: frozenset("cd")})
    run = {7: [4, 5]}
    holdouts = {7: [1, 2, 3]}
    return run, holdouts, cat, Fraction(2, 3)


def exposure_fixture():
    cat = Catalog({1: frozenset("a"), 2: frozenset("ab")})
    return [1, 2], cat, {"a": Fraction(2, 3), "b": Fraction(1, 3)}


def ed_fixture():
    # holdout units: x2 y1 z1 -> (1/2, 1/4, 1/4); retrieved: x1 z2 -> (1/3, 0, 2/3)
    cat = Catalog({1: frozenset("xy"), 2: frozenset("x"), 3: frozenset("z"),
                   4: frozenset("xz"), 5: frozenset("z")})
    run = {1: [4, 5]}
    holdouts = {1: [1, 2, 3]}
    want = (Fraction(1, 2) - Fraction(1, 3)) ** 2 + Fraction(1, 4) ** 2 \
        + (Fraction(1, 4) - Fraction(2, 3)) ** 2
    return run, holdouts, cat, want


def tei_fixture():
    # categories c1..c4 with tail {c3, c4}
    # holdout units: c1 1, c3 2, c2 1 -> eps* = (1/4, 1/4, 1/2, 0)
    # retrieved units: c3 1, c4 2, c1 1 -> eps = (1/4, 0, 1/4, 1/2)
    # only c3 has eps* > 0 in the tail: 1/4 - 1/2 = -1/4
    cat = Catalog({1: frozenset({"c1", "c3"}), 2: frozenset({"c3"}), 3: frozenset({"c2"}),
                   4: frozenset({"c3", "c4"}), 5: frozenset({"c4"}), 6: frozenset({"c1"})})
    run = {1: [4, 5, 6]}
    holdouts = {1: [1, 2, 3]}
    return run, holdouts, cat, ("c3", "c4"), Fraction(-1, 4)


def ir_fixture():
    cat = Catalog({1: frozenset("p"), 2: frozenset("pq"), 3: frozenset("q"),
                   4: frozenset("p"), 5: frozenset("q"), 6: frozenset("pq")})
    vecs = {1: [1.0, 0.0, 0.0], 2: [1.0, 1.0, 0.0], 3: [0.0, 0.0, 1.0],
            4: [0.5, 0.2, 0.9], 5: [0.1, 0.8, 0.3], 6: [-0.3, 0.7, 0.7]}
    ids = sorted(vecs)
    oracle = SimilarityOracle(ids, np.array([vecs[i] for i in ids]))
    run = {1: [4, 5, 6]}
    holdouts = {1: [1, 2, 3]}
    return run, holdouts, cat, oracle, vecs
