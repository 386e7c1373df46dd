"""Shared builders for the test suite: random models, hand-built trees,
synthetic micro-datasets, and common assertions.
"""

from __future__ import annotations

import numpy as np

from shapshift.data import Dataset, FeatureSpec, Schema
from shapshift.model import Hyperparams, Tree, TreeEnsembleModel


def build_tree(columns, thresholds, lefts, rights, values) -> Tree:
    return Tree(
        column=np.asarray(columns, dtype=np.int32),
        threshold=np.asarray(thresholds, dtype=np.float64),
        left=np.asarray(lefts, dtype=np.int32),
        right=np.asarray(rights, dtype=np.int32),
        value=np.asarray(values, dtype=np.float64),
    )


def leaf_tree(value: float) -> Tree:
    return build_tree([-1], [0.0], [-1], [-1], [value])


def random_tree(rng: np.random.Generator, width: int, depth: int,
                lo: float = -1.5, hi: float = 1.5) -> Tree:
    """Grow a full random tree with thresholds in [lo, hi] and N(0,1) leaves."""
    columns, thresholds, lefts, rights, values = [], [], [], [], []

    def grow(level: int) -> int:
        idx = len(columns)
        if level == depth:
            columns.append(-1)
            thresholds.append(0.0)
            lefts.append(-1)
            rights.append(-1)
            values.append(float(rng.normal()))
            return idx
        columns.append(int(rng.integers(width)))
        thresholds.append(float(rng.uniform(lo, hi)))
        lefts.append(-1)
        rights.append(-1)
        values.append(0.0)
        lefts[idx] = grow(level + 1)
        rights[idx] = grow(level + 1)
        return idx

    grow(0)
    return build_tree(columns, thresholds, lefts, rights, values)


def random_model(rng: np.random.Generator, width: int, n_trees: int = 6,
                 depth: int = 3, learning_rate: float = 0.3,
                 base_score: float = 0.1) -> TreeEnsembleModel:
    trees = tuple(random_tree(rng, width, depth) for _ in range(n_trees))
    names = tuple(f"c{i}" for i in range(width))
    return TreeEnsembleModel(base_score=base_score, learning_rate=learning_rate,
                             columns=names, trees=trees)


def linear_model(weights) -> TreeEnsembleModel:
    """Exactly represent f(x) = sum_i w_i * x_i on the integer grid {0,1,2,3}.

    One depth-2 tree per feature maps its grid value v to w_i * v.
    """
    trees = []
    for i, w in enumerate(weights):
        trees.append(build_tree(
            columns=[i, i, i, -1, -1, -1, -1],
            thresholds=[1.5, 0.5, 2.5, 0.0, 0.0, 0.0, 0.0],
            lefts=[1, 3, 5, -1, -1, -1, -1],
            rights=[2, 4, 6, -1, -1, -1, -1],
            values=[0.0, 0.0, 0.0, 0.0, float(w), 2.0 * float(w), 3.0 * float(w)],
        ))
    names = tuple(f"c{i}" for i in range(len(weights)))
    return TreeEnsembleModel(base_score=0.0, learning_rate=1.0,
                             columns=names, trees=tuple(trees))


def grid_points(rng: np.random.Generator, n: int, width: int) -> np.ndarray:
    return rng.integers(0, 4, size=(n, width)).astype(np.float64)


def assert_efficiency(explanations, model, X, tol: float = 1e-9) -> float:
    """Check base + sum(phi) recovers each margin; return the worst residual."""
    margins = model.predict_margin_batch(np.asarray(X, dtype=np.float64))
    worst = 0.0
    for e, m in zip(explanations, margins):
        worst = max(worst, abs(e.base + float(e.weights.sum()) - float(m)))
    assert worst <= tol, f"efficiency residual {worst:.3e} exceeds {tol:.0e}"
    return worst


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.asarray(z, dtype=np.float64)))


def tiny_attack_dataset(seed: int, rows: int = 300) -> Dataset:
    """Small integer-protected dataset for exhaustive-oracle attack tests.

    ``score`` is an integer in [0, 20] with a strong monotone effect, so every
    distinct 3-bucketization corresponds to a pair of cuts between adjacent
    integers.
    """
    rng = np.random.default_rng(seed)
    score = rng.integers(0, 21, size=rows)
    x2 = rng.normal(size=rows)
    x3 = rng.normal(size=rows)
    p = sigmoid(0.55 * (score - 10) + 0.9 * x2 - 0.6 * x3)
    y = (rng.uniform(size=rows) < p).astype(int)
    schema = Schema(
        features=(
            FeatureSpec(name="score", kind="continuous"),
            FeatureSpec(name="x2", kind="continuous"),
            FeatureSpec(name="x3", kind="continuous"),
        ),
        target="label",
        protected="score",
    )
    rows_t = tuple(
        (int(score[i]), float(x2[i]), float(x3[i])) for i in range(rows)
    )
    return Dataset(schema=schema, rows=rows_t, targets=tuple(int(t) for t in y))


def separable_data(rng: np.random.Generator, n: int = 400):
    """1-D threshold problem: label = [x > 0]."""
    x = rng.uniform(-2.0, 2.0, size=(n, 1))
    y = (x[:, 0] > 0.0).astype(float)
    return x, y


def xor_data(rng: np.random.Generator, n: int = 400):
    """Two-feature XOR clusters at (+-1, +-1) with mild noise."""
    signs = rng.choice([-1.0, 1.0], size=(n, 2))
    x = signs + rng.normal(scale=0.3, size=(n, 2))
    y = (signs[:, 0] * signs[:, 1] > 0).astype(float)
    return x, y


def train_matrix(values: np.ndarray):
    """Wrap a raw array in the minimal duck-typed matrix train_gbt accepts."""
    from shapshift.transform import EncodedMatrix, TransformSpec

    values = np.asarray(values, dtype=np.float64)
    names = tuple(f"c{i}" for i in range(values.shape[1]))
    return EncodedMatrix(values=values, column_names=names, groups=names,
                         spec=TransformSpec(), clamp_counts={})


DEFAULT_HP = Hyperparams()
