"""Second-order gradient boosting for binary logistic loss, built on numpy.

Trees are grown by exact greedy search over all split points (midpoints
between consecutive distinct sorted values), scoring each candidate with the
regularized Newton gain.  Leaf values are Newton steps ``-G / (H + l2)``.
Ties between equal-gain splits resolve to the lower column index, then the
lower threshold.  Training is fully deterministic: there is no row or column
subsampling, so the ``seed`` argument is accepted only for interface parity.

Predictions are margins (log-odds); labels threshold the margin at zero.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, TrainingError
from .transform import EncodedMatrix

MODEL_FORMAT_VERSION = 1
_GAIN_EPS = 1e-12  # a split must beat "no split" by this much
_LOSS_SLACK = 1e-9  # per-round loss may wiggle by at most this much
_P_CLIP = 1e-12  # keeps gradients/hessians finite at extreme margins


@dataclass(frozen=True)
class Hyperparams:
    rounds: int = 100
    max_depth: int = 3
    learning_rate: float = 0.1
    l2: float = 1.0
    min_child_weight: float = 1.0

    def __post_init__(self) -> None:
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must be in (0, 1]")
        if self.l2 < 0.0 or self.min_child_weight < 0.0:
            raise ValueError("l2 and min_child_weight must be >= 0")


@dataclass(frozen=True)
class Tree:
    """One regression tree in flat-array form; node 0 is the root.

    ``column[i] < 0`` marks node ``i`` as a leaf with output ``value[i]``.
    Internal nodes send rows with ``x[column] < threshold`` to ``left``.
    """

    column: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def __post_init__(self) -> None:
        for arr in (self.column, self.threshold, self.left, self.right, self.value):
            arr.setflags(write=False)

    @property
    def node_count(self) -> int:
        return int(self.column.size)

    def support(self) -> np.ndarray:
        """Distinct feature columns used by internal nodes, ascending."""
        return np.unique(self.column[self.column >= 0])

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Evaluate the tree on an (n, width) matrix."""
        n = X.shape[0]
        idx = np.zeros(n, dtype=np.int32)
        active = self.column[idx] >= 0
        while np.any(active):
            rows = np.nonzero(active)[0]
            nodes = idx[rows]
            go_left = X[rows, self.column[nodes]] < self.threshold[nodes]
            idx[rows] = np.where(go_left, self.left[nodes], self.right[nodes])
            active = self.column[idx] >= 0
        return self.value[idx]


@dataclass(frozen=True)
class TreeEnsembleModel:
    """Boosted ensemble: margin = base_score + learning_rate * sum of trees."""

    base_score: float
    learning_rate: float
    columns: tuple[str, ...]
    trees: tuple[Tree, ...]

    @property
    def width(self) -> int:
        return len(self.columns)

    def predict_margin_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.width:
            raise ValueError(f"expected (n, {self.width}) matrix, got {X.shape}")
        out = np.full(X.shape[0], self.base_score, dtype=np.float64)
        for tree in self.trees:
            out += self.learning_rate * tree.predict(X)
        return out

    def predict_margin(self, x) -> float:
        return float(self.predict_margin_batch(np.asarray(x, dtype=np.float64)[None, :])[0])

    def predict_label_batch(self, X: np.ndarray, threshold: float = 0.0) -> np.ndarray:
        return (self.predict_margin_batch(X) > threshold).astype(int)

    def predict_label(self, x, threshold: float = 0.0) -> int:
        return int(self.predict_margin(x) > threshold)


def log_loss(margins: np.ndarray, targets: np.ndarray) -> float:
    """Mean binary cross-entropy of margins against 0/1 targets."""
    m = np.asarray(margins, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    return float(np.mean(np.logaddexp(0.0, m) - y * m))


def _sigmoid(m: np.ndarray) -> np.ndarray:
    out = np.empty_like(m)
    pos = m >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-m[pos]))
    e = np.exp(m[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class _TreeBuilder:
    """Grows one tree on fixed (X, g, h) with presorted columns."""

    def __init__(self, X: np.ndarray, order: np.ndarray, hp: Hyperparams):
        self.X = X
        self.order = order  # (width, n): row ids sorted by column value
        self.hp = hp
        self.column: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []

    def _new_node(self) -> int:
        self.column.append(-1)
        self.threshold.append(math.nan)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.column) - 1

    def _best_split(self, member: np.ndarray, g: np.ndarray, h: np.ndarray):
        """Scan all columns for the highest-gain split on the member rows.

        Returns (gain, column, threshold) or None.  Columns and thresholds are
        scanned in ascending order and a candidate replaces the incumbent only
        on strictly greater gain, which realizes the deterministic tie-break.
        """
        hp = self.hp
        rows_total = np.nonzero(member)[0]
        G = float(g[rows_total].sum())
        H = float(h[rows_total].sum())
        parent_term = G * G / (H + hp.l2)
        best = None
        for col in range(self.X.shape[1]):
            srt = self.order[col]
            rows = srt[member[srt]]
            vs = self.X[rows, col]
            if vs.size < 2:
                continue
            cg = np.cumsum(g[rows])
            ch = np.cumsum(h[rows])
            cut = np.nonzero(np.diff(vs) > 0)[0]
            if cut.size == 0:
                continue
            GL, HL = cg[cut], ch[cut]
            GR, HR = G - GL, H - HL
            valid = (HL >= hp.min_child_weight) & (HR >= hp.min_child_weight)
            if not np.any(valid):
                continue
            gains = 0.5 * (GL**2 / (HL + hp.l2) + GR**2 / (HR + hp.l2) - parent_term)
            gains[~valid] = -np.inf
            j = int(np.argmax(gains))
            gain = float(gains[j])
            if gain > _GAIN_EPS and (best is None or gain > best[0]):
                thr = float((vs[cut[j]] + vs[cut[j] + 1]) / 2.0)
                best = (gain, col, thr)
        return best

    def build(self, member: np.ndarray, g: np.ndarray, h: np.ndarray, depth: int) -> int:
        node = self._new_node()
        rows = np.nonzero(member)[0]
        split = self._best_split(member, g, h) if depth < self.hp.max_depth else None
        if split is None:
            G = float(g[rows].sum())
            H = float(h[rows].sum())
            self.value[node] = -G / (H + self.hp.l2) if (H + self.hp.l2) > 0 else 0.0
            return node
        _, col, thr = split
        go_left = np.zeros_like(member)
        go_left[rows] = self.X[rows, col] < thr
        self.column[node] = col
        self.threshold[node] = thr
        self.left[node] = self.build(member & go_left, g, h, depth + 1)
        self.right[node] = self.build(member & ~go_left, g, h, depth + 1)
        return node

    def freeze(self) -> Tree:
        return Tree(
            column=np.array(self.column, dtype=np.int32),
            threshold=np.array(self.threshold, dtype=np.float64),
            left=np.array(self.left, dtype=np.int32),
            right=np.array(self.right, dtype=np.int32),
            value=np.array(self.value, dtype=np.float64),
        )


def train_gbt(matrix, targets, hp: Hyperparams = Hyperparams(), seed: int = 0) -> TreeEnsembleModel:
    """Fit a boosted ensemble on an encoded matrix and 0/1 targets.

    The base score is the log-odds of the training positive rate.  After each
    round the training log-loss is checked to be non-increasing; a violation
    raises :class:`TrainingError`.
    """
    if isinstance(matrix, EncodedMatrix):
        X = np.asarray(matrix.values, dtype=np.float64)
        columns = matrix.column_names
    else:
        X = np.asarray(matrix, dtype=np.float64)
        columns = tuple(f"x{j}" for j in range(X.shape[1]))
    y = np.asarray(targets, dtype=np.float64)
    if X.ndim != 2:
        raise TrainingError("matrix must be 2-D")
    if y.ndim != 1 or y.shape[0] != X.shape[0]:
        raise TrainingError("targets must be 1-D and match the row count")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise TrainingError("targets must be 0/1")
    if X.shape[0] < 1:
        raise TrainingError("no training rows")
    rate = float(y.mean())
    if rate in (0.0, 1.0):
        raise TrainingError("training targets are single-class; both classes are required")

    base = math.log(rate / (1.0 - rate))
    order = np.empty((X.shape[1], X.shape[0]), dtype=np.int64)
    for col in range(X.shape[1]):
        order[col] = np.argsort(X[:, col], kind="stable")

    margins = np.full(X.shape[0], base, dtype=np.float64)
    prev_loss = log_loss(margins, y)
    trees: list[Tree] = []
    member_all = np.ones(X.shape[0], dtype=bool)
    for _ in range(hp.rounds):
        p = np.clip(_sigmoid(margins), _P_CLIP, 1.0 - _P_CLIP)
        g = p - y
        h = p * (1.0 - p)
        builder = _TreeBuilder(X, order, hp)
        builder.build(member_all, g, h, depth=0)
        tree = builder.freeze()
        margins = margins + hp.learning_rate * tree.predict(X)
        loss = log_loss(margins, y)
        if loss > prev_loss + _LOSS_SLACK:
            raise TrainingError(
                f"round {len(trees)}: training log-loss rose from {prev_loss} to {loss}"
            )
        prev_loss = loss
        trees.append(tree)
    return TreeEnsembleModel(
        base_score=base, learning_rate=hp.learning_rate, columns=columns, trees=tuple(trees)
    )


# ---------------------------------------------------------------------------
# serialization


def save_model(model: TreeEnsembleModel, path) -> None:
    """Write the ensemble as versioned JSON; floats round-trip exactly."""
    doc = {
        "version": MODEL_FORMAT_VERSION,
        "base_score": model.base_score,
        "learning_rate": model.learning_rate,
        "columns": list(model.columns),
        "trees": [
            [
                {
                    "column": int(t.column[i]),
                    "threshold": None if t.column[i] < 0 else float(t.threshold[i]),
                    "left": int(t.left[i]),
                    "right": int(t.right[i]),
                    "value": float(t.value[i]),
                }
                for i in range(t.node_count)
            ]
            for t in model.trees
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_model(path) -> TreeEnsembleModel:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    version = doc.get("version")
    if version != MODEL_FORMAT_VERSION:
        raise ParseError(f"{path}: unsupported model format version {version!r}")
    try:
        trees = []
        for nodes in doc["trees"]:
            trees.append(
                Tree(
                    column=np.array([n["column"] for n in nodes], dtype=np.int32),
                    threshold=np.array(
                        [math.nan if n["threshold"] is None else n["threshold"] for n in nodes],
                        dtype=np.float64,
                    ),
                    left=np.array([n["left"] for n in nodes], dtype=np.int32),
                    right=np.array([n["right"] for n in nodes], dtype=np.int32),
                    value=np.array([n["value"] for n in nodes], dtype=np.float64),
                )
            )
        return TreeEnsembleModel(
            base_score=float(doc["base_score"]),
            learning_rate=float(doc["learning_rate"]),
            columns=tuple(doc["columns"]),
            trees=tuple(trees),
        )
    except (KeyError, TypeError) as exc:
        raise ParseError(f"{path}: malformed model file: {exc}") from exc
