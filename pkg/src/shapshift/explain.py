"""Shapley-value explanations of tree-ensemble margins.

The value of a column subset ``S`` is interventional: the mean model margin
over background rows whose columns in ``S`` are overwritten by the explicand's
values.  Exact attributions follow the classical weighted-subset sum; the
implementation exploits additivity across trees (a tree's value depends only
on the columns it splits on, and players absent from a tree contribute nothing
to it), which keeps exact computation fast without any tree-specific shortcut
formula.  A permutation sampler covers widths past the exact limit.

All weights live in margin (log-odds) space, so ``base + sum(weights)``
reproduces the explained margin exactly; that identity is checked every time
an explanation is built.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import CapabilityError
from .model import Tree, TreeEnsembleModel

EFFICIENCY_TOL = 1e-9
DEFAULT_WIDTH_LIMIT = 16
DEFAULT_PERMUTATIONS = 200
DEFAULT_BACKGROUND_SIZE = 100
_ENUMERATE_MAX = 8


@dataclass(frozen=True)
class Background:
    """Reference rows the explainer averages over, with their provenance."""

    rows: np.ndarray
    provenance: str = ""

    def __post_init__(self) -> None:
        if self.rows.ndim != 2 or self.rows.shape[0] < 1:
            raise ValueError("background must be a non-empty 2-D matrix")
        self.rows.setflags(write=False)

    @property
    def size(self) -> int:
        return int(self.rows.shape[0])


def sample_background(values, size: int, rng: np.random.Generator, provenance: str = "") -> Background:
    """Deterministically subsample ``size`` rows (all rows when fewer exist)."""
    X = np.asarray(values, dtype=np.float64)
    if size < 1:
        raise ValueError("background size must be >= 1")
    if size >= X.shape[0]:
        return Background(rows=X.copy(), provenance=provenance or f"all {X.shape[0]} rows")
    idx = np.sort(rng.choice(X.shape[0], size=size, replace=False))
    return Background(rows=X[idx], provenance=provenance or f"{size}-row subsample")


def _as_rows(background) -> np.ndarray:
    if isinstance(background, Background):
        return background.rows
    rows = np.asarray(background, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] < 1:
        raise ValueError("background must be a non-empty 2-D matrix")
    return rows


@dataclass(frozen=True)
class Explanation:
    """Additive attribution over encoded columns, in margin space."""

    base: float
    weights: np.ndarray
    index: int | None
    method: str
    stderr: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.weights.setflags(write=False)
        if self.stderr is not None:
            self.stderr.setflags(write=False)

    @property
    def margin(self) -> float:
        return float(self.base + self.weights.sum())


@dataclass(frozen=True)
class GroupedExplanation:
    """Attribution rolled up to logical features (one-hot blocks summed)."""

    base: float
    features: tuple[str, ...]
    weights: np.ndarray
    index: int | None
    method: str

    def __post_init__(self) -> None:
        if len(self.features) != self.weights.shape[0]:
            raise ValueError("feature names and weights differ in length")
        self.weights.setflags(write=False)

    @property
    def margin(self) -> float:
        return float(self.base + self.weights.sum())

    def weight_of(self, feature: str) -> float:
        try:
            return float(self.weights[self.features.index(feature)])
        except ValueError:
            raise KeyError(f"no feature named {feature!r}") from None


def reconstruct_label(explanation) -> int:
    """Label implied by the explanation alone: 1 iff base + sum(weights) > 0."""
    return int(explanation.margin > 0.0)


def _check_efficiency(margin: float, base: float, weights: np.ndarray) -> None:
    gap = abs(base + float(weights.sum()) - margin)
    if gap > EFFICIENCY_TOL:
        raise RuntimeError(f"efficiency violated: |base + sum - margin| = {gap:.3e}")


def value_function(model: TreeEnsembleModel, x, subset, background) -> float:
    """Mean margin over background rows with columns in ``subset`` set from ``x``."""
    bg = _as_rows(background)
    x = np.asarray(x, dtype=np.float64)
    cols = np.asarray(sorted(int(c) for c in subset), dtype=int)
    if cols.size:
        if cols[0] < 0 or cols[-1] >= model.width:
            raise ValueError("subset contains out-of-range column indices")
        if np.any(np.diff(cols) == 0):
            raise ValueError("subset contains duplicate column indices")
    composite = bg.copy()
    composite[:, cols] = x[cols]
    return float(model.predict_margin_batch(composite).mean())


def shapley_weights(d: int) -> np.ndarray:
    """w[t] = t! (d-1-t)! / d!, the weight of a size-t coalition among d players."""
    fact = [math.factorial(i) for i in range(d + 1)]
    return np.array([fact[t] * fact[d - 1 - t] / fact[d] for t in range(d)], dtype=np.float64)


# ---------------------------------------------------------------------------
# exact computation


def _eval_tree_grid(tree: Tree, node: int, x_col, bg_col, from_x):
    """Evaluate one tree over the (explicand, background-row) grid for a fixed
    assignment of columns to sources; shapes stay (n,1)/(1,m) until forced."""
    c = int(tree.column[node])
    if c < 0:
        return tree.value[node]
    branch = x_col(c) if from_x[c] else bg_col(c)
    cmp = branch < tree.threshold[node]
    left = _eval_tree_grid(tree, int(tree.left[node]), x_col, bg_col, from_x)
    right = _eval_tree_grid(tree, int(tree.right[node]), x_col, bg_col, from_x)
    return np.where(cmp, left, right)


def _grid_mean(out, n: int, m: int) -> np.ndarray:
    """Collapse a broadcastable grid result to a per-explicand mean over bg rows."""
    arr = np.asarray(out, dtype=np.float64)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape == (n, 1):
        return arr[:, 0].copy()
    if arr.shape == (1, m):
        return np.full(n, float(arr.mean()))
    return arr.mean(axis=1)


def _exact_phi(model: TreeEnsembleModel, X: np.ndarray, bg: np.ndarray,
               groups: tuple[str, ...]) -> tuple[np.ndarray, np.ndarray, tuple[str, ...]]:
    """Exact Shapley attributions for all rows of X at once.

    ``groups`` assigns each encoded column to a player; singleton names give
    per-column players.  Returns (base, phi, player_names) with phi shaped
    (n_rows, n_players).
    """
    n, m = X.shape[0], bg.shape[0]
    player_names: list[str] = []
    for g in groups:
        if g not in player_names:
            player_names.append(g)
    col_player = np.array([player_names.index(g) for g in groups], dtype=int)

    lr = model.learning_rate
    base = np.full(n, model.base_score, dtype=np.float64)
    phi = np.zeros((n, len(player_names)), dtype=np.float64)

    x_cols = {}
    bg_cols = {}

    def x_col(c: int):
        if c not in x_cols:
            x_cols[c] = X[:, c][:, None]
        return x_cols[c]

    def bg_col(c: int):
        if c not in bg_cols:
            bg_cols[c] = bg[:, c][None, :]
        return bg_cols[c]

    for tree in model.trees:
        sup_cols = tree.support()
        sup_players = np.unique(col_player[sup_cols]) if sup_cols.size else np.array([], dtype=int)
        d = int(sup_players.size)
        if d == 0:
            base += lr * float(tree.value[0])
            continue
        bit_of_player = {int(p): j for j, p in enumerate(sup_players)}
        v = np.empty((1 << d, n), dtype=np.float64)
        for s in range(1 << d):
            from_x = {int(c): bool((s >> bit_of_player[int(col_player[c])]) & 1) for c in sup_cols}
            out = _eval_tree_grid(tree, 0, x_col, bg_col, from_x)
            v[s] = _grid_mean(out, n, m)
        base += lr * v[0]
        w = shapley_weights(d)
        for j, p in enumerate(sup_players):
            bit = 1 << j
            acc = np.zeros(n, dtype=np.float64)
            for s in range(1 << d):
                if s & bit:
                    continue
                acc += w[bin(s).count("1")] * (v[s | bit] - v[s])
            phi[:, p] += lr * acc
    return base, phi, tuple(player_names)


def exact_shapley(model: TreeEnsembleModel, x, background,
                  width_limit: int = DEFAULT_WIDTH_LIMIT, index: int | None = None) -> Explanation:
    """Exact per-column attribution of the margin at ``x``.

    Raises :class:`CapabilityError` when the encoded width exceeds
    ``width_limit``; use :func:`sampled_shapley` or grouped players there.
    """
    return exact_explanations(model, np.asarray(x, dtype=np.float64)[None, :], background,
                              width_limit=width_limit, indices=[index])[0]


def exact_explanations(model: TreeEnsembleModel, X, background,
                       width_limit: int = DEFAULT_WIDTH_LIMIT,
                       indices=None) -> list[Explanation]:
    """Exact per-column attributions for every row of ``X``."""
    bg = _as_rows(background)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.width:
        raise ValueError(f"expected (n, {model.width}) matrix, got {X.shape}")
    if model.width > width_limit:
        raise CapabilityError(
            f"{model.width} players exceed the exact enumeration limit of {width_limit}; "
            "use sampled_shapley or grouped players"
        )
    if indices is None:
        indices = list(range(X.shape[0]))
    base, phi, _ = _exact_phi(model, X, bg, groups=tuple(f"c{j}" for j in range(model.width)))
    margins = model.predict_margin_batch(X)
    out = []
    for i in range(X.shape[0]):
        _check_efficiency(float(margins[i]), float(base[i]), phi[i])
        out.append(Explanation(base=float(base[i]), weights=phi[i].copy(),
                               index=indices[i], method="exact"))
    return out


def exact_grouped_explanations(model: TreeEnsembleModel, X, background, groups,
                               width_limit: int = DEFAULT_WIDTH_LIMIT,
                               indices=None) -> list[GroupedExplanation]:
    """Grouped-player exact attributions: each logical feature is one player
    and all of its encoded columns toggle together."""
    bg = _as_rows(background)
    X = np.asarray(X, dtype=np.float64)
    groups = tuple(groups)
    if X.ndim != 2 or X.shape[1] != model.width:
        raise ValueError(f"expected (n, {model.width}) matrix, got {X.shape}")
    if len(groups) != model.width:
        raise ValueError("groups must assign every encoded column to a feature")
    n_players = len(dict.fromkeys(groups))
    if n_players > width_limit:
        raise CapabilityError(
            f"{n_players} players exceed the exact enumeration limit of {width_limit}"
        )
    if indices is None:
        indices = list(range(X.shape[0]))
    base, phi, names = _exact_phi(model, X, bg, groups=groups)
    margins = model.predict_margin_batch(X)
    out = []
    for i in range(X.shape[0]):
        _check_efficiency(float(margins[i]), float(base[i]), phi[i])
        out.append(GroupedExplanation(base=float(base[i]), features=names,
                                      weights=phi[i].copy(), index=indices[i],
                                      method="exact/grouped"))
    return out


# ---------------------------------------------------------------------------
# permutation sampling


def sampled_shapley(model: TreeEnsembleModel, x, background,
                    permutations: int = DEFAULT_PERMUTATIONS, seed: int = 0,
                    mode: str = "sample", index: int | None = None) -> Explanation:
    """Monte-Carlo attribution from random orderings of the columns.

    Each permutation walks the columns in order and credits every column with
    its marginal change in the value function.  ``mode="enumerate"`` averages
    over all ``n!`` distinct orderings instead (exact; small widths only).
    ``stderr`` holds the per-column standard error across orderings.
    """
    bg = _as_rows(background)
    x = np.asarray(x, dtype=np.float64)
    n = model.width
    if mode == "enumerate":
        if n > _ENUMERATE_MAX:
            raise CapabilityError(f"enumerate mode supports at most {_ENUMERATE_MAX} columns")
        perms = [np.array(p, dtype=int) for p in itertools.permutations(range(n))]
        method = f"sampled/enumerate(n!={len(perms)})"
    elif mode == "sample":
        if permutations < 1:
            raise ValueError("permutations must be >= 1")
        rng = np.random.default_rng(seed)
        perms = [rng.permutation(n) for _ in range(permutations)]
        method = f"sampled(P={permutations},seed={seed})"
    else:
        raise ValueError(f"unknown mode {mode!r}")

    cache: dict[int, float] = {}

    def value_of(mask: int, cols: np.ndarray) -> float:
        got = cache.get(mask)
        if got is None:
            composite = bg.copy()
            composite[:, cols] = x[cols]
            got = float(model.predict_margin_batch(composite).mean())
            cache[mask] = got
        return got

    v_empty = float(model.predict_margin_batch(bg).mean())
    cache[0] = v_empty
    contribs = np.empty((len(perms), n), dtype=np.float64)
    for pi, perm in enumerate(perms):
        mask = 0
        prev = v_empty
        taken: list[int] = []
        for player in perm:
            taken.append(int(player))
            mask |= 1 << int(player)
            cur = value_of(mask, np.array(taken, dtype=int))
            contribs[pi, player] = cur - prev
            prev = cur

    phi = contribs.mean(axis=0)
    if len(perms) > 1:
        stderr = contribs.std(axis=0, ddof=1) / math.sqrt(len(perms))
    else:
        stderr = np.zeros(n, dtype=np.float64)
    _check_efficiency(model.predict_margin(x), v_empty, phi)
    return Explanation(base=v_empty, weights=phi, index=index, method=method, stderr=stderr)


# ---------------------------------------------------------------------------
# grouping and files


def aggregate_groups(explanation: Explanation, groups) -> GroupedExplanation:
    """Sum per-column weights into logical features, preserving first-seen order."""
    groups = tuple(groups)
    if len(groups) != explanation.weights.shape[0]:
        raise ValueError("groups must name exactly one feature per weight")
    names = list(dict.fromkeys(groups))
    weights = np.zeros(len(names), dtype=np.float64)
    for g, w in zip(groups, explanation.weights):
        weights[names.index(g)] += w
    return GroupedExplanation(base=explanation.base, features=tuple(names), weights=weights,
                              index=explanation.index, method=explanation.method + "+grouped")


def write_explanations(path, explanations: list[Explanation], column_names) -> None:
    """One row per explanation: index, method, base, per-column weights, label."""
    column_names = list(column_names)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "method", "base", *column_names, "reconstructed_label"])
        for e in explanations:
            if e.weights.shape[0] != len(column_names):
                raise ValueError("explanation width does not match column names")
            writer.writerow(
                [e.index if e.index is not None else "", e.method, repr(e.base)]
                + [repr(float(w)) for w in e.weights]
                + [reconstruct_label(e)]
            )


def write_grouped_explanations(path, explanations: list[GroupedExplanation]) -> None:
    if not explanations:
        raise ValueError("nothing to write")
    features = explanations[0].features
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "method", "base", *features, "reconstructed_label"])
        for e in explanations:
            if e.features != features:
                raise ValueError("explanations disagree on feature order")
            writer.writerow(
                [e.index if e.index is not None else "", e.method, repr(e.base)]
                + [repr(float(w)) for w in e.weights]
                + [reconstruct_label(e)]
            )
