"""Adversarial representation search: demote a protected feature's rank.

The boundary attack tunes the interior bucket boundaries of a numeric
protected feature to maximize its mean importance rank (pushing it toward
"unimportant") subject to a fidelity floor.  The search is Bayesian
optimization: a Gaussian-process surrogate with an anisotropic
squared-exponential kernel is fit to penalized objectives, and each iteration
evaluates the candidate maximizing expected improvement over a sorted uniform
candidate set.  Categorical protected features are attacked by exhaustively
enumerating category-merge partitions.

Two modes mirror two experimental protocols: ``fixed-model`` trains once on
untransformed data and coarsens only the explainer's inputs; ``retrain``
refits the model on each candidate representation.  Fidelity is always
measured against the original model's predictions on untransformed inputs.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.stats import norm

from .data import Dataset
from .errors import CapabilityError, SchemaError
from .explain import Background, aggregate_groups, exact_explanations
from .metrics import avg_abs_shap, fidelity, rank_table
from .model import Hyperparams, TreeEnsembleModel, train_gbt
from .seeds import stream
from .transform import (
    BucketSpec,
    MergeSpec,
    TransformSpec,
    apply_pipeline,
    apply_representative_merge,
    bucketize,
    equi_width_boundaries,
    fit_bucket_medians,
    fit_merge_representatives,
    save_transform_spec,
)

PENALTY_PER_FEATURE = 10.0


@dataclass(frozen=True)
class BOSettings:
    """Surrogate and acquisition knobs for the boundary search."""

    length_scale_factor: float = 0.05
    jitter: float = 1e-6
    xi: float = 0.01
    candidates: int = 1024
    local_candidates: int = 256
    local_scale_factor: float = 0.05

    def __post_init__(self) -> None:
        if self.length_scale_factor <= 0 or self.jitter <= 0:
            raise ValueError("length_scale_factor and jitter must be positive")
        if self.candidates < 1:
            raise ValueError("candidates must be >= 1")
        if self.local_candidates < 0 or self.local_scale_factor <= 0:
            raise ValueError("local_candidates must be >= 0 and "
                             "local_scale_factor positive")


@dataclass(frozen=True)
class AttackConfig:
    protected: str
    domain: tuple[float, float]
    buckets: int = 5
    mode: str = "fixed-model"
    budget: int = 300
    initial_samples: int = 20
    epsilon_policy: str = "match-equi-width"
    epsilon: float | None = None
    seed: int = 0
    max_merge_buckets: int = 2
    bo: BOSettings = field(default_factory=BOSettings)

    def __post_init__(self) -> None:
        lo, hi = self.domain
        if not lo < hi:
            raise ValueError(f"domain must satisfy lo < hi, got {self.domain}")
        if self.buckets < 1:
            raise ValueError("buckets must be >= 1")
        if self.mode not in ("fixed-model", "retrain"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.initial_samples < 1 or self.budget < self.initial_samples + 1:
            raise ValueError("budget must cover the seed point plus initial samples")
        if self.epsilon_policy not in ("match-equi-width", "absolute"):
            raise ValueError(f"unknown epsilon policy {self.epsilon_policy!r}")
        if self.epsilon_policy == "absolute" and self.epsilon is None:
            raise ValueError("absolute epsilon policy requires an epsilon value")
        if self.max_merge_buckets < 2:
            raise ValueError("max_merge_buckets must be >= 2")


@dataclass(frozen=True)
class AttackContext:
    """Everything an objective evaluation needs, prepared once per fold."""

    train_ds: Dataset
    eval_ds: Dataset
    eval_ids: tuple[int, ...]
    base_spec: TransformSpec
    model: TreeEnsembleModel
    reference_labels: np.ndarray
    bg_ds: Dataset
    bg_positions: np.ndarray
    hyperparams: Hyperparams
    width_limit: int
    n_features: int


def prepare_attack_context(dataset: Dataset, train_idx, eval_idx, *,
                           hyperparams: Hyperparams = Hyperparams(),
                           background_size: int = 100,
                           explain_limit: int | None = None,
                           width_limit: int = 16,
                           root_seed: int = 0,
                           stream_prefix: str = "attack") -> AttackContext:
    """Train the reference model and freeze the evaluation setup for a fold.

    The background rows are a fixed training subsample, re-encoded under each
    candidate representation (the auditor only ever sees transformed data, so
    explicands and background must share the representation); retraining
    reuses the same row positions inside each candidate's encoding.
    """
    train_idx = np.asarray(train_idx, dtype=int)
    eval_idx = np.asarray(eval_idx, dtype=int)
    train_ds = dataset.subset(train_idx)
    if explain_limit is not None and explain_limit < len(eval_idx):
        rng = stream(root_seed, f"{stream_prefix}/eval")
        keep = np.sort(rng.choice(len(eval_idx), size=explain_limit, replace=False))
        eval_idx = eval_idx[keep]
    eval_ds = dataset.subset(eval_idx)

    base_spec = TransformSpec()
    em_train = apply_pipeline(train_ds, base_spec)
    em_eval = apply_pipeline(eval_ds, base_spec)
    model = train_gbt(em_train, train_ds.target_array(), hyperparams)
    reference = model.predict_label_batch(em_eval.values)

    rng_bg = stream(root_seed, f"{stream_prefix}/background")
    size = min(background_size, len(train_ds))
    bg_positions = np.sort(rng_bg.choice(len(train_ds), size=size, replace=False))
    return AttackContext(
        train_ds=train_ds,
        eval_ds=eval_ds,
        eval_ids=tuple(int(i) for i in eval_idx),
        base_spec=base_spec,
        model=model,
        reference_labels=reference,
        bg_ds=train_ds.subset(bg_positions),
        bg_positions=bg_positions,
        hyperparams=hyperparams,
        width_limit=width_limit,
        n_features=len(dataset.schema.features),
    )


@dataclass(frozen=True)
class EvalRecord:
    """One objective evaluation in an attack trace."""

    label: str
    params: tuple[float, ...]
    entry: BucketSpec | MergeSpec | None
    mean_rank: float
    lam: float
    mean_abs: float
    objective: float
    feasible: bool


@dataclass(frozen=True)
class AttackResult:
    protected: str
    mode: str
    buckets: int
    epsilon: float
    records: tuple[EvalRecord, ...]
    best: EvalRecord
    feasible: bool

    def best_so_far(self) -> np.ndarray:
        """Cumulative max of the penalized objective along the trace."""
        return np.maximum.accumulate(np.array([r.objective for r in self.records]))


def penalized_objective(mean_rank: float, lam: float, epsilon: float, n_features: int) -> float:
    """Mean rank, softly penalized when fidelity falls below the floor."""
    return mean_rank - PENALTY_PER_FEATURE * n_features * max(0.0, epsilon - lam)


def _grouped_explanations(model: TreeEnsembleModel, X: np.ndarray, background: Background,
                          groups, indices, width_limit: int):
    exps = exact_explanations(model, X, background, width_limit=width_limit, indices=list(indices))
    return [aggregate_groups(e, groups) for e in exps]


def evaluate_entry(
    entry: BucketSpec | MergeSpec | None, cfg: AttackConfig, ctx: AttackContext,
) -> tuple[float, float, float, BucketSpec | MergeSpec | None]:
    """Evaluate one candidate representation of the protected feature.

    Returns (mean rank, fidelity, mean |weight| of the protected feature,
    fitted entry) where the fitted entry is the one actually applied (medians
    or representatives frozen from the training split).  ``entry=None``
    evaluates the identity representation.
    """
    protected = cfg.protected
    if cfg.mode == "fixed-model":
        eval_ds, bg_ds = ctx.eval_ds, ctx.bg_ds
        if isinstance(entry, BucketSpec):
            fitted = fit_bucket_medians(replace(entry, policy="median", medians=None),
                                        ctx.train_ds.column(protected))
            eval_ds = eval_ds.with_column(protected, bucketize(eval_ds.column(protected), fitted))
            bg_ds = bg_ds.with_column(protected, bucketize(bg_ds.column(protected), fitted))
        elif isinstance(entry, MergeSpec):
            fitted = fit_merge_representatives(entry, ctx.train_ds.column(protected))
            eval_ds = eval_ds.with_column(
                protected, apply_representative_merge(eval_ds.column(protected), fitted))
            bg_ds = bg_ds.with_column(
                protected, apply_representative_merge(bg_ds.column(protected), fitted))
        else:
            fitted = None
        em = apply_pipeline(eval_ds, ctx.base_spec)
        background = Background(rows=apply_pipeline(bg_ds, ctx.base_spec).values.copy(),
                                provenance="train rows, candidate representation")
        grouped = _grouped_explanations(ctx.model, em.values, background, em.groups,
                                        ctx.eval_ids, ctx.width_limit)
    else:
        fitted = entry
        spec = ctx.base_spec if entry is None else ctx.base_spec.replacing(entry)
        em_train = apply_pipeline(ctx.train_ds, spec)
        em_eval = apply_pipeline(ctx.eval_ds, spec)
        model = train_gbt(em_train, ctx.train_ds.target_array(), ctx.hyperparams)
        background = Background(rows=em_train.values[ctx.bg_positions].copy(),
                                provenance="train rows, candidate representation")
        grouped = _grouped_explanations(model, em_eval.values, background, em_eval.groups,
                                        ctx.eval_ids, ctx.width_limit)

    table = rank_table(grouped)
    mean_rank = float(table.column(protected).mean())
    lam = fidelity(grouped, ctx.reference_labels).agreement
    mean_abs = avg_abs_shap(grouped, protected)
    return mean_rank, lam, mean_abs, fitted


def _strictify(sorted_params: np.ndarray, hi: float) -> np.ndarray:
    """Nudge exact ties upward so boundaries stay strictly increasing."""
    out = sorted_params.copy()
    for i in range(1, out.size):
        if out[i] <= out[i - 1]:
            out[i] = np.nextafter(out[i - 1], hi)
    return out


def interior_to_entry(interior, cfg: AttackConfig) -> BucketSpec:
    """Build the bucket entry for sorted interior boundaries on the attack domain."""
    lo, hi = cfg.domain
    interior = np.asarray(interior, dtype=float)
    if interior.size and not (lo < interior[0] and interior[-1] < hi):
        raise ValueError("interior boundaries must lie strictly inside the domain")
    if interior.size > 1 and not np.all(np.diff(interior) > 0):
        raise ValueError("interior boundaries must be strictly increasing")
    policy = "median" if cfg.mode == "fixed-model" else "index"
    return BucketSpec(feature=cfg.protected,
                      boundaries=(lo, *(float(b) for b in interior), hi),
                      policy=policy)


def attack_objective(interior, cfg: AttackConfig, ctx: AttackContext,
                     epsilon: float) -> tuple[float, float]:
    """Penalized objective and fidelity at the given interior boundaries."""
    mean_rank, lam, _, _ = evaluate_entry(interior_to_entry(interior, cfg), cfg, ctx)
    return penalized_objective(mean_rank, lam, epsilon, ctx.n_features), lam


def equi_width_interior(cfg: AttackConfig) -> np.ndarray:
    lo, hi = cfg.domain
    return np.asarray(equi_width_boundaries(lo, hi, cfg.buckets)[1:-1], dtype=float)


# ---------------------------------------------------------------------------
# Gaussian-process surrogate


class GPSurrogate:
    """Zero-mean GP on standardized objectives with a squared-exponential kernel."""

    def __init__(self, length_scales, jitter: float = 1e-6):
        self.length_scales = np.asarray(length_scales, dtype=np.float64)
        if np.any(self.length_scales <= 0):
            raise ValueError("length scales must be positive")
        self.jitter = float(jitter)
        self._X: np.ndarray | None = None
        self._alpha: np.ndarray | None = None
        self._chol = None
        self._y_mean = 0.0
        self._y_std = 1.0

    def _kernel(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        diff = (A[:, None, :] - B[None, :, :]) / self.length_scales
        return np.exp(-0.5 * np.sum(diff * diff, axis=2))

    def fit(self, X, y) -> "GPSurrogate":
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        y = np.asarray(y, dtype=np.float64)
        if X.shape[0] != y.shape[0] or X.shape[0] < 1:
            raise ValueError("X and y must be non-empty and aligned")
        # exact duplicates would make the kernel singular; keep first occurrences
        _, keep = np.unique(X, axis=0, return_index=True)
        keep = np.sort(keep)
        X, y = X[keep], y[keep]
        self._y_mean = float(y.mean())
        self._y_std = float(max(y.std(), 1e-12))
        z = (y - self._y_mean) / self._y_std
        K = self._kernel(X, X)
        K[np.diag_indices_from(K)] += self.jitter
        self._chol = cho_factor(K, lower=True)
        self._alpha = cho_solve(self._chol, z)
        self._X = X
        return self

    def predict(self, Q) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and standard deviation in standardized units."""
        if self._X is None:
            raise RuntimeError("fit the surrogate first")
        Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
        k = self._kernel(Q, self._X)
        mean = k @ self._alpha
        v = cho_solve(self._chol, k.T)
        var = 1.0 - np.sum(k * v.T, axis=1)
        return mean, np.sqrt(np.clip(var, 0.0, None))

    def predict_raw(self, Q) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and standard deviation in original objective units."""
        mean, std = self.predict(Q)
        return mean * self._y_std + self._y_mean, std * self._y_std

    def standardize(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) - self._y_mean) / self._y_std


def expected_improvement(mean: np.ndarray, std: np.ndarray, best: float,
                         xi: float = 0.01) -> np.ndarray:
    """EI for maximization; degenerates gracefully where the std is zero."""
    imp = mean - best - xi
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(std > 0, imp / np.where(std > 0, std, 1.0), 0.0)
    ei = np.where(std > 0, imp * norm.cdf(z) + std * norm.pdf(z), np.maximum(imp, 0.0))
    return np.clip(ei, 0.0, None)


# ---------------------------------------------------------------------------
# attacks


def _select_best(records: list[EvalRecord]) -> tuple[EvalRecord, bool]:
    feasible = [r for r in records if r.feasible]
    if feasible:
        return max(feasible, key=lambda r: r.mean_rank), True
    # nothing met the floor: return the least-infeasible point, flagged
    return max(records, key=lambda r: r.lam), False


def bo_attack(cfg: AttackConfig, ctx: AttackContext) -> AttackResult:
    """Search interior bucket boundaries maximizing the protected feature's rank.

    The equi-width point is evaluated first and seeds both the fidelity floor
    (under the match-equi-width policy) and the surrogate's design.  The
    remaining budget is spent on random initial samples and then on expected
    improvement over a mixed pool of uniform candidates and perturbations of
    the incumbent.
    """
    feat = ctx.train_ds.schema.feature(cfg.protected)
    if feat.kind == "categorical":
        raise SchemaError("boundary attack needs a numeric protected feature; "
                          "use merge_attack for categorical ones")
    dim = cfg.buckets - 1
    lo, hi = cfg.domain

    eq_rank, eq_lam, eq_abs, eq_entry = evaluate_entry(
        interior_to_entry(equi_width_interior(cfg), cfg), cfg, ctx)
    epsilon = eq_lam if cfg.epsilon_policy == "match-equi-width" else float(cfg.epsilon)

    def record(label: str, params: np.ndarray, mean_rank: float, lam: float,
               mean_abs: float, entry) -> EvalRecord:
        return EvalRecord(
            label=label,
            params=tuple(float(p) for p in params),
            entry=entry,
            mean_rank=mean_rank,
            lam=lam,
            mean_abs=mean_abs,
            objective=penalized_objective(mean_rank, lam, epsilon, ctx.n_features),
            feasible=lam >= epsilon,
        )

    records = [record("equi-width", equi_width_interior(cfg), eq_rank, eq_lam, eq_abs, eq_entry)]
    if dim == 0:
        # a single bucket admits exactly one representation; nothing to search
        best, ok = _select_best(records)
        return AttackResult(protected=cfg.protected, mode=cfg.mode, buckets=cfg.buckets,
                            epsilon=epsilon, records=tuple(records), best=best, feasible=ok)

    rng_init = stream(cfg.seed, "bo/init")
    for _ in range(cfg.initial_samples):
        params = _strictify(np.sort(rng_init.uniform(lo, hi, size=dim)), hi)
        mean_rank, lam, mean_abs, entry = evaluate_entry(interior_to_entry(params, cfg), cfg, ctx)
        records.append(record("random", params, mean_rank, lam, mean_abs, entry))

    rng_cand = stream(cfg.seed, "bo/candidates")
    scales = np.full(dim, cfg.bo.length_scale_factor * (hi - lo))
    sigma = cfg.bo.local_scale_factor * (hi - lo)
    margin = 1e-9 * (hi - lo)
    while len(records) < cfg.budget:
        X = np.array([r.params for r in records])
        y = np.array([r.objective for r in records])
        gp = GPSurrogate(length_scales=scales, jitter=cfg.bo.jitter).fit(X, y)
        cand = rng_cand.uniform(lo, hi, size=(cfg.bo.candidates, dim))
        if cfg.bo.local_candidates:
            # the objective is piecewise constant in the boundaries, so
            # refine around the incumbent at roughly cell-sized steps
            incumbent = X[int(np.argmax(y))]
            local = incumbent + rng_cand.normal(scale=sigma,
                                                size=(cfg.bo.local_candidates, dim))
            cand = np.vstack([cand, np.clip(local, lo + margin, hi - margin)])
        cand = np.sort(cand, axis=1)
        mean, std = gp.predict(cand)
        ei = expected_improvement(mean, std, best=float(gp.standardize(y.max())), xi=cfg.bo.xi)
        params = _strictify(cand[int(np.argmax(ei))], hi)
        mean_rank, lam, mean_abs, entry = evaluate_entry(interior_to_entry(params, cfg), cfg, ctx)
        records.append(record("bo", params, mean_rank, lam, mean_abs, entry))

    best, ok = _select_best(records)
    return AttackResult(protected=cfg.protected, mode=cfg.mode, buckets=cfg.buckets,
                        epsilon=epsilon, records=tuple(records), best=best, feasible=ok)


def set_partitions(items, max_blocks: int):
    """All partitions of ``items`` into at most ``max_blocks`` non-empty blocks.

    Deterministic order; blocks keep item order and are ordered by first item.
    """
    items = list(items)
    blocks: list[list] = []

    def rec(i: int):
        if i == len(items):
            yield [tuple(b) for b in blocks]
            return
        for b in blocks:
            b.append(items[i])
            yield from rec(i + 1)
            b.pop()
        if len(blocks) < max_blocks:
            blocks.append([items[i]])
            yield from rec(i + 1)
            blocks.pop()

    yield from rec(0)


def merge_attack(cfg: AttackConfig, ctx: AttackContext, candidates=None) -> AttackResult:
    """Exhaustively evaluate category merges of a categorical protected feature.

    Candidates default to every partition into 2..max_merge_buckets groups
    (the all-singletons identity is evaluated separately as the reference).
    The fidelity floor must be an absolute value; matching equi-width is
    meaningless for merges.
    """
    feat = ctx.train_ds.schema.feature(cfg.protected)
    if feat.kind != "categorical":
        raise SchemaError("merge attack needs a categorical protected feature")
    if cfg.epsilon_policy != "absolute":
        raise ValueError("merge attack requires the absolute epsilon policy")
    cats = list(feat.categories or ())
    if len(cats) > 8:
        raise CapabilityError(f"{len(cats)} categories: exhaustive partition enumeration "
                              "is limited to 8")
    epsilon = float(cfg.epsilon)

    if candidates is None:
        candidates = [
            p for p in set_partitions(cats, cfg.max_merge_buckets)
            if 2 <= len(p) and any(len(block) > 1 for block in p)
        ]

    def record(label: str, mean_rank: float, lam: float, mean_abs: float, entry) -> EvalRecord:
        return EvalRecord(
            label=label, params=(), entry=entry, mean_rank=mean_rank, lam=lam,
            mean_abs=mean_abs,
            objective=penalized_objective(mean_rank, lam, epsilon, ctx.n_features),
            feasible=lam >= epsilon,
        )

    id_rank, id_lam, id_abs, _ = evaluate_entry(None, cfg, ctx)
    records = [record("identity", id_rank, id_lam, id_abs, None)]
    for partition in candidates:
        spec = MergeSpec.from_partition(cfg.protected, partition)
        mean_rank, lam, mean_abs, fitted = evaluate_entry(spec, cfg, ctx)
        records.append(record("|".join("+".join(b) for b in partition),
                              mean_rank, lam, mean_abs, fitted))

    best, ok = _select_best(records)
    return AttackResult(protected=cfg.protected, mode=cfg.mode, buckets=cfg.max_merge_buckets,
                        epsilon=epsilon, records=tuple(records), best=best, feasible=ok)


# ---------------------------------------------------------------------------
# run artifacts


def save_attack_result(result: AttackResult, out_dir, config_doc: dict | None = None) -> list[str]:
    """Write the trace, winning transform, and summary into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    if config_doc is not None:
        path = out / "config.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(config_doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        written.append(str(path))

    dim = max((len(r.params) for r in result.records), default=0)
    path = out / "trace.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "label", *(f"b{i + 1}" for i in range(dim)),
                         "mean_rank", "fidelity", "mean_abs_shap", "objective", "feasible"])
        for i, r in enumerate(result.records):
            pads = [""] * (dim - len(r.params))
            writer.writerow([i, r.label, *(repr(p) for p in r.params), *pads,
                             repr(r.mean_rank), repr(r.lam), repr(r.mean_abs),
                             repr(r.objective), int(r.feasible)])
    written.append(str(path))

    path = out / "winning_spec.json"
    spec = TransformSpec(entries=(result.best.entry,)) if result.best.entry is not None else TransformSpec()
    save_transform_spec(spec, path)
    written.append(str(path))

    path = out / "summary.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "protected": result.protected,
                "mode": result.mode,
                "buckets": result.buckets,
                "epsilon": result.epsilon,
                "feasible": result.feasible,
                "best_label": result.best.label,
                "best_params": list(result.best.params),
                "best_mean_rank": result.best.mean_rank,
                "best_fidelity": result.best.lam,
                "best_mean_abs_shap": result.best.mean_abs,
                "evaluations": len(result.records),
            },
            fh, indent=2, sort_keys=True,
        )
        fh.write("\n")
    written.append(str(path))
    return written
