"""Experiment driver: reproducible runs built from a single config and seed.

Every protocol writes into a run directory::

    <out_dir>/
        manifest.json          config snapshot, status, artifact list, timings
        models/                trained model files
        explanations/          per-observation explanation CSVs
        metrics/               long-format metric CSVs plus aggregates
        attack/                per-fold attack traces, winning specs, summaries

All randomness derives from the config's root seed through named streams, so
rerunning a manifest's config reproduces every report file byte for byte
(timings live only in the manifest).
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .attack import (
    AttackConfig,
    BOSettings,
    bo_attack,
    evaluate_entry,
    merge_attack,
    prepare_attack_context,
    save_attack_result,
)
from .data import (
    ConfusionPartition,
    Dataset,
    SynthSpec,
    confusion_partition,
    load_csv,
    load_schema,
    split_kfold,
    synth_generate,
)
from .errors import SchemaError
from .explain import (
    Background,
    GroupedExplanation,
    aggregate_groups,
    exact_explanations,
    exact_grouped_explanations,
    sampled_shapley,
    write_explanations,
    write_grouped_explanations,
)
from .metrics import (
    avg_abs_shap,
    avg_rank,
    fidelity,
    per_bucket_shift_counts,
    rank_shift_histogram,
    rank_table,
    subgroup_rank_stats,
    top1_frequency,
)
from .model import Hyperparams, TreeEnsembleModel, load_model, save_model, train_gbt
from .seeds import stream
from .transform import (
    BucketSpec,
    MergeSpec,
    TransformSpec,
    apply_pipeline,
    bucket_indices,
    equi_depth_boundaries,
    equi_width_boundaries,
    fit_bucket_medians,
    load_transform_spec,
)

PROTOCOLS = ("train", "explain", "sensitivity", "attack-bucket", "attack-merge")
STRATEGIES = ("equi-width", "equi-depth")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run needs; serializes to/from a flat JSON document."""

    protocol: str
    out_dir: str
    seed: int = 0
    # data source: a CSV plus schema, or the synthetic generator
    csv: str | None = None
    schema: str | None = None
    synth_rows: int = 2000
    protected: str | None = None
    # splitting
    folds: int = 5
    # model
    hyperparams: Hyperparams = field(default_factory=Hyperparams)
    grid_depths: tuple[int, ...] = (2, 3, 4)
    grid_rounds: tuple[int, ...] = (50, 100, 200)
    model_path: str | None = None
    transform_path: str | None = None
    # explainer
    method: str = "exact"
    background_size: int = 100
    permutations: int = 200
    width_limit: int = 16
    explain_limit: int | None = None
    grouped_players: bool = False
    # sensitivity sweep
    strategies: tuple[str, ...] = STRATEGIES
    bucket_counts: tuple[int, ...] = tuple(range(2, 13))
    policy: str | None = None
    merge_candidates: tuple[tuple[tuple[str, ...], ...], ...] | None = None
    # attack
    attack: AttackConfig | None = None

    def __post_init__(self) -> None:
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol {self.protocol!r}")
        for s in self.strategies:
            if s not in STRATEGIES:
                raise ValueError(f"unknown bucket strategy {s!r}")
        if self.method not in ("exact", "sampled"):
            raise ValueError(f"unknown explainer method {self.method!r}")
        if any(k < 1 for k in self.bucket_counts):
            raise ValueError("bucket counts must be >= 1")
        if self.background_size < 1:
            raise ValueError("background_size must be >= 1")


def config_to_doc(cfg: ExperimentConfig) -> dict:
    doc = asdict(cfg)
    return doc


def config_from_doc(doc: dict) -> ExperimentConfig:
    doc = dict(doc)
    if "hyperparams" in doc and isinstance(doc["hyperparams"], dict):
        doc["hyperparams"] = Hyperparams(**doc["hyperparams"])
    if doc.get("attack") is not None and isinstance(doc["attack"], dict):
        attack = dict(doc["attack"])
        if "bo" in attack and isinstance(attack["bo"], dict):
            attack["bo"] = BOSettings(**attack["bo"])
        if "domain" in attack:
            attack["domain"] = tuple(attack["domain"])
        doc["attack"] = AttackConfig(**attack)
    for key in ("grid_depths", "grid_rounds", "strategies", "bucket_counts"):
        if key in doc and doc[key] is not None:
            doc[key] = tuple(doc[key])
    if doc.get("merge_candidates") is not None:
        doc["merge_candidates"] = tuple(
            tuple(tuple(block) for block in partition) for partition in doc["merge_candidates"]
        )
    return ExperimentConfig(**doc)


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return config_from_doc(json.load(fh))


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_doc(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# shared plumbing


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.csv is not None:
        if cfg.schema is None:
            raise SchemaError("a csv source needs a schema file")
        return load_csv(cfg.csv, load_schema(cfg.schema))
    protected = cfg.protected if cfg.protected is not None else "age"
    return synth_generate(SynthSpec(rows=cfg.synth_rows, protected=protected), seed=cfg.seed)


def protected_feature(cfg: ExperimentConfig, dataset: Dataset) -> str:
    return cfg.protected if cfg.protected is not None else dataset.schema.protected


def _float_cell(v: float) -> str:
    return repr(float(v))


def _write_csv(path: Path, header: list[str], rows: list[list]) -> str:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return str(path)


class _Run:
    """Owns one run directory and its manifest."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.root = Path(cfg.out_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        for sub in ("models", "explanations", "metrics", "attack"):
            (self.root / sub).mkdir(exist_ok=True)
        self.artifacts: list[str] = []
        self._start = time.monotonic()

    def add(self, path) -> None:
        self.artifacts.append(str(path))

    def finish(self, status: str, error: str | None = None) -> None:
        manifest = {
            "version": __version__,
            "status": status,
            "config": config_to_doc(self.cfg),
            "artifacts": sorted(self.artifacts),
            "elapsed_seconds": time.monotonic() - self._start,
        }
        if error is not None:
            manifest["error"] = error
        with open(self.root / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _run_protocol(cfg: ExperimentConfig, body) -> Path:
    run = _Run(cfg)
    try:
        body(run)
    except Exception as exc:
        run.finish("failed", error=f"{type(exc).__name__}: {exc}")
        raise
    run.finish("ok")
    return run.root


def _explain_grouped(model: TreeEnsembleModel, X: np.ndarray, background: Background,
                     groups, indices, cfg: ExperimentConfig,
                     seed_name: str) -> list[GroupedExplanation]:
    """Produce grouped explanations for rows of X per the configured method."""
    indices = list(indices)
    if cfg.method == "sampled":
        out = []
        for pos, idx in enumerate(indices):
            e = sampled_shapley(model, X[pos], background, permutations=cfg.permutations,
                                seed=int(stream(cfg.seed, f"{seed_name}/perm-{idx}").integers(2**31)),
                                index=idx)
            out.append(aggregate_groups(e, groups))
        return out
    if cfg.grouped_players:
        return exact_grouped_explanations(model, X, background, groups,
                                          width_limit=cfg.width_limit, indices=indices)
    exps = exact_explanations(model, X, background, width_limit=cfg.width_limit, indices=indices)
    return [aggregate_groups(e, groups) for e in exps]


def _eval_positions(n: int, limit: int | None, rng: np.random.Generator) -> np.ndarray:
    if limit is None or limit >= n:
        return np.arange(n)
    return np.sort(rng.choice(n, size=limit, replace=False))


def _remap_confusion(parts: ConfusionPartition, row_ids: np.ndarray) -> ConfusionPartition:
    remap = lambda cell: tuple(int(row_ids[i]) for i in cell)
    return ConfusionPartition(tp=remap(parts.tp), fp=remap(parts.fp),
                              tn=remap(parts.tn), fn=remap(parts.fn))


# ---------------------------------------------------------------------------
# train protocol


def run_train(cfg: ExperimentConfig) -> Path:
    """Small grid search over (depth, rounds), refit on all rows, save the model."""

    def body(run: _Run) -> None:
        dataset = load_dataset(cfg)
        em = apply_pipeline(dataset, TransformSpec())
        y = dataset.target_array()
        rng = stream(cfg.seed, "train/val-split")
        order = rng.permutation(len(dataset))
        cut = max(1, int(round(len(dataset) * 0.8)))
        if cut >= len(dataset):
            cut = len(dataset) - 1
        tr, va = np.sort(order[:cut]), np.sort(order[cut:])

        rows = []
        best = None
        for depth in cfg.grid_depths:
            for rounds in cfg.grid_rounds:
                hp = replace(cfg.hyperparams, max_depth=depth, rounds=rounds)
                model = train_gbt(em.values[tr], y[tr], hp)
                acc = float((model.predict_label_batch(em.values[va]) == y[va]).mean())
                rows.append([depth, rounds, _float_cell(acc)])
                if best is None or acc > best[0]:
                    best = (acc, hp)
        run.add(_write_csv(run.root / "metrics" / "grid.csv",
                           ["max_depth", "rounds", "val_accuracy"], rows))

        final = train_gbt(em, y, best[1])
        path = run.root / "models" / "model.json"
        save_model(final, path)
        run.add(path)

    return _run_protocol(cfg, body)


# ---------------------------------------------------------------------------
# explain protocol


def run_explain(cfg: ExperimentConfig) -> Path:
    """Explain (optionally transformed) rows under a trained or fresh model."""

    def body(run: _Run) -> None:
        dataset = load_dataset(cfg)
        base_em = apply_pipeline(dataset, TransformSpec())
        y = dataset.target_array()
        if cfg.model_path is not None:
            model = load_model(cfg.model_path)
        else:
            model = train_gbt(base_em, y, cfg.hyperparams)
            path = run.root / "models" / "model.json"
            save_model(model, path)
            run.add(path)

        spec = TransformSpec()
        if cfg.transform_path is not None:
            spec = load_transform_spec(cfg.transform_path)
        em = apply_pipeline(dataset, spec)
        if em.width != model.width:
            raise SchemaError(
                f"transformed width {em.width} does not match model width {model.width}; "
                "retrain the model on this representation or drop the transform"
            )

        rng = stream(cfg.seed, "explain/eval")
        pos = _eval_positions(len(dataset), cfg.explain_limit, rng)
        bg = Background(
            rows=base_em.values[
                np.sort(stream(cfg.seed, "explain/background").choice(
                    len(dataset), size=min(cfg.background_size, len(dataset)), replace=False))
            ].copy(),
            provenance="training rows, untransformed",
        )
        X = em.values[pos]
        indices = [int(i) for i in pos]
        if cfg.grouped_players and cfg.method == "exact":
            grouped = exact_grouped_explanations(model, X, bg, em.groups,
                                                 width_limit=cfg.width_limit, indices=indices)
        else:
            if cfg.method == "sampled":
                exps = [
                    sampled_shapley(
                        model, X[p], bg, permutations=cfg.permutations,
                        seed=int(stream(cfg.seed, f"explain/perm-{idx}").integers(2**31)),
                        index=idx)
                    for p, idx in enumerate(indices)
                ]
            else:
                exps = exact_explanations(model, X, bg, width_limit=cfg.width_limit,
                                          indices=indices)
            path = run.root / "explanations" / "explanations.csv"
            write_explanations(path, exps, em.column_names)
            run.add(path)
            grouped = [aggregate_groups(e, em.groups) for e in exps]
        path = run.root / "explanations" / "grouped.csv"
        write_grouped_explanations(path, grouped)
        run.add(path)

    return _run_protocol(cfg, body)


# ---------------------------------------------------------------------------
# sensitivity protocol


def _bucket_entry(strategy: str, k: int, train_values: np.ndarray, feature: str,
                  policy: str) -> BucketSpec:
    if strategy == "equi-width":
        lo, hi = float(train_values.min()), float(train_values.max())
        if lo == hi:
            hi = lo + max(1.0, abs(lo)) * 1e-9
        boundaries = equi_width_boundaries(lo, hi, k)
    else:
        boundaries = equi_depth_boundaries(train_values, k)
    spec = BucketSpec(feature=feature, boundaries=boundaries, policy=policy)
    if policy == "median":
        spec = fit_bucket_medians(spec, train_values)
    return spec


def _series_metrics(grouped: list[GroupedExplanation], protected: str,
                    reference: np.ndarray) -> dict[str, float | None]:
    return {
        "fidelity": fidelity(grouped, reference).agreement,
        "avg_abs_shap": avg_abs_shap(grouped, protected),
        "avg_abs_shap_top1": avg_abs_shap(grouped, protected, top_only=True),
        "avg_rank": avg_rank(grouped, protected),
        "top1_frequency": top1_frequency(grouped, protected),
    }


def run_sensitivity(cfg: ExperimentConfig) -> Path:
    """Retrain per representation and trace how the protected feature's
    explanations move as the representation coarsens.

    A numeric protected feature sweeps bucket counts under each strategy; a
    categorical one sweeps one-vs-rest merges plus any configured partitions.
    Base (untransformed) series are emitted with strategy "base", buckets 0.
    The explainer's background is the same original-encoding train subsample
    for every bucketization variant, so the series isolate what re-representing
    the explicands does; only merges re-encode it (the width changes).
    """

    def body(run: _Run) -> None:
        dataset = load_dataset(cfg)
        protected = protected_feature(cfg, dataset)
        feat = dataset.schema.feature(protected)
        policy = cfg.policy or "index"
        folds = split_kfold(dataset, cfg.folds, cfg.seed)

        metric_rows: list[list] = []
        shift_rows: list[list] = []
        bucket_rows: list[list] = []
        subgroup_rows: list[list] = []

        for f, (train_idx, test_idx) in enumerate(folds):
            train_ds = dataset.subset(train_idx)
            test_ds = dataset.subset(test_idx)
            base_spec = TransformSpec()
            em_train = apply_pipeline(train_ds, base_spec)
            em_test = apply_pipeline(test_ds, base_spec)
            y_train = train_ds.target_array()
            base_model = train_gbt(em_train, y_train, cfg.hyperparams)

            bg_rng = stream(cfg.seed, f"fold-{f}/background")
            bg_pos = np.sort(bg_rng.choice(
                em_train.values.shape[0],
                size=min(cfg.background_size, em_train.values.shape[0]), replace=False))
            eval_pos = _eval_positions(len(test_ds), cfg.explain_limit,
                                       stream(cfg.seed, f"fold-{f}/eval"))
            row_ids = test_idx[eval_pos]
            X_eval_base = em_test.values[eval_pos]
            reference = base_model.predict_label_batch(X_eval_base)
            actual = test_ds.target_array()[eval_pos].astype(int)
            parts = _remap_confusion(confusion_partition(reference, actual), row_ids)

            base_bg = Background(rows=em_train.values[bg_pos].copy(),
                                 provenance=f"fold {f} train subsample")
            base_grouped = _explain_grouped(base_model, X_eval_base, base_bg, em_test.groups,
                                            row_ids, cfg, f"fold-{f}/base")
            base_table = rank_table(base_grouped)
            for metric, value in _series_metrics(base_grouped, protected, reference).items():
                if value is not None:
                    metric_rows.append(["base", "", 0, f, metric, _float_cell(value)])
            for cell, dist in subgroup_rank_stats(base_table, parts, protected).items():
                for r, c in dist.items():
                    subgroup_rows.append(["base", "", 0, f, cell, r, c])

            if feat.kind == "categorical":
                series: list[tuple[str, str, int, BucketSpec | MergeSpec]] = []
                for cat in feat.categories or ():
                    rest = [c for c in feat.categories if c != cat]
                    series.append(("ovr", cat, 2,
                                   MergeSpec.from_partition(protected, [[cat], rest])))
                for partition in cfg.merge_candidates or ():
                    spec = MergeSpec.from_partition(protected, [list(b) for b in partition])
                    series.append(("merge", "|".join(spec.group_names), len(spec.groups), spec))
            else:
                series = [
                    (strategy, "", k,
                     _bucket_entry(strategy, k, train_ds.column(protected), protected, policy))
                    for strategy in cfg.strategies
                    for k in cfg.bucket_counts
                ]

            for strategy, variant, k, entry in series:
                spec = base_spec.replacing(entry)
                em_train_t = apply_pipeline(train_ds, spec)
                em_test_t = apply_pipeline(test_ds, spec)
                model_t = train_gbt(em_train_t, y_train, cfg.hyperparams)
                if isinstance(entry, BucketSpec):
                    # Reference distribution stays in the original encoding;
                    # bucketization only re-represents the explicands.
                    bg_t = base_bg
                else:
                    # Merges change the one-hot width, so the background must
                    # be re-encoded to stay conformable.
                    bg_t = Background(rows=em_train_t.values[bg_pos].copy(),
                                      provenance=f"fold {f} train subsample, {strategy} {k}")
                grouped_t = _explain_grouped(model_t, em_test_t.values[eval_pos], bg_t,
                                             em_test_t.groups, row_ids, cfg,
                                             f"fold-{f}/{strategy}-{variant}-{k}")
                for metric, value in _series_metrics(grouped_t, protected, reference).items():
                    if value is not None:
                        metric_rows.append([strategy, variant, k, f, metric, _float_cell(value)])

                table_t = rank_table(grouped_t)
                for shift, count in rank_shift_histogram(base_table, table_t, protected).items():
                    shift_rows.append([strategy, variant, k, f, shift, count])
                for cell, dist in subgroup_rank_stats(table_t, parts, protected).items():
                    for r, c in dist.items():
                        subgroup_rows.append([strategy, variant, k, f, cell, r, c])
                if isinstance(entry, BucketSpec):
                    assignment = bucket_indices(test_ds.column(protected)[eval_pos], entry)
                    for b, counts in per_bucket_shift_counts(
                            base_table, table_t, protected, assignment).items():
                        bucket_rows.append([strategy, variant, k, f, b,
                                            counts["promoted"], counts["demoted"],
                                            counts["unchanged"]])

        key_cols = ["strategy", "variant", "buckets", "fold"]
        run.add(_write_csv(run.root / "metrics" / "sensitivity.csv",
                           key_cols + ["metric", "value"], metric_rows))
        run.add(_write_csv(run.root / "metrics" / "rank_shifts.csv",
                           key_cols + ["shift", "count"], shift_rows))
        run.add(_write_csv(run.root / "metrics" / "bucket_shifts.csv",
                           key_cols + ["bucket", "promoted", "demoted", "unchanged"], bucket_rows))
        run.add(_write_csv(run.root / "metrics" / "subgroup_ranks.csv",
                           key_cols + ["cell", "rank", "count"], subgroup_rows))
        run.add(write_sensitivity_summary(run.root))

    return _run_protocol(cfg, body)


def write_sensitivity_summary(run_dir) -> str:
    """Aggregate per-fold sensitivity metrics into mean and standard error."""
    run_dir = Path(run_dir)
    rows: dict[tuple, list[float]] = {}
    with open(run_dir / "metrics" / "sensitivity.csv", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            key = (rec["strategy"], rec["variant"], int(rec["buckets"]), rec["metric"])
            rows.setdefault(key, []).append(float(rec["value"]))
    out_rows = []
    for (strategy, variant, buckets, metric), values in sorted(rows.items()):
        mean = float(np.mean(values))
        stderr = float(np.std(values, ddof=1) / np.sqrt(len(values))) if len(values) > 1 else 0.0
        out_rows.append([strategy, variant, buckets, metric, len(values),
                         _float_cell(mean), _float_cell(stderr)])
    return _write_csv(run_dir / "metrics" / "sensitivity_summary.csv",
                      ["strategy", "variant", "buckets", "metric", "folds", "mean", "stderr"],
                      out_rows)


# ---------------------------------------------------------------------------
# attack protocols


def run_attack(cfg: ExperimentConfig) -> Path:
    """Per fold: reference model, baselines, then the configured attack."""
    if cfg.attack is None:
        raise ValueError("attack protocols need cfg.attack")

    def body(run: _Run) -> None:
        dataset = load_dataset(cfg)
        protected = cfg.attack.protected
        folds = split_kfold(dataset, cfg.folds, cfg.seed)
        summary_rows: list[list] = []

        for f, (train_idx, test_idx) in enumerate(folds):
            ctx = prepare_attack_context(
                dataset, train_idx, test_idx,
                hyperparams=cfg.hyperparams,
                background_size=cfg.background_size,
                explain_limit=cfg.explain_limit,
                width_limit=cfg.width_limit,
                root_seed=cfg.seed,
                stream_prefix=f"fold-{f}/attack",
            )
            if cfg.protocol == "attack-bucket":
                base_rank, base_lam, base_abs, _ = evaluate_entry(None, cfg.attack, ctx)
                for k in cfg.bucket_counts:
                    acfg = replace(cfg.attack,
                                   buckets=k,
                                   seed=int(stream(cfg.seed, f"fold-{f}/bo-{k}").integers(2**31)))
                    result = bo_attack(acfg, ctx)
                    out_dir = run.root / "attack" / f"fold{f}_k{k}"
                    for p in save_attack_result(result, out_dir, config_to_doc(cfg)):
                        run.add(p)
                    eq = result.records[0]
                    summary_rows.append([f, k, "base", _float_cell(base_rank),
                                         _float_cell(base_lam), _float_cell(base_abs),
                                         _float_cell(result.epsilon), 1])
                    summary_rows.append([f, k, "equi-width", _float_cell(eq.mean_rank),
                                         _float_cell(eq.lam), _float_cell(eq.mean_abs),
                                         _float_cell(result.epsilon), int(eq.feasible)])
                    summary_rows.append([f, k, "attack", _float_cell(result.best.mean_rank),
                                         _float_cell(result.best.lam),
                                         _float_cell(result.best.mean_abs),
                                         _float_cell(result.epsilon), int(result.best.feasible)])
            else:
                acfg = replace(cfg.attack,
                               seed=int(stream(cfg.seed, f"fold-{f}/merge").integers(2**31)))
                candidates = None
                if cfg.merge_candidates is not None:
                    candidates = [tuple(tuple(b) for b in p) for p in cfg.merge_candidates]
                result = merge_attack(acfg, ctx, candidates=candidates)
                out_dir = run.root / "attack" / f"fold{f}_merge"
                for p in save_attack_result(result, out_dir, config_to_doc(cfg)):
                    run.add(p)
                identity = result.records[0]
                summary_rows.append([f, result.buckets, "base", _float_cell(identity.mean_rank),
                                     _float_cell(identity.lam), _float_cell(identity.mean_abs),
                                     _float_cell(result.epsilon), 1])
                summary_rows.append([f, result.buckets, "attack",
                                     _float_cell(result.best.mean_rank),
                                     _float_cell(result.best.lam),
                                     _float_cell(result.best.mean_abs),
                                     _float_cell(result.epsilon), int(result.best.feasible)])

        run.add(_write_csv(run.root / "attack" / "summary.csv",
                           ["fold", "buckets", "method", "mean_rank", "fidelity",
                            "mean_abs_shap", "epsilon", "feasible"],
                           summary_rows))
        run.add(write_attack_summary(run.root))

    return _run_protocol(cfg, body)


def write_attack_summary(run_dir) -> str:
    """Aggregate the per-fold attack summary across folds."""
    run_dir = Path(run_dir)
    ranks: dict[tuple, list[float]] = {}
    lams: dict[tuple, list[float]] = {}
    with open(run_dir / "attack" / "summary.csv", newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            key = (int(rec["buckets"]), rec["method"])
            ranks.setdefault(key, []).append(float(rec["mean_rank"]))
            lams.setdefault(key, []).append(float(rec["fidelity"]))
    out_rows = []
    for (buckets, method) in sorted(ranks):
        rs, ls = ranks[(buckets, method)], lams[(buckets, method)]
        std = float(np.std(rs, ddof=1)) if len(rs) > 1 else 0.0
        out_rows.append([buckets, method, len(rs), _float_cell(float(np.mean(rs))),
                         _float_cell(std), _float_cell(float(np.mean(ls)))])
    return _write_csv(run_dir / "attack" / "summary_mean.csv",
                      ["buckets", "method", "folds", "mean_rank", "rank_std", "mean_fidelity"],
                      out_rows)


def run_experiment(cfg: ExperimentConfig) -> Path:
    if cfg.protocol == "train":
        return run_train(cfg)
    if cfg.protocol == "explain":
        return run_explain(cfg)
    if cfg.protocol == "sensitivity":
        return run_sensitivity(cfg)
    return run_attack(cfg)
