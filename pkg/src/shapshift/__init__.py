"""shapshift: how discretization choices move Shapley-based feature importance.

Train small gradient-boosted tree classifiers, explain their margins with
exact or sampled Shapley attributions, measure how bucketing and category
merging shift a protected feature's importance rank, and search for the
representation that hides it best while staying faithful to the original
model's predictions.
"""

__version__ = "0.1.0"

from .attack import (
    AttackConfig,
    AttackContext,
    AttackResult,
    BOSettings,
    EvalRecord,
    GPSurrogate,
    bo_attack,
    expected_improvement,
    merge_attack,
    prepare_attack_context,
    save_attack_result,
)
from .data import (
    ConfusionPartition,
    Dataset,
    FeatureSpec,
    Schema,
    SynthSpec,
    confusion_partition,
    load_csv,
    load_schema,
    save_csv,
    save_schema,
    split_kfold,
    synth_generate,
    synth_schema,
)
from .errors import (
    CapabilityError,
    DomainError,
    ParseError,
    SchemaError,
    ShapshiftError,
    TrainingError,
)
from .explain import (
    Background,
    Explanation,
    GroupedExplanation,
    aggregate_groups,
    exact_explanations,
    exact_grouped_explanations,
    exact_shapley,
    sample_background,
    sampled_shapley,
    shapley_weights,
    value_function,
)
from .harness import (
    ExperimentConfig,
    load_config,
    run_attack,
    run_experiment,
    run_explain,
    run_sensitivity,
    run_train,
    save_config,
)
from .metrics import (
    FidelityReport,
    RankTable,
    avg_abs_shap,
    avg_rank,
    fidelity,
    per_bucket_shift_counts,
    rank,
    rank_shift_histogram,
    rank_table,
    subgroup_rank_stats,
    top1_frequency,
)
from .model import (
    Hyperparams,
    Tree,
    TreeEnsembleModel,
    load_model,
    log_loss,
    save_model,
    train_gbt,
)
from .seeds import stream, stream_seed
from .transform import (
    BucketSpec,
    EncodedMatrix,
    MergeSpec,
    TransformSpec,
    apply_pipeline,
    bucket_indices,
    bucketize,
    equi_depth_boundaries,
    equi_width_boundaries,
    fit_bucket_medians,
    fit_merge_representatives,
    load_transform_spec,
    merge_categories,
    one_hot,
    save_transform_spec,
)

__all__ = [
    "__version__",
    # errors
    "ShapshiftError", "SchemaError", "ParseError", "DomainError",
    "CapabilityError", "TrainingError",
    # seeds
    "stream", "stream_seed",
    # data
    "FeatureSpec", "Schema", "Dataset", "SynthSpec", "ConfusionPartition",
    "confusion_partition", "split_kfold", "load_csv", "save_csv",
    "load_schema", "save_schema", "synth_schema", "synth_generate",
    # transform
    "BucketSpec", "MergeSpec", "TransformSpec", "EncodedMatrix",
    "equi_width_boundaries", "equi_depth_boundaries", "bucket_indices",
    "bucketize", "fit_bucket_medians", "merge_categories",
    "fit_merge_representatives", "one_hot", "apply_pipeline",
    "save_transform_spec", "load_transform_spec",
    # model
    "Hyperparams", "Tree", "TreeEnsembleModel", "train_gbt", "log_loss",
    "save_model", "load_model",
    # explain
    "Background", "Explanation", "GroupedExplanation", "sample_background",
    "value_function", "shapley_weights", "exact_shapley",
    "exact_explanations", "exact_grouped_explanations", "sampled_shapley",
    "aggregate_groups",
    # metrics
    "FidelityReport", "RankTable", "rank", "rank_table", "fidelity",
    "avg_abs_shap", "avg_rank", "top1_frequency", "rank_shift_histogram",
    "subgroup_rank_stats", "per_bucket_shift_counts",
    # attack
    "AttackConfig", "AttackContext", "AttackResult", "BOSettings",
    "EvalRecord", "GPSurrogate", "expected_improvement",
    "prepare_attack_context", "bo_attack", "merge_attack",
    "save_attack_result",
    # harness
    "ExperimentConfig", "load_config", "save_config", "run_train",
    "run_explain", "run_sensitivity", "run_attack", "run_experiment",
]
