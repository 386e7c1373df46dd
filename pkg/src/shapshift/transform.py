"""Feature representation: bucketization, category merges, one-hot encoding.

Numeric features may be replaced by a bucketed stand-in (bucket index, bucket
midpoint, or the median of training values falling in the bucket).  Intervals
are half-open ``[b_j, b_{j+1})`` with the last bucket closed above.
Categorical features may have their categories merged into named groups before
one-hot encoding.  ``apply_pipeline`` turns a dataset plus a
:class:`TransformSpec` into a float matrix together with a map from encoded
columns back to logical features.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset
from .errors import DomainError, ParseError, SchemaError

logger = logging.getLogger(__name__)

POLICIES = ("index", "median", "midpoint")


@dataclass(frozen=True)
class BucketSpec:
    """Bucketization of one numeric feature.

    ``boundaries`` must be strictly increasing; ``medians`` holds one training
    median per bucket and is required by the ``median`` policy (see
    :func:`fit_bucket_medians`).
    """

    feature: str
    boundaries: tuple[float, ...]
    policy: str = "median"
    medians: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if len(self.boundaries) < 2:
            raise ValueError(f"{self.feature}: need at least 2 boundaries")
        b = np.asarray(self.boundaries, dtype=float)
        if not np.all(np.isfinite(b)):
            raise ValueError(f"{self.feature}: boundaries must be finite")
        if not np.all(np.diff(b) > 0):
            raise ValueError(f"{self.feature}: boundaries must be strictly increasing")
        if self.policy not in POLICIES:
            raise ValueError(f"{self.feature}: unknown policy {self.policy!r}")
        if self.medians is not None and len(self.medians) != self.bucket_count:
            raise ValueError(f"{self.feature}: need one median per bucket")

    @property
    def bucket_count(self) -> int:
        return len(self.boundaries) - 1


@dataclass(frozen=True)
class MergeSpec:
    """Partition of a categorical feature's categories into named groups.

    ``representatives`` optionally records, per group, the training-majority
    member category; it is used when a fixed model must be fed original
    categories (see :func:`apply_representative_merge`).
    """

    feature: str
    groups: tuple[tuple[str, tuple[str, ...]], ...]
    representatives: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        names = [g[0] for g in self.groups]
        if len(set(names)) != len(names):
            raise ValueError(f"{self.feature}: duplicate group names")
        members = [c for _, cats in self.groups for c in cats]
        if len(set(members)) != len(members):
            raise ValueError(f"{self.feature}: a category appears in two groups")
        if not members:
            raise ValueError(f"{self.feature}: empty partition")
        if self.representatives is not None:
            if len(self.representatives) != len(self.groups):
                raise ValueError(f"{self.feature}: need one representative per group")
            for rep, (name, cats) in zip(self.representatives, self.groups):
                if rep not in cats:
                    raise ValueError(f"{self.feature}: representative {rep!r} not in group {name!r}")

    @classmethod
    def from_partition(cls, feature: str, partition) -> "MergeSpec":
        """Build a spec from a list of category lists; groups are named by joining members."""
        groups = tuple(("+".join(block), tuple(block)) for block in partition)
        return cls(feature=feature, groups=groups)

    @property
    def group_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.groups)

    def group_of(self, category: str) -> str:
        for name, cats in self.groups:
            if category in cats:
                return name
        raise DomainError(f"{self.feature}: category {category!r} not covered by the partition")


@dataclass(frozen=True)
class TransformSpec:
    """Per-feature representation choices; features not mentioned stay as-is.

    ``code_categoricals`` lists categorical features to encode as a single
    integer-code column instead of one-hot columns.
    """

    entries: tuple[BucketSpec | MergeSpec, ...] = ()
    code_categoricals: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        names = [e.feature for e in self.entries]
        if len(set(names)) != len(names):
            raise ValueError("more than one entry for the same feature")

    def entry_for(self, feature: str):
        for e in self.entries:
            if e.feature == feature:
                return e
        return None

    def replacing(self, entry: BucketSpec | MergeSpec) -> "TransformSpec":
        """Return a copy with the entry for ``entry.feature`` replaced or added."""
        kept = tuple(e for e in self.entries if e.feature != entry.feature)
        return replace(self, entries=kept + (entry,))


@dataclass(frozen=True)
class EncodedMatrix:
    """Float matrix ready for training/explaining, with column provenance.

    ``groups[j]`` names the logical feature that produced column ``j``; all
    one-hot components of a categorical feature share its name.
    ``clamp_counts`` tallies values that fell outside bucket boundaries and
    were clamped.
    """

    values: np.ndarray
    column_names: tuple[str, ...]
    groups: tuple[str, ...]
    spec: TransformSpec
    clamp_counts: dict[str, int]

    def __post_init__(self) -> None:
        if self.values.ndim != 2:
            raise ValueError("values must be 2-D")
        if self.values.shape[1] != len(self.column_names) or len(self.column_names) != len(self.groups):
            raise ValueError("column metadata does not match matrix width")
        self.values.setflags(write=False)

    @property
    def width(self) -> int:
        return int(self.values.shape[1])

    def feature_order(self) -> tuple[str, ...]:
        seen: list[str] = []
        for g in self.groups:
            if g not in seen:
                seen.append(g)
        return tuple(seen)

    def columns_of(self, feature: str) -> np.ndarray:
        cols = np.array([j for j, g in enumerate(self.groups) if g == feature], dtype=int)
        if cols.size == 0:
            raise KeyError(f"no encoded columns for feature {feature!r}")
        return cols


# ---------------------------------------------------------------------------
# boundary construction


def equi_width_boundaries(lo: float, hi: float, k: int) -> tuple[float, ...]:
    """k buckets of equal width spanning [lo, hi]."""
    if not lo < hi:
        raise ValueError(f"need lo < hi, got [{lo}, {hi}]")
    if k < 1:
        raise ValueError("k must be >= 1")
    return tuple(float(b) for b in np.linspace(lo, hi, k + 1))


def equi_depth_boundaries(values, k: int) -> tuple[float, ...]:
    """Boundaries at the j/k lower nearest-rank quantiles, deduplicated.

    Heavily tied data can collapse adjacent boundaries, yielding fewer than k
    buckets.  A constant column degenerates to a single bucket just wide
    enough to contain the value.
    """
    vs = np.sort(np.asarray(values, dtype=float))
    if vs.size == 0:
        raise ValueError("no values to take quantiles of")
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > vs.size:
        raise ValueError(f"k={k} exceeds the number of values ({vs.size})")
    n = vs.size
    raw = [vs[0]] + [vs[(j * n) // k] for j in range(1, k)] + [vs[-1]]
    bounds: list[float] = []
    for b in raw:
        if not bounds or b > bounds[-1]:
            bounds.append(float(b))
    if len(bounds) == 1:
        v = bounds[0]
        bounds.append(v + max(1.0, abs(v)) * 1e-9)
    return tuple(bounds)


# ---------------------------------------------------------------------------
# bucketization


def bucket_indices(values, spec: BucketSpec) -> np.ndarray:
    """Assign each value to its bucket; out-of-range values clamp to the ends."""
    v = np.asarray(values, dtype=float)
    b = np.asarray(spec.boundaries)
    idx = np.searchsorted(b, v, side="right") - 1
    # v == last boundary lands past the end; the final bucket is closed above
    return np.clip(idx, 0, spec.bucket_count - 1)


def out_of_range_count(values, spec: BucketSpec) -> int:
    v = np.asarray(values, dtype=float)
    return int(np.sum(v < spec.boundaries[0]) + np.sum(v > spec.boundaries[-1]))


def fit_bucket_medians(spec: BucketSpec, train_values) -> BucketSpec:
    """Freeze per-bucket medians of the training values into the entry.

    Buckets containing no training values fall back to their midpoint.
    """
    v = np.asarray(train_values, dtype=float)
    idx = bucket_indices(v, spec)
    b = spec.boundaries
    medians = []
    for j in range(spec.bucket_count):
        members = v[idx == j]
        if members.size:
            medians.append(float(np.median(members)))
        else:
            medians.append((b[j] + b[j + 1]) / 2.0)
    return replace(spec, medians=tuple(medians))


def bucketize(values, spec: BucketSpec) -> np.ndarray:
    """Replace each value by its bucket representative under ``spec.policy``."""
    v = np.asarray(values, dtype=float)
    clamped = out_of_range_count(v, spec)
    if clamped:
        logger.warning("%s: clamped %d value(s) outside [%s, %s]",
                       spec.feature, clamped, spec.boundaries[0], spec.boundaries[-1])
    idx = bucket_indices(v, spec)
    if spec.policy == "index":
        return idx.astype(float)
    if spec.policy == "midpoint":
        b = np.asarray(spec.boundaries)
        return (b[idx] + b[idx + 1]) / 2.0
    if spec.medians is None:
        raise ValueError(f"{spec.feature}: median policy requires fitted medians "
                         "(see fit_bucket_medians)")
    return np.asarray(spec.medians)[idx]


# ---------------------------------------------------------------------------
# categorical merges


def merge_categories(values, spec: MergeSpec) -> np.ndarray:
    """Map each category token to the name of its merged group."""
    lookup = {c: name for name, cats in spec.groups for c in cats}
    out = []
    for i, v in enumerate(values):
        if v not in lookup:
            raise DomainError(f"{spec.feature}: row {i} value {v!r} not covered by the partition")
        out.append(lookup[v])
    return np.array(out, dtype=object)


def fit_merge_representatives(spec: MergeSpec, train_values) -> MergeSpec:
    """Freeze each group's most frequent training member as its representative.

    Ties, and groups unseen in training, resolve to the earliest member in the
    group's declared order.
    """
    counts: dict[str, int] = {}
    for v in train_values:
        counts[v] = counts.get(v, 0) + 1
    reps = []
    for _, cats in spec.groups:
        reps.append(max(cats, key=lambda c: (counts.get(c, 0), -cats.index(c))))
    return replace(spec, representatives=tuple(reps))


def apply_representative_merge(values, spec: MergeSpec) -> np.ndarray:
    """Replace each category by its group's representative original category.

    The output stays in the original category alphabet, so a model trained on
    un-merged data can still consume it.
    """
    if spec.representatives is None:
        raise ValueError(f"{spec.feature}: representatives not fitted "
                         "(see fit_merge_representatives)")
    lookup = {c: spec.representatives[g] for g, (_, cats) in enumerate(spec.groups) for c in cats}
    out = []
    for i, v in enumerate(values):
        if v not in lookup:
            raise DomainError(f"{spec.feature}: row {i} value {v!r} not covered by the partition")
        out.append(lookup[v])
    return np.array(out, dtype=object)


def one_hot(values, categories) -> np.ndarray:
    """0/1 indicator matrix with one column per category, in the given order."""
    cats = list(categories)
    pos = {c: j for j, c in enumerate(cats)}
    out = np.zeros((len(values), len(cats)), dtype=np.float64)
    for i, v in enumerate(values):
        j = pos.get(v)
        if j is None:
            raise DomainError(f"value {v!r} not among categories {cats}")
        out[i, j] = 1.0
    return out


# ---------------------------------------------------------------------------
# the full pipeline


def apply_pipeline(dataset: Dataset, spec: TransformSpec) -> EncodedMatrix:
    """Encode a dataset under ``spec`` into an :class:`EncodedMatrix`.

    Features are emitted in schema order.  Numeric features yield one column
    (raw or bucketized); categorical features yield one-hot columns over their
    (possibly merged) categories, or a single code column when listed in
    ``spec.code_categoricals``.
    """
    schema = dataset.schema
    known = set(schema.feature_names)
    for e in spec.entries:
        if e.feature not in known:
            raise SchemaError(f"transform entry for unknown feature {e.feature!r}")
        feat = schema.feature(e.feature)
        if isinstance(e, BucketSpec) and feat.kind == "categorical":
            raise SchemaError(f"cannot bucketize categorical feature {e.feature!r}")
        if isinstance(e, MergeSpec) and feat.kind != "categorical":
            raise SchemaError(f"cannot merge categories of {feat.kind} feature {e.feature!r}")
    for name in spec.code_categoricals:
        if name not in known or schema.feature(name).kind != "categorical":
            raise SchemaError(f"code_categoricals names non-categorical feature {name!r}")

    blocks: list[np.ndarray] = []
    names: list[str] = []
    groups: list[str] = []
    clamps: dict[str, int] = {}
    for feat in schema.features:
        entry = spec.entry_for(feat.name)
        if feat.kind == "categorical":
            tokens = dataset.column(feat.name)
            if isinstance(entry, MergeSpec):
                tokens = merge_categories(tokens, entry)
                cats = entry.group_names
            else:
                cats = feat.categories or ()
            if feat.name in spec.code_categoricals:
                codes = {c: float(j) for j, c in enumerate(cats)}
                blocks.append(np.array([codes[t] for t in tokens], dtype=np.float64)[:, None])
                names.append(feat.name)
                groups.append(feat.name)
            else:
                blocks.append(one_hot(tokens, cats))
                names.extend(f"{feat.name}={c}" for c in cats)
                groups.extend([feat.name] * len(cats))
        else:
            col = dataset.column(feat.name)
            if isinstance(entry, BucketSpec):
                clamped = out_of_range_count(col, entry)
                if clamped:
                    clamps[feat.name] = clamped
                col = bucketize(col, entry)
            blocks.append(np.asarray(col, dtype=np.float64)[:, None])
            names.append(feat.name)
            groups.append(feat.name)

    values = np.hstack(blocks) if blocks else np.zeros((len(dataset), 0))
    return EncodedMatrix(
        values=values,
        column_names=tuple(names),
        groups=tuple(groups),
        spec=spec,
        clamp_counts=clamps,
    )


# ---------------------------------------------------------------------------
# serialization


def _entry_to_doc(entry: BucketSpec | MergeSpec) -> dict:
    if isinstance(entry, BucketSpec):
        doc = {
            "feature": entry.feature,
            "kind": "bucket",
            "boundaries": list(entry.boundaries),
            "policy": entry.policy,
        }
        if entry.medians is not None:
            doc["medians"] = list(entry.medians)
        return doc
    doc = {
        "feature": entry.feature,
        "kind": "merge",
        "groups": [{"name": name, "categories": list(cats)} for name, cats in entry.groups],
    }
    if entry.representatives is not None:
        doc["representatives"] = list(entry.representatives)
    return doc


def _entry_from_doc(doc: dict) -> BucketSpec | MergeSpec:
    kind = doc.get("kind")
    if kind == "bucket":
        return BucketSpec(
            feature=doc["feature"],
            boundaries=tuple(float(b) for b in doc["boundaries"]),
            policy=doc.get("policy", "median"),
            medians=tuple(float(m) for m in doc["medians"]) if "medians" in doc else None,
        )
    if kind == "merge":
        return MergeSpec(
            feature=doc["feature"],
            groups=tuple((g["name"], tuple(g["categories"])) for g in doc["groups"]),
            representatives=tuple(doc["representatives"]) if "representatives" in doc else None,
        )
    raise ParseError(f"unknown transform entry kind {kind!r}")


def save_transform_spec(spec: TransformSpec, path) -> None:
    doc = {
        "entries": [_entry_to_doc(e) for e in spec.entries],
        "code_categoricals": list(spec.code_categoricals),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_transform_spec(path) -> TransformSpec:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    try:
        return TransformSpec(
            entries=tuple(_entry_from_doc(e) for e in doc["entries"]),
            code_categoricals=tuple(doc.get("code_categoricals", ())),
        )
    except (KeyError, TypeError) as exc:
        raise ParseError(f"{path}: malformed transform spec: {exc}") from exc
