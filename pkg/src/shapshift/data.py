"""Datasets, schemas, CSV/JSON loading, the synthetic generator, and fold splits.

A :class:`Schema` declares the feature columns (numeric or categorical), the
binary target column, and which feature is the protected one under study.  A
:class:`Dataset` couples a schema with validated rows.  Both are immutable;
all derived artifacts (splits, encodings) are produced by pure functions.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ParseError, SchemaError
from .seeds import stream

NUMERIC_KINDS = ("continuous", "ordinal")
KINDS = NUMERIC_KINDS + ("categorical",)

SYNTH_RACE_CATEGORIES = ("White", "Black", "Asian", "Other")
SYNTH_RACE_PROBS = (0.6, 0.2, 0.1, 0.1)
SYNTH_NOISE_FEATURES = 6


@dataclass(frozen=True)
class FeatureSpec:
    """One feature column: a name, a kind, and categories when categorical."""

    name: str
    kind: str
    categories: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise SchemaError(f"feature {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "categorical":
            if not self.categories:
                raise SchemaError(f"feature {self.name!r}: categorical without categories")
            if len(set(self.categories)) != len(self.categories):
                raise SchemaError(f"feature {self.name!r}: duplicate categories")
        elif self.categories is not None:
            raise SchemaError(f"feature {self.name!r}: categories given for {self.kind} kind")


@dataclass(frozen=True)
class Schema:
    """Feature declarations plus the target and protected column names."""

    features: tuple[FeatureSpec, ...]
    target: str
    protected: str

    def __post_init__(self) -> None:
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate feature names")
        if self.target in names:
            raise SchemaError(f"target {self.target!r} collides with a feature name")
        if self.protected not in names:
            raise SchemaError(f"protected feature {self.protected!r} not in schema")

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.features)

    def feature(self, name: str) -> FeatureSpec:
        for f in self.features:
            if f.name == name:
                return f
        raise SchemaError(f"no feature named {name!r}")

    def index(self, name: str) -> int:
        for i, f in enumerate(self.features):
            if f.name == name:
                return i
        raise SchemaError(f"no feature named {name!r}")


@dataclass(frozen=True)
class Dataset:
    """Immutable rows of feature values with binary targets, under a schema."""

    schema: Schema
    rows: tuple[tuple, ...]
    targets: tuple[int, ...]

    def __post_init__(self) -> None:
        width = len(self.schema.features)
        if len(self.rows) != len(self.targets):
            raise SchemaError("row and target counts differ")
        for r, row in enumerate(self.rows):
            if len(row) != width:
                raise SchemaError(f"row {r} has {len(row)} values, schema expects {width}")
        for t in self.targets:
            if t not in (0, 1):
                raise SchemaError(f"target values must be 0/1, got {t!r}")
        for j, feat in enumerate(self.schema.features):
            if feat.kind == "categorical":
                allowed = set(feat.categories or ())
                for r, row in enumerate(self.rows):
                    if row[j] not in allowed:
                        raise DomainError(
                            f"row {r}: value {row[j]!r} not a declared category of {feat.name!r}"
                        )
            else:
                for r, row in enumerate(self.rows):
                    v = row[j]
                    if isinstance(v, bool) or not isinstance(v, (int, float, np.integer, np.floating)):
                        raise DomainError(f"row {r}: feature {feat.name!r} has non-numeric {v!r}")
                    if isinstance(v, float) and not np.isfinite(v):
                        raise DomainError(f"row {r}: feature {feat.name!r} is not finite")

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        """Return one feature column; float64 for numeric kinds, object for categorical."""
        j = self.schema.index(name)
        feat = self.schema.features[j]
        values = [row[j] for row in self.rows]
        if feat.kind == "categorical":
            return np.array(values, dtype=object)
        return np.array(values, dtype=np.float64)

    def target_array(self) -> np.ndarray:
        return np.array(self.targets, dtype=np.float64)

    def subset(self, indices) -> "Dataset":
        """Row-subset preserving the given index order."""
        idx = [int(i) for i in indices]
        return Dataset(
            schema=self.schema,
            rows=tuple(self.rows[i] for i in idx),
            targets=tuple(self.targets[i] for i in idx),
        )

    def with_column(self, name: str, values) -> "Dataset":
        """Return a copy with one feature column replaced (same schema)."""
        j = self.schema.index(name)
        if len(values) != len(self.rows):
            raise ValueError("replacement column has wrong length")
        rows = tuple(
            tuple(values[r] if c == j else v for c, v in enumerate(row))
            for r, row in enumerate(self.rows)
        )
        return Dataset(schema=self.schema, rows=rows, targets=self.targets)


@dataclass(frozen=True)
class ConfusionPartition:
    """Observation indices split by confusion cell of some classifier."""

    tp: tuple[int, ...]
    fp: tuple[int, ...]
    tn: tuple[int, ...]
    fn: tuple[int, ...]

    def cells(self) -> dict[str, tuple[int, ...]]:
        return {"TP": self.tp, "FP": self.fp, "TN": self.tn, "FN": self.fn}


def confusion_partition(predicted, actual) -> ConfusionPartition:
    """Partition indices 0..n-1 into TP/FP/TN/FN given 0/1 label arrays."""
    pred = np.asarray(predicted, dtype=int)
    act = np.asarray(actual, dtype=int)
    if pred.shape != act.shape:
        raise ValueError("predicted and actual lengths differ")
    cells = {"tp": [], "fp": [], "tn": [], "fn": []}
    for i, (p, a) in enumerate(zip(pred, act)):
        if p not in (0, 1) or a not in (0, 1):
            raise ValueError("labels must be 0/1")
        if p == 1 and a == 1:
            cells["tp"].append(i)
        elif p == 1 and a == 0:
            cells["fp"].append(i)
        elif p == 0 and a == 0:
            cells["tn"].append(i)
        else:
            cells["fn"].append(i)
    return ConfusionPartition(
        tp=tuple(cells["tp"]), fp=tuple(cells["fp"]), tn=tuple(cells["tn"]), fn=tuple(cells["fn"])
    )


def split_kfold(dataset: Dataset, k: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Shuffled k-fold split; returns (train_idx, test_idx) pairs, indices ascending.

    Fold sizes differ by at most one; the first ``n % k`` folds take the extra row.
    """
    n = len(dataset)
    if not 2 <= k <= n:
        raise ValueError(f"need 2 <= k <= n rows, got k={k}, n={n}")
    rng = stream(seed, "kfold")
    order = rng.permutation(n)
    folds = np.array_split(order, k)
    out = []
    for f in folds:
        test = np.sort(f)
        mask = np.ones(n, dtype=bool)
        mask[test] = False
        out.append((np.nonzero(mask)[0], test))
    return out


# ---------------------------------------------------------------------------
# schema and CSV files


def save_schema(schema: Schema, path) -> None:
    doc = {
        "features": [
            {"name": f.name, "kind": f.kind}
            | ({"categories": list(f.categories)} if f.categories else {})
            for f in schema.features
        ],
        "target": schema.target,
        "protected": schema.protected,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def load_schema(path) -> Schema:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    try:
        features = tuple(
            FeatureSpec(
                name=f["name"],
                kind=f["kind"],
                categories=tuple(f["categories"]) if "categories" in f else None,
            )
            for f in doc["features"]
        )
        return Schema(features=features, target=doc["target"], protected=doc["protected"])
    except (KeyError, TypeError) as exc:
        raise ParseError(f"{path}: missing or malformed schema field: {exc}") from exc


def _parse_cell(text: str, feat: FeatureSpec, row: int):
    if feat.kind == "categorical":
        if feat.categories and text not in feat.categories:
            raise DomainError(f"row {row}: {text!r} not a declared category of {feat.name!r}")
        return text
    try:
        return int(text)
    except ValueError:
        pass
    try:
        value = float(text)
    except ValueError as exc:
        raise ParseError(f"row {row}: cannot parse {text!r} for feature {feat.name!r}") from exc
    if not np.isfinite(value):
        raise DomainError(f"row {row}: feature {feat.name!r} is not finite")
    return value


def _parse_target(text: str, row: int) -> int:
    if text not in ("0", "1"):
        raise ParseError(f"row {row}: target must be 0 or 1, got {text!r}")
    return int(text)


def load_csv(path, schema: Schema) -> Dataset:
    """Load a comma-separated, UTF-8, headered file under ``schema``.

    Missing values are rejected; extra columns not named by the schema are
    ignored.  Numeric cells parse as int when possible, else float.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        positions = {name: i for i, name in enumerate(header)}
        for needed in (*schema.feature_names, schema.target):
            if needed not in positions:
                raise SchemaError(f"{path}: header missing column {needed!r}")
        rows: list[tuple] = []
        targets: list[int] = []
        for r, record in enumerate(reader):
            if len(record) < len(header):
                raise ParseError(f"row {r}: expected {len(header)} cells, got {len(record)}")
            cells = []
            for feat in schema.features:
                text = record[positions[feat.name]]
                if text == "":
                    raise ParseError(f"row {r}: missing value for feature {feat.name!r}")
                cells.append(_parse_cell(text, feat, r))
            rows.append(tuple(cells))
            targets.append(_parse_target(record[positions[schema.target]], r))
    return Dataset(schema=schema, rows=tuple(rows), targets=tuple(targets))


def _format_cell(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def save_csv(dataset: Dataset, path) -> None:
    """Write the dataset as CSV; floats use repr so reloading is lossless."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(dataset.schema.feature_names) + [dataset.schema.target])
        for row, target in zip(dataset.rows, dataset.targets):
            writer.writerow([_format_cell(v) for v in row] + [str(target)])


# ---------------------------------------------------------------------------
# synthetic generator


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the built-in tabular generator."""

    rows: int
    protected: str = "age"

    def __post_init__(self) -> None:
        if self.rows < 1:
            raise ValueError("rows must be >= 1")
        if self.protected not in ("age", "race", "education", "hours"):
            raise ValueError(f"unknown protected feature {self.protected!r}")


def synth_schema(protected: str = "age") -> Schema:
    features = [
        FeatureSpec("age", "ordinal"),
        FeatureSpec("race", "categorical", SYNTH_RACE_CATEGORIES),
        FeatureSpec("education", "ordinal"),
        FeatureSpec("hours", "ordinal"),
    ]
    features += [FeatureSpec(f"noise{i}", "continuous") for i in range(1, SYNTH_NOISE_FEATURES + 1)]
    return Schema(features=tuple(features), target="label", protected=protected)


def synth_generate(spec: SynthSpec, seed: int) -> Dataset:
    """Draw a dataset from the fixed synthetic population.

    Ten features: integer age on [17, 94], race in four groups, integer
    education on [1, 16] and weekly hours on [5, 60], plus six independent
    standard-normal noise columns.  The label is Bernoulli in a log-odds model
    with a smooth age slope, a sharp under-25 penalty, opposite-signed White
    and Black race effects, and mild education and hours slopes; log-odds are
    clipped to [-6, 6].
    """
    rng = stream(seed, "synth")
    n = spec.rows
    age = rng.integers(17, 95, size=n)
    race_idx = rng.choice(len(SYNTH_RACE_CATEGORIES), size=n, p=SYNTH_RACE_PROBS)
    education = rng.integers(1, 17, size=n)
    hours = rng.integers(5, 61, size=n)
    noise = rng.normal(0.0, 1.0, size=(n, SYNTH_NOISE_FEATURES))

    logits = (
        0.08 * (age - 45)
        - 1.2 * (age < 25)
        + 0.9 * (race_idx == 0)
        - 0.7 * (race_idx == 1)
        + 0.15 * (education - 8)
        + 0.05 * (hours - 40)
    )
    logits = np.clip(logits, -6.0, 6.0)
    labels = (rng.random(n) < 1.0 / (1.0 + np.exp(-logits))).astype(int)

    rows = tuple(
        (
            int(age[i]),
            SYNTH_RACE_CATEGORIES[race_idx[i]],
            int(education[i]),
            int(hours[i]),
            *(float(v) for v in noise[i]),
        )
        for i in range(n)
    )
    return Dataset(schema=synth_schema(spec.protected), rows=rows, targets=tuple(int(v) for v in labels))
