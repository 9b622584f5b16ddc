"""CSV loading and preprocessing for anomaly-detection datasets.

The preprocessing chain is: load a CSV with a column-kind schema, one-hot
encode categorical columns, split into train/validation/test, optionally
subsample the training split, then min-max normalize every split into
[-1, 1] using statistics fitted on the training split only. Labels (1 =
anomaly) are carried alongside the features but are never consumed by
training code, only by evaluation.

All operations are pure functions of their inputs plus an explicit seed,
so they are safe to call concurrently.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .storage import write_npz

COLUMN_KINDS = ("numeric", "categorical", "label")

CACHE_VERSION = 1


@dataclass
class RawTable:
    """Parsed CSV contents before encoding.

    ``columns`` holds (name, kind) pairs in file order; ``rows`` holds one
    tuple per CSV row with floats in numeric/label positions and stripped
    strings in categorical positions.
    """

    columns: list[tuple[str, str]]
    rows: list[tuple]

    def __post_init__(self) -> None:
        n_label = sum(1 for _, kind in self.columns if kind == "label")
        if n_label > 1:
            raise ValueError(f"at most one label column allowed, got {n_label}")
        for name, kind in self.columns:
            if kind not in COLUMN_KINDS:
                raise ValueError(f"column {name!r}: unknown kind {kind!r}")
        arity = len(self.columns)
        for i, row in enumerate(self.rows):
            if len(row) != arity:
                raise ValueError(
                    f"row {i}: expected {arity} values, got {len(row)}"
                )


@dataclass
class Dataset:
    """Numeric feature matrix with optional binary anomaly labels."""

    features: np.ndarray
    feature_names: list[str]
    labels: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {self.features.shape}")
        if self.features.shape[1] != len(self.feature_names):
            raise ValueError(
                f"{len(self.feature_names)} feature names for "
                f"{self.features.shape[1]} columns"
            )
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.features.shape[0],):
                raise ValueError("labels length must match feature rows")
            bad = set(np.unique(self.labels)) - {0, 1}
            if bad:
                raise ValueError(f"labels must be 0/1, found {sorted(bad)}")

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def take(self, indices: np.ndarray) -> "Dataset":
        """Row-subset copy preserving label alignment."""
        labels = None if self.labels is None else self.labels[indices]
        return Dataset(self.features[indices], list(self.feature_names), labels)


@dataclass(frozen=True)
class NormParams:
    """Per-feature min/max fitted on the training split."""

    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "minimum", np.asarray(self.minimum, dtype=np.float64))
        object.__setattr__(self, "maximum", np.asarray(self.maximum, dtype=np.float64))
        if self.minimum.shape != self.maximum.shape:
            raise ValueError("min/max shapes differ")
        if np.any(self.minimum > self.maximum):
            raise ValueError("per-feature min must not exceed max")


@dataclass(frozen=True)
class SplitSpec:
    """Fractional train/val/test split with deterministic shuffling."""

    train_fraction: float = 0.6
    val_fraction: float = 0.2
    test_fraction: float = 0.2
    seed: int = 0
    subsample_fraction: float | None = None

    def __post_init__(self) -> None:
        fracs = (self.train_fraction, self.val_fraction, self.test_fraction)
        if any(f < 0 for f in fracs):
            raise ValueError(f"split fractions must be >= 0, got {fracs}")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ValueError(f"split fractions must sum to 1, got {sum(fracs)}")
        if self.subsample_fraction is not None and not (
            0.0 < self.subsample_fraction <= 1.0
        ):
            raise ValueError(
                f"subsample_fraction must be in (0, 1], got {self.subsample_fraction}"
            )


def load_csv(
    path: str | Path,
    schema: Mapping[str | int, str],
    has_header: bool | None = None,
) -> RawTable:
    """Parse a CSV file into a :class:`RawTable` under a column-kind schema.

    Args:
        path: CSV file, comma separated, UTF-8.
        schema: Maps column name (header required) or 0-based column index
            to a kind in ``("numeric", "categorical", "label")``. Columns
            not mentioned default to numeric.
        has_header: Whether the first row is a header. Defaults to True
            when any schema key is a string, else False.

    Raises:
        FileNotFoundError: Missing file.
        ValueError: Empty file, row arity mismatch (named by line number),
            unparsable or non-finite numeric value, non-binary label value,
            or a schema key that matches no column.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    if has_header is None:
        has_header = any(isinstance(k, str) for k in schema)

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        raw_rows = [row for row in reader if row]

    if has_header:
        if not raw_rows:
            raise ValueError(f"{path}: no rows")
        header = [c.strip() for c in raw_rows[0]]
        data_rows = raw_rows[1:]
        first_line = 2
    else:
        header = None
        data_rows = raw_rows
        first_line = 1
    if not data_rows:
        raise ValueError(f"{path}: no rows")

    width = len(data_rows[0])
    names = header if header is not None else [f"col{i}" for i in range(width)]
    if len(names) != width:
        raise ValueError(
            f"{path}: header has {len(names)} columns but first data row has {width}"
        )

    kinds = ["numeric"] * width
    for key, kind in schema.items():
        if kind not in COLUMN_KINDS:
            raise ValueError(f"schema key {key!r}: unknown kind {kind!r}")
        if isinstance(key, int):
            if not 0 <= key < width:
                raise ValueError(f"schema index {key} out of range for {width} columns")
            kinds[key] = kind
        else:
            if header is None:
                raise ValueError(
                    f"schema key {key!r} is a name but the file has no header"
                )
            try:
                kinds[names.index(key)] = kind
            except ValueError:
                raise ValueError(f"schema column {key!r} not found in header") from None

    rows: list[tuple] = []
    for i, row in enumerate(data_rows):
        line = first_line + i
        if len(row) != width:
            raise ValueError(
                f"{path} line {line}: expected {width} fields, got {len(row)}"
            )
        parsed: list = []
        for j, value in enumerate(row):
            kind = kinds[j]
            if kind == "categorical":
                parsed.append(value.strip())
                continue
            try:
                num = float(value)
            except ValueError:
                raise ValueError(
                    f"{path} line {line}: column {names[j]!r}: "
                    f"cannot parse {value!r} as a number"
                ) from None
            if not math.isfinite(num):
                raise ValueError(
                    f"{path} line {line}: column {names[j]!r}: non-finite value"
                )
            if kind == "label":
                if num not in (0.0, 1.0):
                    raise ValueError(
                        f"{path} line {line}: label must be 0 or 1, got {value!r}"
                    )
                parsed.append(int(num))
            else:
                parsed.append(num)
        rows.append(tuple(parsed))

    return RawTable(columns=list(zip(names, kinds)), rows=rows)


def build_vocabulary(table: RawTable) -> dict[str, tuple[str, ...]]:
    """Distinct values per categorical column, sorted for determinism."""
    vocab: dict[str, tuple[str, ...]] = {}
    for j, (name, kind) in enumerate(table.columns):
        if kind == "categorical":
            vocab[name] = tuple(sorted({row[j] for row in table.rows}))
    return vocab


def one_hot_encode(
    table: RawTable,
    vocabulary: Mapping[str, Sequence[str]] | None = None,
) -> Dataset:
    """Expand categorical columns into binary indicator blocks.

    Each categorical column with ``c`` distinct values becomes ``c`` binary
    columns named ``<column>=<value>``; numeric columns pass through in
    place. When ``vocabulary`` is given (apply mode, e.g. encoding a test
    file with the training file's vocabulary), a value absent from the
    vocabulary encodes as all zeros in its block. The label column, if
    present, is returned as ``Dataset.labels`` and excluded from features.
    """
    if vocabulary is None:
        vocabulary = build_vocabulary(table)

    names: list[str] = []
    builders: list[tuple[int, str, dict[str, int] | None]] = []
    label_idx: int | None = None
    for j, (name, kind) in enumerate(table.columns):
        if kind == "label":
            label_idx = j
        elif kind == "numeric":
            builders.append((j, "numeric", None))
            names.append(name)
        else:
            cats = vocabulary.get(name, ())
            index = {c: k for k, c in enumerate(cats)}
            builders.append((j, "categorical", index))
            names.extend(f"{name}={c}" for c in cats)

    n = len(table.rows)
    features = np.zeros((n, len(names)), dtype=np.float64)
    for i, row in enumerate(table.rows):
        col = 0
        for j, kind, index in builders:
            if kind == "numeric":
                features[i, col] = row[j]
                col += 1
            else:
                assert index is not None
                k = index.get(row[j])
                if k is not None:
                    features[i, col + k] = 1.0
                col += len(index)

    if not np.all(np.isfinite(features)):
        raise ValueError("non-finite feature values after encoding")

    labels = None
    if label_idx is not None:
        labels = np.array([row[label_idx] for row in table.rows], dtype=np.int64)
    return Dataset(features, names, labels)


def normalize_fit(train: Dataset) -> NormParams:
    """Fit per-feature min/max on the training split only."""
    if train.n_rows == 0:
        raise ValueError("cannot fit normalization on an empty dataset")
    return NormParams(
        minimum=train.features.min(axis=0),
        maximum=train.features.max(axis=0),
    )


def normalize_apply(params: NormParams, data: Dataset) -> Dataset:
    """Map each feature x to 2*(x - min)/(max - min) - 1.

    Training features land in [-1, 1]; values outside the fitted range
    (typical for test anomalies) extrapolate beyond it without clipping.
    Constant features (max == min) map to 0 everywhere.
    """
    if data.n_features != params.minimum.shape[0]:
        raise ValueError(
            f"data has {data.n_features} features, params have "
            f"{params.minimum.shape[0]}"
        )
    span = params.maximum - params.minimum
    with np.errstate(divide="ignore", invalid="ignore"):
        scaled = 2.0 * (data.features - params.minimum) / span - 1.0
    scaled = np.where(span == 0.0, 0.0, scaled)
    return Dataset(scaled, list(data.feature_names), data.labels)


def split(data: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    """Disjoint covering train/val/test partition via a seeded shuffle.

    Val and test receive floor(fraction * n) rows each; remainder rows go
    to train. Deterministic per seed.
    """
    n = data.n_rows
    if n < 3:
        raise ValueError(f"need at least 3 rows to split, got {n}")
    # +1e-9 absorbs float representation error in fractions like 312/2286
    n_val = int(spec.val_fraction * n + 1e-9)
    n_test = int(spec.test_fraction * n + 1e-9)
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) <= 0:
        raise ValueError(
            f"split of {n} rows yields empty part "
            f"(train={n_train}, val={n_val}, test={n_test})"
        )
    perm = np.random.default_rng(spec.seed).permutation(n)
    return (
        data.take(perm[:n_train]),
        data.take(perm[n_train : n_train + n_val]),
        data.take(perm[n_train + n_val :]),
    )


def subsample(train: Dataset, fraction: float, seed: int) -> Dataset:
    """Seeded uniform sample without replacement of floor(fraction * n) rows."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    count = int(fraction * train.n_rows + 1e-9)
    if count < 1:
        raise ValueError(
            f"subsampling {train.n_rows} rows at fraction {fraction} is empty"
        )
    idx = np.random.default_rng(seed).permutation(train.n_rows)[:count]
    return train.take(idx)


@dataclass
class PreparedData:
    """Preprocessed splits plus the normalization fitted on train."""

    train: Dataset
    val: Dataset
    test: Dataset
    norm: NormParams
    meta: dict = field(default_factory=dict)


def prepare(
    table: RawTable,
    spec: SplitSpec,
    vocabulary: Mapping[str, Sequence[str]] | None = None,
) -> PreparedData:
    """Full preprocessing chain: encode, split, subsample, normalize.

    Normalization statistics are fitted on the final (post-subsample)
    training split and applied unchanged to validation and test.
    """
    encoded = one_hot_encode(table, vocabulary)
    train, val, test = split(encoded, spec)
    if spec.subsample_fraction is not None and spec.subsample_fraction < 1.0:
        train = subsample(train, spec.subsample_fraction, spec.seed)
    norm = normalize_fit(train)
    meta = {
        "n_features": encoded.n_features,
        "n_rows": encoded.n_rows,
        "split_sizes": [train.n_rows, val.n_rows, test.n_rows],
        "has_labels": encoded.labels is not None,
    }
    return PreparedData(
        train=normalize_apply(norm, train),
        val=normalize_apply(norm, val),
        test=normalize_apply(norm, test),
        norm=norm,
        meta=meta,
    )


def save_cache(path: str | Path, prepared: PreparedData, source_sha256: str = "") -> None:
    """Persist prepared splits to a versioned, byte-reproducible .npz."""
    arrays: dict[str, np.ndarray] = {
        "cache_version": np.array(CACHE_VERSION, dtype=np.int64),
        "feature_names": np.array(prepared.train.feature_names),
        "norm_min": prepared.norm.minimum,
        "norm_max": prepared.norm.maximum,
        "source_sha256": np.array(source_sha256),
    }
    for part, ds in (("train", prepared.train), ("val", prepared.val),
                     ("test", prepared.test)):
        arrays[f"{part}_features"] = ds.features
        if ds.labels is not None:
            arrays[f"{part}_labels"] = ds.labels
    write_npz(path, arrays)


def load_cache(path: str | Path) -> PreparedData:
    """Load splits written by :func:`save_cache`."""
    with np.load(path, allow_pickle=False) as npz:
        version = int(npz["cache_version"])
        if version != CACHE_VERSION:
            raise ValueError(
                f"{path}: cache version {version} unsupported "
                f"(expected {CACHE_VERSION})"
            )
        names = [str(s) for s in npz["feature_names"]]
        parts = {}
        for part in ("train", "val", "test"):
            labels = npz[f"{part}_labels"] if f"{part}_labels" in npz.files else None
            parts[part] = Dataset(npz[f"{part}_features"], list(names), labels)
        norm = NormParams(npz["norm_min"], npz["norm_max"])
        meta = {"source_sha256": str(npz["source_sha256"])}
    return PreparedData(parts["train"], parts["val"], parts["test"], norm, meta)
