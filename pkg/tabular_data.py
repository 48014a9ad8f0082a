"""
Tabular data for continual slice experiments.

Loads raw CSVs against a declared schema, fits a preprocessing pipeline on the
first slice and freezes it, and builds ordered slice sequences (by a slicing
column, or from the synthetic shift generator).
"""
import hashlib
import json
import os
from dataclasses import dataclass, field, fields, replace
from typing import List, Optional, Sequence, Tuple

import joblib
import numpy as np
import pandas as pd
from sklearn.compose import ColumnTransformer
from sklearn.impute import MissingIndicator, SimpleImputer
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import OneHotEncoder, StandardScaler

from config import MIN_FIT_ROWS, MISSING_TOKENS, status
from errors import (
    AllMissingColumn,
    ClassOutOfRange,
    EmptyData,
    FingerprintMismatch,
    InvalidSpec,
    InvalidSplitRatios,
    MissingFile,
    NonContinuousSliceColumn,
    SchemaMismatch,
    TooFewRows,
    UnparseableCell,
)

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"
ENCODER_FILE = "preprocessor.joblib"


def _empty_index():
    return np.zeros(0, dtype=np.int64)


# ============================================================================
# Schema & raw tables
# ============================================================================

@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str
    may_miss: bool = False


@dataclass(frozen=True)
class TableSchema:
    """Declared column kinds plus label and slicing rules for one dataset"""
    dataset: str
    columns: Tuple[ColumnSpec, ...]
    label: str
    slice_column: Optional[str] = None
    boundaries: Tuple[float, ...] = ()
    label_threshold: Optional[float] = None
    label_values: Tuple = ()
    has_header: bool = True
    n_source: Optional[int] = None
    n_used: Optional[int] = None
    split_ratios: Tuple[float, float, float] = (0.6, 0.2, 0.2)
    split_seed: int = 0

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise InvalidSpec("duplicate column names in schema", dataset=self.dataset)
        for col in self.columns:
            if col.kind not in (CONTINUOUS, CATEGORICAL):
                raise InvalidSpec(f"column '{col.name}' has unknown kind '{col.kind}'")
        if self.label not in names:
            raise InvalidSpec(f"label column '{self.label}' not declared", dataset=self.dataset)
        if self.label_threshold is None and not self.label_values:
            raise InvalidSpec("schema needs label_threshold or label_values", dataset=self.dataset)

    @property
    def column_names(self):
        return tuple(c.name for c in self.columns)

    @property
    def input_columns(self):
        return tuple(c for c in self.columns if c.name != self.label)

    @property
    def n_classes(self):
        return 2 if self.label_threshold is not None else len(self.label_values)

    def column(self, name):
        for col in self.columns:
            if col.name == name:
                return col
        return None

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data["columns"] = tuple(ColumnSpec(**c) for c in data["columns"])
        for key in ("boundaries", "label_values", "split_ratios"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


def load_schema(path):
    """Read a JSON schema declaration"""
    if not os.path.exists(path):
        raise MissingFile(f"schema file not found: {path}", file=path)
    with open(path, "r") as f:
        return TableSchema.from_dict(json.load(f))


@dataclass(frozen=True, eq=False)
class RawTable:
    """Parsed CSV. Continuous columns are float (NaN = missing), categorical are
    strings (None = missing). Nothing is imputed here."""
    schema: TableSchema
    frame: pd.DataFrame

    @property
    def n_rows(self):
        return len(self.frame)

    def take(self, rows):
        return RawTable(self.schema, self.frame.iloc[np.asarray(rows, dtype=np.int64)].reset_index(drop=True))


def load_csv(path, schema):
    """Load a raw CSV and validate it against the schema."""
    if not os.path.exists(path):
        raise MissingFile(f"data file not found: {path}", file=path)

    expected = list(schema.column_names)
    try:
        if schema.has_header:
            raw = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
        else:
            raw = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True,
                              header=None, names=expected)
    except pd.errors.EmptyDataError:
        if not schema.has_header:
            raw = pd.DataFrame({name: pd.Series(dtype=str) for name in expected})
        else:
            raise SchemaMismatch("file has no header row", file=path)
    except pd.errors.ParserError as e:
        raise SchemaMismatch(f"row has the wrong number of fields: {e}", file=path)

    raw.columns = [str(c).strip() for c in raw.columns]
    absent = [name for name in expected if name not in raw.columns]
    if absent:
        raise SchemaMismatch(f"column '{absent[0]}' absent from header", file=path, column=absent[0])
    extra = [name for name in raw.columns if name not in expected]
    if extra:
        raise SchemaMismatch(f"unexpected column '{extra[0]}' in header", file=path, column=extra[0])

    first_line = 2 if schema.has_header else 1
    data = {}
    for col in schema.columns:
        tokens = raw[col.name].fillna("").astype(str).str.strip()
        missing = tokens.isin(MISSING_TOKENS).to_numpy()
        if col.kind == CONTINUOUS:
            values = pd.to_numeric(tokens.mask(missing), errors="coerce").to_numpy(dtype=float)
            bad = np.isnan(values) & ~missing
            if bad.any():
                row = int(np.flatnonzero(bad)[0])
                raise UnparseableCell(
                    f"non-numeric value {tokens.iloc[row]!r} in continuous column '{col.name}'",
                    file=path, line=row + first_line, column=col.name)
            data[col.name] = values
        else:
            values = tokens.to_numpy(dtype=object).copy()
            values[missing] = None
            data[col.name] = values

    frame = pd.DataFrame(data, columns=expected)
    return RawTable(schema=schema, frame=frame)


def subsample_rows(table, n_used, seed):
    """Uniform seed-fixed subsample to n_used rows, original row order kept."""
    if n_used is None or n_used >= table.n_rows:
        return table
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(table.n_rows, size=n_used, replace=False))
    status(f"Subsampled {table.schema.dataset}: {table.n_rows} -> {n_used} rows (seed {seed})")
    return table.take(keep)


def _label_key(value, kind):
    if kind == CONTINUOUS:
        return float(value)
    return str(value)


def encode_labels(table, rows):
    """Map raw label values of the given rows to class ids 0..K-1."""
    schema = table.schema
    kind = schema.column(schema.label).kind
    values = table.frame[schema.label].to_numpy()[np.asarray(rows, dtype=np.int64)]
    if schema.label_threshold is not None:
        return (values.astype(float) > schema.label_threshold).astype(np.int64)
    lookup = {_label_key(v, kind): i for i, v in enumerate(schema.label_values)}
    out = np.empty(len(values), dtype=np.int64)
    for i, value in enumerate(values):
        key = _label_key(value, kind)
        if key not in lookup:
            raise ClassOutOfRange(f"label value {value!r} not in declared label_values",
                                  column=schema.label)
        out[i] = lookup[key]
    return out


# ============================================================================
# Preprocessing (fitted once on slice 1, then frozen)
# ============================================================================

@dataclass(frozen=True)
class Preprocessor:
    columns: Tuple[str, ...]
    continuous: Tuple[str, ...]
    means: Tuple[float, ...]
    scales: Tuple[float, ...]
    medians: Tuple[float, ...]
    categorical: Tuple[str, ...]
    categories: Tuple[Tuple[str, ...], ...]
    modes: Tuple[str, ...]
    indicators: Tuple[str, ...]
    fitted_on: int
    # fitted sklearn transformer; the fields above are read back from it
    encoder: Optional[ColumnTransformer] = field(default=None, compare=False, repr=False)

    @property
    def width(self):
        return len(self.continuous) + sum(len(c) for c in self.categories) + len(self.indicators)

    @property
    def feature_names(self):
        names = list(self.continuous)
        for name, cats in zip(self.categorical, self.categories):
            names.extend(f"{name}={cat}" for cat in cats)
        names.extend(f"{name}__missing" for name in self.indicators)
        return tuple(names)

    def describe_feature(self, j):
        """(kind, column, detail) for encoded feature j; used to render rules."""
        if j < len(self.continuous):
            return "continuous", self.continuous[j], (self.means[j], self.scales[j])
        j -= len(self.continuous)
        for name, cats in zip(self.categorical, self.categories):
            if j < len(cats):
                return "onehot", name, cats[j]
            j -= len(cats)
        if j < len(self.indicators):
            return "indicator", self.indicators[j], None
        raise IndexError(j)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "encoder"}

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        data["categories"] = tuple(tuple(c) for c in data["categories"])
        for key in ("columns", "continuous", "means", "scales", "medians",
                    "categorical", "modes", "indicators"):
            data[key] = tuple(data[key])
        return cls(**data)


def build_encoder(continuous, categorical, indicators):
    """Unfitted encoder: z-score then median fill, mode fill then one-hot, missingness flags.

    Scaling comes before the median fill so the statistics only see observed
    values; the filled cell is the z-scored median.
    """
    parts = []
    if continuous:
        parts.append(("continuous", make_pipeline(StandardScaler(), SimpleImputer(strategy="median")),
                      list(continuous)))
    if categorical:
        parts.append(("categorical", make_pipeline(SimpleImputer(strategy="most_frequent"),
                                                   OneHotEncoder(handle_unknown="ignore", sparse_output=False)),
                      list(categorical)))
    if indicators:
        parts.append(("missing", MissingIndicator(features="all"), list(indicators)))
    return ColumnTransformer(parts, sparse_threshold=0.0)


def _encoder_frame(sub, continuous, categorical):
    """Input columns as the encoder sees them: floats, and strings with NaN for missing cells."""
    frame = sub[list(continuous)].astype(float)
    for name in categorical:
        cells = sub[name].astype(object)
        frame[name] = cells.astype(str).where(cells.notna(), np.nan)
    return frame


def encoder_fields(encoder):
    """Frozen statistics of a fitted encoder, in Preprocessor field order."""
    means, scales, medians, categories, modes = (), (), (), (), ()
    if "continuous" in encoder.named_transformers_:
        pipe = encoder.named_transformers_["continuous"]
        scaler, imputer = pipe[0], pipe[-1]
        means = tuple(float(v) for v in scaler.mean_)
        scales = tuple(float(v) for v in scaler.scale_)
        medians = tuple(float(v) for v in imputer.statistics_ * scaler.scale_ + scaler.mean_)
    if "categorical" in encoder.named_transformers_:
        pipe = encoder.named_transformers_["categorical"]
        imputer, onehot = pipe[0], pipe[-1]
        categories = tuple(tuple(str(c) for c in cats) for cats in onehot.categories_)
        modes = tuple(str(v) for v in imputer.statistics_)
    return {"means": means, "scales": scales, "medians": medians, "categories": categories, "modes": modes}


def fit_preprocessor(table, rows, fitted_on=1):
    """Fit z-score, imputation, one-hot and indicator parameters on the given rows."""
    rows = np.asarray(rows, dtype=np.int64)
    if rows.size == 0:
        raise EmptyData("cannot fit preprocessor on zero rows")
    schema = table.schema
    sub = table.frame.iloc[rows]

    for col in schema.input_columns:
        if sub[col.name].isna().all():
            raise AllMissingColumn(f"column '{col.name}' has no observed value in fitting rows",
                                   column=col.name)

    continuous = tuple(c.name for c in schema.input_columns if c.kind == CONTINUOUS)
    categorical = tuple(c.name for c in schema.input_columns if c.kind == CATEGORICAL)
    indicators = tuple(
        c.name for c in schema.input_columns
        if c.may_miss or sub[c.name].isna().any()
    )
    encoder = None
    stats = {"means": (), "scales": (), "medians": (), "categories": (), "modes": ()}
    if continuous or categorical:
        # zero-variance columns get scale 1.0
        encoder = build_encoder(continuous, categorical, indicators).fit(_encoder_frame(sub, continuous, categorical))
        stats = encoder_fields(encoder)

    return Preprocessor(
        columns=schema.column_names,
        continuous=continuous,
        categorical=categorical,
        indicators=indicators,
        fitted_on=int(fitted_on),
        encoder=encoder,
        **stats,
    )


def apply_preprocessor(prep, table, rows):
    """Encode rows into the frozen feature space. Output width is prep.width."""
    if table.schema.column_names != prep.columns:
        raise SchemaMismatch("table schema differs from the one the preprocessor was fitted on")
    rows = np.asarray(rows, dtype=np.int64)
    if prep.width == 0:
        return np.zeros((len(rows), 0))
    if prep.encoder is None:
        raise MissingFile("preprocessor has no fitted encoder; load it with load_prepared",
                          file=ENCODER_FILE)
    sub = table.frame.iloc[rows]
    # unseen categories fall through to an all-zero block
    X = prep.encoder.transform(_encoder_frame(sub, prep.continuous, prep.categorical))
    return np.ascontiguousarray(X, dtype=np.float64)


# ============================================================================
# Slices
# ============================================================================

@dataclass(frozen=True, eq=False)
class Slice:
    """One ordered segment D_t of the stream"""
    slice_id: int
    rows: np.ndarray
    y: np.ndarray
    provenance: str
    X: Optional[np.ndarray] = None
    train_idx: np.ndarray = field(default_factory=_empty_index)
    val_idx: np.ndarray = field(default_factory=_empty_index)
    test_idx: np.ndarray = field(default_factory=_empty_index)

    @property
    def n_rows(self):
        return len(self.y)

    def part(self, split):
        """(X, y) for 'train', 'val' or 'test'."""
        idx = {"train": self.train_idx, "val": self.val_idx, "test": self.test_idx}[split]
        return self.X[idx], self.y[idx]


def slice_by_column(table, column, boundaries):
    """Bucket rows by a continuous column: bucket i holds b[i-1] <= v < b[i]."""
    schema = table.schema
    col = schema.column(column)
    if col is None:
        raise SchemaMismatch(f"slicing column '{column}' not in schema", column=column)
    if col.kind != CONTINUOUS:
        raise NonContinuousSliceColumn(f"slicing column '{column}' is not continuous", column=column)
    bounds = np.asarray(boundaries, dtype=float)
    if bounds.size and np.any(np.diff(bounds) <= 0):
        raise InvalidSpec("slice boundaries must be strictly ascending", column=column)

    values = table.frame[column].to_numpy(dtype=float)
    keep = ~np.isnan(values) & ~table.frame[schema.label].isna().to_numpy()
    dropped = int((~keep).sum())
    if dropped:
        status(f"Dropped {dropped} rows with missing '{column}' or label", level="warn")

    bucket = np.searchsorted(bounds, values, side="right")
    edges = [-np.inf] + [float(b) for b in bounds] + [np.inf]
    slices = []
    for i in range(len(bounds) + 1):
        rows = np.flatnonzero(keep & (bucket == i)).astype(np.int64)
        slices.append(Slice(
            slice_id=i + 1,
            rows=rows,
            y=encode_labels(table, rows),
            provenance=f"{schema.dataset}:{column}[{edges[i]:g},{edges[i + 1]:g})",
        ))
    return slices


def _split_sizes(n, ratios):
    n_val = int(np.floor(n * ratios[1] + 0.5))
    n_test = int(np.floor(n * ratios[2] + 0.5))
    return np.array([n - n_val - n_test, n_val, n_test])


def split_slice(slice_, ratios, seed):
    """Stratified, seeded train/val/test split of one slice."""
    ratios = np.asarray(ratios, dtype=float)
    if ratios.shape != (3,) or np.any(ratios < 0) or abs(ratios.sum() - 1.0) > 1e-9:
        raise InvalidSplitRatios(f"split ratios {tuple(ratios)} must be 3 non-negative fractions summing to 1")
    n = slice_.n_rows
    if n < 3:
        raise TooFewRows(f"slice {slice_.slice_id} has {n} rows, need at least 3", step=slice_.slice_id)

    rng = np.random.default_rng([seed, slice_.slice_id])
    targets = _split_sizes(n, ratios)
    assign = np.full(n, -1)
    counts = np.zeros(3, dtype=int)
    leftovers = []

    for c in np.unique(slice_.y):
        members = rng.permutation(np.flatnonzero(slice_.y == c))
        base = np.floor(len(members) * ratios).astype(int)
        if len(members) >= 3:
            base = np.where(ratios > 0, np.maximum(base, 1), base)
        while base.sum() > len(members):
            base[int(np.argmax(base))] -= 1
        pos = 0
        for s in range(3):
            assign[members[pos:pos + base[s]]] = s
            counts[s] += base[s]
            pos += base[s]
        leftovers.extend(members[pos:].tolist())

    for i in leftovers:
        s = int(np.argmax(targets - counts))
        assign[i] = s
        counts[s] += 1

    return replace(
        slice_,
        train_idx=np.flatnonzero(assign == 0).astype(np.int64),
        val_idx=np.flatnonzero(assign == 1).astype(np.int64),
        test_idx=np.flatnonzero(assign == 2).astype(np.int64),
    )


# ============================================================================
# Streams (prepared slice sequences)
# ============================================================================

@dataclass(frozen=True, eq=False)
class Stream:
    name: str
    slices: Tuple[Slice, ...]
    preprocessor: Optional[Preprocessor]
    n_classes: int
    fingerprint: str

    @property
    def width(self):
        return self.slices[0].X.shape[1]

    @property
    def feature_names(self):
        if self.preprocessor is not None:
            return self.preprocessor.feature_names
        return tuple(f"x{j}" for j in range(self.width))


def stream_fingerprint(slices, prep):
    digest = hashlib.sha256()
    if prep is not None:
        digest.update(prep.to_json().encode())
    for s in slices:
        for arr in (s.X, s.y, s.train_idx, s.val_idx, s.test_idx):
            digest.update(np.ascontiguousarray(arr).tobytes())
    return digest.hexdigest()


def prepare_stream(table, slices, ratios, split_seed):
    """Split every slice, fit the preprocessor on slice 1's train rows, encode all slices."""
    split = [split_slice(s, ratios, split_seed) for s in slices]
    first = split[0]
    if len(first.train_idx) < MIN_FIT_ROWS:
        status(f"Preprocessor fitted on only {len(first.train_idx)} train rows of slice {first.slice_id} "
               f"(fewer than {MIN_FIT_ROWS}); scales and category lists come from those rows alone",
               level="warn")
    prep = fit_preprocessor(table, first.rows[first.train_idx], fitted_on=first.slice_id)
    encoded = tuple(replace(s, X=apply_preprocessor(prep, table, s.rows)) for s in split)
    return Stream(
        name=table.schema.dataset,
        slices=encoded,
        preprocessor=prep,
        n_classes=table.schema.n_classes,
        fingerprint=stream_fingerprint(encoded, prep),
    )


def save_stream(stream, out_dir, manifest_extra=None):
    """Write slice snapshots (.npy), the frozen preprocessor and a manifest."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "preprocessor.json"), "w") as f:
        f.write(stream.preprocessor.to_json())
    if stream.preprocessor.encoder is not None:
        joblib.dump(stream.preprocessor.encoder, os.path.join(out_dir, ENCODER_FILE))

    slice_info = []
    for s in stream.slices:
        slice_dir = os.path.join(out_dir, f"slice_{s.slice_id}")
        os.makedirs(slice_dir, exist_ok=True)
        for name, arr in (("X", s.X), ("y", s.y), ("rows", s.rows), ("train", s.train_idx),
                          ("val", s.val_idx), ("test", s.test_idx)):
            np.save(os.path.join(slice_dir, f"{name}.npy"), arr, allow_pickle=False)
        slice_info.append({
            "slice_id": s.slice_id,
            "provenance": s.provenance,
            "rows": s.n_rows,
            "train": len(s.train_idx),
            "val": len(s.val_idx),
            "test": len(s.test_idx),
            "class_counts": np.bincount(s.y, minlength=stream.n_classes).tolist(),
        })

    manifest = {
        "dataset": stream.name,
        "n_classes": stream.n_classes,
        "width": stream.width,
        "feature_names": list(stream.feature_names),
        "slices": slice_info,
        "fingerprint": stream.fingerprint,
        "preprocessor_fit_rows": len(stream.slices[0].train_idx),
    }
    manifest.update(manifest_extra or {})
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return manifest


def _load_encoder(out_dir, prep):
    path = os.path.join(out_dir, ENCODER_FILE)
    if not os.path.exists(path):
        raise MissingFile(f"no fitted preprocessor at {path} (run `prepare` again)", file=path)
    encoder = joblib.load(path)
    frozen = {key: getattr(prep, key) for key in ("means", "scales", "medians", "categories", "modes")}
    if encoder_fields(encoder) != frozen:
        raise FingerprintMismatch(f"{ENCODER_FILE} does not match preprocessor.json", file=path)
    return encoder


def load_prepared(out_dir):
    """Load a stream written by save_stream."""
    manifest_path = os.path.join(out_dir, "manifest.json")
    if not os.path.exists(manifest_path):
        raise MissingFile(f"no prepared stream at {out_dir} (run `prepare` first)", file=manifest_path)
    with open(manifest_path, "r") as f:
        manifest = json.load(f)
    with open(os.path.join(out_dir, "preprocessor.json"), "r") as f:
        prep = Preprocessor.from_json(f.read())
    prep = replace(prep, encoder=_load_encoder(out_dir, prep))

    slices = []
    for info in manifest["slices"]:
        slice_dir = os.path.join(out_dir, f"slice_{info['slice_id']}")
        arrays = {name: np.load(os.path.join(slice_dir, f"{name}.npy"), allow_pickle=False)
                  for name in ("X", "y", "rows", "train", "val", "test")}
        slices.append(Slice(
            slice_id=info["slice_id"],
            rows=arrays["rows"],
            y=arrays["y"],
            provenance=info["provenance"],
            X=arrays["X"],
            train_idx=arrays["train"],
            val_idx=arrays["val"],
            test_idx=arrays["test"],
        ))
    return Stream(
        name=manifest["dataset"],
        slices=tuple(slices),
        preprocessor=prep,
        n_classes=manifest["n_classes"],
        fingerprint=manifest["fingerprint"],
    )


# ============================================================================
# Synthetic shift streams
# ============================================================================

@dataclass(frozen=True)
class ShiftSpec:
    """Class-conditional Gaussian stream whose means translate and priors tilt per step"""
    n_slices: int = 4
    n_per_slice: int = 1000
    d: int = 8
    K: int = 2
    mean_drift: Tuple[float, ...] = (1.0,)
    prior_shift: float = 0.0
    target_prior: Tuple[float, ...] = ()
    missing_drift: float = 0.0
    class_sep: float = 2.0
    noise: float = 1.0

    def validate(self):
        if self.n_slices < 2 or self.d < 2 or self.K < 2:
            raise InvalidSpec("shift stream needs n_slices >= 2, d >= 2, K >= 2")
        if self.n_per_slice < 3:
            raise InvalidSpec("n_per_slice must be at least 3")
        if len(self.mean_drift) > self.d:
            raise InvalidSpec("mean_drift is longer than d")
        if not 0.0 <= self.prior_shift <= 1.0:
            raise InvalidSpec("prior_shift must lie in [0, 1]")
        if not 0.0 <= self.missing_drift * (self.n_slices - 1) < 1.0:
            raise InvalidSpec("missing rate must stay in [0, 1) over the stream")
        if self.target_prior and (len(self.target_prior) != self.K or min(self.target_prior) < 0):
            raise InvalidSpec("target_prior must hold K non-negative weights")
        if self.noise <= 0:
            raise InvalidSpec("noise must be positive")

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        for key in ("mean_drift", "target_prior"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)


def drift_vector(spec):
    drift = np.zeros(spec.d)
    drift[:len(spec.mean_drift)] = spec.mean_drift
    return drift


def class_means(spec, t):
    """(K, d) class means at slice t (1-based)."""
    means = np.zeros((spec.K, spec.d))
    for k in range(spec.K):
        means[k, k % spec.d] = spec.class_sep * (1 + k // spec.d)
    return means + (t - 1) * drift_vector(spec)


def class_priors(spec, t):
    uniform = np.full(spec.K, 1.0 / spec.K)
    if spec.target_prior:
        target = np.asarray(spec.target_prior, dtype=float)
    else:
        target = np.arange(1, spec.K + 1, dtype=float)
    target = target / target.sum()
    a = min(1.0, spec.prior_shift * (t - 1))
    return (1 - a) * uniform + a * target


def bayes_predict(spec, t, X):
    """Bayes-optimal class for raw (unencoded, fully observed) features at slice t."""
    X = np.asarray(X, dtype=float)
    means = class_means(spec, t)
    sq = ((X[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    log_post = np.log(class_priors(spec, t))[None, :] - sq / (2 * spec.noise ** 2)
    return np.argmax(log_post, axis=1)


def synth_raw_table(spec, seed):
    """Sample the raw table for a shift stream plus its (unsplit) slices."""
    spec.validate()
    rng = np.random.default_rng(seed)
    names = [f"x{j}" for j in range(spec.d)]
    schema = TableSchema(
        dataset="synthetic",
        columns=tuple(ColumnSpec(n, CONTINUOUS, may_miss=spec.missing_drift > 0) for n in names)
        + (ColumnSpec("y", CONTINUOUS),),
        label="y",
        label_values=tuple(float(k) for k in range(spec.K)),
    )

    blocks, labels = [], []
    for t in range(1, spec.n_slices + 1):
        y = rng.choice(spec.K, size=spec.n_per_slice, p=class_priors(spec, t))
        X = class_means(spec, t)[y] + spec.noise * rng.standard_normal((spec.n_per_slice, spec.d))
        miss_rate = spec.missing_drift * (t - 1)
        if miss_rate > 0:
            X[rng.random(X.shape) < miss_rate] = np.nan
        blocks.append(X)
        labels.append(y)

    frame = pd.DataFrame(np.vstack(blocks), columns=names)
    frame["y"] = np.concatenate(labels).astype(float)
    table = RawTable(schema=schema, frame=frame)

    slices = []
    for t in range(1, spec.n_slices + 1):
        rows = np.arange((t - 1) * spec.n_per_slice, t * spec.n_per_slice, dtype=np.int64)
        slices.append(Slice(slice_id=t, rows=rows, y=labels[t - 1].astype(np.int64),
                            provenance=f"synthetic:regime {t}"))
    return table, slices


def synth_stream(spec, seed, ratios=(0.6, 0.2, 0.2)):
    table, slices = synth_raw_table(spec, seed)
    return prepare_stream(table, slices, ratios, split_seed=seed)


def synth_shift_stream(spec, seed, ratios=(0.6, 0.2, 0.2)):
    """Encoded, split slices of a synthetic shift stream."""
    return list(synth_stream(spec, seed, ratios).slices)
