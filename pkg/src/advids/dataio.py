"""Dataset ingest, preprocessing and adversarial-dataset assembly.

Supported inputs:

* ``nslkdd``: KDDTrain+/KDDTest+ text files, no header, 41 features
  followed by the attack-family label and (optionally) the difficulty score.
* ``cicids2017``: the CIC-IDS2017 flow CSVs with a header row and a
  ``Label`` column; a directory is read as the concatenation of its
  ``*.csv`` files in name order. Identifier columns (flow id, addresses,
  source port, timestamp) are dropped.

Preprocessing one-hot encodes categorical features, min-max scales numeric
ones with training statistics (clipping the test split to [0, 1]) and
binarises the label (benign = 0, every attack family = 1).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import DataError

DIALECTS = ("nslkdd", "cicids2017")
ATTACK_ORDER = ("fgsm", "pgd", "cw", "df")

NSL_KDD_FEATURES = (
    "duration", "protocol_type", "service", "flag", "src_bytes", "dst_bytes",
    "land", "wrong_fragment", "urgent", "hot", "num_failed_logins", "logged_in",
    "num_compromised", "root_shell", "su_attempted", "num_root",
    "num_file_creations", "num_shells", "num_access_files", "num_outbound_cmds",
    "is_host_login", "is_guest_login", "count", "srv_count", "serror_rate",
    "srv_serror_rate", "rerror_rate", "srv_rerror_rate", "same_srv_rate",
    "diff_srv_rate", "srv_diff_host_rate", "dst_host_count",
    "dst_host_srv_count", "dst_host_same_srv_rate", "dst_host_diff_srv_rate",
    "dst_host_same_src_port_rate", "dst_host_srv_diff_host_rate",
    "dst_host_serror_rate", "dst_host_srv_serror_rate", "dst_host_rerror_rate",
    "dst_host_srv_rerror_rate",
)
NSL_KDD_CATEGORICAL = ("protocol_type", "service", "flag")
NSL_KDD_BENIGN = "normal"

CIC_LABEL = "Label"
CIC_BENIGN = "BENIGN"
CIC_DROP = ("Flow ID", "Source IP", "Source Port", "Destination IP", "Timestamp")
CIC_IMMUTABLE = ("Destination Port", "Protocol")


@dataclass
class RawRecords:
    """Parsed records before any encoding or scaling."""

    dialect: str
    features: pd.DataFrame
    labels: np.ndarray  # original attack-family strings
    flagged: np.ndarray  # rows holding NaN/Infinity, to be sanitised
    source: str = ""

    def __len__(self) -> int:
        return len(self.features)

    def take(self, rows) -> "RawRecords":
        rows = np.asarray(rows)
        return RawRecords(
            self.dialect,
            self.features.iloc[rows].reset_index(drop=True),
            self.labels[rows],
            self.flagged[rows],
            self.source,
        )


@dataclass
class FeatureSchema:
    dialect: str
    features: list[tuple[str, str]]  # (name, "numeric" | "categorical")
    columns: list[str]  # expanded column names
    onehot_groups: list[tuple[str, int, int]]  # (source feature, start, stop)
    categories: dict[str, list[str]]
    col_min: np.ndarray
    col_max: np.ndarray
    mutable_mask: np.ndarray

    @property
    def width(self) -> int:
        return len(self.columns)

    def to_dict(self) -> dict:
        return {
            "dialect": self.dialect,
            "features": [list(f) for f in self.features],
            "columns": list(self.columns),
            "onehot_groups": [list(g) for g in self.onehot_groups],
            "categories": {k: list(v) for k, v in self.categories.items()},
            "min": [float(v) for v in self.col_min],
            "max": [float(v) for v in self.col_max],
            "mutable_mask": [bool(v) for v in self.mutable_mask],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        return cls(
            d["dialect"],
            [tuple(f) for f in d["features"]],
            list(d["columns"]),
            [(g[0], int(g[1]), int(g[2])) for g in d["onehot_groups"]],
            {k: list(v) for k, v in d["categories"].items()},
            np.asarray(d["min"], dtype=np.float64),
            np.asarray(d["max"], dtype=np.float64),
            np.asarray(d["mutable_mask"], dtype=bool),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "FeatureSchema":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def restrict(self, cols: Sequence[int]) -> np.ndarray:
        """Mutability mask of a column subset."""
        return self.mutable_mask[np.asarray(cols, dtype=int)]


@dataclass
class LabeledDataset:
    X: np.ndarray
    y: np.ndarray
    schema: FeatureSchema | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise DataError("X must be 2-D with one label per row")

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def width(self) -> int:
        return self.X.shape[1]

    def subset(self, rows) -> "LabeledDataset":
        rows = np.asarray(rows)
        return LabeledDataset(self.X[rows], self.y[rows], self.schema)

    def digest(self) -> str:
        h = hashlib.sha256(np.ascontiguousarray(self.X, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.y, dtype="<i8").tobytes())
        return h.hexdigest()


@dataclass
class AdvDataset:
    X: np.ndarray
    y_adv: np.ndarray  # 0 = clean, 1 = adversarial
    provenance: np.ndarray  # "none" or the attack name
    traffic_labels: np.ndarray | None = None  # original benign/malicious label
    schema: FeatureSchema | None = field(default=None, repr=False)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y_adv = np.asarray(self.y_adv, dtype=np.int64)
        self.provenance = np.asarray(self.provenance, dtype=object)
        if not (self.X.shape[0] == self.y_adv.shape[0] == self.provenance.shape[0]):
            raise DataError("row count mismatch between X, labels and provenance")
        if np.any((self.y_adv == 0) != (self.provenance == "none")):
            raise DataError("clean rows must be exactly the rows with provenance 'none'")

    @property
    def y(self) -> np.ndarray:
        return self.y_adv

    def __len__(self) -> int:
        return self.X.shape[0]

    def provenance_counts(self) -> dict[str, int]:
        names, counts = np.unique(self.provenance.astype(str), return_counts=True)
        return {str(n): int(c) for n, c in zip(names, counts)}

    def columns(self, cols) -> "AdvDataset":
        return AdvDataset(self.X[:, np.asarray(cols)], self.y_adv, self.provenance,
                          self.traffic_labels, None)


# ------------------------------------------------------------------ load ---

def _field_counts(path: Path, skip_header: bool, expected: Sequence[int] | None):
    """Check every line's field count; returns the header fields if any."""
    header = None
    n_lines = 0
    with open(path, encoding="utf-8", errors="replace", newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            n_lines += 1
            n = line.count(",") + 1
            if skip_header and header is None:
                header = [c.strip() for c in line.split(",")]
                expected = (len(header),)
                continue
            if expected is not None and n not in expected:
                raise DataError(
                    f"{path}:{lineno}: expected {' or '.join(map(str, expected))} fields, got {n}"
                )
            if expected is None:
                expected = (n,)
    if n_lines == 0 or (skip_header and n_lines == 1):
        raise DataError(f"{path}: no records")
    return header


def _load_nslkdd(path: Path) -> RawRecords:
    n_feat = len(NSL_KDD_FEATURES)
    _field_counts(path, False, (n_feat + 1, n_feat + 2))
    df = pd.read_csv(path, header=None, skipinitialspace=True, dtype=str,
                     skip_blank_lines=True, keep_default_na=False)
    names = list(NSL_KDD_FEATURES) + ["label", "difficulty"][: df.shape[1] - n_feat]
    df.columns = names
    feats = df[list(NSL_KDD_FEATURES)].copy()
    for col in NSL_KDD_FEATURES:
        if col in NSL_KDD_CATEGORICAL:
            continue
        num = pd.to_numeric(feats[col], errors="coerce")
        bad = num.isna() & ~feats[col].str.lower().isin(["nan", "inf", "-inf", "infinity", "-infinity"])
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise DataError(f"{path}:{row + 1}: non-numeric value {feats[col].iloc[row]!r} in {col}")
        feats[col] = num.astype(np.float64)
    flagged = ~np.isfinite(feats.drop(columns=list(NSL_KDD_CATEGORICAL)).to_numpy(np.float64)).all(axis=1)
    labels = df["label"].str.strip().to_numpy(dtype=object)
    return RawRecords("nslkdd", feats, labels, flagged, str(path))


def _load_cic_file(path: Path) -> RawRecords:
    header = _field_counts(path, True, None)
    df = pd.read_csv(path, header=0, skipinitialspace=True, encoding="utf-8",
                     encoding_errors="replace", low_memory=False)
    df.columns = [c.strip() for c in df.columns]
    if CIC_LABEL not in df.columns:
        raise DataError(f"{path}: no {CIC_LABEL!r} column in header {header[:5]}...")
    labels = df.pop(CIC_LABEL).astype(str).str.strip().to_numpy(dtype=object)
    df = df.drop(columns=[c for c in CIC_DROP if c in df.columns])
    for col in df.columns:
        if df[col].dtype == object:
            df[col] = pd.to_numeric(df[col], errors="coerce")
    values = df.to_numpy(np.float64)
    flagged = ~np.isfinite(values).all(axis=1) | (labels == "nan")
    return RawRecords("cicids2017", df.astype(np.float64), labels, flagged, str(path))


def load_dataset(path, dialect: str) -> RawRecords:
    """Parse one dataset file (or, for CIC-IDS2017, a directory of CSVs)."""
    if dialect not in DIALECTS:
        raise DataError(f"unknown dialect {dialect!r}")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    if dialect == "nslkdd":
        return _load_nslkdd(path)
    files = sorted(path.glob("*.csv")) if path.is_dir() else [path]
    if not files:
        raise DataError(f"{path}: no CSV files")
    parts = [_load_cic_file(f) for f in files]
    cols = list(parts[0].features.columns)
    for p in parts[1:]:
        if list(p.features.columns) != cols:
            raise DataError(f"{p.source}: columns differ from {parts[0].source}")
    return RawRecords(
        "cicids2017",
        pd.concat([p.features for p in parts], ignore_index=True),
        np.concatenate([p.labels for p in parts]),
        np.concatenate([p.flagged for p in parts]),
        str(path),
    )


def sanitize(raw: RawRecords) -> RawRecords:
    """Drop rows that hold NaN or Infinity."""
    if not raw.flagged.any():
        return raw
    return raw.take(np.flatnonzero(~raw.flagged))


def stratified_split(raw: RawRecords, train_rows: int, test_rows: int, seed: int = 0):
    """Disjoint label-stratified train/test samples (binary label strata)."""
    y = binarize_labels(raw.labels, raw.dialect)
    n = len(raw)
    if train_rows + test_rows > n:
        scale = n / float(train_rows + test_rows)
        train_rows, test_rows = int(train_rows * scale), int(test_rows * scale)
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(idx.size)]
        frac = idx.size / n
        n_tr = int(round(train_rows * frac))
        n_te = int(round(test_rows * frac))
        train_idx.append(idx[:n_tr])
        test_idx.append(idx[n_tr:n_tr + n_te])
    return raw.take(np.sort(np.concatenate(train_idx))), raw.take(np.sort(np.concatenate(test_idx)))


# ------------------------------------------------------------ preprocess ---

def binarize_labels(labels, dialect: str) -> np.ndarray:
    benign = NSL_KDD_BENIGN if dialect == "nslkdd" else CIC_BENIGN
    lab = np.asarray(labels, dtype=object).astype(str)
    return (np.char.upper(lab) != benign.upper()).astype(np.int64)


def _categorical(dialect: str) -> tuple[str, ...]:
    return NSL_KDD_CATEGORICAL if dialect == "nslkdd" else ()


def _immutable(dialect: str) -> tuple[str, ...]:
    return NSL_KDD_CATEGORICAL if dialect == "nslkdd" else CIC_IMMUTABLE


def fit_schema(raw: RawRecords) -> FeatureSchema:
    cats = _categorical(raw.dialect)
    immutable = set(_immutable(raw.dialect))
    features, columns, groups, categories = [], [], [], {}
    mins, maxs, mutable = [], [], []
    for name in raw.features.columns:
        col = raw.features[name]
        if name in cats:
            values = sorted(set(col.astype(str)))
            categories[name] = values
            features.append((name, "categorical"))
            groups.append((name, len(columns), len(columns) + len(values)))
            columns.extend(f"{name}={v}" for v in values)
            mins.extend([0.0] * len(values))
            maxs.extend([1.0] * len(values))
            mutable.extend([name not in immutable] * len(values))
        else:
            v = col.to_numpy(np.float64)
            if not np.all(np.isfinite(v)):
                raise DataError(f"non-finite value in column {name!r}")
            features.append((name, "numeric"))
            columns.append(name)
            mins.append(float(v.min()))
            maxs.append(float(v.max()))
            mutable.append(name not in immutable)
    return FeatureSchema(raw.dialect, features, columns, groups, categories,
                         np.asarray(mins), np.asarray(maxs), np.asarray(mutable, dtype=bool))


def transform(raw: RawRecords, schema: FeatureSchema) -> np.ndarray:
    n = len(raw)
    X = np.zeros((n, schema.width), dtype=np.float64)
    start_of = {g[0]: g[1] for g in schema.onehot_groups}
    j = 0
    for name, kind in schema.features:
        if name not in raw.features.columns:
            raise DataError(f"missing feature column {name!r}")
        col = raw.features[name]
        if kind == "categorical":
            lookup = {v: i for i, v in enumerate(schema.categories[name])}
            codes = col.astype(str).map(lookup)
            hit = codes.notna().to_numpy()
            # unseen categories stay all-zero in their group
            X[np.flatnonzero(hit), start_of[name] + codes[hit].to_numpy(int)] = 1.0
            j += len(schema.categories[name])
        else:
            v = col.to_numpy(np.float64)
            if not np.all(np.isfinite(v)):
                raise DataError(f"non-finite value in column {name!r}")
            lo, hi = schema.col_min[j], schema.col_max[j]
            X[:, j] = 0.0 if hi <= lo else np.clip((v - lo) / (hi - lo), 0.0, 1.0)
            j += 1
    return X


def preprocess(raw: RawRecords, schema: FeatureSchema | None = None) -> LabeledDataset:
    """Encode and scale ``raw``; fits a new schema unless one is given.

    CIC-IDS2017 rows with NaN/Infinity are dropped first. NSL-KDD has no
    such rows in its published files, so any there are reported as errors.
    """
    if len(raw) == 0:
        raise DataError("no records to preprocess")
    if raw.dialect == "cicids2017":
        raw = sanitize(raw)
        if len(raw) == 0:
            raise DataError("every record was dropped during sanitisation")
    if schema is None:
        schema = fit_schema(raw)
    elif schema.dialect != raw.dialect:
        raise DataError(f"schema is for {schema.dialect}, records are {raw.dialect}")
    X = transform(raw, schema)
    return LabeledDataset(X, binarize_labels(raw.labels, raw.dialect), schema)


# -------------------------------------------------- adversarial datasets ---

def _shuffle(X, y, prov, traffic, seed):
    perm = np.random.default_rng(seed).permutation(X.shape[0])
    return X[perm], y[perm], prov[perm], None if traffic is None else traffic[perm]


def build_attack_specific(clean: LabeledDataset, adversarial, attack: str = "fgsm",
                          seed: int = 0) -> AdvDataset:
    """Clean rows (label 0) plus their perturbed copies (label 1), shuffled."""
    A = np.asarray(adversarial, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] == 0:
        raise DataError("adversarial matrix is empty")
    if A.shape[0] != len(clean):
        raise DataError(f"{A.shape[0]} adversarial rows for {len(clean)} clean rows")
    if A.shape[1] != clean.width:
        raise DataError("adversarial width differs from the clean data")
    n = len(clean)
    X = np.vstack([clean.X, A])
    y = np.concatenate([np.zeros(n, np.int64), np.ones(n, np.int64)])
    prov = np.array(["none"] * n + [attack] * n, dtype=object)
    traffic = np.concatenate([clean.y, clean.y])
    X, y, prov, traffic = _shuffle(X, y, prov, traffic, seed)
    return AdvDataset(X, y, prov, traffic, clean.schema)


def quarter_sizes(n: int, k: int = len(ATTACK_ORDER)) -> list[int]:
    """Split n into k parts differing by at most one; earlier parts get the extra rows."""
    base, extra = divmod(n, k)
    return [base + (1 if i < extra else 0) for i in range(k)]


def build_balanced(clean: LabeledDataset, per_attack: Mapping[str, np.ndarray],
                   seed: int = 0, traffic_labels: Mapping[str, np.ndarray] | None = None) -> AdvDataset:
    """Clean rows plus an equal-size adversarial half shared across the attacks.

    Attacks are taken in ``ATTACK_ORDER``; when the clean row count is not a
    multiple of four the first attacks in that order get one extra row.
    Rows are drawn from each pool without replacement.
    """
    missing = [a for a in ATTACK_ORDER if a not in per_attack]
    if missing:
        raise DataError(f"no adversarial pool for {', '.join(missing)}")
    n = len(clean)
    rng = np.random.default_rng(seed)
    parts, prov, traffic = [], [], []
    for attack, size in zip(ATTACK_ORDER, quarter_sizes(n)):
        pool = np.asarray(per_attack[attack], dtype=np.float64)
        if pool.ndim != 2 or pool.shape[0] < size or pool.shape[0] == 0:
            raise DataError(f"{attack}: needs {size} rows, pool has {0 if pool.ndim != 2 else pool.shape[0]}")
        if pool.shape[1] != clean.width:
            raise DataError(f"{attack}: width differs from the clean data")
        rows = np.sort(rng.choice(pool.shape[0], size=size, replace=False))
        parts.append(pool[rows])
        prov.extend([attack] * size)
        if traffic_labels is not None:
            traffic.append(np.asarray(traffic_labels[attack])[rows])
    X = np.vstack([clean.X] + parts)
    y = np.concatenate([np.zeros(n, np.int64), np.ones(n, np.int64)])
    prov_arr = np.array(["none"] * n + prov, dtype=object)
    tr = np.concatenate([clean.y] + traffic) if traffic_labels is not None else None
    X, y, prov_arr, tr = _shuffle(X, y, prov_arr, tr, seed + 1)
    return AdvDataset(X, y, prov_arr, tr, clean.schema)


# ---------------------------------------------------------- persistence ---

def schema_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".schema.json")


def save_dataset(ds: LabeledDataset | AdvDataset, path) -> None:
    """CSV (header row, lossless floats) plus a JSON schema sidecar when known."""
    path = Path(path)
    schema = ds.schema
    names = schema.columns if schema is not None else [f"f{i}" for i in range(ds.X.shape[1])]
    df = pd.DataFrame(ds.X, columns=names)
    if isinstance(ds, AdvDataset):
        df["y_adv"] = ds.y_adv
        df["provenance"] = ds.provenance.astype(str)
        if ds.traffic_labels is not None:
            df["traffic_label"] = np.asarray(ds.traffic_labels, dtype=np.int64)
    else:
        df["label"] = ds.y
    df.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    if schema is not None:
        schema.save(schema_path(path))


def load_saved(path) -> LabeledDataset | AdvDataset:
    path = Path(path)
    df = pd.read_csv(path, keep_default_na=False, float_precision="round_trip")
    sp = schema_path(path)
    schema = FeatureSchema.load(sp) if sp.exists() else None
    if "y_adv" in df.columns:
        traffic = df.pop("traffic_label").to_numpy() if "traffic_label" in df.columns else None
        prov = df.pop("provenance").to_numpy(dtype=object)
        y = df.pop("y_adv").to_numpy()
        return AdvDataset(df.to_numpy(np.float64), y, prov, traffic, schema)
    y = df.pop("label").to_numpy()
    return LabeledDataset(df.to_numpy(np.float64), y, schema)
