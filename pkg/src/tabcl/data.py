"""Tabular stream data model: ingest, preprocessing, chunking, synthetic drift."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

MISSING_TOKENS = frozenset({"", "nan", "infinity", "-infinity", "+infinity", "inf", "-inf"})

UNSW_COLUMNS = (
    "srcip", "sport", "dstip", "dsport", "proto", "state", "dur", "sbytes",
    "dbytes", "sttl", "dttl", "sloss", "dloss", "service", "Sload", "Dload",
    "Spkts", "Dpkts", "swin", "dwin", "stcpb", "dtcpb", "smeansz", "dmeansz",
    "trans_depth", "res_bdy_len", "Sjit", "Djit", "Stime", "Ltime", "Sintpkt",
    "Dintpkt", "tcprtt", "synack", "ackdat", "is_sm_ips_ports", "ct_state_ttl",
    "ct_flw_http_mthd", "is_ftp_login", "ct_ftp_cmd", "ct_srv_src", "ct_srv_dst",
    "ct_dst_ltm", "ct_src_ltm", "ct_src_dport_ltm", "ct_dst_sport_ltm",
    "ct_dst_src_ltm", "attack_cat", "Label",
)
UNSW_IP_COLUMNS = ("srcip", "dstip")
UNSW_CATEGORICAL = ("sport", "dsport", "proto", "state", "service", "ct_ftp_cmd", "attack_cat")

CICIDS_CONSTANT_COLUMNS = (
    "Bwd PSH Flags",
    "Fwd URG Flags",
    "Bwd URG Flags",
    "CWE Flag Count",
    "Fwd Avg Bytes/Bulk",
    "Fwd Avg Packets/Bulk",
    "Fwd Avg Bulk Rate",
    "Bwd Avg Bytes/Bulk",
    "Bwd Avg Packets/Bulk",
    "Bwd Avg Bulk Rate",
)
CICIDS_BENIGN = "BENIGN"


class IngestError(ValueError):
    """A raw table could not be converted into a feature matrix."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.row = row
        self.column = column


@dataclass(frozen=True)
class FeatureMatrix:
    """Dense N x d float64 feature table with aligned binary labels."""

    values: np.ndarray
    labels: np.ndarray
    columns: tuple[str, ...] = ()

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if values.ndim != 2:
            raise ValueError(f"values must be 2-D, got shape {values.shape}")
        if labels.shape != (values.shape[0],):
            raise ValueError(f"labels length {labels.shape} does not match {values.shape[0]} rows")
        if not np.all(np.isfinite(values)):
            raise ValueError("values contain missing or non-finite entries")
        if labels.size and not np.all((labels == 0) | (labels == 1)):
            raise ValueError("labels must be binary (0 = benign, 1 = attack)")
        columns = tuple(self.columns) or tuple(f"f{i}" for i in range(values.shape[1]))
        if len(columns) != values.shape[1]:
            raise ValueError(f"{len(columns)} column names for {values.shape[1]} features")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "columns", columns)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def features(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.rows

    def slice(self, start: int, stop: int) -> "FeatureMatrix":
        return FeatureMatrix(self.values[start:stop], self.labels[start:stop], self.columns)

    @staticmethod
    def concat(parts: Sequence["FeatureMatrix"]) -> "FeatureMatrix":
        if not parts:
            raise ValueError("nothing to concatenate")
        return FeatureMatrix(
            np.concatenate([p.values for p in parts]),
            np.concatenate([p.labels for p in parts]),
            parts[0].columns,
        )


@dataclass(frozen=True)
class Experience:
    train: FeatureMatrix
    test: FeatureMatrix

    @property
    def rows(self) -> int:
        return self.train.rows + self.test.rows


@dataclass(frozen=True)
class ExperienceStream:
    """Ordered experiences, each split sequentially into train then test."""

    chunks: tuple[Experience, ...]
    chunk_size: int
    oversized_chunk: bool = False

    def __post_init__(self):
        object.__setattr__(self, "chunks", tuple(self.chunks))
        dims = {c.train.features for c in self.chunks} | {c.test.features for c in self.chunks}
        if len(dims) > 1:
            raise ValueError(f"experiences disagree on feature count: {sorted(dims)}")

    @property
    def total_experiences(self) -> int:
        return len(self.chunks)

    @property
    def features(self) -> int:
        return self.chunks[0].train.features

    def __len__(self) -> int:
        return len(self.chunks)

    def __iter__(self):
        return iter(self.chunks)

    def __getitem__(self, t: int) -> Experience:
        return self.chunks[t]


@dataclass
class StreamingLabelEncoder:
    """Category -> integer code, assigned in first-seen order and never reassigned."""

    mapping: dict[str, int] = field(default_factory=dict)

    @property
    def next_code(self) -> int:
        return len(self.mapping)

    def encode(self, values: Iterable[str]) -> np.ndarray:
        mapping = self.mapping
        out = []
        for v in values:
            code = mapping.get(v)
            if code is None:
                code = mapping[v] = len(mapping)
            out.append(code)
        return np.asarray(out, dtype=np.float64)


# --------------------------------------------------------------------------- ingest


def read_table(path: str | Path, header: bool = True, names: Sequence[str] | None = None) -> pd.DataFrame:
    """Read a CSV as strings; cleaning and typing happen in the preprocessors."""
    df = pd.read_csv(
        path,
        header=0 if header else None,
        names=list(names) if names is not None else None,
        dtype=str,
        keep_default_na=False,
        encoding="utf-8",
        low_memory=False,
    )
    df.columns = [str(c).strip() for c in df.columns]
    return df


def _missing_mask(col: pd.Series) -> np.ndarray:
    return col.astype(str).str.strip().str.lower().isin(MISSING_TOKENS).to_numpy()


def _to_numeric(col: pd.Series, name: str, row_offset: int = 0) -> np.ndarray:
    """Parse a string column; missing tokens become NaN, anything else unparsable raises."""
    missing = _missing_mask(col)
    parsed = pd.to_numeric(col.where(~missing, None), errors="coerce").to_numpy(dtype=np.float64)
    bad = np.isnan(parsed) & ~missing
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise IngestError(f"non-numeric value {col.iloc[i]!r}", row=row_offset + i, column=name)
    parsed[missing] = np.nan
    return parsed


def _binary_labels(col: pd.Series, name: str, benign: str | None = None) -> np.ndarray:
    text = col.astype(str).str.strip()
    if benign is not None:
        return (text.str.upper() != benign.upper()).to_numpy(dtype=np.int64)
    labels = pd.to_numeric(text, errors="coerce").to_numpy()
    bad = ~np.isin(labels, (0, 1))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise IngestError(f"label {col.iloc[i]!r} is not 0/1", row=i, column=name)
    return labels.astype(np.int64)


def split_ip(col: pd.Series, name: str) -> np.ndarray:
    """Dotted-quad strings -> (n, 4) octet matrix."""
    parts = col.astype(str).str.strip().str.split(".", expand=True, regex=False)
    if parts.shape[1] != 4:
        for i, v in enumerate(col):
            if len(str(v).strip().split(".")) != 4:
                raise IngestError(f"malformed IP address {v!r}", row=i, column=name)
    octets = parts.apply(pd.to_numeric, errors="coerce").to_numpy(dtype=np.float64)
    bad = np.isnan(octets).any(axis=1) | (octets < 0).any(axis=1) | (octets > 255).any(axis=1)
    bad |= (octets != np.floor(octets)).any(axis=1)
    bad |= parts.isna().any(axis=1).to_numpy()
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise IngestError(f"malformed IP address {col.iloc[i]!r}", row=i, column=name)
    return octets


def preprocess_unsw(
    raw: pd.DataFrame,
    label_column: str = "Label",
    encoders: dict[str, StreamingLabelEncoder] | None = None,
    keep_attack_cat: bool = False,
) -> FeatureMatrix:
    """UNSW-NB15 table -> 53 numeric features.

    IP columns expand in place into four octet columns; the categorical columns
    are label-encoded with `encoders` (created if missing, so callers can carry
    codes across files). Blank categoricals are a category of their own; rows
    with missing numeric cells are dropped.

    `attack_cat` names the attack family and is blank exactly for benign rows,
    so it is left out unless `keep_attack_cat` is set (which gives 54 features).
    """
    encoders = {} if encoders is None else encoders
    raw = raw.rename(columns=lambda c: str(c).strip())
    missing_cols = [c for c in UNSW_COLUMNS if c not in raw.columns and c != "Label"
                    and (keep_attack_cat or c != "attack_cat")]
    if missing_cols:
        raise IngestError(f"missing UNSW-NB15 columns {missing_cols}")
    if label_column not in raw.columns:
        raise IngestError("label column not found", column=label_column)

    blocks: list[np.ndarray] = []
    names: list[str] = []
    for name in UNSW_COLUMNS:
        if name == "Label" or (name == "attack_cat" and not keep_attack_cat):
            continue
        col = raw[name]
        if name in UNSW_IP_COLUMNS:
            blocks.append(split_ip(col, name))
            names.extend(f"{name}_{k}" for k in range(4))
        elif name in UNSW_CATEGORICAL:
            enc = encoders.setdefault(name, StreamingLabelEncoder())
            blocks.append(enc.encode(col.astype(str).str.strip())[:, None])
            names.append(name)
        else:
            blocks.append(_to_numeric(col, name)[:, None])
            names.append(name)

    values = np.hstack(blocks)
    labels = _binary_labels(raw[label_column], label_column)
    keep = np.isfinite(values).all(axis=1)
    if not keep.all():
        log.info("dropping %d rows with missing values", int((~keep).sum()))
    return FeatureMatrix(values[keep], labels[keep], tuple(names))


def preprocess_cicids(
    raw: pd.DataFrame,
    label_column: str = "Label",
    drop_columns: Sequence[str] = CICIDS_CONSTANT_COLUMNS,
    drop_constant: bool = False,
) -> FeatureMatrix:
    """CICIDS-2017 table -> numeric features.

    Drops the known-constant columns (and, with `drop_constant`, any other
    column that is constant on this table) and every row holding a null, NaN
    or infinite value. On the reference dataset this leaves 68 features.
    """
    raw = raw.rename(columns=lambda c: str(c).strip())
    if label_column not in raw.columns:
        raise IngestError("label column not found", column=label_column)
    feature_cols = [c for c in raw.columns if c != label_column and c not in set(drop_columns)]

    values = np.column_stack([_to_numeric(raw[c], c) for c in feature_cols]) if feature_cols else np.empty((len(raw), 0))
    labels = _binary_labels(raw[label_column], label_column, benign=CICIDS_BENIGN)
    keep = np.isfinite(values).all(axis=1)
    if not keep.all():
        log.info("dropping %d rows with null or infinite values", int((~keep).sum()))
    values, labels = values[keep], labels[keep]

    if drop_constant and len(values):
        varying = values.max(axis=0) > values.min(axis=0)
        values = values[:, varying]
        feature_cols = [c for c, v in zip(feature_cols, varying) if v]
    return FeatureMatrix(values, labels, tuple(feature_cols))


def load_dataset(kind: str, path: str | Path, label_column: str = "Label", header: bool = True) -> FeatureMatrix:
    if kind == "unsw":
        raw = read_table(path, header=header, names=None if header else UNSW_COLUMNS)
        return preprocess_unsw(raw, label_column=label_column)
    if kind == "cicids":
        return preprocess_cicids(read_table(path, header=True), label_column=label_column)
    raise ValueError(f"unknown dataset kind {kind!r}")


# --------------------------------------------------------------------------- chunking


def split_sizes(rows: int, split_ratio: float) -> int:
    """Number of training rows in a chunk; always leaves >= 1 train and >= 1 test row."""
    return min(max(int(np.floor(split_ratio * rows)), 1), rows - 1)


def chunk_stream(
    data: FeatureMatrix,
    chunk_size: int,
    split_ratio: float = 0.8,
    drop_partial: bool = False,
) -> ExperienceStream:
    """Cut `data` into contiguous chunks, each split sequentially into train/test.

    A trailing partial chunk is kept if it has at least two rows, unless
    `drop_partial` is set.
    """
    if data.rows == 0:
        raise ValueError("cannot chunk an empty feature matrix")
    if chunk_size < 2:
        raise ValueError(f"chunk_size must be >= 2, got {chunk_size}")
    if not 0.0 < split_ratio < 1.0:
        raise ValueError(f"split_ratio must lie in (0, 1), got {split_ratio}")
    if data.rows < 2:
        raise ValueError("need at least two rows to form a train/test split")

    oversized = chunk_size > data.rows
    if oversized:
        log.warning("chunk_size %d exceeds %d rows; using a single chunk", chunk_size, data.rows)
        chunk_size = data.rows

    chunks = []
    for start in range(0, data.rows, chunk_size):
        stop = min(start + chunk_size, data.rows)
        n = stop - start
        if n < chunk_size and (drop_partial or n < 2):
            break
        cut = start + split_sizes(n, split_ratio)
        chunks.append(Experience(data.slice(start, cut), data.slice(cut, stop)))
    return ExperienceStream(tuple(chunks), chunk_size, oversized_chunk=oversized)


# --------------------------------------------------------------------------- synthetic drift


@dataclass(frozen=True)
class DriftConfig:
    """Synthetic stream with an abrupt multiplicative range shift.

    Experiences are 0-indexed; from `scale_jump_at` onward every feature is
    multiplied by `scale_factor`. `class_balance` is the attack fraction.
    `separation` is the distance between class centres in units of the
    within-class standard deviation, and `heavy_tail` the fraction of rows
    whose features are inflated by a log-normal burst factor.
    """

    n_experiences: int = 6
    rows_per_experience: int = 20_000
    n_features: int = 20
    scale_jump_at: int = 3
    scale_factor: float = 100.0
    class_balance: float = 0.3
    seed: int = 0
    separation: float = 1.5
    heavy_tail: float = 0.0

    def __post_init__(self):
        if self.n_experiences < 1 or self.rows_per_experience < 2 or self.n_features < 1:
            raise ValueError("n_experiences >= 1, rows_per_experience >= 2 and n_features >= 1 are required")
        if not self.scale_factor > 0:
            raise ValueError(f"scale_factor must be > 0, got {self.scale_factor}")
        if not 0 <= self.scale_jump_at < self.n_experiences:
            raise ValueError(f"scale_jump_at must lie in [0, {self.n_experiences}), got {self.scale_jump_at}")
        if not 0.0 < self.class_balance < 1.0:
            raise ValueError(f"class_balance must lie in (0, 1), got {self.class_balance}")
        if not 0.0 <= self.heavy_tail < 1.0:
            raise ValueError(f"heavy_tail must lie in [0, 1), got {self.heavy_tail}")


def generate_drift_matrix(cfg: DriftConfig) -> FeatureMatrix:
    """All experiences of the synthetic stream as one contiguous matrix."""
    rng = np.random.default_rng(cfg.seed)
    d = cfg.n_features
    # heterogeneous per-feature magnitudes, as in network-flow tables
    base_scale = 10.0 ** rng.uniform(0.0, 3.0, size=d)
    benign_centre = rng.uniform(0.5, 3.0, size=d)
    direction = rng.normal(size=d)
    direction /= np.linalg.norm(direction)
    attack_centre = benign_centre + cfg.separation * direction * np.sqrt(d)

    n = cfg.rows_per_experience
    values, labels = [], []
    for t in range(cfg.n_experiences):
        y = (rng.random(n) < cfg.class_balance).astype(np.int64)
        centre = np.where(y[:, None] == 1, attack_centre, benign_centre)
        # rectified: flow statistics are non-negative and bottom out at zero
        x = np.maximum(centre + rng.normal(size=(n, d)), 0.0)
        if cfg.heavy_tail > 0:
            burst = rng.random(n) < cfg.heavy_tail
            x[burst] *= rng.lognormal(mean=1.0, sigma=1.0, size=(int(burst.sum()), 1))
        x *= base_scale
        if t >= cfg.scale_jump_at:
            x *= cfg.scale_factor
        values.append(x)
        labels.append(y)
    return FeatureMatrix(np.vstack(values), np.concatenate(labels))


def generate_drift_stream(cfg: DriftConfig, split_ratio: float = 0.8) -> ExperienceStream:
    return chunk_stream(generate_drift_matrix(cfg), cfg.rows_per_experience, split_ratio)
