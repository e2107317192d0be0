"""Loading, missingness handling, z-score normalization and feature selection
for wide proteomic expression matrices.

Matrices are held samples-as-rows in memory. On disk the canonical layout is
a delimited text file whose header row names the proteins and whose first
column holds sample ids; the transposed layout (proteins as rows, the usual
omics export) is supported via ``proteins_as_rows=True``.
"""

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

MISSING_MARKERS = {"", "na", "nan"}


class DataError(ValueError):
    """Raised for malformed input files or degenerate matrices."""


def _check_unique(ids, kind):
    seen = set()
    for x in ids:
        if x in seen:
            raise DataError(f"duplicate {kind} id {x!r}")
        seen.add(x)


@dataclass
class ExpressionMatrix:
    """m samples x n proteins of raw abundances; NaN cells mark missing values."""

    sample_ids: list
    protein_ids: list
    values: np.ndarray
    hour_labels: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        m, n = self.values.shape
        if len(self.sample_ids) != m or len(self.protein_ids) != n:
            raise DataError(
                f"id/value shape mismatch: {len(self.sample_ids)} sample ids, "
                f"{len(self.protein_ids)} protein ids, values {m}x{n}"
            )
        if m < 2 or n < 2:
            raise DataError(f"matrix must keep at least 2 samples and 2 proteins, got {m}x{n}")
        _check_unique(self.sample_ids, "sample")
        _check_unique(self.protein_ids, "protein")
        if self.hour_labels is not None:
            self.hour_labels = np.asarray(self.hour_labels, dtype=float)
            if self.hour_labels.shape != (m,):
                raise DataError(f"hour_labels length {self.hour_labels.shape} != m={m}")
            if np.any(~np.isfinite(self.hour_labels)) or np.any(
                (self.hour_labels < 0) | (self.hour_labels >= 24)
            ):
                raise DataError("hour labels must lie in [0, 24)")

    @property
    def n_samples(self):
        return self.values.shape[0]

    @property
    def n_proteins(self):
        return self.values.shape[1]


@dataclass
class NormalizedMatrix:
    """Z-scored matrix: every protein column has mean 0 and population std 1.

    ``raw_mean``/``raw_std`` store the per-protein back-transform to the
    original abundance scale (raw = std * value + mean); ``raw_std**2`` is the
    pre-normalization variance used by variance-based feature selection.
    """

    sample_ids: list
    protein_ids: list
    values: np.ndarray
    raw_mean: np.ndarray
    raw_std: np.ndarray
    hour_labels: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.raw_mean = np.asarray(self.raw_mean, dtype=float)
        self.raw_std = np.asarray(self.raw_std, dtype=float)

    @property
    def n_samples(self):
        return self.values.shape[0]

    @property
    def n_proteins(self):
        return self.values.shape[1]


@dataclass
class MissingnessPolicy:
    max_missing_fraction: float = 0.0
    impute_with_protein_mean: bool = True

    def __post_init__(self):
        if not 0.0 <= self.max_missing_fraction <= 1.0:
            raise DataError(f"max_missing_fraction must be in [0,1], got {self.max_missing_fraction}")


def _parse_cell(text, line_no, col_no):
    stripped = text.strip()
    if stripped.lower() in MISSING_MARKERS:
        return math.nan
    try:
        return float(stripped)
    except ValueError:
        raise DataError(
            f"cannot parse cell {text!r} at line {line_no}, column {col_no}"
        ) from None


def load_matrix(path, delimiter="\t", proteins_as_rows=False, labels_path=None):
    """Read a delimited matrix file into an ExpressionMatrix.

    The header row names the columns and the first column of every data row is
    the row identifier. With ``proteins_as_rows`` the rows are proteins and the
    matrix is transposed after parsing so samples end up as rows either way.
    ``labels_path`` optionally points at a two-column sample_id/hour file.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        col_ids = [c.strip() for c in header[1:]]
        if not col_ids:
            raise DataError(f"{path}: header row has no data columns")
        row_ids = []
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: ragged row at line {line_no} "
                    f"({len(row)} cells, expected {len(header)})"
                )
            row_ids.append(row[0].strip())
            rows.append([_parse_cell(c, line_no, j + 2) for j, c in enumerate(row[1:])])
    values = np.array(rows, dtype=float)
    if proteins_as_rows:
        sample_ids, protein_ids, values = col_ids, row_ids, values.T
    else:
        sample_ids, protein_ids = row_ids, col_ids
    hour_labels = None
    if labels_path is not None:
        by_sample = load_labels(labels_path)
        missing = [s for s in sample_ids if s not in by_sample]
        if missing:
            raise DataError(f"labels file lacks hours for samples: {', '.join(missing)}")
        hour_labels = np.array([by_sample[s] for s in sample_ids])
    return ExpressionMatrix(sample_ids, protein_ids, values, hour_labels)


def load_labels(path):
    """Read a two-column sample_id/hour file into a dict."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for line_no, row in enumerate(csv.reader(fh, delimiter="\t"), start=1):
            if not row or row[0].strip().lower() == "sample_id":
                continue
            if len(row) < 2:
                raise DataError(f"{path}: line {line_no} needs sample_id<TAB>hour")
            sample = row[0].strip()
            hour = _parse_cell(row[1], line_no, 2)
            if not 0 <= hour < 24:
                raise DataError(f"{path}: hour {hour} for {sample} not in [0,24)")
            out[sample] = hour
    return out


def write_matrix(matrix, path, delimiter="\t"):
    """Write samples-as-rows matrix text; NaN cells become 'NA'."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(delimiter.join(["sample_id"] + list(matrix.protein_ids)) + "\n")
        for i, sid in enumerate(matrix.sample_ids):
            cells = [
                "NA" if math.isnan(v) else format(v, ".10g") for v in matrix.values[i]
            ]
            fh.write(delimiter.join([sid] + cells) + "\n")


def apply_missingness(matrix, policy=None):
    """Drop proteins with too many missing cells, impute the remainder.

    Proteins whose missing fraction exceeds ``policy.max_missing_fraction``
    are removed. Remaining gaps are filled with the protein's observed mean
    (or the protein is dropped when imputation is disabled).
    """
    policy = policy or MissingnessPolicy()
    values = matrix.values
    miss = np.isnan(values)
    frac = miss.mean(axis=0)
    keep = frac <= policy.max_missing_fraction
    if not policy.impute_with_protein_mean:
        keep &= frac == 0.0
    if not np.any(keep):
        raise DataError("missingness filter dropped every protein")
    values = values[:, keep].copy()
    protein_ids = [p for p, k in zip(matrix.protein_ids, keep) if k]
    gaps = np.isnan(values)
    if gaps.any():
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            col_means = np.nanmean(values, axis=0)
        rows, cols = np.nonzero(gaps)
        values[rows, cols] = col_means[cols]
    return ExpressionMatrix(matrix.sample_ids, protein_ids, values, matrix.hour_labels)


def zscore(matrix):
    """Center and scale each protein to mean 0, population (divisor m) std 1.

    Zero-variance proteins carry no phase information and are dropped with a
    warning. Accepts an already-normalized matrix, in which case the stored
    raw-scale back-transform is composed rather than reset (idempotence).
    """
    values = matrix.values
    if np.isnan(values).any():
        raise DataError("zscore requires a matrix without missing entries")
    mean = values.mean(axis=0)
    std = values.std(axis=0)  # population: divisor m
    flat = std == 0.0
    if flat.any():
        dropped = [p for p, z in zip(matrix.protein_ids, flat) if z]
        warnings.warn(
            f"dropping {len(dropped)} zero-variance protein(s): {', '.join(dropped)}"
        )
        keep = ~flat
        values, mean, std = values[:, keep], mean[keep], std[keep]
        protein_ids = [p for p, k in zip(matrix.protein_ids, keep) if k]
    else:
        keep = slice(None)
        protein_ids = list(matrix.protein_ids)
    if len(protein_ids) < 2:
        raise DataError("fewer than 2 proteins left after dropping zero-variance columns")
    normalized = (values - mean) / std
    if isinstance(matrix, NormalizedMatrix):
        # raw = old_std * value + old_mean, value = new_std * z + new_mean
        raw_mean = matrix.raw_mean[keep] + matrix.raw_std[keep] * mean
        raw_std = matrix.raw_std[keep] * std
    else:
        raw_mean, raw_std = mean, std
    return NormalizedMatrix(
        matrix.sample_ids, protein_ids, normalized, raw_mean, raw_std, matrix.hour_labels
    )


def _subset(matrix, keep_idx):
    keep_idx = np.asarray(keep_idx)
    sub = NormalizedMatrix(
        matrix.sample_ids,
        [matrix.protein_ids[i] for i in keep_idx],
        matrix.values[:, keep_idx],
        matrix.raw_mean[keep_idx],
        matrix.raw_std[keep_idx],
        matrix.hour_labels,
    )
    return zscore(sub)


def select_features(matrix, method="top_variance", target_n=2000, seed=0):
    """Reduce a very wide normalized matrix to roughly ``target_n`` proteins.

    ``top_variance`` keeps the target_n proteins with the largest
    pre-normalization variance (ties broken by ascending protein id).
    ``kmeans_cluster`` groups protein profiles into ceil(n/target_n) clusters
    (k-means++ seeding, Lloyd iterations, 100-iteration cap, tol 1e-6) and
    keeps whole clusters by decreasing mean member variance until at least
    target_n proteins are retained. Output is re-z-scored.
    """
    n = matrix.n_proteins
    if target_n > n:
        raise DataError(f"target_n={target_n} exceeds protein count {n}")
    if target_n == n:
        return _subset(matrix, np.arange(n))
    variance = matrix.raw_std**2
    if method == "top_variance":
        order = sorted(range(n), key=lambda i: (-variance[i], matrix.protein_ids[i]))
        keep = sorted(order[:target_n])
        return _subset(matrix, keep)
    if method == "kmeans_cluster":
        from sklearn.cluster import KMeans

        k = math.ceil(n / target_n)
        km = KMeans(
            n_clusters=k,
            init="k-means++",
            n_init=1,
            max_iter=100,
            tol=1e-6,
            random_state=seed,
        ).fit(matrix.values.T)
        labels = km.labels_
        scores = [variance[labels == c].mean() for c in range(k)]
        kept = []
        for c in sorted(range(k), key=lambda c: -scores[c]):
            kept.extend(np.nonzero(labels == c)[0])
            if len(kept) >= target_n:
                break
        return _subset(matrix, sorted(kept))
    raise DataError(f"unknown feature selection method {method!r}")
