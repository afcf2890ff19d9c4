"""Dataset ingestion, validation, and cutoff normalization.

The :class:`Dataset` container holds the outcome, the cutoff-normalized
score, an (n, d) covariate matrix, and optional cluster ids.  The treatment
indicator is never stored: it is derived as ``x >= 0`` (a unit exactly at
the cutoff belongs to the treated side).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import ConfigError, EmptyDataError, ParseError, SchemaError

_MISSING_TOKENS = {"", "na", "nan", "n/a", "null", "none", "."}

#: Warn when a side of the cutoff has fewer observations than this.
SMALL_SIDE_THRESHOLD = 10

#: Warn when the left/right count ratio in the narrowest decile around the
#: cutoff exceeds this value (cheap manipulation red flag, not a density test).
DENSITY_RATIO_THRESHOLD = 4.0


@dataclass(frozen=True)
class Dataset:
    """Immutable RD dataset with cutoff-normalized score.

    Parameters
    ----------
    y : ndarray, shape (n,)
        Outcome variable.
    x : ndarray, shape (n,)
        Score, already normalized so the cutoff sits at 0.
    z : ndarray, shape (n, d)
        Additional covariates; ``d`` may be 0.
    cluster : ndarray of int, shape (n,), optional
        Cluster id per unit; each unit belongs to exactly one cluster.
    cutoff_original : float
        The cutoff on the original score scale (before normalization).
    n_dropped : int
        Rows removed by listwise deletion during loading.
    """

    y: np.ndarray
    x: np.ndarray
    z: np.ndarray
    cluster: np.ndarray | None = None
    cutoff_original: float = 0.0
    n_dropped: int = 0
    column_names: tuple = field(default=(), compare=False)

    def __post_init__(self):
        y = np.ascontiguousarray(np.asarray(self.y, dtype=float))
        x = np.ascontiguousarray(np.asarray(self.x, dtype=float))
        z = np.asarray(self.z, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        z = np.ascontiguousarray(z)
        if y.ndim != 1 or x.ndim != 1 or z.ndim != 2:
            raise ConfigError("y and x must be 1-d, z must be 2-d")
        n = y.shape[0]
        if n < 1:
            raise EmptyDataError("dataset has no rows")
        if x.shape[0] != n or z.shape[0] != n:
            raise ConfigError("y, x, z must have the same number of rows")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
            raise ConfigError("non-finite values in y, x, or z")
        if not np.isfinite(self.cutoff_original):
            raise ConfigError("cutoff must be finite")
        cluster = self.cluster
        if cluster is not None:
            cluster = np.ascontiguousarray(np.asarray(cluster, dtype=np.int64))
            if cluster.shape != (n,):
                raise ConfigError("cluster ids must be a length-n integer vector")
        names = self.column_names or self._default_names(z.shape[1], cluster is not None)
        for arr in (y, x, z) + ((cluster,) if cluster is not None else ()):
            arr.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "cluster", cluster)
        object.__setattr__(self, "column_names", tuple(names))

    @staticmethod
    def _default_names(d: int, has_cluster: bool) -> tuple:
        names = ["y", "x"] + [f"z{k + 1}" for k in range(d)]
        if has_cluster:
            names.append("cluster")
        return tuple(names)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return self.z.shape[1]

    @property
    def treat(self) -> np.ndarray:
        """Derived treatment indicator 1(x >= 0)."""
        return (self.x >= 0.0).astype(float)

    @property
    def n_left(self) -> int:
        return int(np.sum(self.x < 0.0))

    @property
    def n_right(self) -> int:
        return int(np.sum(self.x >= 0.0))

    @property
    def is_one_sided(self) -> bool:
        return self.n_left == 0 or self.n_right == 0

    @property
    def x_support(self) -> tuple:
        return (float(self.x.min()), float(self.x.max()))

    @property
    def covariate_names(self) -> tuple:
        return tuple(self.column_names[2:2 + self.d])


@dataclass(frozen=True)
class DiagnosticsReport:
    """Outcome of :func:`validate`: counts, support, and soft warnings."""

    n_left: int
    n_right: int
    d: int
    warnings: tuple
    x_support: tuple

    def to_dict(self) -> dict:
        return {
            "n_left": self.n_left,
            "n_right": self.n_right,
            "d": self.d,
            "warnings": list(self.warnings),
            "x_support": list(self.x_support),
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def load_csv(path: str, schema: dict, cutoff: float) -> Dataset:
    """Load an RD dataset from a CSV file.

    Parameters
    ----------
    path : str
        CSV file with a header row, '.' decimal point, UTF-8.
    schema : dict
        Column-name map with keys ``outcome``, ``score``, and optionally
        ``covariates`` (list of names) and ``cluster``.
    cutoff : float
        Cutoff on the raw score scale; the stored score is ``raw - cutoff``.

    Returns
    -------
    Dataset
        Rows with any missing value in a used column are dropped; the count
        is recorded in ``n_dropped``.

    Raises
    ------
    SchemaError
        A named column is absent.
    ParseError
        A non-missing cell in a numeric column is not a number.
    EmptyDataError
        No usable rows remain.
    """
    if not np.isfinite(cutoff):
        raise ConfigError("cutoff must be finite")
    outcome = schema["outcome"]
    score = schema["score"]
    covariates = list(schema.get("covariates", []) or [])
    cluster_col = schema.get("cluster")

    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    used = [outcome, score] + covariates + ([cluster_col] if cluster_col else [])
    for col in used:
        if col not in frame.columns:
            raise SchemaError(f"column {col!r} not found in {path}")

    numeric_cols = [outcome, score] + covariates
    parsed = {}
    missing = np.zeros(len(frame), dtype=bool)
    for col in numeric_cols:
        cell = frame[col].str.strip()
        is_missing = cell.str.lower().isin(_MISSING_TOKENS).to_numpy()
        values = np.full(len(frame), np.nan)
        good = np.flatnonzero(~is_missing)
        tokens = cell.to_numpy()[good]
        try:
            # numpy's parser is correctly rounded, so 17-digit writes round-trip
            values[good] = np.asarray(tokens, dtype=float)
        except ValueError:
            for row, token in zip(good, tokens):
                try:
                    float(token)
                except ValueError:
                    raise ParseError(
                        f"non-numeric value {token!r} in column {col!r}, "
                        f"data row {int(row) + 1}"
                    ) from None
            raise
        parsed[col] = values
        missing |= is_missing

    if cluster_col:
        cell = frame[cluster_col].str.strip()
        is_missing = cell.str.lower().isin(_MISSING_TOKENS)
        missing |= is_missing.to_numpy()
        cluster_labels = cell.to_numpy()

    keep = ~missing
    n_dropped = int(missing.sum())
    if not keep.any():
        raise EmptyDataError(f"no usable rows in {path} after dropping missing values")

    y = parsed[outcome][keep]
    x = parsed[score][keep] - cutoff
    z = (
        np.column_stack([parsed[c][keep] for c in covariates])
        if covariates
        else np.empty((keep.sum(), 0))
    )
    cluster = None
    if cluster_col:
        _, cluster = np.unique(cluster_labels[keep], return_inverse=True)
    names = (outcome, score, *covariates) + ((cluster_col,) if cluster_col else ())
    return Dataset(
        y=y,
        x=x,
        z=z,
        cluster=cluster,
        cutoff_original=float(cutoff),
        n_dropped=n_dropped,
        column_names=names,
    )


def write_csv(data: Dataset, path: str) -> None:
    """Write a Dataset back to CSV on the original score scale.

    Floats are written with 17 significant digits so that
    ``load_csv(write_csv(d))`` round-trips to at least 15 significant digits.
    """
    columns = {
        data.column_names[0]: data.y,
        data.column_names[1]: data.x + data.cutoff_original,
    }
    for k, name in enumerate(data.covariate_names):
        columns[name] = data.z[:, k]
    if data.cluster is not None:
        columns[data.column_names[-1]] = data.cluster
    frame = pd.DataFrame(columns)
    frame.to_csv(path, index=False, float_format="%.17g")


def validate(data: Dataset) -> DiagnosticsReport:
    """Run cheap diagnostics on a loaded dataset.

    Emits warnings only; hard failures are raised by :func:`load_csv` and by
    the estimators themselves.  Checks: per-side counts, constant or
    collinear covariate columns, and a heuristic density-imbalance flag in
    the narrowest decile of observations around the cutoff.
    """
    warnings = []
    n_left, n_right = data.n_left, data.n_right
    if data.is_one_sided:
        warnings.append("one-sided data: all observations on one side of the cutoff")
    else:
        for count, side in ((n_left, "left"), (n_right, "right")):
            if count < SMALL_SIDE_THRESHOLD:
                warnings.append(f"only {count} observations {side} of cutoff")

    if data.d > 0:
        for k, name in enumerate(data.covariate_names):
            if np.ptp(data.z[:, k]) == 0.0:
                warnings.append(f"covariate collinear with intercept: {name!r} is constant")
        design = np.column_stack([np.ones(data.n), data.z])
        scale = np.max(np.abs(design), axis=0)
        scale[scale == 0.0] = 1.0
        rank = np.linalg.matrix_rank(design / scale)
        if rank < 1 + data.d:
            warnings.append("covariate block rank-deficient: some columns are collinear")

    if not data.is_one_sided and data.n >= 10:
        m = max(int(np.ceil(data.n / 10)), 2)
        nearest = np.argsort(np.abs(data.x), kind="stable")[:m]
        left = int(np.sum(data.x[nearest] < 0.0))
        right = m - left
        lo, hi = min(left, right), max(left, right)
        if lo == 0 or hi / lo > DENSITY_RATIO_THRESHOLD:
            ratio = "inf" if lo == 0 else f"{hi / lo:.1f}"
            warnings.append(
                f"density imbalance near cutoff: {left} left vs {right} right in the "
                f"nearest decile (ratio {ratio} > {DENSITY_RATIO_THRESHOLD:g})"
            )

    return DiagnosticsReport(
        n_left=n_left,
        n_right=n_right,
        d=data.d,
        warnings=tuple(warnings),
        x_support=data.x_support,
    )
