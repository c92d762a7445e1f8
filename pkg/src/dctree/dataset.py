"""Datasets, honest sample splitting, CSV ingestion and noise injection."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass

import numpy as np

DEFAULT_SPLIT_MIN = 50
DEFAULT_CORR_LIMIT = 5


class DataError(ValueError):
    """Input data or file contents violate a contract."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Dataset:
    """Immutable covariates X, outcome y, binary treatment w, optional truth.

    All arrays are validated and frozen at construction; missing values are
    rejected outright so every downstream model sees complete data.
    """

    x: np.ndarray
    y: np.ndarray
    w: np.ndarray
    feature_names: tuple[str, ...]
    tau_true: np.ndarray | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim != 2:
            raise DataError(f"x must be 2-dimensional, got shape {x.shape}")
        n, p = x.shape
        y = np.asarray(self.y, dtype=np.float64)
        w = np.asarray(self.w, dtype=np.float64)
        if y.shape != (n,):
            raise DataError(f"y has length {y.shape}, expected ({n},)")
        if w.shape != (n,):
            raise DataError(f"w has length {w.shape}, expected ({n},)")
        if not np.all(np.isfinite(x)):
            raise DataError("x contains missing or non-finite values")
        if not np.all(np.isfinite(y)):
            raise DataError("y contains missing or non-finite values")
        if not np.all((w == 0.0) | (w == 1.0)):
            bad = np.unique(w[(w != 0.0) & (w != 1.0)])
            raise DataError(f"treatment w must contain only 0 and 1, found {bad.tolist()}")
        names = tuple(str(s) for s in self.feature_names)
        if len(names) != p:
            raise DataError(f"{len(names)} feature names for {p} columns")
        if len(set(names)) != len(names):
            dupes = sorted({s for s in names if names.count(s) > 1})
            raise DataError(f"duplicate feature names: {dupes}")
        tau = self.tau_true
        if tau is not None:
            tau = np.asarray(tau, dtype=np.float64)
            if tau.shape != (n,):
                raise DataError(f"tau_true has length {tau.shape}, expected ({n},)")
            if not np.all(np.isfinite(tau)):
                raise DataError("tau_true contains missing or non-finite values")
            object.__setattr__(self, "tau_true", _readonly(tau))
        object.__setattr__(self, "x", _readonly(x))
        object.__setattr__(self, "y", _readonly(y))
        object.__setattr__(self, "w", _readonly(w))
        object.__setattr__(self, "feature_names", names)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def n_treated(self) -> int:
        return int(self.w.sum())

    @property
    def n_control(self) -> int:
        return self.n - self.n_treated

    def subset(self, rows: np.ndarray) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(
            x=self.x[rows],
            y=self.y[rows],
            w=self.w[rows],
            feature_names=self.feature_names,
            tau_true=None if self.tau_true is None else self.tau_true[rows],
        )

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(str((self.n, self.p)).encode())
        h.update(self.x.tobytes())
        h.update(self.y.tobytes())
        h.update(self.w.tobytes())
        return h.hexdigest()

    def require_both_arms(self):
        if self.n_treated == 0 or self.n_control == 0:
            raise DataError(
                f"both treatment arms required, got {self.n_treated} treated "
                f"and {self.n_control} control rows"
            )


@dataclass(frozen=True)
class ColumnMapping:
    """Names the outcome/treatment/truth columns of a CSV file.

    covariates is optional; when omitted every remaining column is used, in
    alphabetical order. When given, the listed order is kept.
    """

    outcome: str
    treatment: str
    tau_true: str | None = None
    covariates: tuple[str, ...] | None = None


@dataclass(frozen=True)
class SampleSplit:
    """Disjoint fit/est/test row index sets produced by split_honest."""

    fit_indices: np.ndarray
    est_indices: np.ndarray
    test_indices: np.ndarray
    seed: int

    def __post_init__(self):
        for name in ("fit_indices", "est_indices", "test_indices"):
            object.__setattr__(self, name, _readonly(np.asarray(getattr(self, name), dtype=np.int64)))

    @property
    def train_indices(self) -> np.ndarray:
        return np.sort(np.concatenate([self.fit_indices, self.est_indices]))


def _read_rows(path: str) -> tuple[list[str], list[list[str]]]:
    try:
        fh = open(path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"file not found: {path}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"empty CSV file: {path}") from None
        rows = [row for row in reader if row]
    if len(set(header)) != len(header):
        raise DataError(f"duplicate column names in {path}")
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise DataError(f"row {i + 2} of {path} has {len(row)} cells, expected {len(header)}")
    return header, rows


def _check_no_missing(col: list[str], name: str):
    for i, cell in enumerate(col):
        if cell.strip() == "":
            raise DataError(f"missing value at row {i + 2}, column '{name}'")


def _parse_numeric(col: list[str]) -> np.ndarray | None:
    """Parse a column as floats, or return None if any cell is non-numeric."""
    try:
        return np.array([float(cell) for cell in col], dtype=np.float64)
    except ValueError:
        return None


def load_csv(path: str, mapping: ColumnMapping) -> Dataset:
    """Load a headered CSV into a Dataset.

    String-valued covariate columns are one-hot encoded into dummies named
    "<col>=<level>" with levels in sorted order. Any empty cell is an error
    naming the offending row and column.
    """
    header, rows = _read_rows(path)
    columns = {name: [row[j] for row in rows] for j, name in enumerate(header)}

    for required in (mapping.outcome, mapping.treatment):
        if required not in columns:
            raise DataError(f"mapped column '{required}' not found in {path}")
    if mapping.tau_true is not None and mapping.tau_true not in columns:
        raise DataError(f"mapped column '{mapping.tau_true}' not found in {path}")

    special = {mapping.outcome, mapping.treatment}
    if mapping.tau_true is not None:
        special.add(mapping.tau_true)
    if mapping.covariates is not None:
        cov_names = list(mapping.covariates)
        for name in cov_names:
            if name not in columns:
                raise DataError(f"mapped covariate '{name}' not found in {path}")
            if name in special:
                raise DataError(f"column '{name}' mapped as both covariate and outcome/treatment")
    else:
        cov_names = sorted(name for name in header if name not in special)

    _check_no_missing(columns[mapping.outcome], mapping.outcome)
    y = _parse_numeric(columns[mapping.outcome])
    if y is None:
        raise DataError(f"outcome column '{mapping.outcome}' contains non-numeric values")

    _check_no_missing(columns[mapping.treatment], mapping.treatment)
    w = _parse_numeric(columns[mapping.treatment])
    if w is None or not np.all((w == 0.0) | (w == 1.0)):
        raise DataError(f"treatment column '{mapping.treatment}' must contain only 0 and 1")

    tau = None
    if mapping.tau_true is not None:
        _check_no_missing(columns[mapping.tau_true], mapping.tau_true)
        tau = _parse_numeric(columns[mapping.tau_true])
        if tau is None:
            raise DataError(f"ground-truth column '{mapping.tau_true}' contains non-numeric values")

    feat_cols: list[np.ndarray] = []
    feat_names: list[str] = []
    for name in cov_names:
        raw = columns[name]
        _check_no_missing(raw, name)
        numeric = _parse_numeric(raw)
        if numeric is not None:
            feat_cols.append(numeric)
            feat_names.append(name)
        else:
            levels = sorted(set(raw))
            for level in levels:
                feat_cols.append(np.array([1.0 if cell == level else 0.0 for cell in raw]))
                feat_names.append(f"{name}={level}")

    if not feat_cols:
        raise DataError(f"no covariate columns found in {path}")
    x = np.column_stack(feat_cols)
    return Dataset(x=x, y=y, w=w, feature_names=tuple(feat_names), tau_true=tau)


def write_csv(d: Dataset, path: str):
    """Write a Dataset so that load_csv reads back an identical Dataset.

    Floats are written with repr, which round-trips float64 exactly.
    """
    reserved = {"y", "w", "tau_true"}
    clash = reserved & set(d.feature_names)
    if clash:
        raise DataError(f"feature names clash with reserved CSV columns: {sorted(clash)}")
    header = list(d.feature_names) + ["y", "w"]
    if d.tau_true is not None:
        header.append("tau_true")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(d.n):
            row = [repr(float(v)) for v in d.x[i]]
            row.append(repr(float(d.y[i])))
            row.append(repr(float(d.w[i])))
            if d.tau_true is not None:
                row.append(repr(float(d.tau_true[i])))
            writer.writerow(row)


def csv_mapping_for(d: Dataset) -> ColumnMapping:
    """The mapping that reads back a file produced by write_csv."""
    return ColumnMapping(
        outcome="y",
        treatment="w",
        tau_true="tau_true" if d.tau_true is not None else None,
        covariates=d.feature_names,
    )


def split_honest(
    d: Dataset,
    fractions: tuple[float, float, float],
    seed: int,
    min_size: int = DEFAULT_SPLIT_MIN,
) -> SampleSplit:
    """Partition rows into fit/est/test sets by a seeded shuffle.

    Sizes follow largest-remainder rounding of the fractions. The fit and est
    sets must each reach min_size; the test fraction may be zero.
    """
    if len(fractions) != 3:
        raise DataError(f"need 3 fractions, got {len(fractions)}")
    f_fit, f_est, f_test = (float(v) for v in fractions)
    if f_fit <= 0 or f_est <= 0 or f_test < 0:
        raise DataError(f"invalid split fractions {fractions}: fit and est must be positive")
    if abs(f_fit + f_est + f_test - 1.0) > 1e-9:
        raise DataError(f"split fractions {fractions} do not sum to 1")

    n = d.n
    exact = np.array([f_fit, f_est, f_test]) * n
    sizes = np.floor(exact).astype(np.int64)
    rest = exact - sizes
    for k in np.argsort(-rest, kind="stable")[: n - int(sizes.sum())]:
        sizes[k] += 1
    if sizes[0] < min_size or sizes[1] < min_size:
        raise DataError(
            f"split sizes {sizes.tolist()} below minimum {min_size} for fit/est "
            f"(n={n}, fractions={fractions})"
        )

    perm = np.random.default_rng(seed).permutation(n)
    a, b = int(sizes[0]), int(sizes[0] + sizes[1])
    return SampleSplit(
        fit_indices=np.sort(perm[:a]),
        est_indices=np.sort(perm[a:b]),
        test_indices=np.sort(perm[b:]),
        seed=seed,
    )


def inject_noise(
    d: Dataset,
    n_noise: int = 20,
    n_corr: int = 10,
    rho: float = 0.9,
    seed: int = 0,
    corr_limit: int = DEFAULT_CORR_LIMIT,
) -> Dataset:
    """Append pure-noise columns and noisy correlated copies of real columns.

    Each correlated column is rho * standardize(z) + sqrt(1 - rho^2) * eps for
    a seeded-randomly chosen source column z. Outcome, treatment and truth are
    untouched, as are all original columns.
    """
    if d.n == 0:
        raise DataError("cannot inject noise into an empty dataset")
    n_noise = int(n_noise)
    n_corr = int(n_corr)
    if n_noise < 0 or n_corr < 0:
        raise DataError("n_noise and n_corr must be non-negative")
    if n_noise == 0 and n_corr == 0:
        raise DataError("inject_noise with n_noise=0 and n_corr=0 would be a no-op")
    if not (0.0 < rho < 1.0):
        raise DataError(f"rho must lie strictly inside (0, 1), got {rho}")
    if n_corr > corr_limit * d.p:
        raise DataError(f"n_corr={n_corr} exceeds {corr_limit} * p = {corr_limit * d.p}")

    rng = np.random.default_rng(seed)
    stds = d.x.std(axis=0)
    usable = np.flatnonzero(stds > 0)
    if n_corr > 0 and usable.size == 0:
        raise DataError("no non-constant columns available as correlation sources")

    cols = [d.x]
    names = list(d.feature_names)
    if n_noise > 0:
        cols.append(rng.standard_normal((d.n, n_noise)))
        names.extend(f"noise_{k}" for k in range(n_noise))
    for k in range(n_corr):
        j = int(usable[rng.integers(usable.size)])
        z = (d.x[:, j] - d.x[:, j].mean()) / stds[j]
        eps = rng.standard_normal(d.n)
        cols.append((rho * z + np.sqrt(1.0 - rho * rho) * eps)[:, None])
        names.append(f"corr_{k}_of_{d.feature_names[j]}")

    return Dataset(
        x=np.hstack(cols),
        y=d.y,
        w=d.w,
        feature_names=tuple(names),
        tau_true=d.tau_true,
    )
