"""Synthetic datasets, per-variable standardization, and CSV persistence.

Data matrices are (n_variables x n_samples). CSV files are the transpose:
one row per sample, one column per variable, with a header of variable
names and full round-trip decimal formatting.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractViolation, CsvParseError, DegenerateVariableError
from .linalg import Rng


@dataclass(frozen=True)
class NormStats:
    means: np.ndarray
    scales: np.ndarray


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    names: tuple
    norm: NormStats | None = None

    @property
    def n_vars(self) -> int:
        return self.X.shape[0]

    @property
    def n_samples(self) -> int:
        return self.X.shape[1]


def _check_samples(n_samples):
    if n_samples < 2:
        raise ContractViolation("need at least 2 samples")


def gen_two_var(n_samples: int, rng: Rng, half_range: float = 1.0) -> Dataset:
    """Two coupled variables: x1 uniform on [-half_range, half_range),
    x2 = tanh(3*x1) exactly (no noise)."""
    _check_samples(n_samples)
    x1 = rng.uniform(-half_range, half_range, n_samples)
    x2 = np.tanh(3.0 * x1)
    return Dataset(np.vstack([x1, x2]), ("x1", "x2"))


def gen_five_var(n_samples: int, rng: Rng, noise_var: float = 0.1,
                 half_range: float = 1.0) -> Dataset:
    """Five variables with two nonlinear constraints plus Gaussian noise:
    x4 = sin(3*x1) + e4 and x5 = x2 - tan(0.5*x3) + e5, e ~ N(0, noise_var)."""
    _check_samples(n_samples)
    if noise_var < 0.0:
        raise ContractViolation("noise_var must be nonnegative")
    x1 = rng.uniform(-half_range, half_range, n_samples)
    x2 = rng.uniform(-half_range, half_range, n_samples)
    x3 = rng.uniform(-half_range, half_range, n_samples)
    std = np.sqrt(noise_var)
    x4 = np.sin(3.0 * x1) + rng.normal(0.0, std, n_samples)
    x5 = x2 - np.tan(0.5 * x3) + rng.normal(0.0, std, n_samples)
    return Dataset(np.vstack([x1, x2, x3, x4, x5]),
                   ("x1", "x2", "x3", "x4", "x5"))


def normalize(d: Dataset) -> Dataset:
    """Standardize each variable to sample mean 0 and sample variance 1 (N-1
    denominator). The resulting dataset carries the stats for denormalize."""
    means = d.X.mean(axis=1)
    scales = d.X.std(axis=1, ddof=1)
    for i, s in enumerate(scales):
        if s <= 0.0 or not np.isfinite(s):
            raise DegenerateVariableError(
                f"variable {d.names[i]!r} (row {i}) has zero sample variance"
            )
    Xn = (d.X - means[:, None]) / scales[:, None]
    return Dataset(Xn, d.names, NormStats(means, scales))


def denormalize(d: Dataset) -> Dataset:
    if d.norm is None:
        raise ContractViolation("dataset carries no normalization stats")
    X = d.X * d.norm.scales[:, None] + d.norm.means[:, None]
    return Dataset(X, d.names, None)


def save_csv(d: Dataset, path) -> None:
    """Write one row per sample; floats use repr so load_csv round-trips exactly."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(d.names)
        for j in range(d.n_samples):
            writer.writerow([repr(float(v)) for v in d.X[:, j]])


def load_csv(path) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError("file is empty", line=1) from None
        names = tuple(name.strip() for name in header)
        if not names or any(not n for n in names):
            raise CsvParseError("header row has empty variable names", line=1)
        columns = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(names):
                raise CsvParseError(
                    f"expected {len(names)} cells, found {len(row)}", line=line_no
                )
            try:
                columns.append([float(cell) for cell in row])
            except ValueError as exc:
                raise CsvParseError(f"non-numeric cell: {exc}", line=line_no) from None
    if not columns:
        raise CsvParseError("no data rows", line=2)
    X = np.asarray(columns, dtype=float).T
    return Dataset(X, names)


def with_matrix(d: Dataset, X: np.ndarray) -> Dataset:
    """Same labels/stats, different values; used by the experiment harness."""
    return replace(d, X=X)
