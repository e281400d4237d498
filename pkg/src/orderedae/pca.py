"""PCA baseline: fit, transform/reconstruct, and linear-relation extraction.

Latent variables of a full (m = n) fit that show near-zero sample variance
correspond to linear constraints among the input variables; the residual
components assemble into P_r with P_r^T (x - mean) = 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import ContractViolation
from .linalg import svd


@dataclass(frozen=True)
class PCAModel:
    components: np.ndarray        # (n, m), orthonormal columns
    latent_variances: np.ndarray  # (m,), nonincreasing
    mean: np.ndarray              # (n,)


@dataclass(frozen=True)
class LinearRelation:
    components: np.ndarray        # (n, n_residual); empty second axis if none
    mean: np.ndarray
    residual_indices: tuple       # latent indices with variance < eps
    names: tuple | None = None

    @property
    def is_empty(self) -> bool:
        return self.components.shape[1] == 0

    @property
    def n_relations(self) -> int:
        return self.components.shape[1]


def fit_pca(d: Dataset, m: int) -> PCAModel:
    n, n_samples = d.X.shape
    if not 1 <= m <= n:
        raise ContractViolation(f"m must be in [1, {n}], got {m}")
    if n_samples < 2:
        raise ContractViolation("need at least 2 samples")
    mean = d.X.mean(axis=1)
    centered = d.X - mean[:, None]
    u, s, _ = svd(centered)
    comps = u[:, :m].copy()
    variances = (s[:m] ** 2) / (n_samples - 1)
    # Sign convention: make each column's largest-magnitude entry positive.
    for k in range(comps.shape[1]):
        idx = np.argmax(np.abs(comps[:, k]))
        if comps[idx, k] < 0:
            comps[:, k] = -comps[:, k]
    return PCAModel(comps, variances, mean)


def pca_transform(mdl: PCAModel, x):
    x = np.asarray(x, dtype=float)
    mean = mdl.mean[:, None] if x.ndim == 2 else mdl.mean
    return mdl.components.T @ (x - mean)


def pca_reconstruct(mdl: PCAModel, y):
    y = np.asarray(y, dtype=float)
    xhat = mdl.components @ y
    return xhat + (mdl.mean[:, None] if xhat.ndim == 2 else mdl.mean)


def extract_linear_model(mdl: PCAModel, eps: float = 1e-4,
                         names=None) -> LinearRelation:
    """Collect components whose latent variance is below eps.

    Requires a full fit (m = n). An all-significant spectrum yields an empty
    relation (is_empty flag) rather than an error.
    """
    n, m = mdl.components.shape
    if m != n:
        raise ContractViolation("linear-model extraction requires a full fit (m = n)")
    residual = [i for i in range(m) if mdl.latent_variances[i] < eps]
    comps = mdl.components[:, residual] if residual else np.empty((n, 0))
    return LinearRelation(comps, mdl.mean.copy(), tuple(residual),
                          tuple(names) if names is not None else None)


def linear_relation_residual(rel: LinearRelation, x):
    """Evaluate P_r^T (x - mean); zero for points satisfying the relation."""
    x = np.asarray(x, dtype=float)
    mean = rel.mean[:, None] if x.ndim == 2 else rel.mean
    return rel.components.T @ (x - mean)


def predict_from_relation(rel: LinearRelation, X, solve_indices):
    """Solve P_r^T (x - mean) = 0 for the chosen variables, given the rest.

    When the relation count differs from the unknown count the system is
    solved in the least-squares sense. X is (n, N); returns
    (len(solve_indices), N).
    """
    if rel.is_empty:
        raise ContractViolation("relation is empty; nothing to solve")
    X = np.asarray(X, dtype=float)
    n = rel.components.shape[0]
    solve_indices = list(solve_indices)
    known = [i for i in range(n) if i not in solve_indices]
    a = rel.components.T  # (k, n)
    a_s = a[:, solve_indices]
    a_k = a[:, known]
    rhs = (a @ rel.mean)[:, None] - a_k @ X[known]
    if a_s.shape[0] == a_s.shape[1]:
        try:
            return np.linalg.solve(a_s, rhs)
        except np.linalg.LinAlgError:
            pass
    return np.linalg.lstsq(a_s, rhs, rcond=None)[0]


def relation_to_dict(rel: LinearRelation) -> dict:
    return {
        "form": "linear",
        "components": rel.components.tolist(),
        "mean": rel.mean.tolist(),
        "residual_indices": list(rel.residual_indices),
        "names": list(rel.names) if rel.names is not None else None,
    }


def save_linear_relation(path, rel: LinearRelation) -> None:
    with open(path, "w") as fh:
        json.dump(relation_to_dict(rel), fh, indent=2)


def load_linear_relation(path) -> LinearRelation:
    with open(path) as fh:
        d = json.load(fh)
    names = tuple(d["names"]) if d.get("names") else None
    return LinearRelation(
        np.asarray(d["components"], dtype=float),
        np.asarray(d["mean"], dtype=float),
        tuple(d["residual_indices"]),
        names,
    )
