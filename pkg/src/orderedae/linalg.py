"""Dense matrix helpers, elementwise activations, and the seeded RNG.

Everything is float64 numpy in row-major (C) layout. The wrappers exist to
pin down the numerical contracts the rest of the package relies on: shape
checking on products, a decomposition with sorted singular values, and a
counter-based random stream (Philox) that is reproducible across platforms.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractViolation, NumericalError

TANH = "tanh"
LINEAR = "linear"
ACTIVATIONS = (TANH, LINEAR)


def as_matrix(a) -> np.ndarray:
    """Coerce to a 2-D float64 array without copying when possible."""
    m = np.asarray(a, dtype=float)
    if m.ndim != 2:
        raise ContractViolation(f"expected a 2-D matrix, got ndim={m.ndim}")
    return m


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ContractViolation(
            f"matmul dimension mismatch: {a.shape} by {b.shape}"
        )
    return a @ b


def frobenius_sq(a) -> float:
    """Sum of squared entries, equal to trace(A^T A)."""
    a = np.asarray(a, dtype=float)
    return float(np.sum(a * a))


def activate(kind: str, z):
    """Apply the elementwise activation to z (linear is the identity)."""
    if kind == TANH:
        return np.tanh(z)
    if kind == LINEAR:
        return np.asarray(z, dtype=float)
    raise ContractViolation(f"unknown activation {kind!r}")


def activate_deriv(kind: str, z):
    """Elementwise derivative of the activation evaluated at z."""
    if kind == TANH:
        t = np.tanh(z)
        return 1.0 - t * t
    if kind == LINEAR:
        return np.ones_like(np.asarray(z, dtype=float))
    raise ContractViolation(f"unknown activation {kind!r}")


def svd(a):
    """Thin SVD: a == U @ diag(S) @ V.T with S nonincreasing and U, V orthonormal."""
    a = as_matrix(a)
    if not np.all(np.isfinite(a)):
        raise ContractViolation("svd requires finite entries")
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"svd did not converge: {exc}") from exc
    return u, s, vt.T


class Rng:
    """Seeded random stream backed by the Philox counter-based generator.

    Identical seeds produce identical streams on every platform, which the
    experiment harness depends on for byte-reproducible outputs.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def uniform(self, low=-1.0, high=1.0, size=None):
        """Samples from the half-open interval [low, high)."""
        return self._gen.uniform(low, high, size)

    def normal(self, mean=0.0, std=1.0, size=None):
        return self._gen.normal(mean, std, size)
