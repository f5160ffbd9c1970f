"""Dense kernels with explicit numerical contracts.

Everything here is a pure function on float64 arrays: cosine similarity with
graceful zero-norm handling, thin SVD, (cross-)covariance, and the Gini
concentration statistic used on singular-value spectra.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SvdConvergenceError, ValidationError

ZERO_NORM_EPS = 1e-300


def cosine_flagged(u, v) -> tuple[float, bool]:
    """Cosine similarity clamped to [-1, 1], plus a degenerate-input flag.

    A vector with norm below ZERO_NORM_EPS makes the pair degenerate: the
    result is 0.0 and the flag is True.  Degenerate pairs are a data-quality
    signal, not an error; callers that aggregate cosines count them.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu < ZERO_NORM_EPS or nv < ZERO_NORM_EPS:
        return 0.0, True
    c = float(np.dot(u, v) / (nu * nv))
    return min(1.0, max(-1.0, c)), False


def cosine(u, v) -> float:
    return cosine_flagged(u, v)[0]


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD: u and v have orthonormal columns, sigma is non-increasing."""

    u: np.ndarray
    sigma: np.ndarray
    v: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.v.T

    def truncate(self, r: int) -> "SvdResult":
        if r < 0 or r > self.sigma.size:
            raise ValidationError(f"truncation rank {r} outside [0, {self.sigma.size}]")
        return SvdResult(self.u[:, :r], self.sigma[:r], self.v[:, :r])


def svd(matrix) -> SvdResult:
    """Thin SVD of a finite real matrix."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or min(m.shape) < 1:
        raise ValidationError(f"svd expects a non-empty 2-D matrix, got shape {m.shape}")
    if not np.isfinite(m).all():
        raise ValidationError("svd input contains non-finite entries")
    try:
        u, s, vh = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise SvdConvergenceError(
            f"SVD did not converge on a {m.shape[0]}x{m.shape[1]} matrix: {exc}"
        ) from exc
    return SvdResult(u, s, vh.T)


def covariance(a, b, center: bool = True) -> np.ndarray:
    """(1/m) * A~^T B~ with optional column-mean centering of both sides."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValidationError("covariance expects 2-D matrices")
    if a.shape[0] != b.shape[0]:
        raise ValidationError(f"row-count mismatch: {a.shape[0]} vs {b.shape[0]}")
    m = a.shape[0]
    if center:
        if m < 2:
            raise ValidationError("centered covariance needs at least 2 rows")
        a = a - a.mean(axis=0)
        b = b - b.mean(axis=0)
    return (a.T @ b) / m


def gini(values) -> float:
    """Mean absolute difference over 2*mean: 0 for uniform, (k-1)/k for one-hot.

    gini(x) = sum_ij |x_i - x_j| / (2 k^2 mean(x)) for non-negative x.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValidationError("gini of an empty vector")
    if (x < 0).any():
        raise ValidationError("gini requires non-negative values")
    total = float(x.sum())
    if total <= 0.0:
        raise ValidationError("gini of an all-zero vector is undefined")
    k = x.size
    # O(k log k) via the sorted identity; equals the pairwise double sum.
    xs = np.sort(x)
    ranks = np.arange(1, k + 1, dtype=np.float64)
    pairwise = 2.0 * float(((2.0 * ranks - k - 1.0) * xs).sum())
    return pairwise / (2.0 * k * total)
