"""Dense-matrix helpers shared by every other module.

A "matrix" throughout this package is simply a 2-D :class:`numpy.ndarray`
of finite floats. Internal arithmetic is done in float64; persisted
artifacts store float32 (see :mod:`slim.container`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyTensor, NonFinite, RankOutOfRange, ShapeMismatch

__all__ = [
    "AbsHistogram",
    "as_matrix",
    "default_num_bins",
    "build_abs_histogram",
    "svd_truncated",
]

# Bounds on the automatic histogram resolution: one bin per thousand
# elements, never below 512 bins and never above 20000.
MIN_BINS = 512
MAX_BINS = 20000
ELEMENTS_PER_BIN = 1000


def as_matrix(w, name: str = "matrix", allow_empty: bool = False) -> np.ndarray:
    """Validate and normalize input to a 2-D float64 array.

    Args:
        w: Array-like input; 2-D.
        name: Label used in error messages.
        allow_empty: Permit zero-element matrices.

    Returns:
        A float64 ndarray view or copy of ``w``.

    Raises:
        ShapeMismatch: If the input is not 2-D.
        EmptyTensor: If the input has zero elements and ``allow_empty`` is False.
        NonFinite: If any entry is NaN or infinite.
    """
    arr = np.asarray(w, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeMismatch(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.size == 0 and not allow_empty:
        raise EmptyTensor(f"{name} has zero elements")
    if arr.size and not np.isfinite(arr).all():
        raise NonFinite(f"{name} contains NaN or Inf")
    return arr


def as_vector(v, name: str = "vector") -> np.ndarray:
    """Like :func:`as_matrix` but for 1-D float data."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeMismatch(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size and not np.isfinite(arr).all():
        raise NonFinite(f"{name} contains NaN or Inf")
    return arr


@dataclass(frozen=True)
class AbsHistogram:
    """Histogram of absolute values over [0, max_abs].

    ``counts[k]`` holds the number of source elements whose magnitude falls
    in bin k of ``num_bins`` equal-width bins spanning [0, ``max_abs``].
    Bins are closed on the right, so a magnitude exactly equal to
    ``max_abs`` lands in the last bin and 0.0 lands in bin 0.

    Attributes:
        max_abs: Largest magnitude of the source matrix (0.0 only for an
            all-zero source).
        num_bins: Number of bins.
        counts: Integer occupancy per bin; sums to ``total``.
        total: Element count of the source matrix.
    """

    max_abs: float
    num_bins: int
    counts: np.ndarray
    total: int

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        object.__setattr__(self, "counts", counts)
        if self.num_bins < 1 or counts.shape != (self.num_bins,):
            raise ShapeMismatch(
                f"counts shape {counts.shape} does not match num_bins {self.num_bins}"
            )
        if self.max_abs < 0 or not np.isfinite(self.max_abs):
            raise NonFinite(f"max_abs must be finite and >= 0, got {self.max_abs}")
        if int(counts.sum()) != self.total or self.total <= 0:
            raise ShapeMismatch("histogram counts do not sum to total")

    def bin_centers(self) -> np.ndarray:
        """Midpoints of the bins, length ``num_bins``."""
        width = self.max_abs / self.num_bins
        return (np.arange(self.num_bins, dtype=np.float64) + 0.5) * width

    def probabilities(self) -> np.ndarray:
        """Empirical probability mass per bin."""
        return self.counts.astype(np.float64) / float(self.total)


def default_num_bins(num_elements: int) -> int:
    """Resolution rule for automatic histograms: ~1 bin per 1000 elements,
    clamped to [512, 20000]."""
    return max(MIN_BINS, min(num_elements // ELEMENTS_PER_BIN, MAX_BINS))


def build_abs_histogram(w, num_bins: int | None = None) -> AbsHistogram:
    """Histogram the magnitudes of a matrix.

    Args:
        w: Source matrix, any shape with at least one element.
        num_bins: Bin count; defaults to :func:`default_num_bins` of the
            element count.

    Returns:
        An :class:`AbsHistogram` over [0, max|w|]. A magnitude of exactly
        max|w| is counted in the last bin.

    Raises:
        EmptyTensor: If ``w`` has no elements.
    """
    arr = as_matrix(w, "w")
    if num_bins is None:
        num_bins = default_num_bins(arr.size)
    if num_bins < 1:
        raise ShapeMismatch(f"num_bins must be >= 1, got {num_bins}")
    mags = np.abs(arr).ravel()
    max_abs = float(mags.max())
    if max_abs == 0.0:
        counts = np.zeros(num_bins, dtype=np.int64)
        counts[0] = mags.size
        return AbsHistogram(0.0, num_bins, counts, mags.size)
    # Right-closed bins: bin k covers ((k * M / B), ((k+1) * M / B)] with
    # zero assigned to bin 0, so the maximum always lands in the last bin.
    idx = np.ceil(mags * (num_bins / max_abs)).astype(np.int64) - 1
    np.clip(idx, 0, num_bins - 1, out=idx)
    counts = np.bincount(idx, minlength=num_bins)
    return AbsHistogram(max_abs, num_bins, counts, mags.size)


def svd_truncated(m, r: int) -> tuple[np.ndarray, np.ndarray]:
    """Best rank-r factorization in the Frobenius norm.

    Returns ``(left, right)`` with shapes (rows, r) and (r, cols) such that
    ``left @ right`` is a Frobenius-optimal rank-<=r approximation of ``m``.
    Singular values are folded into the left factor; the right factor has
    orthonormal rows. Output is deterministic: the sign of each component
    is fixed so the first nonzero entry of each right-factor row is
    non-negative.

    Args:
        m: Matrix to approximate.
        r: Target rank, 1 <= r <= min(rows, cols).

    Raises:
        RankOutOfRange: If ``r`` is outside the valid range.
        NonFinite: If ``m`` has NaN/Inf entries.
    """
    arr = as_matrix(m, "m")
    rows, cols = arr.shape
    if not (1 <= r <= min(rows, cols)):
        raise RankOutOfRange(f"rank {r} not in [1, {min(rows, cols)}]")
    u, s, vt = np.linalg.svd(arr, full_matrices=False)
    u = u[:, :r]
    s = s[:r]
    vt = vt[:r, :]
    # Sign canonicalization: flip each component so the first nonzero
    # entry of its right-factor row is positive.
    for k in range(r):
        row = vt[k]
        nz = np.flatnonzero(row)
        if nz.size and row[nz[0]] < 0:
            vt[k] = -row
            u[:, k] = -u[:, k]
    left = u * s
    right = vt
    return left, right
