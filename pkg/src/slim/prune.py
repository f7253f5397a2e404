"""Saliency scores and sparsity masks.

Scores are either plain magnitudes or magnitudes weighted by the l2 norm
of each input channel's calibration activations. Masks come in two
flavors: unstructured (keep a fixed fraction per output column) and n:m
semi-structured (keep exactly n of every m consecutive weights along the
input dimension, the layout hardware sparse kernels accelerate).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calibration import CalibrationStats
from .errors import ConfigInvalid, IndivisibleDimension, ShapeMismatch
from .tensor import as_matrix

__all__ = [
    "SparsityPattern",
    "SparsityMask",
    "wanda_scores",
    "magnitude_scores",
    "unstructured_mask",
    "semistructured_mask",
    "apply_mask",
]


@dataclass(frozen=True)
class SparsityPattern:
    """Target sparsity structure.

    ``kind`` is "unstructured" (drop ``ratio`` of each output column) or
    "semistructured" (keep ``n`` of every ``m`` along the input dim).
    """

    kind: str
    ratio: float | None = None
    n: int | None = None
    m: int | None = None

    def __post_init__(self):
        if self.kind == "unstructured":
            if self.ratio is None or not (0.0 <= self.ratio < 1.0):
                raise ConfigInvalid(f"ratio must be in [0, 1), got {self.ratio}")
            if self.n is not None or self.m is not None:
                raise ConfigInvalid("unstructured pattern takes no n/m")
        elif self.kind == "semistructured":
            if self.n is None or self.m is None or not (0 < self.n < self.m):
                raise ConfigInvalid(f"semi-structured needs 0 < n < m, got {self.n}:{self.m}")
            if self.ratio is not None:
                raise ConfigInvalid("semi-structured pattern takes no ratio")
        else:
            raise ConfigInvalid(f"unknown sparsity kind {self.kind!r}")

    @classmethod
    def unstructured(cls, ratio: float) -> "SparsityPattern":
        return cls(kind="unstructured", ratio=float(ratio))

    @classmethod
    def semistructured(cls, n: int, m: int) -> "SparsityPattern":
        return cls(kind="semistructured", n=int(n), m=int(m))

    @classmethod
    def parse(cls, text: str) -> "SparsityPattern | None":
        """Parse CLI syntax: "none", "unstructured:RATIO", or "N:M"."""
        text = text.strip().lower()
        if text == "none":
            return None
        if text.startswith("unstructured:"):
            try:
                ratio = float(text.split(":", 1)[1])
            except ValueError:
                raise ConfigInvalid(f"bad unstructured ratio in {text!r}") from None
            return cls.unstructured(ratio)
        parts = text.split(":")
        if len(parts) == 2:
            try:
                n, m = int(parts[0]), int(parts[1])
            except ValueError:
                raise ConfigInvalid(f"bad sparsity pattern {text!r}") from None
            return cls.semistructured(n, m)
        raise ConfigInvalid(f"bad sparsity pattern {text!r}")

    def spec_string(self) -> str:
        if self.kind == "unstructured":
            return f"unstructured:{self.ratio}"
        return f"{self.n}:{self.m}"


@dataclass(frozen=True)
class SparsityMask:
    """Boolean keep/drop matrix produced by a masking rule."""

    rows: int
    cols: int
    keep: np.ndarray

    def __post_init__(self):
        keep = np.asarray(self.keep, dtype=bool)
        object.__setattr__(self, "keep", keep)
        if keep.shape != (self.rows, self.cols):
            raise ShapeMismatch(
                f"mask shape {keep.shape} does not match ({self.rows}, {self.cols})"
            )

    @property
    def density(self) -> float:
        """Kept fraction."""
        return float(self.keep.mean()) if self.keep.size else 1.0


def wanda_scores(w, stats: CalibrationStats) -> np.ndarray:
    """Activation-weighted saliency: |w_ij| times the l2 norm of input channel i.

    Raises:
        ShapeMismatch: statistics channel count differs from the weight row count.
    """
    arr = as_matrix(w, "w")
    if stats.d_in != arr.shape[0]:
        raise ShapeMismatch(
            f"stats cover {stats.d_in} channels, weight has {arr.shape[0]} rows"
        )
    return np.abs(arr) * stats.l2_norm[:, None]


def magnitude_scores(w) -> np.ndarray:
    """Elementwise |w|."""
    return np.abs(as_matrix(w, "w", allow_empty=True))


def unstructured_mask(scores, ratio: float) -> SparsityMask:
    """Keep the top ``ceil((1 - ratio) * d_in)`` scores in every output column.

    Ties break toward the lower input index. ``ratio`` = 0 keeps everything.

    Raises:
        ConfigInvalid: ``ratio`` outside [0, 1).
    """
    s = as_matrix(scores, "scores")
    if not (0.0 <= ratio < 1.0):
        raise ConfigInvalid(f"ratio must be in [0, 1), got {ratio}")
    d_in, d_out = s.shape
    k = int(np.ceil((1.0 - ratio) * d_in))
    keep = np.zeros((d_in, d_out), dtype=bool)
    if k > 0:
        # Stable sort on negated scores: equal scores keep ascending index order.
        order = np.argsort(-s, axis=0, kind="stable")
        top = order[:k, :]
        keep[top, np.arange(d_out)[None, :]] = True
    return SparsityMask(rows=d_in, cols=d_out, keep=keep)


def semistructured_mask(scores, n: int, m: int) -> SparsityMask:
    """Keep exactly ``n`` of every aligned ``m`` consecutive input weights.

    Groups run along the input dimension at fixed output index. Ties break
    toward the lower input index.

    Raises:
        ConfigInvalid: not 0 < n < m.
        IndivisibleDimension: input dimension not divisible by ``m``.
    """
    s = as_matrix(scores, "scores")
    if not (0 < n < m):
        raise ConfigInvalid(f"need 0 < n < m, got {n}:{m}")
    d_in, d_out = s.shape
    if d_in % m != 0:
        raise IndivisibleDimension(f"input dim {d_in} not divisible by m = {m}")
    grouped = s.reshape(d_in // m, m, d_out)
    order = np.argsort(-grouped, axis=1, kind="stable")
    keep = np.zeros_like(grouped, dtype=bool)
    g_idx = np.arange(d_in // m)[:, None, None]
    o_idx = np.arange(d_out)[None, None, :]
    keep[g_idx, order[:, :n, :], o_idx] = True
    return SparsityMask(rows=d_in, cols=d_out, keep=keep.reshape(d_in, d_out))


def apply_mask(w, mask: SparsityMask) -> np.ndarray:
    """Zero the dropped entries of ``w``; kept entries pass through unchanged.

    Raises:
        ShapeMismatch: weight and mask shapes differ.
    """
    arr = as_matrix(w, "w")
    if arr.shape != (mask.rows, mask.cols):
        raise ShapeMismatch(
            f"weight shape {arr.shape} does not match mask ({mask.rows}, {mask.cols})"
        )
    return np.where(mask.keep, arr, 0.0)


def build_mask(scores, pattern: SparsityPattern) -> SparsityMask:
    """Dispatch to the masking rule named by ``pattern``."""
    if pattern.kind == "unstructured":
        return unstructured_mask(scores, pattern.ratio)
    return semistructured_mask(scores, pattern.n, pattern.m)
