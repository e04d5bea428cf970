"""Dense tensor primitives: reshape, axis permutation, unfolding and truncated SVD.

Tensors are plain ``numpy.ndarray`` objects in float64, C (row-major) order.
Every function returns a fresh contiguous array and never mutates its input.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible with an operation."""


def as_tensor(data, shape: Optional[Sequence[int]] = None) -> np.ndarray:
    t = np.array(data, dtype=np.float64, order="C")
    if shape is not None:
        t = reshape(t, shape)
    if t.ndim == 0:
        raise ShapeError("tensor must have at least one mode")
    if any(s < 1 for s in t.shape):
        raise ShapeError(f"mode sizes must be >= 1, got {t.shape}")
    return t


def reshape(t: np.ndarray, new_shape: Sequence[int]) -> np.ndarray:
    new_shape = tuple(int(s) for s in new_shape)
    if math.prod(new_shape) != t.size:
        raise ShapeError(f"cannot reshape {t.shape} ({t.size} entries) to {new_shape}")
    return np.ascontiguousarray(t).reshape(new_shape)


def permute_axes(t: np.ndarray, perm: Sequence[int]) -> np.ndarray:
    perm = tuple(int(p) for p in perm)
    if sorted(perm) != list(range(t.ndim)):
        raise ShapeError(f"{perm} is not a permutation of 0..{t.ndim - 1}")
    return np.ascontiguousarray(np.transpose(t, perm))


def matricize(t: np.ndarray, split: int) -> np.ndarray:
    """Unfold ``t`` into a matrix: modes [0, split) index rows, [split, K) columns."""
    if not 1 <= split <= t.ndim - 1:
        raise ShapeError(f"split {split} out of range for a {t.ndim}-mode tensor")
    rows = math.prod(t.shape[:split])
    return reshape(t, (rows, t.size // rows))


@dataclass(frozen=True)
class SvdResult:
    u: np.ndarray
    s: np.ndarray
    vt: np.ndarray
    rank: int
    # squared Frobenius norm of the discarded tail
    tail_energy: float

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.s) @ self.vt


def svd_truncated(m: np.ndarray, max_rank: Optional[int] = None, rel_tol: float = 0.0) -> SvdResult:
    """Thin SVD of ``m`` truncated by a rank cap and a relative energy tolerance.

    The kept rank is the smallest ``r`` whose discarded squared singular values
    sum to at most ``rel_tol**2`` times the total energy, further capped at
    ``max_rank`` (``None`` means unlimited). Singular values at round-off level
    (below ``s_max * max(m.shape) * eps``) are dropped even at ``rel_tol=0``.
    At least one singular triple is always kept.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"svd_truncated expects a matrix, got shape {m.shape}")
    if max_rank is not None and max_rank < 1:
        raise ValueError(f"max_rank must be >= 1, got {max_rank}")
    if rel_tol < 0:
        raise ValueError(f"rel_tol must be >= 0, got {rel_tol}")
    if not np.all(np.isfinite(m)):
        raise ValueError("svd_truncated: input contains non-finite values")

    u, s, vt = np.linalg.svd(m, full_matrices=False)
    energy = s**2
    # tails[r] = energy discarded when keeping r triples
    tails = np.concatenate([np.cumsum(energy[::-1])[::-1], [0.0]])
    budget = rel_tol**2 * tails[0]
    rank = int(np.argmax(tails <= budget)) if tails[0] > 0 else 0
    numerical = int(np.count_nonzero(s > s[0] * max(m.shape) * np.finfo(np.float64).eps)) if s.size else 0
    rank = max(min(rank, numerical), 1)
    if max_rank is not None:
        rank = min(rank, max_rank)
    rank = min(rank, s.size)
    return SvdResult(
        u=np.ascontiguousarray(u[:, :rank]),
        s=s[:rank].copy(),
        vt=np.ascontiguousarray(vt[:rank]),
        rank=rank,
        tail_energy=float(tails[rank]),
    )
