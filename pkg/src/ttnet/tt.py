"""Tensor-train matrices.

A TT-matrix stores a ``prod(input_modes) x prod(output_modes)`` matrix ``W`` as
``K`` cores, core ``k`` shaped ``[r_k, m_k, n_k, r_{k+1}]`` with ``r_1 = r_{K+1} = 1``:

    W[(i_1..i_K), (j_1..j_K)] = C1[:, i_1, j_1, :] @ C2[:, i_2, j_2, :] @ ... @ CK[:, i_K, j_K, :]

Row and column multi-indices are flattened row-major. Rows index the input
side, so a layer computes ``y = x @ W``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ttnet.tensor import ShapeError, permute_axes, reshape, svd_truncated

TT_FORMAT = "ttnet.ttmatrix"
TT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModeFactorization:
    """Mode lists and bond-rank caps for one TT-matrix.

    ``ranks`` has ``K + 1`` entries with both ends equal to 1; an interior
    entry of ``None`` means the bond is uncapped.
    """

    input_modes: tuple[int, ...]
    output_modes: tuple[int, ...]
    ranks: tuple[Optional[int], ...]

    def __init__(self, input_modes, output_modes, ranks=None):
        input_modes = tuple(int(m) for m in input_modes)
        output_modes = tuple(int(n) for n in output_modes)
        k = len(input_modes)
        if ranks is None:
            ranks = (1,) + (None,) * (k - 1) + (1,)
        ranks = tuple(None if r is None else int(r) for r in ranks)
        if k < 1 or len(output_modes) != k:
            raise ShapeError(f"need K >= 1 input and output modes of equal count, got {input_modes} / {output_modes}")
        if any(m < 1 for m in input_modes + output_modes):
            raise ShapeError("mode sizes must be >= 1")
        if len(ranks) != k + 1:
            raise ShapeError(f"ranks must have K + 1 = {k + 1} entries, got {len(ranks)}")
        if ranks[0] != 1 or ranks[-1] != 1:
            raise ValueError(f"boundary ranks must be 1, got {ranks}")
        if any(r is not None and r < 1 for r in ranks):
            raise ValueError(f"rank caps must be >= 1, got {ranks}")
        object.__setattr__(self, "input_modes", input_modes)
        object.__setattr__(self, "output_modes", output_modes)
        object.__setattr__(self, "ranks", ranks)

    @property
    def order(self) -> int:
        return len(self.input_modes)

    @property
    def in_dim(self) -> int:
        return math.prod(self.input_modes)

    @property
    def out_dim(self) -> int:
        return math.prod(self.output_modes)

    @property
    def bounded(self) -> bool:
        return all(r is not None for r in self.ranks)


class TTMatrix:
    def __init__(self, cores: Sequence[np.ndarray]):
        cores = [np.ascontiguousarray(c, dtype=np.float64) for c in cores]
        if not cores:
            raise ShapeError("a TT-matrix needs at least one core")
        for k, c in enumerate(cores):
            if c.ndim != 4:
                raise ShapeError(f"core {k} must be 4-mode, got shape {c.shape}")
            if k > 0 and c.shape[0] != cores[k - 1].shape[3]:
                raise ShapeError(f"bond {k} mismatch: {cores[k - 1].shape} vs {c.shape}")
        if cores[0].shape[0] != 1 or cores[-1].shape[3] != 1:
            raise ShapeError("boundary ranks must be 1")
        self.cores = cores

    @property
    def input_modes(self) -> tuple[int, ...]:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def output_modes(self) -> tuple[int, ...]:
        return tuple(c.shape[2] for c in self.cores)

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(c.shape[0] for c in self.cores) + (1,)

    @property
    def order(self) -> int:
        return len(self.cores)

    @property
    def in_dim(self) -> int:
        return math.prod(self.input_modes)

    @property
    def out_dim(self) -> int:
        return math.prod(self.output_modes)

    @property
    def factorization(self) -> ModeFactorization:
        return ModeFactorization(self.input_modes, self.output_modes, self.ranks)

    def copy(self) -> "TTMatrix":
        return TTMatrix([c.copy() for c in self.cores])

    def __repr__(self) -> str:
        return f"TTMatrix(input_modes={self.input_modes}, output_modes={self.output_modes}, ranks={self.ranks})"


def tt_svd_decompose(w: np.ndarray, fact: ModeFactorization, rel_tol: float = 0.0) -> TTMatrix:
    """Decompose a dense matrix into a TT-matrix by a left-to-right TT-SVD sweep.

    ``fact.ranks`` act as per-bond caps. ``rel_tol`` bounds the relative
    Frobenius error of the whole decomposition; it is split evenly over the
    ``K - 1`` truncations.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or w.shape != (fact.in_dim, fact.out_dim):
        raise ShapeError(
            f"matrix shape {w.shape} does not match modes {fact.input_modes} x {fact.output_modes}"
        )
    k = fact.order
    # (i_1..i_K, j_1..j_K) -> (i_1, j_1, ..., i_K, j_K)
    t = reshape(w, fact.input_modes + fact.output_modes)
    t = permute_axes(t, [p for pair in zip(range(k), range(k, 2 * k)) for p in pair])
    step_tol = rel_tol / math.sqrt(k - 1) if k > 1 else 0.0

    cores = []
    rank = 1
    rest = t.reshape(1, -1)
    for idx in range(k - 1):
        m, n = fact.input_modes[idx], fact.output_modes[idx]
        unfolding = rest.reshape(rank * m * n, -1)
        svd = svd_truncated(unfolding, fact.ranks[idx + 1], step_tol)
        cores.append(svd.u.reshape(rank, m, n, svd.rank))
        rest = svd.s[:, None] * svd.vt
        rank = svd.rank
    cores.append(rest.reshape(rank, fact.input_modes[-1], fact.output_modes[-1], 1))
    return TTMatrix(cores)


def reconstruct(tt: TTMatrix) -> np.ndarray:
    """Materialize the dense ``in_dim x out_dim`` matrix."""
    k = tt.order
    full = tt.cores[0][0]  # (m1, n1, r2)
    for core in tt.cores[1:]:
        full = np.tensordot(full, core, axes=([-1], [0]))
    # (m1, n1, ..., mK, nK, 1) -> (m1..mK, n1..nK)
    full = full.reshape(full.shape[:-1])
    full = permute_axes(full, list(range(0, 2 * k, 2)) + list(range(1, 2 * k, 2)))
    return full.reshape(tt.in_dim, tt.out_dim)


def tt_contract_batch(cores: Sequence[np.ndarray], x: np.ndarray, keep: bool = False):
    """Compute ``x @ W`` for a batch ``x`` of shape ``(B, in_dim)`` core by core.

    Returns ``(y, partials)`` where ``partials[k]`` is the input to step ``k``
    shaped ``(P_k, r_k, m_k, Q_k)``; ``partials`` is empty unless ``keep``.
    """
    batch = x.shape[0]
    q = x.shape[1]
    t = x.reshape(batch, 1, q)
    partials = []
    p = batch
    for core in cores:
        r, m, n, r_next = core.shape
        q //= m
        t = t.reshape(p, r, m, q)
        if keep:
            partials.append(t)
        # (P, Q, n, r') -> (P, n, r', Q)
        out = np.tensordot(t, core, axes=([1, 2], [0, 1]))
        t = np.ascontiguousarray(out.transpose(0, 2, 3, 1))
        p *= n
        t = t.reshape(p, r_next, q)
    return t.reshape(batch, -1), partials


def tt_contract_backward(cores: Sequence[np.ndarray], partials, dy: np.ndarray, need_dx: bool = True):
    """Reverse-mode pass through :func:`tt_contract_batch`.

    Returns ``(dx, dcores)`` given the cached partial products and ``dy = dL/dy``;
    ``dx`` is ``None`` when ``need_dx`` is false.
    """
    dcores = [None] * len(cores)
    batch = dy.shape[0]
    d = dy
    for k in range(len(cores) - 1, -1, -1):
        core = cores[k]
        t = partials[k]
        p, r, m, q = t.shape
        n, r_next = core.shape[2], core.shape[3]
        dout = d.reshape(p, n, r_next, q).transpose(0, 3, 1, 2)
        dcores[k] = np.tensordot(t, dout, axes=([0, 3], [0, 1]))
        if k == 0 and not need_dx:
            return None, dcores
        dt = np.tensordot(dout, core, axes=([2, 3], [2, 3]))  # (P, Q, r, m)
        d = np.ascontiguousarray(dt.transpose(0, 2, 3, 1))
    return d.reshape(batch, -1), dcores


def tt_matvec(tt: TTMatrix, x: np.ndarray) -> np.ndarray:
    """Apply the TT-matrix to an input tensor shaped like ``input_modes``.

    The result is shaped like ``output_modes``; the dense matrix is never formed.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != tt.input_modes:
        raise ShapeError(f"input shape {x.shape} does not match input modes {tt.input_modes}")
    y, _ = tt_contract_batch(tt.cores, x.reshape(1, -1))
    return y.reshape(tt.output_modes)


def tt_param_count(tt: TTMatrix) -> int:
    return sum(int(c.size) for c in tt.cores)


def dense_param_count(fact: ModeFactorization) -> int:
    return math.prod(m * n for m, n in zip(fact.input_modes, fact.output_modes))


def tt_param_count_for(fact: ModeFactorization) -> int:
    """Core entry count a factorization with bounded ranks would have."""
    if not fact.bounded:
        raise ValueError("parameter count needs bounded ranks")
    r = fact.ranks
    return sum(m * n * r[k] * r[k + 1] for k, (m, n) in enumerate(zip(fact.input_modes, fact.output_modes)))


def tt_random_init(fact: ModeFactorization, seed) -> TTMatrix:
    """Gaussian cores scaled so the implied dense matrix has entry variance 2 / in_dim.

    An entry of the dense matrix is a sum of ``prod(r_2..r_K)`` products of
    ``K`` independent core entries, so the product of per-core variances must be
    ``2 / (in_dim * prod(r_2..r_K))``; that budget is split evenly across cores.
    """
    if not fact.bounded:
        raise ValueError("random initialization needs bounded ranks")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    k = fact.order
    inner = math.prod(fact.ranks[1:-1])
    std = (2.0 / (fact.in_dim * inner)) ** (1.0 / (2 * k))
    cores = [
        rng.normal(0.0, std, size=(fact.ranks[i], fact.input_modes[i], fact.output_modes[i], fact.ranks[i + 1]))
        for i in range(k)
    ]
    return TTMatrix(cores)


def save_tt(path, tt: TTMatrix) -> None:
    header = {
        "format": TT_FORMAT,
        "version": TT_FORMAT_VERSION,
        "order": tt.order,
        "input_modes": list(tt.input_modes),
        "output_modes": list(tt.output_modes),
        "ranks": list(tt.ranks),
    }
    arrays = {f"core_{k}": c for k, c in enumerate(tt.cores)}
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header)), **arrays)


def load_tt(path) -> TTMatrix:
    with np.load(Path(path), allow_pickle=False) as data:
        if "header" not in data:
            raise ValueError(f"{path}: not a TT checkpoint")
        header = json.loads(str(data["header"]))
        if header.get("format") != TT_FORMAT:
            raise ValueError(f"{path}: unexpected format {header.get('format')!r}")
        if header.get("version") != TT_FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported TT checkpoint version {header.get('version')}")
        tt = TTMatrix([data[f"core_{k}"] for k in range(header["order"])])
    if list(tt.ranks) != header["ranks"] or list(tt.input_modes) != header["input_modes"]:
        raise ValueError(f"{path}: header does not match stored cores")
    return tt
