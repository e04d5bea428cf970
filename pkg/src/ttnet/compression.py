"""DNN-SVD baseline: split trained dense kernels into two thin factors."""
from __future__ import annotations

import copy

import numpy as np

from ttnet.nn import Dense, Network, TrainConfig, TrainResult, train
from ttnet.tensor import svd_truncated


class BudgetError(ValueError):
    """No uniform rank brings the network under the requested parameter budget."""


def svd_compress_layer(layer: Dense, rank: int) -> tuple[Dense, Dense]:
    """Best rank-``rank`` factorization ``W ~ A @ B`` with ``A = U sqrt(S)``, ``B = sqrt(S) Vt``.

    The bias stays on ``B`` so that full rank reproduces the affine map.
    """
    if not 1 <= rank <= min(layer.in_dim, layer.out_dim):
        raise ValueError(f"rank {rank} outside [1, {min(layer.in_dim, layer.out_dim)}]")
    svd = svd_truncated(layer.weights, max_rank=rank)
    root = np.sqrt(svd.s)
    a = svd.u * root
    b = root[:, None] * svd.vt
    bias = None if layer.bias is None else layer.bias.copy()
    return Dense(a, None), Dense(b, bias)


def _layer_cost(layer: Dense, rank: int) -> int:
    bias = 0 if layer.bias is None else layer.out_dim
    factored = rank * (layer.in_dim + layer.out_dim)
    return min(factored, layer.weights.size) + bias


def _factored(layer: Dense, rank: int) -> bool:
    return rank * (layer.in_dim + layer.out_dim) < layer.weights.size


def compressed_count(net: Network, rank: int) -> int:
    """Parameter count :func:`compress_network` yields at a given uniform rank."""
    total = 0
    for layer in net.layers:
        if layer.kind == "dense":
            total += _layer_cost(layer, rank)
        else:
            total += sum(p.size for p in layer.params())
    return total


def select_rank(net: Network, param_budget: int) -> int:
    """Largest uniform rank whose compressed network fits ``param_budget``."""
    dense = [layer for layer in net.layers if layer.kind == "dense"]
    if not dense:
        raise ValueError("network has no dense kernels to compress")
    max_rank = max(min(layer.in_dim, layer.out_dim) for layer in dense)
    if compressed_count(net, 1) > param_budget:
        raise BudgetError(
            f"budget {param_budget} infeasible: rank 1 still needs {compressed_count(net, 1)} parameters"
        )
    # cost is non-decreasing in rank, so bisect for the largest feasible rank
    lo, hi = 1, max_rank
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if compressed_count(net, mid) <= param_budget:
            lo = mid
        else:
            hi = mid - 1
    return lo


def compress_network(net: Network, param_budget: int) -> Network:
    """Factor every dense kernel at the largest uniform rank that fits ``param_budget``.

    A kernel whose factored form would not be smaller than the original is left
    dense. TT and activation layers are copied over unchanged.
    """
    rank = select_rank(net, param_budget)
    layers = []
    for layer in net.layers:
        if layer.kind == "dense" and _factored(layer, rank):
            layers.extend(svd_compress_layer(layer, min(rank, layer.in_dim, layer.out_dim)))
        elif layer.kind == "dense":
            layers.append(Dense(layer.weights.copy(), None if layer.bias is None else layer.bias.copy()))
        else:
            layers.append(copy.deepcopy(layer))
    return Network(layers)


def finetune(net: Network, inputs, targets, cfg: TrainConfig) -> TrainResult:
    return train(net, inputs, targets, cfg)
