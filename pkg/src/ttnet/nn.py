"""Feed-forward regression networks built from dense and TT layers.

Everything is float64 numpy with hand-written backward passes. A TT layer
keeps its cores as parameters and back-propagates through the core-by-core
contraction, so the dense weight matrix is never formed during training.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ttnet.tensor import ShapeError
from ttnet.tt import (
    ModeFactorization,
    TTMatrix,
    tt_contract_backward,
    tt_contract_batch,
    tt_random_init,
)

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "ttnet.network"
CHECKPOINT_VERSION = 1


class StaleCacheError(RuntimeError):
    """Backward was called with a cache that does not belong to the current parameters."""


class Dense:
    kind = "dense"

    def __init__(self, weights, bias=None):
        self.weights = np.ascontiguousarray(weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ShapeError(f"dense weights must be a matrix, got {self.weights.shape}")
        self.bias = None if bias is None else np.ascontiguousarray(bias, dtype=np.float64)
        if self.bias is not None and self.bias.shape != (self.weights.shape[1],):
            raise ShapeError(f"bias length {self.bias.shape} != weight columns {self.weights.shape[1]}")

    @classmethod
    def init(cls, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True) -> "Dense":
        w = rng.normal(0.0, math.sqrt(2.0 / in_dim), size=(in_dim, out_dim))
        return cls(w, np.zeros(out_dim) if bias else None)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[1]

    def params(self) -> list[np.ndarray]:
        return [self.weights] if self.bias is None else [self.weights, self.bias]

    def cast(self, dtype) -> None:
        self.weights = self.weights.astype(dtype)
        if self.bias is not None:
            self.bias = self.bias.astype(dtype)

    def forward(self, x):
        y = x @ self.weights
        if self.bias is not None:
            y += self.bias
        return y, x

    def backward(self, x, dy, need_dx: bool = True):
        grads = [x.T @ dy]
        if self.bias is not None:
            grads.append(dy.sum(axis=0))
        return (dy @ self.weights.T if need_dx else None), grads


class TTLayer:
    """Affine map ``x @ W + b`` with ``W`` held as a TT-matrix and a dense bias."""

    kind = "tt"

    def __init__(self, tt: TTMatrix, bias=None):
        self.tt = tt
        self.bias = None if bias is None else np.ascontiguousarray(bias, dtype=np.float64)
        if self.bias is not None and self.bias.shape != (tt.out_dim,):
            raise ShapeError(f"bias length {self.bias.shape} != prod(output_modes) {tt.out_dim}")

    @classmethod
    def init(cls, fact: ModeFactorization, rng: np.random.Generator, bias: bool = True) -> "TTLayer":
        return cls(tt_random_init(fact, rng), np.zeros(fact.out_dim) if bias else None)

    @property
    def in_dim(self) -> int:
        return self.tt.in_dim

    @property
    def out_dim(self) -> int:
        return self.tt.out_dim

    def params(self) -> list[np.ndarray]:
        ps = list(self.tt.cores)
        if self.bias is not None:
            ps.append(self.bias)
        return ps

    def cast(self, dtype) -> None:
        # assigned directly: the TTMatrix constructor would promote back to float64
        self.tt.cores = [c.astype(dtype) for c in self.tt.cores]
        if self.bias is not None:
            self.bias = self.bias.astype(dtype)

    def forward(self, x):
        y, partials = tt_contract_batch(self.tt.cores, x, keep=True)
        if self.bias is not None:
            y = y + self.bias
        return y, partials

    def backward(self, partials, dy, need_dx: bool = True):
        dx, dcores = tt_contract_backward(self.tt.cores, partials, dy, need_dx)
        if self.bias is not None:
            dcores.append(dy.sum(axis=0))
        return dx, dcores


class Activation:
    kind = "activation"

    def __init__(self, fn: str = "relu"):
        if fn not in ("relu", "identity"):
            raise ValueError(f"unknown activation {fn!r}")
        self.fn = fn

    def params(self) -> list[np.ndarray]:
        return []

    def cast(self, dtype) -> None:
        pass

    def forward(self, x):
        if self.fn == "identity":
            return x, None
        y = np.maximum(x, 0.0)
        return y, y > 0

    def backward(self, mask, dy, need_dx: bool = True):
        if self.fn == "identity":
            return dy, []
        return dy * mask, []


class Network:
    def __init__(self, layers: Sequence):
        self.layers = list(layers)
        dims = [(layer.in_dim, layer.out_dim) for layer in self.layers if layer.kind != "activation"]
        if not dims:
            raise ShapeError("network needs at least one parametric layer")
        for (_, out_dim), (in_dim, _) in zip(dims, dims[1:]):
            if out_dim != in_dim:
                raise ShapeError(f"layer dimensions do not chain: {out_dim} -> {in_dim}")
        self.input_dim = dims[0][0]
        self.output_dim = dims[-1][1]
        self.version = 0

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params()]

    def predict(self, x) -> np.ndarray:
        return forward(self, x).output

    @property
    def dtype(self) -> np.dtype:
        return self.parameters()[0].dtype

    def cast(self, dtype) -> None:
        """Convert every parameter to ``dtype``; invalidates outstanding caches."""
        for layer in self.layers:
            layer.cast(dtype)
        self.version += 1

    def __repr__(self) -> str:
        parts = []
        for layer in self.layers:
            if layer.kind == "activation":
                parts.append(layer.fn)
            elif layer.kind == "tt":
                parts.append(f"tt{layer.tt.input_modes}->{layer.tt.output_modes} r{layer.tt.ranks}")
            else:
                parts.append(f"dense {layer.in_dim}->{layer.out_dim}")
        return "Network(" + ", ".join(parts) + ")"


@dataclass
class ForwardCache:
    output: np.ndarray
    activations: list[np.ndarray]
    layer_caches: list
    network_id: int
    version: int


def forward(net: Network, batch) -> ForwardCache:
    x = np.asarray(batch, dtype=net.dtype)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ShapeError(f"batch shape {x.shape} does not match input_dim {net.input_dim}")
    activations = [x]
    caches = []
    for layer in net.layers:
        x, cache = layer.forward(x)
        activations.append(x)
        caches.append(cache)
    return ForwardCache(x, activations, caches, id(net), net.version)


def backward(net: Network, cache: Optional[ForwardCache], grad_output) -> list[np.ndarray]:
    """Gradients of the loss for every entry of ``net.parameters()``, in order."""
    if cache is None:
        raise StaleCacheError("backward needs the cache returned by forward")
    if cache.network_id != id(net) or cache.version != net.version:
        raise StaleCacheError("forward cache is stale: parameters changed since it was computed")
    d = np.asarray(grad_output, dtype=net.dtype)
    if d.shape != cache.output.shape:
        raise ShapeError(f"output gradient shape {d.shape} != output shape {cache.output.shape}")
    per_layer = [None] * len(net.layers)
    for idx in range(len(net.layers) - 1, -1, -1):
        # nothing consumes the gradient with respect to the network input
        d, per_layer[idx] = net.layers[idx].backward(cache.layer_caches[idx], d, idx > 0)
    return [g for grads in per_layer for g in grads]


def mse_loss(pred, target) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.mean((pred - target) ** 2))


def mse_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    return 2.0 * (pred - target) / pred.size


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], **hyper) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **hyper)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and optimizer state must align")
    state.step += 1
    c1 = 1.0 - state.beta1**state.step
    c2 = 1.0 - state.beta2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"shape mismatch {p.shape} / {g.shape} / {m.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        denom = np.sqrt(v)
        denom *= 1.0 / math.sqrt(c2)
        denom += state.eps
        step = np.divide(m, denom)
        step *= state.lr / c1
        p -= step
    return state


@dataclass
class TrainConfig:
    learning_rate: float = 2e-4
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # arithmetic precision during training; the network is returned in float64
    dtype: str = "float64"

    def __post_init__(self):
        if np.dtype(self.dtype) not in (np.float32, np.float64):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class TrainResult:
    network: Network
    losses: list[float] = field(default_factory=list)


def dataset_loss(net: Network, inputs, targets, chunk: int = 4096) -> float:
    total = 0.0
    for start in range(0, len(inputs), chunk):
        pred = net.predict(inputs[start : start + chunk])
        total += float(np.sum(np.square(pred - targets[start : start + chunk]), dtype=np.float64))
    return total / targets.size


def train(net: Network, inputs, targets, cfg: TrainConfig, callback=None) -> TrainResult:
    """Mini-batch Adam on the MSE loss.

    Rows are reshuffled every epoch with a generator seeded from ``cfg.seed``.
    The recorded loss for each epoch is the MSE over the full training set
    after that epoch's updates. With ``cfg.dtype="float32"`` the updates run
    in single precision and the parameters are widened back afterwards.
    """
    work = np.dtype(cfg.dtype)
    inputs = np.asarray(inputs, dtype=work)
    targets = np.asarray(targets, dtype=work)
    if len(inputs) == 0:
        raise ValueError("cannot train on an empty dataset")
    if len(inputs) != len(targets):
        raise ShapeError(f"{len(inputs)} inputs vs {len(targets)} targets")
    if inputs.shape[1] != net.input_dim or targets.shape[1] != net.output_dim:
        raise ShapeError(
            f"dataset dims {inputs.shape[1]}->{targets.shape[1]} do not match network "
            f"{net.input_dim}->{net.output_dim}"
        )
    rng = np.random.default_rng(cfg.seed)
    net.cast(work)
    try:
        return _train_loop(net, inputs, targets, cfg, rng, callback)
    finally:
        net.cast(np.float64)


def _train_loop(net, inputs, targets, cfg, rng, callback) -> TrainResult:
    params = net.parameters()
    state = AdamState.for_params(params, lr=cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    result = TrainResult(net)
    n = len(inputs)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            cache = forward(net, inputs[idx])
            grads = backward(net, cache, mse_grad(cache.output, targets[idx]))
            adam_step(params, grads, state)
            net.version += 1
        loss = dataset_loss(net, inputs, targets)
        result.losses.append(loss)
        log.debug("epoch %d loss %.6g", epoch + 1, loss)
        if callback is not None:
            callback(epoch + 1, loss)
    return result


def count_params(net: Network) -> int:
    return sum(int(p.size) for p in net.parameters())


def build_network(specs: Sequence[dict], seed) -> Network:
    """Build a network from layer specs.

    Each spec is a dict with ``kind`` (``"dense"`` or ``"tt"``), ``activation``
    (default ``"relu"``) and either ``in_dim``/``out_dim`` (dense) or
    ``input_modes``/``output_modes``/``ranks`` (tt).
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    layers = []
    for spec in specs:
        if spec["kind"] == "dense":
            layers.append(Dense.init(spec["in_dim"], spec["out_dim"], rng))
        elif spec["kind"] == "tt":
            fact = ModeFactorization(spec["input_modes"], spec["output_modes"], spec["ranks"])
            layers.append(TTLayer.init(fact, rng))
        else:
            raise ValueError(f"unknown layer kind {spec['kind']!r}")
        layers.append(Activation(spec.get("activation", "relu")))
    return Network(layers)


def mlp(dims: Sequence[int], seed) -> Network:
    """Dense ReLU network with a linear output layer."""
    specs = [
        {"kind": "dense", "in_dim": a, "out_dim": b, "activation": "relu"}
        for a, b in zip(dims[:-1], dims[1:])
    ]
    specs[-1]["activation"] = "identity"
    return build_network(specs, seed)


def _layer_record(layer, idx: int, arrays: dict) -> dict:
    if layer.kind == "activation":
        return {"kind": "activation", "fn": layer.fn}
    rec = {"kind": layer.kind, "bias": layer.bias is not None}
    if layer.kind == "dense":
        arrays[f"l{idx}_weights"] = layer.weights
    else:
        rec.update(
            input_modes=list(layer.tt.input_modes),
            output_modes=list(layer.tt.output_modes),
            ranks=list(layer.tt.ranks),
        )
        for k, core in enumerate(layer.tt.cores):
            arrays[f"l{idx}_core{k}"] = core
    if layer.bias is not None:
        arrays[f"l{idx}_bias"] = layer.bias
    return rec


def save_network(path, net: Network, meta: Optional[dict] = None, extra: Optional[dict] = None) -> None:
    """Write a versioned ``.npz`` checkpoint.

    ``meta`` must be JSON-serializable; ``extra`` holds additional named arrays.
    """
    arrays: dict[str, np.ndarray] = {}
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layers": [_layer_record(layer, i, arrays) for i, layer in enumerate(net.layers)],
        "meta": meta or {},
    }
    for name, arr in (extra or {}).items():
        arrays[f"extra_{name}"] = np.asarray(arr)
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header)), **arrays)


def load_network(path) -> tuple[Network, dict, dict]:
    """Read a checkpoint written by :func:`save_network`; returns ``(net, meta, extra)``."""
    with np.load(Path(path), allow_pickle=False) as data:
        if "header" not in data:
            raise ValueError(f"{path}: not a network checkpoint")
        header = json.loads(str(data["header"]))
        if header.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"{path}: unexpected format {header.get('format')!r}")
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
        layers = []
        for i, rec in enumerate(header["layers"]):
            bias = data[f"l{i}_bias"] if rec.get("bias") else None
            if rec["kind"] == "activation":
                layers.append(Activation(rec["fn"]))
            elif rec["kind"] == "dense":
                layers.append(Dense(data[f"l{i}_weights"], bias))
            elif rec["kind"] == "tt":
                cores = [data[f"l{i}_core{k}"] for k in range(len(rec["input_modes"]))]
                layers.append(TTLayer(TTMatrix(cores), bias))
            else:
                raise ValueError(f"{path}: unknown layer kind {rec['kind']!r}")
        extra = {k[len("extra_"):]: data[k] for k in data.files if k.startswith("extra_")}
    return Network(layers), header["meta"], extra
