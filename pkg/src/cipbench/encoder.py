"""A small MLP embedding network with exact manual forward/backward.

No autodiff: the backward pass is the hand-written chain rule, which keeps
the whole training pipeline (losses and network alike) in closed form and
makes finite-difference verification straightforward.  The default
embedding head is linear (identity activation) so the learned geometry can
occupy all orthants; a relu head remains available for ablation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "MlpCache",
    "MlpGrads",
    "MlpParams",
    "MlpSpec",
    "backward",
    "backward_batch",
    "forward",
    "forward_batch",
    "init_params",
    "load_params",
    "save_params",
]

ACTIVATIONS = ("relu", "identity")

PARAMS_FORMAT_VERSION = 1


def _act(name: str, z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) if name == "relu" else z


def _act_deriv(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0.0).astype(np.float64)
    return np.ones_like(z)


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths and activations: input D -> hidden... -> embedding n."""

    layer_dims: tuple[int, ...]
    hidden_activations: tuple[str, ...]
    final_activation: str = "identity"

    def __post_init__(self):
        if len(self.layer_dims) < 2:
            raise ValueError("need at least input and embedding dims")
        if any(d < 1 for d in self.layer_dims):
            raise ValueError(f"layer dims must be positive: {self.layer_dims}")
        if len(self.hidden_activations) != len(self.layer_dims) - 2:
            raise ValueError(
                f"expected {len(self.layer_dims) - 2} hidden activations, "
                f"got {len(self.hidden_activations)}"
            )
        for a in (*self.hidden_activations, self.final_activation):
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")

    @classmethod
    def from_dims(cls, dims, hidden: str = "relu", final: str = "identity") -> "MlpSpec":
        dims = tuple(int(d) for d in dims)
        return cls(dims, (hidden,) * max(len(dims) - 2, 0), final)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def embedding_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def num_layers(self) -> int:
        return len(self.layer_dims) - 1

    def activation_of(self, layer: int) -> str:
        if layer == self.num_layers - 1:
            return self.final_activation
        return self.hidden_activations[layer]


@dataclass
class MlpParams:
    spec: MlpSpec
    weights: list[np.ndarray]  # layer l: (dims[l+1], dims[l])
    biases: list[np.ndarray]  # layer l: (dims[l+1],)

    def __post_init__(self):
        expect = [
            ((self.spec.layer_dims[l + 1], self.spec.layer_dims[l]), (self.spec.layer_dims[l + 1],))
            for l in range(self.spec.num_layers)
        ]
        got = [(w.shape, b.shape) for w, b in zip(self.weights, self.biases)]
        if len(self.weights) != self.spec.num_layers or got != expect:
            raise ValueError(f"parameter shapes {got} do not match spec {expect}")
        for arr in (*self.weights, *self.biases):
            if not np.isfinite(arr).all():
                raise ValueError("parameters contain non-finite values")

    def copy(self) -> "MlpParams":
        return MlpParams(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass
class MlpCache:
    """Activations remembered by a forward pass, consumed by backward."""

    inputs: np.ndarray  # (M, D)
    pre_activations: list[np.ndarray]
    activations: list[np.ndarray]  # post-activation per layer; last is the embedding


@dataclass
class MlpGrads:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def zeros_like(cls, params: MlpParams) -> "MlpGrads":
        return cls([np.zeros_like(w) for w in params.weights], [np.zeros_like(b) for b in params.biases])


def init_params(spec: MlpSpec, rng=None, std: float = 0.01) -> MlpParams:
    """Zero-mean Gaussian weights (configurable std), zero biases."""
    rng = np.random.default_rng(rng)
    weights = [
        rng.normal(0.0, std, size=(spec.layer_dims[l + 1], spec.layer_dims[l]))
        for l in range(spec.num_layers)
    ]
    biases = [np.zeros(spec.layer_dims[l + 1]) for l in range(spec.num_layers)]
    return MlpParams(spec, weights, biases)


def forward_batch(params: MlpParams, inputs: np.ndarray) -> tuple[np.ndarray, MlpCache]:
    """Map (M, D) inputs to (M, n) embeddings, caching what backward needs."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.spec.input_dim:
        raise ValueError(
            f"inputs must be (M, {params.spec.input_dim}), got shape {x.shape}"
        )
    pre, post = [], []
    h = x
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w.T + b
        h = _act(params.spec.activation_of(l), z)
        pre.append(z)
        post.append(h)
    return post[-1], MlpCache(x, pre, post)


def forward(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, MlpCache]:
    """Single-sample forward; returns the embedding and the backward cache."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"input must be 1-D, got shape {x.shape}")
    out, cache = forward_batch(params, x[None, :])
    return out[0], cache


def _check_cache(params: MlpParams, cache: MlpCache):
    if len(cache.pre_activations) != params.spec.num_layers:
        raise ValueError("cache does not match parameters (layer count differs)")
    for l, z in enumerate(cache.pre_activations):
        if z.ndim != 2 or z.shape[1] != params.spec.layer_dims[l + 1]:
            raise ValueError(f"cache layer {l} has shape {z.shape}, spec expects width {params.spec.layer_dims[l + 1]}")
    if cache.inputs.shape[1] != params.spec.input_dim:
        raise ValueError("cached inputs do not match the spec input dim")


def backward_batch(
    params: MlpParams, cache: MlpCache, grad_out: np.ndarray
) -> tuple[MlpGrads, np.ndarray]:
    """Exact gradients of <grad_out, forward(inputs)> w.r.t. params and inputs.

    ``grad_out`` is (M, n), one upstream gradient row per cached sample.
    """
    _check_cache(params, cache)
    g = np.asarray(grad_out, dtype=np.float64)
    if g.shape != cache.pre_activations[-1].shape:
        raise ValueError(f"grad_out shape {g.shape} does not match cached forward")
    grads = MlpGrads.zeros_like(params)
    for l in range(params.spec.num_layers - 1, -1, -1):
        dz = g * _act_deriv(params.spec.activation_of(l), cache.pre_activations[l])
        below = cache.activations[l - 1] if l > 0 else cache.inputs
        grads.weights[l] = dz.T @ below
        grads.biases[l] = dz.sum(axis=0)
        g = dz @ params.weights[l]
    return grads, g


def backward(params: MlpParams, cache: MlpCache, grad_out: np.ndarray) -> tuple[MlpGrads, np.ndarray]:
    """Single-sample backward matching ``forward``."""
    g = np.asarray(grad_out, dtype=np.float64)
    if g.ndim != 1:
        raise ValueError(f"grad_out must be 1-D, got shape {g.shape}")
    grads, gin = backward_batch(params, cache, g[None, :])
    return grads, gin[0]


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------


def params_to_dict(params: MlpParams) -> dict:
    return {
        "format_version": PARAMS_FORMAT_VERSION,
        "layer_dims": list(params.spec.layer_dims),
        "hidden_activations": list(params.spec.hidden_activations),
        "final_activation": params.spec.final_activation,
        "weights": [w.tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
    }


def params_from_dict(d: dict) -> MlpParams:
    version = d.get("format_version")
    if version != PARAMS_FORMAT_VERSION:
        raise ValueError(f"unsupported encoder format version: {version}")
    spec = MlpSpec(
        tuple(d["layer_dims"]),
        tuple(d["hidden_activations"]),
        d["final_activation"],
    )
    weights = [np.asarray(w, dtype=np.float64) for w in d["weights"]]
    biases = [np.asarray(b, dtype=np.float64) for b in d["biases"]]
    return MlpParams(spec, weights, biases)


def save_params(params: MlpParams, path) -> None:
    Path(path).write_text(json.dumps(params_to_dict(params)))


def load_params(path) -> MlpParams:
    return params_from_dict(json.loads(Path(path).read_text()))
