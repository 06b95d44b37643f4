"""Multi-layer perceptrons and the GRU cell used by feature propagation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from network.diffcore import Tensor, add, matmul, mul, relu, sigmoid, sub, tanh
from network.params import ParameterStore

Activation = Literal["relu", "tanh", "linear"]
Layer = tuple[Tensor, Tensor]

_ACTIVATIONS = {
    "relu": relu,
    "tanh": tanh,
    "linear": lambda x: x,
}


def init_mlp(
    store: ParameterStore,
    prefix: str,
    widths: Sequence[int],
    rng: np.random.Generator,
) -> list[Layer]:
    """Create ``len(widths) - 1`` affine layers named ``{prefix}.{i}.weight|bias``."""

    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        weight = store.add(f"{prefix}.{i}.weight", (fan_in, fan_out), rng)
        bias = store.add(f"{prefix}.{i}.bias", (1, fan_out), init="zeros")
        layers.append((weight, bias))
    return layers


def mlp_layers(store: ParameterStore, prefix: str) -> list[Layer]:
    layers = []
    i = 0
    while f"{prefix}.{i}.weight" in store:
        layers.append((store[f"{prefix}.{i}.weight"], store[f"{prefix}.{i}.bias"]))
        i += 1
    if not layers:
        raise KeyError(f"no MLP layers under {prefix!r}")
    return layers


def mlp_forward(x: Tensor, layers: Sequence[Layer], activation: Activation = "relu") -> Tensor:
    """Affine + activation per layer; the last layer stays affine."""

    act = _ACTIVATIONS[activation]
    for i, (weight, bias) in enumerate(layers):
        if x.shape[-1] != weight.shape[0]:
            raise ValueError(
                f"mlp layer {i}: input width {x.shape[-1]} does not match weight {weight.shape}"
            )
        x = add(matmul(x, weight), bias)
        if i < len(layers) - 1:
            x = act(x)
    return x


@dataclass(frozen=True, slots=True)
class GRUParams:
    """Row-major GRU weights: gates read ``x @ w_* + h @ u_* + b_*``."""

    w_z: Tensor
    u_z: Tensor
    b_z: Tensor
    w_r: Tensor
    u_r: Tensor
    b_r: Tensor
    w_h: Tensor
    u_h: Tensor
    b_h: Tensor

    @property
    def dim(self) -> int:
        return self.u_z.shape[0]

    @classmethod
    def create(cls, store: ParameterStore, prefix: str, dim: int, rng: np.random.Generator) -> "GRUParams":
        tensors = {}
        for gate in ("z", "r", "h"):
            tensors[f"w_{gate}"] = store.add(f"{prefix}.w_{gate}", (dim, dim), rng)
            tensors[f"u_{gate}"] = store.add(f"{prefix}.u_{gate}", (dim, dim), rng)
            tensors[f"b_{gate}"] = store.add(f"{prefix}.b_{gate}", (1, dim), init="zeros")
        return cls(**tensors)

    @classmethod
    def from_store(cls, store: ParameterStore, prefix: str) -> "GRUParams":
        names = [f"{kind}_{gate}" for gate in ("z", "r", "h") for kind in ("w", "u", "b")]
        return cls(**{name: store[f"{prefix}.{name}"] for name in names})


def gru_cell(h_prev: Tensor, x: Tensor, params: GRUParams) -> Tensor:
    """Gated recurrent update (reset gate applied before the candidate)."""

    if h_prev.shape != x.shape or h_prev.shape[-1] != params.dim:
        raise ValueError(
            f"gru_cell: state {h_prev.shape}, input {x.shape}, hidden size {params.dim}"
        )
    z = sigmoid(add(add(matmul(x, params.w_z), matmul(h_prev, params.u_z)), params.b_z))
    r = sigmoid(add(add(matmul(x, params.w_r), matmul(h_prev, params.u_r)), params.b_r))
    candidate = tanh(add(add(matmul(x, params.w_h), matmul(mul(r, h_prev), params.u_h)), params.b_h))
    # (1 - z) * h + z * candidate
    return add(h_prev, mul(z, sub(candidate, h_prev)))


__all__ = ["Activation", "GRUParams", "Layer", "gru_cell", "init_mlp", "mlp_forward", "mlp_layers"]
