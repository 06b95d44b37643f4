"""Named parameters, Adam moments and the binary checkpoint format."""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from hashlib import sha1
from pathlib import Path
from typing import Iterator

import numpy as np

from network.diffcore import Tensor

LOGGER = logging.getLogger(__name__)
LOGGER.addHandler(logging.NullHandler())

CHECKPOINT_MAGIC = b"BGCK"
CHECKPOINT_VERSION = 1


class CheckpointFormatError(ValueError):
    """Raised when a checkpoint does not match the expected layout."""


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in = shape[0]
    fan_out = shape[1] if len(shape) > 1 else shape[0]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


@dataclass(slots=True)
class ParameterStore:
    """Ordered parameters plus the Adam state attached to each of them."""

    params: dict[str, Tensor] = field(default_factory=dict)
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def add(
        self,
        name: str,
        shape: tuple[int, ...],
        rng: np.random.Generator | None = None,
        init: str = "glorot",
    ) -> Tensor:
        if name in self.params:
            raise ValueError(f"parameter {name!r} already exists")
        if init == "glorot":
            if rng is None:
                raise ValueError("glorot initialisation needs an rng")
            value = glorot_uniform(rng, shape)
        elif init == "zeros":
            value = np.zeros(shape)
        else:
            raise ValueError(f"unknown initialiser {init!r}")
        return self.put(name, value)

    def put(self, name: str, value: np.ndarray) -> Tensor:
        tensor = Tensor(np.array(value, dtype=np.float64, order="C"), name=name)
        self.params[name] = tensor
        self.m[name] = np.zeros_like(tensor.value)
        self.v[name] = np.zeros_like(tensor.value)
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: object) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def names(self, prefix: str = "") -> list[str]:
        return [name for name in self.params if name.startswith(prefix)]

    def tensors(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for tensor in self.params.values():
            tensor.zero_grad()

    def copy_detached(self) -> "ParameterStore":
        """Same values in fresh tensors with zeroed gradients (moments shared)."""

        clone = ParameterStore(m=self.m, v=self.v, step=self.step)
        for name, tensor in self.params.items():
            clone.params[name] = Tensor(tensor.value.copy(), name=name)
        return clone

    def accumulate_grads(self, other: "ParameterStore") -> None:
        for name, tensor in self.params.items():
            tensor.grad += other.params[name].grad

    def checksum(self) -> str:
        digest = sha1()
        for name, tensor in self.params.items():
            digest.update(name.encode("utf-8"))
            digest.update(tensor.value.tobytes())
        return digest.hexdigest()

    # --- checkpoint IO

    def to_bytes(self) -> bytes:
        chunks = [CHECKPOINT_MAGIC, struct.pack("<IQI", CHECKPOINT_VERSION, self.step, len(self.params))]
        for name, tensor in self.params.items():
            encoded = name.encode("utf-8")
            chunks.append(struct.pack("<I", len(encoded)))
            chunks.append(encoded)
            chunks.append(struct.pack("<I", tensor.value.ndim))
            chunks.append(struct.pack(f"<{tensor.value.ndim}Q", *tensor.value.shape))
            for array in (tensor.value, self.m[name], self.v[name]):
                chunks.append(np.ascontiguousarray(array, dtype="<f8").tobytes())
        return b"".join(chunks)

    @classmethod
    def from_bytes(cls, payload: bytes) -> "ParameterStore":
        if payload[:4] != CHECKPOINT_MAGIC:
            raise CheckpointFormatError("not a checkpoint (bad magic)")
        offset = 4
        try:
            version, step, count = struct.unpack_from("<IQI", payload, offset)
        except struct.error as exc:
            raise CheckpointFormatError(f"truncated checkpoint header: {exc}") from exc
        offset += struct.calcsize("<IQI")
        if version != CHECKPOINT_VERSION:
            raise CheckpointFormatError(f"unsupported checkpoint version {version}")

        store = cls(step=step)
        try:
            for _ in range(count):
                (length,) = struct.unpack_from("<I", payload, offset)
                offset += 4
                name = payload[offset : offset + length].decode("utf-8")
                offset += length
                (ndim,) = struct.unpack_from("<I", payload, offset)
                offset += 4
                shape = struct.unpack_from(f"<{ndim}Q", payload, offset)
                offset += 8 * ndim
                size = int(np.prod(shape, dtype=np.int64))
                arrays = []
                for _ in range(3):
                    array = np.frombuffer(payload, dtype="<f8", count=size, offset=offset)
                    arrays.append(array.reshape(shape).astype(np.float64))
                    offset += 8 * size
                store.put(name, arrays[0])
                store.m[name], store.v[name] = arrays[1], arrays[2]
        except (struct.error, ValueError) as exc:
            raise CheckpointFormatError(f"truncated checkpoint: {exc}") from exc
        if offset != len(payload):
            raise CheckpointFormatError("trailing bytes after the last parameter")
        return store

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def load(cls, path: Path) -> "ParameterStore":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        return cls.from_bytes(path.read_bytes())

    def load_state(self, path: Path) -> None:
        """Overwrite values and moments in place; names and shapes must match."""

        loaded = ParameterStore.load(path)
        if list(loaded.params) != list(self.params):
            missing = sorted(set(self.params) ^ set(loaded.params))
            raise CheckpointFormatError(f"parameter names differ: {missing[:5]}")
        for name, tensor in self.params.items():
            other = loaded.params[name]
            if other.shape != tensor.shape:
                raise CheckpointFormatError(
                    f"shape mismatch for {name}: checkpoint {other.shape}, model {tensor.shape}"
                )
            tensor.value[...] = other.value
            self.m[name] = loaded.m[name]
            self.v[name] = loaded.v[name]
        self.step = loaded.step


def adam_step(
    store: ParameterStore,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ParameterStore:
    """One bias-corrected Adam update; gradients are cleared afterwards."""

    store.step += 1
    correction1 = 1.0 - beta1**store.step
    correction2 = 1.0 - beta2**store.step
    for name, tensor in store.params.items():
        grad = tensor.grad
        store.m[name] = beta1 * store.m[name] + (1.0 - beta1) * grad
        store.v[name] = beta2 * store.v[name] + (1.0 - beta2) * grad * grad
        m_hat = store.m[name] / correction1
        v_hat = store.v[name] / correction2
        tensor.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
        tensor.zero_grad()
    return store


__all__ = [
    "CHECKPOINT_VERSION",
    "CheckpointFormatError",
    "ParameterStore",
    "adam_step",
    "glorot_uniform",
]
