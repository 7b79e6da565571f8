"""Named parameter container with gradients and BN running statistics."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from ..errors import ShapeMismatch


class ParameterStore:
    """Ordered ``name -> array`` map of learnable tensors.

    Insertion order is the canonical iteration order; it is fixed by the model
    builder and does not depend on dict hashing or platform. Running BN
    statistics live in ``buffers`` and are never counted as parameters.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.training = False

    def add_param(self, name: str, value: np.ndarray) -> None:
        if name in self.params or name in self.buffers:
            raise KeyError(f"duplicate name {name}")
        value = np.ascontiguousarray(value, dtype=self.dtype)
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)

    def add_buffer(self, name: str, value: np.ndarray) -> None:
        if name in self.params or name in self.buffers:
            raise KeyError(f"duplicate name {name}")
        self.buffers[name] = np.ascontiguousarray(value, dtype=self.dtype)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name] if name in self.params else self.buffers[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    def shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        return [(n, v.shape) for n, v in self.params.items()]

    def buffer_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        return [(n, v.shape) for n, v in self.buffers.items()]

    def num_scalars(self) -> int:
        return sum(int(v.size) for v in self.params.values())

    def set_grad(self, name: str, grad: np.ndarray) -> None:
        buf = self.grads[name]
        if grad.shape != buf.shape:
            raise ShapeMismatch(f"gradient for {name}: {grad.shape} != {buf.shape}")
        buf[...] = grad

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0)

    def train(self, mode: bool = True) -> "ParameterStore":
        self.training = bool(mode)
        return self

    def eval(self) -> "ParameterStore":
        return self.train(False)

    def astype(self, dtype) -> "ParameterStore":
        out = ParameterStore(dtype)
        for n, v in self.params.items():
            out.add_param(n, v)
        for n, v in self.buffers.items():
            out.add_buffer(n, v)
        out.training = self.training
        return out

    def copy(self) -> "ParameterStore":
        return self.astype(self.dtype)

    def equal(self, other: "ParameterStore") -> bool:
        """Exact (bitwise for finite values) equality of names, params and buffers."""
        if list(self.params) != list(other.params) or list(self.buffers) != list(other.buffers):
            return False
        pairs = list(zip(self.params.values(), other.params.values()))
        pairs += list(zip(self.buffers.values(), other.buffers.values()))
        return all(a.shape == b.shape and a.tobytes() == b.tobytes() for a, b in pairs)
