"""Parameter containers and initialisers shared by the backbone and critic."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .ndtensor import Tensor, add, matmul


def xavier(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def zeros(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def ones(*shape: int) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


@dataclass
class Linear:
    w: Tensor  # [in, out]
    b: Tensor  # [out]

    @classmethod
    def init(cls, rng: np.random.Generator, n_in: int, n_out: int) -> "Linear":
        return cls(xavier(rng, (n_in, n_out), n_in, n_out), zeros(n_out))

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.w), self.b)


def named_parameters(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Walk dataclasses and lists depth-first, yielding dotted names."""
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            name = f"{prefix}.{f.name}" if prefix else f.name
            yield from named_parameters(getattr(obj, f.name), name)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from named_parameters(item, f"{prefix}.{i}" if prefix else str(i))


def parameters(obj) -> list[Tensor]:
    return [t for _, t in named_parameters(obj)]


def parameter_count(obj) -> int:
    return sum(t.size for t in parameters(obj))


def checksum(obj) -> str:
    """SHA-256 over every parameter's name, shape and raw bytes."""
    h = hashlib.sha256()
    for name, t in named_parameters(obj):
        h.update(name.encode())
        h.update(repr(t.shape).encode())
        h.update(np.ascontiguousarray(t.data).tobytes())
    return h.hexdigest()


def set_requires_grad(obj, flag: bool) -> None:
    for t in parameters(obj):
        t.requires_grad = flag
        t.grad = None
