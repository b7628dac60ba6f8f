"""Named parameter storage with deterministic, lazily created tensors."""

from __future__ import annotations

import zlib
from collections.abc import Iterator

import numpy as np

from .autodiff import Tensor


class ParamStore:
    """Ordered mapping of parameter name -> leaf Tensor.

    Each parameter draws its initial values from a generator seeded by
    ``(seed, crc32(name))``, so creation order never changes the values. This
    matters for the per-period-shape matrices that appear mid-training.
    """

    def __init__(self, seed: int = 0, dtype=np.float32):
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}

    def _rng(self, name: str) -> np.random.Generator:
        return np.random.default_rng([self.seed, zlib.crc32(name.encode())])

    def uniform(self, name: str, shape: tuple[int, ...], fan_in: int) -> Tensor:
        if name not in self._params:
            bound = 1.0 / np.sqrt(fan_in)
            data = self._rng(name).uniform(-bound, bound, size=shape)
            self._params[name] = Tensor(data, requires_grad=True, dtype=self.dtype)
        return self._params[name]

    def const(self, name: str, shape: tuple[int, ...], value: float) -> Tensor:
        if name not in self._params:
            self._params[name] = Tensor(np.full(shape, value), requires_grad=True, dtype=self.dtype)
        return self._params[name]

    def zeros(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self.const(name, shape, 0.0)

    def ones(self, name: str, shape: tuple[int, ...]) -> Tensor:
        return self.const(name, shape, 1.0)

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {k: v for k, v in self._params.items() if k.startswith(prefix)}

    def set(self, name: str, data: np.ndarray) -> None:
        self._params[name] = Tensor(np.asarray(data), requires_grad=True, dtype=self.dtype)

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, v in state.items():
            self.set(k, v)
