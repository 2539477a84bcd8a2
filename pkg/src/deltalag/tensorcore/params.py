"""Named parameter containers and initializers."""
from __future__ import annotations

from collections.abc import Iterator, Mapping

import numpy as np

from ..errors import ConfigError, DimensionError
from .core import Tensor


class ParamSet(Mapping[str, Tensor]):
    """Ordered name -> trainable tensor mapping; each tensor carries its own grad buffer."""

    def __init__(self, arrays: Mapping[str, np.ndarray] | None = None):
        self._params: dict[str, Tensor] = {}
        for name, value in (arrays or {}).items():
            self.add(name, value)

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        t.zero_grad()
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}{tuple(v.shape)}" for k, v in self._params.items())
        return f"ParamSet({inner})"

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def grads(self) -> dict[str, np.ndarray]:
        return {k: (np.zeros_like(t.data) if t.grad is None else t.grad) for k, t in self._params.items()}

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self._params.items()}

    def copy(self) -> "ParamSet":
        return ParamSet(self.arrays())

    def load(self, arrays: Mapping[str, np.ndarray]) -> None:
        """Overwrite values in place; names and shapes must match exactly."""
        missing = set(self._params) ^ set(arrays)
        if missing:
            raise DimensionError(f"parameter names differ: {sorted(missing)}")
        for name, t in self._params.items():
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != t.shape:
                raise DimensionError(
                    f"parameter {name!r}: expected shape {t.shape}, got {value.shape}"
                )
            t.data = value.copy()

    def num_values(self) -> int:
        return sum(t.size for t in self._params.values())


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def scaled_uniform(rng: np.random.Generator, shape: tuple[int, ...], hidden: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(hidden)
    return rng.uniform(-bound, bound, size=shape)
