"""Named parameter collections."""
from __future__ import annotations

import logging
from collections import OrderedDict
from typing import Dict, Iterator, Mapping, Optional, Tuple

import numpy as np

from ..exceptions import CompatibilityError, ContractError
from .autodiff import Tensor, parameter

_LOGGER = logging.getLogger(__name__)

ShapeSpec = Dict[str, Tuple[int, ...]]


def glorot_bound(shape: Tuple[int, ...]) -> float:
    """Uniform init bound sqrt(6 / (fan_in + fan_out))."""
    if len(shape) == 1:
        fan_out, fan_in = 1, shape[0]
    else:
        fan_out, fan_in = shape[0], int(np.prod(shape[1:]))
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


class ModelParams:
    """Ordered name -> Tensor map for one model configuration."""

    def __init__(self, tensors: Optional[Mapping[str, Tensor]] = None) -> None:
        """Initialize from an optional mapping of named tensors."""
        self._tensors: "OrderedDict[str, Tensor]" = OrderedDict()
        for name, tensor in (tensors or {}).items():
            self.add(name, tensor)

    @classmethod
    def initialize(cls, shapes: ShapeSpec, rng: np.random.Generator) -> "ModelParams":
        """Draw every block uniformly in [-a, a] with the Glorot bound."""
        params = cls()
        for name, shape in shapes.items():
            bound = glorot_bound(shape)
            params.add(name, parameter(rng.uniform(-bound, bound, size=shape), name))
        _LOGGER.debug(
            "Initialized %d parameter blocks (%d values)", len(params), params.count()
        )
        return params

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray]) -> "ModelParams":
        """Wrap plain arrays as trainable tensors."""
        return cls({name: parameter(value, name) for name, value in arrays.items()})

    def add(self, name: str, tensor: Tensor) -> None:
        """Register a block; names are unique."""
        if name in self._tensors:
            raise ContractError(f"duplicate parameter block: {name}")
        tensor.requires_grad = True
        tensor.name = name
        self._tensors[name] = tensor

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._tensors[name]
        except KeyError as err:
            raise ContractError(f"missing parameter block: {name}") from err

    def __contains__(self, name: object) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self):
        """Iterate (name, tensor) pairs in registration order."""
        return self._tensors.items()

    def names(self) -> Tuple[str, ...]:
        """Block names in registration order."""
        return tuple(self._tensors)

    def count(self) -> int:
        """Total number of scalar parameters."""
        return sum(t.size for t in self._tensors.values())

    def zero_grad(self) -> None:
        """Reset every block's gradient."""
        for tensor in self._tensors.values():
            tensor.zero_grad()

    def to_arrays(self) -> "OrderedDict[str, np.ndarray]":
        """Copy out the values."""
        return OrderedDict((n, t.data.copy()) for n, t in self._tensors.items())

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        """Overwrite values in place; names and shapes must match exactly."""
        if set(arrays) != set(self._tensors):
            missing = sorted(set(self._tensors) - set(arrays))
            extra = sorted(set(arrays) - set(self._tensors))
            raise CompatibilityError(
                f"parameter blocks differ (missing={missing}, unexpected={extra})"
            )
        for name, tensor in self._tensors.items():
            value = np.asarray(arrays[name], dtype=np.float64)
            if value.shape != tensor.shape:
                raise CompatibilityError(
                    f"block {name}: shape {value.shape} != expected {tensor.shape}"
                )
            tensor.data[...] = value

    def copy(self) -> "ModelParams":
        """Deep copy with fresh tensors (for snapshots and replicas)."""
        return ModelParams.from_arrays(self.to_arrays())

    def shapes(self) -> ShapeSpec:
        """Name -> shape map."""
        return {n: t.shape for n, t in self._tensors.items()}
