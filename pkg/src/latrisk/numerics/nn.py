"""Parameter storage and multilayer perceptrons on top of the autodiff tape."""

from __future__ import annotations

import hashlib
from collections import OrderedDict
from typing import Iterable, Mapping, Sequence

import numpy as np

from .tensor import ACTIVATIONS, Tensor, as_tensor, matmul


class ShapeError(ValueError):
    pass


class ParamStore:
    """Named float64 arrays with deterministic (insertion) order.

    ``version`` increments on every write through :meth:`set` so callers can
    detect updates cheaply.
    """

    def __init__(self, items: Mapping[str, np.ndarray] | None = None):
        self._arrays: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self.version = 0
        if items:
            for k, v in items.items():
                self.add(k, v)

    def add(self, name: str, value) -> None:
        if name in self._arrays:
            raise KeyError(f"parameter {name!r} already exists")
        self._arrays[name] = np.array(value, dtype=np.float64)

    def set(self, name: str, value) -> None:
        arr = np.asarray(value, dtype=np.float64)
        if arr.shape != self._arrays[name].shape:
            raise ShapeError(f"{name}: shape {arr.shape} != {self._arrays[name].shape}")
        self._arrays[name] = arr.copy()
        self.version += 1

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def __iter__(self):
        return iter(self._arrays)

    def __len__(self) -> int:
        return len(self._arrays)

    def names(self) -> list[str]:
        return list(self._arrays)

    def items(self):
        return self._arrays.items()

    def copy(self) -> "ParamStore":
        out = ParamStore({k: v.copy() for k, v in self._arrays.items()})
        out.version = self.version
        return out

    def leaves(self, requires_grad: bool = True) -> "OrderedDict[str, Tensor]":
        """Fresh autodiff leaves, one per parameter."""
        return OrderedDict(
            (k, Tensor(v, requires_grad=requires_grad, name=k)) for k, v in self._arrays.items()
        )

    def constants(self) -> "OrderedDict[str, Tensor]":
        return self.leaves(requires_grad=False)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for k, v in self._arrays.items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(v, dtype="<f8").tobytes())
        return h.hexdigest()

    def num_params(self) -> int:
        return int(sum(v.size for v in self._arrays.values()))


def init_mlp(
    store: ParamStore,
    prefix: str,
    widths: Sequence[int],
    rng: np.random.Generator,
    zero_last: bool = False,
) -> None:
    """Uniform fan-in initialisation, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        last = i == len(widths) - 2
        if last and zero_last:
            w = np.zeros((fan_in, fan_out))
            b = np.zeros(fan_out)
        else:
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            b = rng.uniform(-bound, bound, size=fan_out)
        store.add(f"{prefix}W{i}", w)
        store.add(f"{prefix}b{i}", b)


def mlp_forward(
    params: Mapping[str, Tensor | np.ndarray],
    x,
    widths: Sequence[int],
    activation: str = "relu",
    out_activation: str = "identity",
    prefix: str = "",
) -> Tensor:
    """Dense network ``widths[0] -> ... -> widths[-1]``.

    ``activation`` is applied after every hidden layer and ``out_activation``
    after the last one.
    """
    act = ACTIVATIONS[activation]
    out_act = ACTIVATIONS[out_activation]
    h = as_tensor(x)
    n_layers = len(widths) - 1
    for i in range(n_layers):
        w = as_tensor(params[f"{prefix}W{i}"])
        b = as_tensor(params[f"{prefix}b{i}"])
        if h.shape[-1] != w.shape[0]:
            raise ShapeError(
                f"layer {prefix}W{i}: input last dimension {h.shape[-1]} does not match "
                f"weight fan-in {w.shape[0]}"
            )
        h = matmul(h, w) + b
        h = out_act(h) if i == n_layers - 1 else act(h)
    return h


def select(params: Mapping[str, Tensor], prefix: str) -> dict[str, Tensor]:
    """Sub-mapping of entries under ``prefix`` with the prefix stripped."""
    n = len(prefix)
    return {k[n:]: v for k, v in params.items() if k.startswith(prefix)}


def global_norm_sq(grads: Iterable[np.ndarray]) -> float:
    return float(sum(float(np.sum(g * g)) for g in grads))
