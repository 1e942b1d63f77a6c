"""Minimal parameter-container base for network components.

Child modules are picked up automatically when assigned as attributes (or
inside a ``ModuleList``); trainable tensors are registered explicitly with
``add_param`` so each carries its weight-decay eligibility, and persistent
non-trainable state (e.g. normalization running statistics) goes through
``add_buffer``.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import Tensor

__all__ = ["Module", "ModuleList"]


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_decay", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "_training", True)

    def __setattr__(self, name, value):
        if isinstance(value, (Module, ModuleList)):
            self._children[name] = value
        object.__setattr__(self, name, value)

    # -- registration ---------------------------------------------------------

    def add_param(self, name: str, tensor: Tensor, decay: bool = True) -> Tensor:
        tensor.requires_grad = True
        self._params[name] = tensor
        self._decay[name] = decay
        object.__setattr__(self, name, tensor)
        return tensor

    def add_buffer(self, name: str, array: np.ndarray) -> np.ndarray:
        array = np.asarray(array, dtype=np.float64)
        self._buffers[name] = array
        object.__setattr__(self, name, array)
        return array

    def set_buffer(self, name: str, array: np.ndarray) -> None:
        if name not in self._buffers:
            raise KeyError(f"unknown buffer {name!r}")
        self._buffers[name] = np.asarray(array, dtype=np.float64)
        object.__setattr__(self, name, self._buffers[name])

    # -- traversal -------------------------------------------------------------

    def _iter_children(self) -> Iterator[tuple[str, "Module"]]:
        for name, child in self._children.items():
            if isinstance(child, ModuleList):
                for i, sub in enumerate(child):
                    yield f"{name}.{i}", sub
            else:
                yield name, child

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, t in self._params.items():
            yield prefix + name, t
        for cname, child in self._iter_children():
            yield from child.named_parameters(prefix + cname + ".")

    def parameter_specs(self, prefix: str = "") -> Iterator[tuple[str, Tensor, bool]]:
        """(name, tensor, weight-decay eligible) for every parameter."""
        for name, t in self._params.items():
            yield prefix + name, t, self._decay[name]
        for cname, child in self._iter_children():
            yield from child.parameter_specs(prefix + cname + ".")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, a in self._buffers.items():
            yield prefix + name, a
        for cname, child in self._iter_children():
            yield from child.named_buffers(prefix + cname + ".")

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.zero_grad()

    # -- state snapshots -------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: t.data.copy() for name, t in self.named_parameters()}
        state.update({name: a.copy() for name, a in self.named_buffers()})
        return state

    def _buffer_owners(self, prefix: str = "") -> Iterator[tuple[str, "Module", str]]:
        for name in self._buffers:
            yield prefix + name, self, name
        for cname, child in self._iter_children():
            yield from child._buffer_owners(prefix + cname + ".")

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        """Strict load: names and shapes must match the model exactly."""
        remaining = set(state)
        for name, t in self.named_parameters():
            if name not in state:
                raise KeyError(f"checkpoint is missing tensor {name!r}")
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ValueError(
                    f"tensor {name!r}: checkpoint shape {arr.shape} does not "
                    f"match model shape {t.data.shape}")
            t.data = arr.copy()
            remaining.discard(name)
        for name, owner, local in self._buffer_owners():
            if name not in state:
                raise KeyError(f"checkpoint is missing tensor {name!r}")
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != owner._buffers[local].shape:
                raise ValueError(
                    f"tensor {name!r}: checkpoint shape {arr.shape} does not "
                    f"match model shape {owner._buffers[local].shape}")
            owner.set_buffer(local, arr)
            remaining.discard(name)
        if remaining:
            raise KeyError(f"checkpoint has unexpected tensors: {sorted(remaining)}")

    # -- train / eval mode -------------------------------------------------------

    def train(self, mode: bool = True) -> "Module":
        object.__setattr__(self, "_training", mode)
        for _, child in self._iter_children():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    @property
    def training(self) -> bool:
        return self._training


class ModuleList(list):
    """A plain list whose Module elements are visible to the parent Module."""
