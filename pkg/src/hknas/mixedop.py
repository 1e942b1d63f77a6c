"""Searchable edges: softmax mixtures of the candidate convolutions.

An edge mixes its candidates in kernel space: because convolution is linear
in the kernel, sum_s p_s * conv(x, K*m_s) == conv(x, K * sum_s p_s*m_s), so
one convolution with a mask-blended hyper kernel evaluates the whole mixture.
Gradients reach the hyper kernel both through the blended weights and through
the softmax of the structural parameters it generates (or through separate
free score vectors in the two-tier ablation mode).

Feature layout for the volumetric forms is (batch, channels, height, width):
the 1-d kernel slides along the channel axis per spatial location, the
depthwise kernel acts per channel spatially, and the ``conv3d`` form treats
the channel axis as depth of a single feature volume.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .hyperkernel import HyperKernel, mix_masks, structural_params
from .module import Module
from .ops import ConvSpec, convolve, softmax
from .tensor import Tensor

__all__ = ["Form", "DerivedOp", "MixedEdge", "FixedOp", "instantiate"]

_SPEC_1D = ConvSpec("standard-1d")
_SPEC_3D = ConvSpec("standard-3d")
_SPEC_DW = ConvSpec("depthwise-2d")


class Form(Enum):
    """How an edge realizes its volumetric convolution."""

    CONV3D = "conv3d"
    SERIAL_1D_2DDW = "serial_1d_then_2ddw"
    SERIAL_2DDW_1D = "serial_2ddw_then_1d"
    PARALLEL = "parallel_1d_2ddw"

    @classmethod
    def parse(cls, text: str) -> "Form":
        for member in cls:
            if member.value == text:
                return member
        raise ValueError(f"unknown form {text!r} "
                         f"(expected one of {[m.value for m in cls]})")

    @property
    def is_pair(self) -> bool:
        return self is not Form.CONV3D


@dataclass(frozen=True)
class DerivedOp:
    """Selected candidate indices of one edge, 1-based, in application order.

    Single-kernel edges carry one index; serial pairs are (first stage,
    second stage); the parallel pair is (1-d branch, depthwise branch).
    The selected extent is always 2*index + 1.
    """

    form: Form | None
    indices: tuple[int, ...]


def _spectral_conv(x: Tensor, w: Tensor) -> Tensor:
    """1-d convolution along the channel axis at every spatial location."""
    b, c, h, wd = x.shape
    flat = x.transpose(0, 2, 3, 1).reshape(b * h * wd, 1, c)
    y = convolve(flat, w, _SPEC_1D)
    return y.reshape(b, h, wd, c).transpose(0, 3, 1, 2)


def _volume_conv(x: Tensor, w: Tensor) -> Tensor:
    """3-d convolution over (channels, height, width) as one feature volume."""
    b, c, h, wd = x.shape
    y = convolve(x.reshape(b, 1, c, h, wd), w, _SPEC_3D)
    return y.reshape(b, c, h, wd)


def _apply_form(x: Tensor, form: Form | None, weights: list[Tensor]) -> Tensor:
    if form is None:
        return convolve(x, weights[0], _SPEC_1D)
    if form is Form.CONV3D:
        return _volume_conv(x, weights[0])
    if form is Form.SERIAL_1D_2DDW:
        return convolve(_spectral_conv(x, weights[0]), weights[1], _SPEC_DW)
    if form is Form.SERIAL_2DDW_1D:
        return _spectral_conv(convolve(x, weights[0], _SPEC_DW), weights[1])
    if form is Form.PARALLEL:
        return _spectral_conv(x, weights[0]) + convolve(x, weights[1], _SPEC_DW)
    raise ValueError(f"unknown form {form!r}")


def _kernel_plan(form: Form | None, channels: int, size: int):
    """(dims, out_ch, in_ch, kind) per hyper kernel, in application order."""
    one_d = (1, channels, channels, "standard")
    spectral = (1, 1, 1, "standard")
    depthwise = (2, channels, 1, "depthwise")
    volume = (3, 1, 1, "standard")
    if form is None:
        return [one_d]
    if form is Form.CONV3D:
        return [volume]
    if form is Form.SERIAL_2DDW_1D:
        return [depthwise, spectral]
    return [spectral, depthwise]  # serial 1d-first and parallel


class MixedEdge(Module):
    """One searchable layer position operating at a fixed channel count.

    ``form=None`` is the plain multi-channel 1-d convolution edge used by the
    spectral classification network; the four ``Form`` variants cover the
    volumetric networks.  In ``hyper`` mode the mixture scores are derived
    from the hyper kernels; in ``free`` mode they are independent parameters.
    """

    def __init__(self, rng: np.random.Generator, channels: int,
                 form: Form | None, size: int = 9, alpha_mode: str = "hyper"):
        super().__init__()
        if alpha_mode not in ("hyper", "free"):
            raise ValueError(f"unknown alpha_mode {alpha_mode!r}")
        self.channels = channels
        self.form = form
        self.size = size
        self.alpha_mode = alpha_mode
        self.kernels: list[HyperKernel] = []
        for i, (dims, out_ch, in_ch, kind) in enumerate(_kernel_plan(form, channels, size)):
            kernel = HyperKernel.initialized(rng, dims, size, out_ch, in_ch, kind)
            self.add_param(f"kernel{i}", kernel.weights, decay=True)
            self.kernels.append(kernel)
        if alpha_mode == "free":
            n = self.kernels[0].n_candidates
            for i in range(len(self.kernels)):
                self.add_param(f"free_alpha{i}",
                               Tensor(np.zeros(n), requires_grad=True), decay=False)

    @property
    def n_candidates(self) -> int:
        return self.kernels[0].n_candidates

    def alphas(self) -> list[Tensor]:
        """Per-kernel score vectors, in application order."""
        if self.alpha_mode == "free":
            return [self._params[f"free_alpha{i}"] for i in range(len(self.kernels))]
        return [structural_params(k) for k in self.kernels]

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.channels:
            raise ValueError(
                f"edge expects {self.channels} channels, got {x.shape[1]}")
        weights = []
        for kernel, alpha in zip(self.kernels, self.alphas()):
            p = softmax(alpha)
            weights.append(kernel.weights * mix_masks(p, kernel.masks))
        return _apply_form(x, self.form, weights)

    __call__ = forward

    def derive(self) -> DerivedOp:
        """Argmax candidate per kernel; ties go to the smallest kernel."""
        indices = tuple(int(np.argmax(a.data)) + 1 for a in self.alphas())
        return DerivedOp(self.form, indices)


def _fresh_conv(rng: np.random.Generator, shape: tuple) -> Tensor:
    # Derived networks train from scratch with ordinary convolutions; gain 2
    # keeps them expressed within the short desk-scale epoch budgets.
    fan_in = int(np.prod(shape[1:]))
    return Tensor(rng.standard_normal(shape) * (2.0 / np.sqrt(fan_in)),
                  requires_grad=True)


class FixedOp(Module):
    """A derived edge: the selected convolution(s) with their exact extents."""

    def __init__(self, rng: np.random.Generator, channels: int,
                 form: Form | None, indices: tuple[int, ...], size: int = 9):
        super().__init__()
        plan = _kernel_plan(form, channels, size)
        n = size // 2
        if len(indices) != len(plan):
            raise ValueError(
                f"form {form} needs {len(plan)} indices, got {len(indices)}")
        for pos, s in enumerate(indices):
            if not 1 <= s <= n:
                raise ValueError(f"candidate index {s} out of range [1, {n}]")
        self.channels = channels
        self.form = form
        self.indices = tuple(indices)
        self.size = size
        self.weights: list[Tensor] = []
        for i, ((dims, out_ch, in_ch, _kind), s) in enumerate(zip(plan, indices)):
            extent = 2 * s + 1
            shape = (out_ch, in_ch) + (extent,) * dims
            w = self.add_param(f"conv{i}", _fresh_conv(rng, shape), decay=True)
            self.weights.append(w)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.channels:
            raise ValueError(
                f"edge expects {self.channels} channels, got {x.shape[1]}")
        return _apply_form(x, self.form, self.weights)

    __call__ = forward


def instantiate(derived: DerivedOp, edge: MixedEdge,
                rng: np.random.Generator) -> FixedOp:
    """Fixed operation for ``derived`` with fresh weights of the exact size."""
    if derived.form is not edge.form:
        raise ValueError("derived form does not match the edge form")
    return FixedOp(rng, edge.channels, derived.form, derived.indices, edge.size)
