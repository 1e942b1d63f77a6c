"""Hyper kernels: one over-parameterized convolution weight per edge.

A hyper kernel of odd extent S contains floor(S/2) centered sub-kernels of
extents 3, 5, ..., S, each obtained by a binary mask.  The ring of positions
a sub-kernel adds over the next smaller one is its core area; the mean of the
kernel weights over that core (across all channel pairs) is the candidate's
structural parameter, so operator weights and architecture scores live in the
same buffer.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .tensor import Tensor

__all__ = ["MaskSet", "HyperKernel", "make_masks", "extract_subkernel",
           "structural_params", "mix_masks"]


@dataclass(frozen=True)
class MaskSet:
    """Nested footprint masks and the core-area masks they induce."""

    extent: int
    dims: int
    nested: np.ndarray       # (n, *(extent,)*dims) 0/1, nested[s-1] has (2s+1)^d ones
    core: np.ndarray         # same shape; core[0] == nested[0], rings afterwards
    counts: np.ndarray       # ones per nested mask
    core_counts: np.ndarray  # ones per core mask

    @property
    def n_candidates(self) -> int:
        return self.nested.shape[0]

    def extent_of(self, s: int) -> int:
        return 2 * s + 1


@lru_cache(maxsize=None)
def make_masks(extent: int, dims: int) -> MaskSet:
    """Build the mask set for a hyper kernel of odd ``extent`` in ``dims`` axes."""
    if dims not in (1, 2, 3):
        raise ValueError(f"dims must be 1, 2 or 3, got {dims}")
    if extent < 3 or extent % 2 == 0:
        raise ValueError(f"hyper-kernel extent must be odd and >= 3, got {extent}")
    n = extent // 2
    center = extent // 2
    axes_dist = np.abs(np.arange(extent) - center)
    dist = axes_dist
    for _ in range(dims - 1):
        dist = np.maximum(dist[..., None], axes_dist)
    nested = np.stack([(dist <= s).astype(np.float64) for s in range(1, n + 1)])
    core = nested.copy()
    core[1:] -= nested[:-1]
    counts = nested.reshape(n, -1).sum(axis=1)
    core_counts = core.reshape(n, -1).sum(axis=1)
    nested.setflags(write=False)
    core.setflags(write=False)
    return MaskSet(extent, dims, nested, core, counts, core_counts)


class HyperKernel:
    """Trainable weight housing all candidate sub-kernels of one edge."""

    def __init__(self, dims: int, size: int, weights: Tensor, kind: str = "standard"):
        if kind not in ("standard", "depthwise"):
            raise ValueError(f"unknown hyper-kernel kind {kind!r}")
        masks = make_masks(size, dims)  # validates size/dims
        expected_rank = 2 + dims
        if weights.ndim != expected_rank:
            raise ValueError(
                f"{dims}-d hyper-kernel weights must have rank {expected_rank}, "
                f"got {weights.ndim}")
        if kind == "depthwise":
            if dims != 2 or weights.shape[1] != 1:
                raise ValueError("depthwise hyper kernels are 2-d with shape (C, 1, S, S)")
        for axis, e in enumerate(weights.shape[2:]):
            if e != size:
                raise ValueError(
                    f"spatial axis {axis} of weights has extent {e}, expected {size}")
        self.dims = dims
        self.size = size
        self.kind = kind
        self.weights = weights
        self.masks = masks

    @classmethod
    def initialized(cls, rng: np.random.Generator, dims: int, size: int,
                    out_channels: int, in_channels: int,
                    kind: str = "standard") -> "HyperKernel":
        """Fresh hyper kernel with standard-normal weights."""
        shape = (out_channels, in_channels) + (size,) * dims
        w = Tensor(rng.standard_normal(shape), requires_grad=True)
        return cls(dims, size, w, kind)

    @property
    def n_candidates(self) -> int:
        return self.masks.n_candidates

    @property
    def channel_pairs(self) -> int:
        return self.weights.shape[0] * self.weights.shape[1]


def extract_subkernel(kernel: HyperKernel, s: int) -> Tensor:
    """Sub-kernel ``s`` (1-based, extent 2s+1) as the masked hyper kernel."""
    n = kernel.n_candidates
    if not 1 <= s <= n:
        raise ValueError(f"sub-kernel index {s} out of range [1, {n}]")
    return kernel.weights * Tensor(kernel.masks.nested[s - 1])


def structural_params(kernel: HyperKernel) -> Tensor:
    """Per-candidate importance scores: core-area means of the kernel weights.

    The mean runs over the core positions and over all (out, in) channel
    pairs, so the result is one scalar per candidate; it is linear in the
    weights and its gradient is core_mask / (core_count * channel_pairs).
    """
    masks = kernel.masks
    w = kernel.weights
    pairs = kernel.channel_pairs
    core_flat = masks.core.reshape(masks.n_candidates, -1)
    denom = masks.core_counts * pairs
    w_shape = w.shape

    spatial_sum = w.data.reshape(pairs, -1).sum(axis=0)
    out_data = core_flat @ spatial_sum / denom

    def vjp(g):
        coeff = g / denom
        spatial_grad = coeff @ core_flat
        return (np.broadcast_to(
            spatial_grad.reshape(w_shape[2:]), w_shape).copy(),)

    return Tensor._make(out_data, (w,), vjp)


def mix_masks(weights: Tensor, masks: MaskSet) -> Tensor:
    """Blend the nested footprint masks with per-candidate weights.

    Returns the spatial map sum_s weights[s] * m_s, so that
    kernel * mix_masks(softmax(alpha), masks) is the mixture of all
    candidate sub-kernels in a single convolution weight.
    """
    if weights.shape != (masks.n_candidates,):
        raise ValueError(
            f"expected {masks.n_candidates} mixture weights, got shape {weights.shape}")
    nested_flat = masks.nested.reshape(masks.n_candidates, -1)
    spatial_shape = masks.nested.shape[1:]
    out_data = (weights.data @ nested_flat).reshape(spatial_shape)

    def vjp(g):
        return (nested_flat @ g.reshape(-1),)

    return Tensor._make(out_data, (weights,), vjp)
