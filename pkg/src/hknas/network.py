"""Hierarchical block/layer networks around the searchable edges.

Three kinds share the skeleton stem -> M blocks of N residual bottleneck
layers -> head.  Each layer squeezes channels to a quarter (no activation),
runs its edge, applies normalization + ReLU, expands back, and adds the
layer input.  Channel width starts at 64 and doubles at every scheduled
downsample (factor-2 average pooling):

* ``cls1d``  spectral vector -> linear to 96, treated as a 1-channel signal
  lifted to 64 channels; downsampled three times at M/4-block intervals;
  global average + linear classifier.
* ``cls3d``  band patch -> 1x1 conv to 64 channels; downsampled after every
  block (M fixed at 3); global average + linear classifier.
* ``seg3d``  whole cube -> 1x1 conv to 64; downsampled once after block 1;
  1x1 classifier + bilinear upsample back to the input resolution; group
  normalization instead of batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .archmatrix import ArchitectureMatrix, MatrixFormatError
from .mixedop import FixedOp, Form, MixedEdge
from .module import Module, ModuleList
from .ops import (ConvSpec, convolve, global_avg, linear, normalize, pool_avg,
                  relu, upsample_bilinear)
from .tensor import Tensor

__all__ = ["NetworkTemplate", "NetworkModel", "build_search_model",
           "build_derived_model", "derive_architecture", "downsample_schedule"]

KINDS = ("cls1d", "cls3d", "seg3d")
_PW = ConvSpec("pointwise")


def downsample_schedule(kind: str, blocks: int) -> tuple[int, ...]:
    """1-based block indices after which features are pooled (factor 2)."""
    if kind == "cls1d":
        quarters = (blocks // 4, 2 * blocks // 4, 3 * blocks // 4)
        return tuple(sorted({p for p in quarters if p >= 1}))
    if kind == "cls3d":
        return tuple(range(1, blocks + 1))
    if kind == "seg3d":
        return (1,)
    raise ValueError(f"unknown network kind {kind!r}")


@dataclass(frozen=True)
class NetworkTemplate:
    """Static description of one network to build."""

    kind: str
    blocks: int
    layers: int
    classes: int
    bands: int
    form: Form | None = None
    hyper_size: int = 9
    initial_channels: int = 64
    stem_features: int = 96  # cls1d only

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown network kind {self.kind!r}")
        if self.blocks < 1 or self.layers < 1:
            raise ValueError("block and layer counts must be >= 1")
        if self.kind == "cls3d" and self.blocks != 3:
            raise ValueError("cls3d uses exactly 3 blocks")
        if self.kind == "cls1d":
            if self.form is not None:
                raise ValueError("cls1d edges are plain 1-d convolutions; form must be unset")
        elif self.form is None:
            raise ValueError(f"{self.kind} needs a volumetric form")
        if self.classes < 2 or self.bands < 1:
            raise ValueError("need at least 2 classes and 1 band")
        if self.initial_channels % 4:
            raise ValueError("initial channel count must be divisible by 4")

    @property
    def downsamples(self) -> tuple[int, ...]:
        return downsample_schedule(self.kind, self.blocks)

    def block_width(self, block: int) -> int:
        """Channel width of 1-based ``block``; doubles after each downsample."""
        done = sum(1 for p in self.downsamples if p < block)
        return self.initial_channels * (2 ** done)

    @property
    def final_width(self) -> int:
        done = len(self.downsamples)
        return self.initial_channels * (2 ** done)

    @property
    def norm_mode(self) -> str:
        return "group" if self.kind == "seg3d" else "batch"


# Plumbing convolutions/linears use scaled-normal init with gain 2: at the
# short epoch budgets used at desk scale, weaker residual branches leave the
# network underfit before the cosine schedule decays the learning rate.
_INIT_GAIN = 2.0


class PointwiseConv(Module):
    def __init__(self, rng, in_channels: int, out_channels: int, bias: bool = True):
        super().__init__()
        w = rng.standard_normal((out_channels, in_channels)) * (
            _INIT_GAIN / np.sqrt(in_channels))
        self.add_param("weight", Tensor(w), decay=True)
        self.bias = None
        if bias:
            self.add_param("bias", Tensor(np.zeros(out_channels)), decay=False)

    def forward(self, x: Tensor) -> Tensor:
        y = convolve(x, self.weight, _PW)
        if self.bias is not None:
            y = y + self.bias.reshape((1, -1) + (1,) * (y.ndim - 2))
        return y

    __call__ = forward


class LinearLayer(Module):
    def __init__(self, rng, in_features: int, out_features: int):
        super().__init__()
        w = rng.standard_normal((in_features, out_features)) * (
            _INIT_GAIN / np.sqrt(in_features))
        self.add_param("weight", Tensor(w), decay=True)
        self.add_param("bias", Tensor(np.zeros(out_features)), decay=False)

    def forward(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)

    __call__ = forward


class NormLayer(Module):
    """Batch normalization with running statistics, or group normalization.

    Batch mode uses batch statistics while training and the running averages
    (momentum 0.1) for evaluation, so per-sample predictions do not depend on
    how evaluation batches are assembled.  Group mode is stateless.
    """

    def __init__(self, channels: int, mode: str, groups: int = 8, eps: float = 1e-5,
                 momentum: float = 0.1):
        super().__init__()
        if mode not in ("batch", "group"):
            raise ValueError(f"unknown normalization mode {mode!r}")
        self.mode = mode
        self.groups = groups
        self.eps = eps
        self.momentum = momentum
        self.add_param("gamma", Tensor(np.ones(channels)), decay=False)
        self.add_param("beta", Tensor(np.zeros(channels)), decay=False)
        if mode == "batch":
            self.add_buffer("running_mean", np.zeros(channels))
            self.add_buffer("running_var", np.ones(channels))

    def forward(self, x: Tensor) -> Tensor:
        if self.mode == "group":
            return normalize(x, "group", self.gamma, self.beta,
                             groups=self.groups, eps=self.eps)
        if self.training:
            axes = (0,) + tuple(range(2, x.ndim))
            mean = x.data.mean(axis=axes)
            var = x.data.var(axis=axes)
            m = self.momentum
            self.set_buffer("running_mean", (1 - m) * self.running_mean + m * mean)
            self.set_buffer("running_var", (1 - m) * self.running_var + m * var)
            return normalize(x, "batch", self.gamma, self.beta, eps=self.eps)
        shape = (1, -1) + (1,) * (x.ndim - 2)
        scale = (self.gamma.data / np.sqrt(self.running_var + self.eps)).reshape(shape)
        shift = (self.beta.data - self.running_mean * scale.reshape(-1)).reshape(shape)
        return x * Tensor(scale) + Tensor(shift)

    __call__ = forward


class BottleneckLayer(Module):
    """Residual layer: squeeze -> edge -> norm -> ReLU -> expand -> add input."""

    def __init__(self, rng, channels: int, op, norm_mode: str):
        super().__init__()
        inner = channels // 4
        self.squeeze = PointwiseConv(rng, channels, inner, bias=False)
        self.op = op
        self.norm = NormLayer(inner, norm_mode)
        self.expand = PointwiseConv(rng, inner, channels, bias=False)

    def forward(self, x: Tensor) -> Tensor:
        h = self.squeeze(x)
        h = self.op(h)
        h = relu(self.norm(h))
        return x + self.expand(h)

    __call__ = forward


class Block(Module):
    def __init__(self, layers):
        super().__init__()
        self.layers = ModuleList(layers)

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x

    __call__ = forward


class NetworkModel(Module):
    """A full network in ``search`` mode (mixed edges) or ``derived`` mode."""

    def __init__(self, template: NetworkTemplate, rng: np.random.Generator,
                 mode: str, edge_factory):
        super().__init__()
        if mode not in ("search", "derived"):
            raise ValueError(f"unknown mode {mode!r}")
        self.template = template
        self.mode = mode
        t = template

        if t.kind == "cls1d":
            self.stem = LinearLayer(rng, t.bands, t.stem_features)
            self.lift = PointwiseConv(rng, 1, t.initial_channels)
        else:
            self.stem = PointwiseConv(rng, t.bands, t.initial_channels)

        blocks = []
        transitions = []
        for b in range(1, t.blocks + 1):
            width = t.block_width(b)
            layers = [
                BottleneckLayer(rng, width, edge_factory(rng, b, j, width // 4),
                                t.norm_mode)
                for j in range(t.layers)
            ]
            blocks.append(Block(layers))
            if b in t.downsamples:
                transitions.append(PointwiseConv(rng, width, 2 * width))
        self.blocks = ModuleList(blocks)
        self.transitions = ModuleList(transitions)

        if t.kind == "seg3d":
            self.head = PointwiseConv(rng, t.final_width, t.classes)
        else:
            self.head = LinearLayer(rng, t.final_width, t.classes)

    # -- forward -----------------------------------------------------------------

    def _spatial_axes(self) -> tuple:
        return (2,) if self.template.kind == "cls1d" else (2, 3)

    def forward(self, x) -> Tensor:
        t = self.template
        x = Tensor.as_tensor(x)
        if t.kind == "cls1d":
            if x.ndim != 2 or x.shape[1] != t.bands:
                raise ValueError(
                    f"cls1d expects (batch, {t.bands}) spectra, got {x.shape}")
            h = self.stem(x)
            h = self.lift(h.reshape(x.shape[0], 1, t.stem_features))
        else:
            expected = {"cls3d": "patches", "seg3d": "cubes"}[t.kind]
            if x.ndim != 4 or x.shape[1] != t.bands:
                raise ValueError(
                    f"{t.kind} expects (batch, {t.bands}, H, W) {expected}, got {x.shape}")
            h = self.stem(x)

        axes = self._spatial_axes()
        tr = iter(self.transitions)
        for b, block in enumerate(self.blocks, start=1):
            h = block(h)
            if b in t.downsamples:
                h = pool_avg(h, 2, axes)
                h = next(tr)(h)

        if t.kind == "seg3d":
            logits = self.head(h)
            return upsample_bilinear(logits, x.shape[2:])
        pooled = global_avg(h, axes)
        return self.head(pooled.reshape(pooled.shape[0], t.final_width))

    __call__ = forward

    # -- derivation ----------------------------------------------------------------

    def edges(self):
        for b, block in enumerate(self.blocks, start=1):
            for j, layer in enumerate(block.layers, start=1):
                yield b, j, layer.op


def build_search_model(template: NetworkTemplate, seed: int,
                       alpha_mode: str = "hyper") -> NetworkModel:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0])))

    def factory(r, _b, _j, channels):
        return MixedEdge(r, channels, template.form, template.hyper_size, alpha_mode)

    return NetworkModel(template, rng, "search", factory)


def build_derived_model(template: NetworkTemplate, matrix: ArchitectureMatrix,
                        seed: int) -> NetworkModel:
    if matrix.blocks != template.blocks or matrix.layers != template.layers:
        raise MatrixFormatError(
            f"matrix is {matrix.blocks}x{matrix.layers}, template needs "
            f"{template.blocks}x{template.layers}")
    grid = matrix.decode(template.form, template.hyper_size)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0])))

    def factory(r, b, j, channels):
        op = grid[b - 1][j - 1]
        return FixedOp(r, channels, op.form, op.indices, template.hyper_size)

    return NetworkModel(template, rng, "derived", factory)


def derive_architecture(model: NetworkModel) -> ArchitectureMatrix:
    """Per-edge argmax selection of a search-mode model as a matrix."""
    if model.mode != "search":
        raise ValueError("architecture derivation needs a search-mode model")
    t = model.template
    grid = [[None] * t.layers for _ in range(t.blocks)]
    for b, j, edge in model.edges():
        grid[b - 1][j - 1] = edge.derive()
    return ArchitectureMatrix.from_derived(grid)
