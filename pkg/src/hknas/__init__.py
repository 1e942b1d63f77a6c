"""Hyper-kernel architecture search for hyperspectral pixel classification.

Structural parameters are derived from over-parameterized convolution
kernels through masks and core areas, so searching an architecture is a
single one-tier weight optimization.  The package builds, searches, derives,
trains and evaluates the spectral (cls1d) and volumetric (cls3d, seg3d)
network families on a small float64 autodiff core.
"""

from .archmatrix import ArchitectureMatrix, MatrixFormatError
from .data import HsiCube, LabelMap, Split, SplitSpec
from .hyperkernel import (HyperKernel, MaskSet, extract_subkernel, make_masks,
                          structural_params)
from .mixedop import DerivedOp, FixedOp, Form, MixedEdge, instantiate
from .network import (NetworkModel, NetworkTemplate, build_derived_model,
                      build_search_model, derive_architecture)
from .ops import ConvSpec, convolve
from .optim import OptimConfig, cosine_lr, search, train, two_tier_search
from .tensor import Tensor, no_grad

__all__ = [
    "ArchitectureMatrix", "MatrixFormatError", "HsiCube", "LabelMap", "Split",
    "SplitSpec", "HyperKernel", "MaskSet", "extract_subkernel", "make_masks",
    "structural_params", "DerivedOp", "FixedOp", "Form", "MixedEdge",
    "instantiate", "NetworkModel", "NetworkTemplate", "build_derived_model",
    "build_search_model", "derive_architecture", "ConvSpec", "convolve",
    "OptimConfig", "cosine_lr", "search", "train", "two_tier_search",
    "Tensor", "no_grad",
]
