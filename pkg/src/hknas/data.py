"""Hyperspectral rasters: binary I/O, normalization, splits, patches, and a
synthetic scene generator for desk-scale runs.

Cube files are little-endian: magic ``HSICUBE1``, u32 height/width/bands,
then height*width*bands float32 values interleaved band-last per pixel.
Label files are magic ``HSILBL01``, u32 height/width, then height*width u16
class ids with 0 meaning unlabeled.  Values are widened to float64 in memory.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor

__all__ = ["DataError", "HsiCube", "LabelMap", "SplitSpec", "Split",
           "PixelSet", "SceneSet",
           "save_cube", "load_cube", "save_labels", "load_labels",
           "normalize", "stratified_split", "extract_patch", "synth_generate",
           "class_signatures", "save_split", "load_split",
           "build_vector_set", "build_patch_set", "build_scene_set", "halve"]

_CUBE_MAGIC = b"HSICUBE1"
_LABEL_MAGIC = b"HSILBL01"


class DataError(Exception):
    """Malformed data files or infeasible sampling requests."""


@dataclass
class HsiCube:
    values: np.ndarray  # (H, W, B) float64

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise DataError(f"cube must be (H, W, B), got rank {self.values.ndim}")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def bands(self) -> int:
        return self.values.shape[2]


@dataclass
class LabelMap:
    labels: np.ndarray  # (H, W) uint16, 0 = unlabeled

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint16)
        if self.labels.ndim != 2:
            raise DataError(f"labels must be (H, W), got rank {self.labels.ndim}")
        k = int(self.labels.max(initial=0))
        if k == 0:
            raise DataError("label map contains no labeled pixels")
        present = np.unique(self.labels)
        missing = [c for c in range(1, k + 1) if c not in present]
        if missing:
            raise DataError(f"declared classes without any pixel: {missing}")

    @property
    def n_classes(self) -> int:
        return int(self.labels.max())


# -- binary files ---------------------------------------------------------------------


def save_cube(path, cube: HsiCube) -> None:
    header = _CUBE_MAGIC + struct.pack("<III", cube.height, cube.width, cube.bands)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(cube.values.astype("<f4").tobytes())


def load_cube(path) -> HsiCube:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _CUBE_MAGIC:
        raise DataError(f"{path}: bad magic at byte 0, expected {_CUBE_MAGIC!r}")
    if len(blob) < 20:
        raise DataError(f"{path}: truncated header, {len(blob)} bytes < 20")
    h, w, b = struct.unpack("<III", blob[8:20])
    expected = 20 + h * w * b * 4
    if len(blob) != expected:
        raise DataError(
            f"{path}: expected {expected} bytes for a {h}x{w}x{b} cube, got {len(blob)}")
    values = np.frombuffer(blob, dtype="<f4", offset=20).reshape(h, w, b)
    return HsiCube(values.astype(np.float64))


def save_labels(path, labels: LabelMap) -> None:
    h, w = labels.labels.shape
    with open(path, "wb") as fh:
        fh.write(_LABEL_MAGIC + struct.pack("<II", h, w))
        fh.write(labels.labels.astype("<u2").tobytes())


def load_labels(path) -> LabelMap:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != _LABEL_MAGIC:
        raise DataError(f"{path}: bad magic at byte 0, expected {_LABEL_MAGIC!r}")
    if len(blob) < 16:
        raise DataError(f"{path}: truncated header, {len(blob)} bytes < 16")
    h, w = struct.unpack("<II", blob[8:16])
    expected = 16 + h * w * 2
    if len(blob) != expected:
        raise DataError(
            f"{path}: expected {expected} bytes for a {h}x{w} label map, got {len(blob)}")
    labels = np.frombuffer(blob, dtype="<u2", offset=16).reshape(h, w)
    return LabelMap(labels.copy())


# -- normalization -----------------------------------------------------------------------


def normalize(cube: HsiCube) -> HsiCube:
    """Per-band min-max to [0, 1]; constant bands map to zero."""
    v = cube.values
    if not np.isfinite(v).all():
        raise DataError("cube contains non-finite values")
    lo = v.min(axis=(0, 1))
    hi = v.max(axis=(0, 1))
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    out = (v - lo) / safe
    out[:, :, span == 0] = 0.0
    return HsiCube(out)


# -- splits ----------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    """How many knowable samples each class contributes (half train, half val)."""

    knowable: int = 20
    overrides: dict = field(default_factory=dict)  # class id -> count
    seed: int = 0

    def count_for(self, cls: int) -> int:
        return int(self.overrides.get(cls, self.knowable))


@dataclass
class Split:
    train: list  # [(row, col), ...]
    val: list
    test: list

    def part(self, name: str) -> list:
        return getattr(self, name)


def stratified_split(labels: LabelMap, spec: SplitSpec) -> Split:
    """Seed-deterministic per-class split with exact knowable counts."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed, 2])))
    train, val, test = [], [], []
    for cls in range(1, labels.n_classes + 1):
        rows, cols = np.nonzero(labels.labels == cls)
        pixels = list(zip(rows.tolist(), cols.tolist()))
        k = spec.count_for(cls)
        if k > len(pixels):
            raise DataError(
                f"class {cls} has {len(pixels)} pixels, cannot take {k} knowable")
        order = rng.permutation(len(pixels))
        chosen = [pixels[i] for i in order[:k]]
        n_train = (k + 1) // 2
        train.extend(chosen[:n_train])
        val.extend(chosen[n_train:])
        test.extend(pixels[i] for i in order[k:])
    return Split(train, val, test)


def save_split(path, split: Split, labels: LabelMap) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for name in ("train", "val", "test"):
            for r, c in split.part(name):
                fh.write(f"{int(labels.labels[r, c])}\t{r}\t{c}\t{name}\n")


def load_split(path) -> Split:
    split = Split([], [], [])
    with open(path, "r", encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 4 or parts[3] not in ("train", "val", "test"):
                raise DataError(f"{path}: malformed split line {i + 1}: {line!r}")
            split.part(parts[3]).append((int(parts[1]), int(parts[2])))
    return split


# -- patches -----------------------------------------------------------------------------


def _mirror_indices(offsets: np.ndarray, length: int) -> np.ndarray:
    """Fold out-of-range indices back by reflection about the edge pixels."""
    if length == 1:
        return np.zeros_like(offsets)
    period = 2 * (length - 1)
    folded = np.mod(offsets, period)
    return np.where(folded >= length, period - folded, folded)


def extract_patch(cube: HsiCube, row: int, col: int, size: int = 27) -> Tensor:
    """Centered (bands, size, size) patch; borders are mirror-reflected."""
    if not (0 <= row < cube.height and 0 <= col < cube.width):
        raise DataError(
            f"patch center ({row}, {col}) outside {cube.height}x{cube.width} scene")
    half = size // 2
    rows = _mirror_indices(np.arange(row - half, row + half + 1), cube.height)
    cols = _mirror_indices(np.arange(col - half, col + half + 1), cube.width)
    patch = cube.values[np.ix_(rows, cols)]
    return Tensor(np.moveaxis(patch, 2, 0).copy())


# -- synthetic scenes ---------------------------------------------------------------------


def class_signatures(classes: int, bands: int) -> np.ndarray:
    """(classes, bands) smooth spectra: one Gaussian bump per class."""
    centers = (np.arange(classes) + 0.5) * bands / classes
    width = max(1.0, bands / (2.0 * classes))
    b = np.arange(bands)
    return np.exp(-((b[None, :] - centers[:, None]) ** 2) / (2.0 * width ** 2))


def synth_generate(classes: int, height: int, width: int, bands: int,
                   noise: float, seed: int) -> tuple[HsiCube, LabelMap]:
    """Contiguous class regions painted with distinct spectra plus iid noise."""
    if classes < 1 or classes > height * width:
        raise DataError(f"cannot place {classes} classes on {height}x{width} pixels")
    if height < 1 or width < 1 or bands < 1:
        raise DataError("degenerate scene dimensions")
    ranks = np.arange(height * width)
    labels = (ranks * classes // (height * width) + 1).reshape(height, width)
    spectra = class_signatures(classes, bands)[labels - 1]
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 3])))
    values = spectra + noise * rng.standard_normal(spectra.shape)
    return HsiCube(values), LabelMap(labels.astype(np.uint16))


# -- training-set views --------------------------------------------------------------------


@dataclass
class PixelSet:
    """Per-pixel inputs for the classification kinds; labels are 0-based."""

    inputs: np.ndarray   # (n, bands) or (n, bands, size, size)
    labels: np.ndarray   # (n,) int64


@dataclass
class SceneSet:
    """Whole-scene input with the pixel positions contributing to the loss."""

    cube_chw: np.ndarray  # (bands, H, W)
    rows: np.ndarray
    cols: np.ndarray
    labels: np.ndarray    # (n,) int64


def _pixel_labels(labels: LabelMap, pixels) -> np.ndarray:
    rows = np.array([r for r, _ in pixels], dtype=np.intp)
    cols = np.array([c for _, c in pixels], dtype=np.intp)
    return rows, cols, labels.labels[rows, cols].astype(np.int64) - 1


def build_vector_set(cube: HsiCube, labels: LabelMap, pixels) -> PixelSet:
    rows, cols, y = _pixel_labels(labels, pixels)
    return PixelSet(cube.values[rows, cols], y)


def build_patch_set(cube: HsiCube, labels: LabelMap, pixels,
                    size: int = 27) -> PixelSet:
    _rows, _cols, y = _pixel_labels(labels, pixels)
    patches = np.stack([extract_patch(cube, r, c, size).data for r, c in pixels])
    return PixelSet(patches, y)


def build_scene_set(cube: HsiCube, labels: LabelMap, pixels) -> SceneSet:
    rows, cols, y = _pixel_labels(labels, pixels)
    return SceneSet(np.moveaxis(cube.values, 2, 0).copy(), rows, cols, y)


def halve(dataset, seed: int):
    """Deterministic disjoint halves of a training set (two-tier ablation)."""
    n = len(dataset.labels)
    order = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([seed, 4]))).permutation(n)
    a, b = order[:(n + 1) // 2], order[(n + 1) // 2:]
    if isinstance(dataset, PixelSet):
        return (PixelSet(dataset.inputs[a], dataset.labels[a]),
                PixelSet(dataset.inputs[b], dataset.labels[b]))
    if isinstance(dataset, SceneSet):
        return (SceneSet(dataset.cube_chw, dataset.rows[a], dataset.cols[a],
                         dataset.labels[a]),
                SceneSet(dataset.cube_chw, dataset.rows[b], dataset.cols[b],
                         dataset.labels[b]))
    raise TypeError(f"unsupported dataset type {type(dataset).__name__}")
