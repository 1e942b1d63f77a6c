"""Confusion-matrix accuracy measures: overall, average (mean recall), kappa."""

from __future__ import annotations

import warnings

import numpy as np

from .data import HsiCube, LabelMap, build_patch_set, build_vector_set
from .tensor import Tensor, no_grad

__all__ = ["MetricsError", "confusion_matrix", "oa", "aa", "kappa",
           "evaluate", "format_report"]


class MetricsError(ValueError):
    """Degenerate input for which a measure is undefined."""


def confusion_matrix(reference, predicted, classes: int) -> np.ndarray:
    """(classes, classes) counts with reference on rows, 0-based ids."""
    ref = np.asarray(reference, dtype=np.int64)
    pred = np.asarray(predicted, dtype=np.int64)
    if ref.shape != pred.shape:
        raise MetricsError(
            f"reference shape {ref.shape} != predictions shape {pred.shape}")
    for name, arr in (("reference", ref), ("predicted", pred)):
        if arr.size and (arr.min() < 0 or arr.max() >= classes):
            raise MetricsError(f"{name} ids outside [0, {classes})")
    cm = np.zeros((classes, classes), dtype=np.int64)
    np.add.at(cm, (ref, pred), 1)
    return cm


def _total(cm: np.ndarray) -> int:
    total = int(cm.sum())
    if total == 0:
        raise MetricsError("empty confusion matrix")
    return total


def oa(cm: np.ndarray) -> float:
    return float(np.trace(cm)) / _total(cm)


def aa(cm: np.ndarray) -> float:
    """Mean per-class recall; empty reference rows are skipped with a warning."""
    _total(cm)
    rows = cm.sum(axis=1)
    present = rows > 0
    if not present.all():
        absent = np.nonzero(~present)[0].tolist()
        warnings.warn(f"classes without reference samples excluded from AA: {absent}")
    recalls = np.diag(cm)[present] / rows[present]
    return float(recalls.mean())


def kappa(cm: np.ndarray) -> float:
    total = _total(cm)
    p_o = float(np.trace(cm)) / total
    p_e = float(cm.sum(axis=1) @ cm.sum(axis=0)) / (total * total)
    if p_e == 1.0:
        if p_o == 1.0:
            return 1.0
        raise MetricsError("kappa undefined: chance agreement is 1 with p_o < 1")
    return (p_o - p_e) / (1.0 - p_e)


def _predict(model, inputs: np.ndarray, batch: int) -> np.ndarray:
    out = []
    for i in range(0, len(inputs), batch):
        logits = model(Tensor(inputs[i:i + batch]))
        out.append(np.argmax(logits.data, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def evaluate(model, cube: HsiCube, labels: LabelMap, pixels,
             patch_size: int = 27, batch: int = 512):
    """Classify the listed pixels with a trained model.

    The classification kinds run per pixel (spectral vector or centered
    patch); the segmentation kind runs one whole-scene forward and reads the
    logit map at the pixel positions.  Returns (cm, oa, aa, kappa).
    """
    if not pixels:
        raise MetricsError("empty evaluation pixel set")
    kind = model.template.kind
    classes = model.template.classes
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            if kind == "seg3d":
                logit_map = model(Tensor(np.moveaxis(cube.values, 2, 0)[None]))
                rows = np.array([r for r, _ in pixels])
                cols = np.array([c for _, c in pixels])
                pred = np.argmax(logit_map.data[0][:, rows, cols], axis=0)
                ref = labels.labels[rows, cols].astype(np.int64) - 1
            else:
                if kind == "cls1d":
                    ds = build_vector_set(cube, labels, pixels)
                else:
                    ds = build_patch_set(cube, labels, pixels, patch_size)
                pred = _predict(model, ds.inputs, batch)
                ref = ds.labels
    finally:
        model.train(was_training)
    cm = confusion_matrix(ref, pred, classes)
    return cm, oa(cm), aa(cm), kappa(cm)


def format_report(cm: np.ndarray, oa_value: float, aa_value: float,
                  kappa_value: float) -> str:
    """First line OA<TAB>AA<TAB>Kappa, then one recall line per class."""
    lines = [f"{oa_value:.6f}\t{aa_value:.6f}\t{kappa_value:.6f}"]
    rows = cm.sum(axis=1)
    for cls in range(cm.shape[0]):
        recall = np.diag(cm)[cls] / rows[cls] if rows[cls] else float("nan")
        lines.append(f"{cls + 1}\t{recall:.6f}")
    return "\n".join(lines) + "\n"
