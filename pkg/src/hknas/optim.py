"""One-tier search, derived-network training, and the two-tier ablation.

All three loops are plain SGD (optional momentum) with a per-epoch cosine
learning-rate schedule and cross-entropy loss.  The one-tier search updates
every network weight on the training set; the validation set is only
monitored.  The two-tier ablation alternates whole epochs between network
weights (on one half of the training data) and free structural scores (on
the other half).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .archmatrix import ArchitectureMatrix
from .data import PixelSet, SceneSet
from .network import NetworkModel, derive_architecture
from .ops import cross_entropy, take_pixels
from .tensor import Tensor, no_grad

__all__ = ["OptimConfig", "DivergenceError", "cosine_lr", "sgd_step", "SGD",
           "search", "train", "two_tier_search", "format_loss_log",
           "default_epochs"]


class DivergenceError(RuntimeError):
    """A training loss became non-finite."""


@dataclass
class OptimConfig:
    epochs: int
    initial_lr: float = 0.01
    weight_decay: float = 0.01
    momentum: float = 0.0
    batch_size: int = 96
    min_lr: float = 0.0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        for name in ("initial_lr", "weight_decay", "momentum", "min_lr"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def default_epochs(kind: str, stage: str) -> int:
    """Published epoch counts per network kind and stage."""
    table = {("cls1d", "search"): 600, ("cls1d", "train"): 1000,
             ("cls3d", "search"): 100, ("cls3d", "train"): 300,
             ("seg3d", "search"): 100, ("seg3d", "train"): 300}
    return table[(kind, stage)]


def default_momentum(kind: str) -> float:
    return 0.9 if kind == "seg3d" else 0.0


def default_batch_size(kind: str) -> int:
    return 1 if kind == "seg3d" else 96


def cosine_lr(epoch: int, cfg: OptimConfig) -> float:
    """Cosine-annealed learning rate at ``epoch`` of ``cfg.epochs`` total."""
    if not 0 <= epoch <= cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs}]")
    span = cfg.initial_lr - cfg.min_lr
    return cfg.min_lr + 0.5 * span * (1.0 + math.cos(math.pi * epoch / cfg.epochs))


def sgd_step(params, grads, state, lr: float, momentum: float = 0.0,
             weight_decay: float = 0.0) -> None:
    """v <- momentum*v + grad + wd*param; param <- param - lr*v (in place)."""
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape:
            raise ValueError(
                f"gradient shape {g.shape} does not match parameter shape {p.shape}")
        v = momentum * state[i] + g + weight_decay * p
        state[i] = v
        p -= lr * v


class SGD:
    """Momentum SGD over (name, tensor, decay-eligible) parameter specs."""

    def __init__(self, specs, momentum: float = 0.0, weight_decay: float = 0.0):
        self.specs = list(specs)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.state = [np.zeros_like(t.data) for _, t, _ in self.specs]

    def zero_grad(self) -> None:
        for _, t, _ in self.specs:
            t.zero_grad()

    def step(self, lr: float) -> None:
        for i, (_, t, decay) in enumerate(self.specs):
            if t.grad is None:
                continue
            wd = self.weight_decay if decay else 0.0
            v = self.momentum * self.state[i] + t.grad + wd * t.data
            self.state[i] = v
            t.data -= lr * v


# -- loss helpers ------------------------------------------------------------------


def _batch_loss(model: NetworkModel, dataset, idx) -> Tensor:
    if isinstance(dataset, PixelSet):
        logits = model(Tensor(dataset.inputs[idx]))
        return cross_entropy(logits, dataset.labels[idx])
    if isinstance(dataset, SceneSet):
        logits = model(Tensor(dataset.cube_chw[None]))
        pix = take_pixels(logits, dataset.rows[idx], dataset.cols[idx])
        return cross_entropy(pix, dataset.labels[idx])
    raise TypeError(f"unsupported dataset type {type(dataset).__name__}")


def _dataset_size(dataset) -> int:
    return len(dataset.labels)


def _check_finite(value: float, what: str, epoch: int) -> float:
    if not math.isfinite(value):
        raise DivergenceError(f"{what} became non-finite at epoch {epoch}")
    return value


def _train_epoch(model, dataset, opt: SGD, lr: float, batch_size: int,
                 rng: np.random.Generator, epoch: int) -> float:
    n = _dataset_size(dataset)
    if isinstance(dataset, SceneSet):
        batches = [np.arange(n)]  # one full-scene step per epoch
    else:
        perm = rng.permutation(n)
        batches = [perm[i:i + batch_size] for i in range(0, n, batch_size)]
    total = 0.0
    for idx in batches:
        opt.zero_grad()
        loss = _batch_loss(model, dataset, idx)
        loss.backward()
        opt.step(lr)
        total += loss.item() * len(idx)
    return _check_finite(total / n, "training loss", epoch)


def _eval_loss(model, dataset, batch_size: int = 512) -> float:
    n = _dataset_size(dataset)
    was_training = model.training
    model.eval()
    total = 0.0
    with no_grad():
        if isinstance(dataset, SceneSet):
            total = _batch_loss(model, dataset, np.arange(n)).item() * n
        else:
            for i in range(0, n, batch_size):
                idx = np.arange(i, min(i + batch_size, n))
                total += _batch_loss(model, dataset, idx).item() * len(idx)
    model.train(was_training)
    return total / n


def _shuffle_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 1])))


def _require_nonempty(dataset, what: str) -> None:
    if _dataset_size(dataset) == 0:
        raise ValueError(f"{what} is empty")


# -- the three loops ------------------------------------------------------------------


def search(model: NetworkModel, train_set, val_set, cfg: OptimConfig,
           seed: int) -> tuple[ArchitectureMatrix, list[tuple]]:
    """One-tier search: update all weights on the training set, monitor val.

    Returns the derived architecture at the final epoch and the per-epoch
    log rows (epoch, train loss, val loss, learning rate).
    """
    if model.mode != "search":
        raise ValueError("search needs a search-mode model")
    _require_nonempty(train_set, "training set")
    _require_nonempty(val_set, "validation set")
    specs = [(n, t, d) for n, t, d in model.parameter_specs()
             if "free_alpha" not in n]
    opt = SGD(specs, cfg.momentum, cfg.weight_decay)
    rng = _shuffle_rng(seed)
    log = []
    model.train()
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg)
        train_loss = _train_epoch(model, train_set, opt, lr, cfg.batch_size,
                                  rng, epoch)
        val_loss = _check_finite(_eval_loss(model, val_set), "validation loss",
                                 epoch)
        log.append((epoch, train_loss, val_loss, lr))
    return derive_architecture(model), log


def train(model: NetworkModel, train_set, cfg: OptimConfig,
          seed: int) -> list[tuple]:
    """From-scratch training of a derived model; returns the loss log."""
    if model.mode != "derived":
        raise ValueError("train needs a derived-mode model")
    _require_nonempty(train_set, "training set")
    opt = SGD(list(model.parameter_specs()), cfg.momentum, cfg.weight_decay)
    rng = _shuffle_rng(seed)
    log = []
    model.train()
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg)
        train_loss = _train_epoch(model, train_set, opt, lr, cfg.batch_size,
                                  rng, epoch)
        log.append((epoch, train_loss, float("nan"), lr))
    return log


def two_tier_search(model: NetworkModel, half_a, half_b, cfg: OptimConfig,
                    seed: int, alpha_lr: float | None = None
                    ) -> tuple[ArchitectureMatrix, list[tuple]]:
    """Bilevel ablation: alternate weight epochs on half A with epochs that
    update only the free structural scores on half B (first-order updates).

    ``alpha_lr`` overrides the cosine schedule for the score epochs; the log
    records (epoch, half-A loss, half-B loss, lr used that epoch).
    """
    if model.mode != "search":
        raise ValueError("two-tier search needs a search-mode model")
    _require_nonempty(half_a, "training half A")
    _require_nonempty(half_b, "training half B")
    weight_specs, alpha_specs = [], []
    for spec in model.parameter_specs():
        (alpha_specs if "free_alpha" in spec[0] else weight_specs).append(spec)
    for _b, _j, edge in model.edges():
        if getattr(edge, "alpha_mode", None) != "free":
            raise ValueError("two-tier search needs free scores on every edge")
    opt_w = SGD(weight_specs, cfg.momentum, cfg.weight_decay)
    opt_a = SGD(alpha_specs, momentum=0.0, weight_decay=0.0)
    rng = _shuffle_rng(seed)
    log = []
    model.train()
    for epoch in range(cfg.epochs):
        if epoch % 2 == 0:
            lr = cosine_lr(epoch, cfg)
            _train_epoch(model, half_a, opt_w, lr, cfg.batch_size, rng, epoch)
        else:
            lr = cosine_lr(epoch, cfg) if alpha_lr is None else alpha_lr
            _train_epoch(model, half_b, opt_a, lr, cfg.batch_size, rng, epoch)
        loss_a = _check_finite(_eval_loss(model, half_a), "half-A loss", epoch)
        loss_b = _check_finite(_eval_loss(model, half_b), "half-B loss", epoch)
        log.append((epoch, loss_a, loss_b, lr))
    return derive_architecture(model), log


def format_loss_log(rows) -> str:
    """One line per epoch: epoch<TAB>train_loss<TAB>val_loss<TAB>lr."""
    return "".join(
        f"{epoch}\t{a:.17g}\t{b:.17g}\t{lr:.17g}\n" for epoch, a, b, lr in rows)
