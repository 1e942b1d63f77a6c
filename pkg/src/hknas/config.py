"""Flat ``key = value`` run configuration.

Lines are ``key = value`` with ``#`` starting a comment; keys are listed in
the README.  A run takes its scene either from ``cube``/``labels`` file paths
or from inline synthetic-scene parameters (``synth = true``).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from .mixedop import Form
from .network import KINDS
from .optim import (OptimConfig, default_batch_size, default_epochs,
                    default_momentum)

__all__ = ["ConfigError", "RunConfig", "parse_kv"]


class ConfigError(Exception):
    """Invalid or inconsistent run configuration."""


def parse_kv(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"line {lineno}: empty key or value in {raw!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def _to_int(key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {value!r}") from None


def _to_float(key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{key} must be a number, got {value!r}") from None


def _to_bool(key: str, value: str) -> bool:
    if value.lower() in ("true", "yes", "1"):
        return True
    if value.lower() in ("false", "no", "0"):
        return False
    raise ConfigError(f"{key} must be true or false, got {value!r}")


def _parse_overrides(value: str) -> dict[int, int]:
    overrides: dict[int, int] = {}
    for item in value.split(","):
        if ":" not in item:
            raise ConfigError(
                f"knowable_override entries are class:count, got {item!r}")
        cls, count = item.split(":", 1)
        overrides[_to_int("knowable_override class", cls)] = _to_int(
            "knowable_override count", count)
    return overrides


@dataclass
class RunConfig:
    kind: str
    blocks: int
    layers: int
    form: Form | None
    hyper_size: int
    seed: int
    out_dir: str
    # data source
    cube_path: str | None
    labels_path: str | None
    synth: dict | None
    patch_size: int
    # split
    knowable: int
    overrides: dict[int, int]
    # optimization
    initial_lr: float
    weight_decay: float
    momentum: float
    batch_size: int
    search_epochs: int
    train_epochs: int
    min_lr: float = 0.0
    extras: dict = field(default_factory=dict)

    @classmethod
    def from_file(cls, path, seed_override: int | None = None,
                  out_override: str | None = None) -> "RunConfig":
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path, "r", encoding="utf-8") as fh:
            kv = parse_kv(fh.read())

        def pop(key, default=None):
            return kv.pop(key, default)

        kind = pop("kind")
        if kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {kind!r}")
        blocks = _to_int("blocks", pop("blocks", "0"))
        layers = _to_int("layers", pop("layers", "0"))
        if blocks < 1 or layers < 1:
            raise ConfigError("blocks and layers must be set and >= 1")
        if kind == "cls3d" and blocks != 3:
            raise ConfigError("cls3d uses exactly 3 blocks")

        form_text = pop("form", None)
        if kind == "cls1d":
            if form_text is not None:
                raise ConfigError("cls1d takes no form")
            form = None
        else:
            if form_text is None:
                raise ConfigError(f"{kind} needs a form")
            try:
                form = Form.parse(form_text)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None

        hyper_size = _to_int("hyper_kernel_size", pop("hyper_kernel_size", "9"))
        if hyper_size < 3 or hyper_size % 2 == 0:
            raise ConfigError("hyper_kernel_size must be odd and >= 3")

        seed = _to_int("seed", pop("seed", "0"))
        if seed_override is not None:
            seed = seed_override
        out_dir = out_override or pop("out", "runs/out")

        cube_path = pop("cube", None)
        labels_path = pop("labels", None)
        use_synth = _to_bool("synth", pop("synth", "false"))
        synth = None
        if use_synth:
            if cube_path or labels_path:
                raise ConfigError("give either cube/labels paths or synth = true, not both")
            synth = {
                "classes": _to_int("classes", pop("classes", "8")),
                "height": _to_int("height", pop("height", "64")),
                "width": _to_int("width", pop("width", "64")),
                "bands": _to_int("bands", pop("bands", "16")),
                "noise": _to_float("noise", pop("noise", "0.05")),
            }
        else:
            if not cube_path or not labels_path:
                raise ConfigError("need cube and labels paths (or synth = true)")
            for p in (cube_path, labels_path):
                if not os.path.exists(p):
                    raise ConfigError(f"referenced file does not exist: {p}")

        knowable = _to_int("knowable", pop("knowable", "20"))
        raw_overrides = pop("knowable_override", None)
        overrides = _parse_overrides(raw_overrides) if raw_overrides else {}

        config = cls(
            kind=kind, blocks=blocks, layers=layers, form=form,
            hyper_size=hyper_size, seed=seed, out_dir=out_dir,
            cube_path=cube_path, labels_path=labels_path, synth=synth,
            patch_size=_to_int("patch_size", pop("patch_size", "27")),
            knowable=knowable, overrides=overrides,
            initial_lr=_to_float("initial_lr", pop("initial_lr", "0.01")),
            weight_decay=_to_float("weight_decay", pop("weight_decay", "0.01")),
            momentum=_to_float("momentum",
                               pop("momentum", str(default_momentum(kind)))),
            batch_size=_to_int("batch_size",
                               pop("batch_size", str(default_batch_size(kind)))),
            search_epochs=_to_int("search_epochs",
                                  pop("search_epochs",
                                      str(default_epochs(kind, "search")))),
            train_epochs=_to_int("train_epochs",
                                 pop("train_epochs",
                                     str(default_epochs(kind, "train")))),
            min_lr=_to_float("min_lr", pop("min_lr", "0")),
        )
        if kv:
            raise ConfigError(f"unknown config keys: {sorted(kv)}")
        return config

    def optim_for(self, stage: str) -> OptimConfig:
        epochs = self.search_epochs if stage == "search" else self.train_epochs
        try:
            return OptimConfig(epochs=epochs, initial_lr=self.initial_lr,
                               weight_decay=self.weight_decay,
                               momentum=self.momentum,
                               batch_size=self.batch_size, min_lr=self.min_lr)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
