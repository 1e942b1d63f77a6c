"""Command-line workflow: search -> train -> eval (plus derive and synth).

Every command is a pure function of (config, seed): rerunning one with the
same inputs rewrites byte-identical outputs.  Exit codes: 0 ok, 2 config
error, 3 data/artifact error, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import data as hsidata
from .archmatrix import ArchitectureMatrix, MatrixFormatError
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig
from .data import DataError, SplitSpec
from .metrics import MetricsError, evaluate, format_report
from .network import (NetworkTemplate, build_derived_model, build_search_model,
                      derive_architecture)
from .optim import (DivergenceError, format_loss_log, search, train,
                    two_tier_search)

ARCH_FILE = "architecture.txt"
SEARCH_LOG = "search_log.tsv"
TRAIN_LOG = "train_log.tsv"
SEARCH_CKPT = "search_model.ckpt"
MODEL_CKPT = "model.ckpt"
METRICS_FILE = "metrics.txt"
SPLIT_FILE = "split.tsv"


def _load_scene(cfg: RunConfig):
    if cfg.synth is not None:
        cube, labels = hsidata.synth_generate(seed=cfg.seed, **cfg.synth)
    else:
        cube = hsidata.load_cube(cfg.cube_path)
        labels = hsidata.load_labels(cfg.labels_path)
        if labels.labels.shape != cube.values.shape[:2]:
            raise DataError(
                f"label map {labels.labels.shape} does not match cube "
                f"{cube.values.shape[:2]}")
    return hsidata.normalize(cube), labels


def _template(cfg: RunConfig, cube, labels) -> NetworkTemplate:
    try:
        return NetworkTemplate(kind=cfg.kind, blocks=cfg.blocks,
                               layers=cfg.layers, classes=labels.n_classes,
                               bands=cube.bands, form=cfg.form,
                               hyper_size=cfg.hyper_size)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _split(cfg: RunConfig, labels):
    spec = SplitSpec(knowable=cfg.knowable, overrides=cfg.overrides,
                     seed=cfg.seed)
    return hsidata.stratified_split(labels, spec)


def _dataset(cfg: RunConfig, cube, labels, pixels):
    if cfg.kind == "cls1d":
        return hsidata.build_vector_set(cube, labels, pixels)
    if cfg.kind == "cls3d":
        return hsidata.build_patch_set(cube, labels, pixels, cfg.patch_size)
    return hsidata.build_scene_set(cube, labels, pixels)


def _out_path(cfg: RunConfig, name: str) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    return os.path.join(cfg.out_dir, name)


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def cmd_search(cfg: RunConfig, alpha_mode: str, two_tier: bool) -> None:
    if two_tier and alpha_mode != "free":
        raise ConfigError("--two-tier requires --alpha-mode free")
    cube, labels = _load_scene(cfg)
    template = _template(cfg, cube, labels)
    split = _split(cfg, labels)
    model = build_search_model(template, cfg.seed, alpha_mode)
    train_set = _dataset(cfg, cube, labels, split.train)
    opt_cfg = cfg.optim_for("search")
    if two_tier:
        half_a, half_b = hsidata.halve(train_set, cfg.seed)
        matrix, log = two_tier_search(model, half_a, half_b, opt_cfg, cfg.seed)
    else:
        val_set = _dataset(cfg, cube, labels, split.val)
        matrix, log = search(model, train_set, val_set, opt_cfg, cfg.seed)
    _write(_out_path(cfg, ARCH_FILE), matrix.to_text())
    _write(_out_path(cfg, SEARCH_LOG), format_loss_log(log))
    save_checkpoint(_out_path(cfg, SEARCH_CKPT), model.state_dict())
    hsidata.save_split(_out_path(cfg, SPLIT_FILE), split, labels)
    print(f"searched architecture written to {_out_path(cfg, ARCH_FILE)}")


def cmd_derive(cfg: RunConfig, checkpoint_path: str) -> None:
    cube, labels = _load_scene(cfg)
    template = _template(cfg, cube, labels)
    state = load_checkpoint(checkpoint_path)
    alpha_mode = "free" if any("free_alpha" in k for k in state) else "hyper"
    model = build_search_model(template, cfg.seed, alpha_mode)
    model.load_state_dict(state)
    matrix = derive_architecture(model)
    _write(_out_path(cfg, ARCH_FILE), matrix.to_text())
    print(f"derived architecture written to {_out_path(cfg, ARCH_FILE)}")


def _read_matrix(path: str) -> ArchitectureMatrix:
    if not os.path.exists(path):
        raise ConfigError(f"architecture file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        return ArchitectureMatrix.from_text(fh.read())


def cmd_train(cfg: RunConfig, arch_path: str) -> None:
    cube, labels = _load_scene(cfg)
    template = _template(cfg, cube, labels)
    split = _split(cfg, labels)
    matrix = _read_matrix(arch_path)
    model = build_derived_model(template, matrix, cfg.seed)
    train_set = _dataset(cfg, cube, labels, split.train)
    log = train(model, train_set, cfg.optim_for("train"), cfg.seed)
    save_checkpoint(_out_path(cfg, MODEL_CKPT), model.state_dict())
    _write(_out_path(cfg, TRAIN_LOG), format_loss_log(log))
    print(f"trained model written to {_out_path(cfg, MODEL_CKPT)}")


def cmd_eval(cfg: RunConfig, arch_path: str, checkpoint_path: str) -> None:
    cube, labels = _load_scene(cfg)
    template = _template(cfg, cube, labels)
    split = _split(cfg, labels)
    matrix = _read_matrix(arch_path)
    model = build_derived_model(template, matrix, cfg.seed)
    model.load_state_dict(load_checkpoint(checkpoint_path))
    cm, oa_v, aa_v, kappa_v = evaluate(model, cube, labels, split.test,
                                       cfg.patch_size)
    report = format_report(cm, oa_v, aa_v, kappa_v)
    _write(_out_path(cfg, METRICS_FILE), report)
    print(report.splitlines()[0])


def cmd_synth(cfg: RunConfig) -> None:
    if cfg.synth is None:
        raise ConfigError("synth command needs synth = true parameters")
    cube, labels = hsidata.synth_generate(seed=cfg.seed, **cfg.synth)
    cube_path = _out_path(cfg, "cube.hsic")
    labels_path = _out_path(cfg, "labels.hsil")
    hsidata.save_cube(cube_path, cube)
    hsidata.save_labels(labels_path, labels)
    print(f"wrote {cube_path} and {labels_path}")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hknas",
        description="search, train and evaluate hyper-kernel networks")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="key = value config file")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="override output directory")

    p = sub.add_parser("search", help="run the one-tier architecture search")
    common(p)
    p.add_argument("--alpha-mode", choices=("hyper", "free"), default="hyper")
    p.add_argument("--two-tier", action="store_true",
                   help="bilevel ablation (needs --alpha-mode free)")

    p = sub.add_parser("train", help="train a derived architecture from scratch")
    common(p)
    p.add_argument("--arch", required=True, help="architecture matrix file")

    p = sub.add_parser("eval", help="evaluate a trained checkpoint on the test split")
    common(p)
    p.add_argument("--arch", required=True)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("derive", help="derive the architecture from a search checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene to files")
    common(p)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = RunConfig.from_file(args.config, seed_override=args.seed,
                                  out_override=args.out)
        if args.command == "search":
            cmd_search(cfg, args.alpha_mode, args.two_tier)
        elif args.command == "train":
            cmd_train(cfg, args.arch)
        elif args.command == "eval":
            cmd_eval(cfg, args.arch, args.checkpoint)
        elif args.command == "derive":
            cmd_derive(cfg, args.checkpoint)
        elif args.command == "synth":
            cmd_synth(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, MatrixFormatError, CheckpointError, MetricsError,
            KeyError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
