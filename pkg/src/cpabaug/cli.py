"""Command-line interface: align, learn, augment, viz-pc, eval.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from .alignment import metropolis_align
from .augment import PipelineConfig, generate_augmented, learn_class_models
from .basis import build_basis
from .class_model import principal_components
from .dataset_io import (
    IdxFormatError,
    LabeledDataset,
    ModelFileError,
    ModelState,
    read_dataset,
    read_idx_images,
    read_model,
    read_pgm,
    write_idx_images,
    write_idx_labels,
    write_image_grid,
    write_model,
)
from .evaluation import compare_augmentation
from .prior import build_prior
from .transform import Transformation, jacobian_sign_check, warp_image

logger = logging.getLogger("cpabaug")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_override(text: str) -> tuple[list[str], object]:
    if "=" not in text:
        raise UsageError(f"--set expects KEY=VALUE, got {text!r}")
    key, value = text.split("=", 1)
    parsed = yaml.safe_load(value)
    if isinstance(parsed, str):
        # YAML 1.1 reads exponents without a dot, such as 1e-3, as strings
        try:
            parsed = float(parsed)
        except ValueError:
            pass
    return key.strip().split("."), parsed


def load_config(path=None, overrides=(), seed=None, base: dict | None = None) -> PipelineConfig:
    """Merge config file, ``--set`` overrides and ``--seed`` into a PipelineConfig."""
    tree = dict(base or {})
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text()) or {}
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise UsageError(f"config {path} is not valid YAML: {exc}") from exc
        if not isinstance(loaded, dict):
            raise UsageError(f"config {path} must be a mapping")
        tree = _merge(tree, loaded)
    for text in overrides:
        keys, value = _parse_override(text)
        node = tree
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise UsageError(f"--set {text}: {k} is not a section")
        node[keys[-1]] = value
    if seed is not None:
        tree["base_seed"] = seed
    try:
        return PipelineConfig.from_dict(tree)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc


def _merge(a: dict, b: dict) -> dict:
    out = dict(a)
    for k, v in b.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def _with_threads(cfg: PipelineConfig, threads) -> PipelineConfig:
    n = threads if threads is not None else (os.cpu_count() or 1)
    return PipelineConfig.from_dict({**cfg.to_dict(), "n_jobs": int(n)})


def _require_file(path) -> Path:
    p = Path(path)
    if not p.exists() and not Path(f"{p}.gz").exists():
        raise DataError(f"no such file: {p}")
    return p


def _require_parent(path) -> Path:
    p = Path(path)
    if not p.parent.is_dir():
        raise UsageError(f"output directory {p.parent} does not exist")
    return p


def _load_image(spec: str) -> np.ndarray:
    """A PGM path, or ``IDX_PATH:INDEX`` for one image of an IDX file."""
    path, sep, index = spec.rpartition(":")
    if sep and index.isdigit() and path:
        images = read_idx_images(_require_file(path))
        i = int(index)
        if i >= len(images):
            raise DataError(f"{path} has {len(images)} images, index {i} is out of range")
        return images[i]
    return read_pgm(_require_file(spec))


def _prefix_paths(prefix: str) -> tuple[Path, Path]:
    return Path(f"{prefix}-images-idx3-ubyte"), Path(f"{prefix}-labels-idx1-ubyte")


def _load_prefix(prefix: str, limit=None) -> LabeledDataset:
    images, labels = _prefix_paths(prefix)
    ds = read_dataset(_require_file(images), _require_file(labels))
    return ds if limit is None else ds.subset(np.arange(min(limit, len(ds))))


def _config_note(cfg: PipelineConfig) -> str:
    return "config " + json.dumps(cfg.to_dict(), sort_keys=True)


def cmd_align(args) -> int:
    cfg = load_config(args.config, args.set, args.seed)
    out = Path(args.out)
    if not out.is_dir():
        raise UsageError(f"output directory {out} does not exist")
    src, dst = _load_image(args.src), _load_image(args.dst)
    if src.shape != dst.shape:
        raise DataError(f"image shapes differ: {src.shape} vs {dst.shape}")
    basis = build_basis(*cfg.tessellation)
    prior = build_prior(basis, cfg.prior)
    result = metropolis_align(src, dst, basis, prior, cfg.align)
    warped = warp_image(src, Transformation(result.theta, basis), cfg.align.integration)
    record = {
        "theta": result.theta.tolist(),
        "log_posterior": result.log_posterior,
        "acceptance_rate": result.acceptance_rate,
        "ssd_initial": result.ssd_initial,
        "ssd_final": result.ssd_final,
        "config": cfg.to_dict(),
    }
    (out / "theta.json").write_text(json.dumps(record, indent=2))
    write_image_grid([src, warped, dst], 3, out / "overlay.pgm", _config_note(cfg))
    print(f"SSD {result.ssd_initial:.4f} -> {result.ssd_final:.4f} "
          f"(reduction {100 * result.ssd_reduction:.1f}%), acceptance {result.acceptance_rate:.3f}")
    return EXIT_OK


def cmd_learn(args) -> int:
    cfg = _with_threads(load_config(args.config, args.set, args.seed), args.threads)
    out = _require_parent(args.out_model)
    data = read_dataset(_require_file(args.train_images), _require_file(args.train_labels))
    learned = learn_class_models(data, cfg)
    saved = {**cfg.to_dict(), "n_jobs": 1}
    write_model(ModelState(learned.basis, cfg.prior, learned.models, saved, cfg.base_seed,
                           graph_indices=learned.graph_indices), out)
    for d in learned.diagnostics.values():
        print(f"class {d.label}: {d.n_images} images, {d.n_edges} edges, "
              f"{d.n_tangent_vectors} tangent vectors, acceptance {d.mean_acceptance:.3f}, "
              f"SSD reduction {100 * d.mean_ssd_reduction:.1f}%, rank {learned.models[d.label].rank}")
    return EXIT_OK


def cmd_augment(args) -> int:
    state = read_model(_require_file(args.model))
    cfg = _with_threads(load_config(args.config, args.set, args.seed, base=state.config), args.threads)
    prefix = args.out_prefix
    img_path, lbl_path = _prefix_paths(prefix)
    _require_parent(img_path)
    if args.count_per_class is not None and args.count_per_class < 0:
        raise UsageError("--count-per-class must be non-negative")
    data = read_dataset(_require_file(args.train_images), _require_file(args.train_labels))
    aug = generate_augmented(data, state.class_models, state.basis, cfg, args.count_per_class,
                             state.graph_indices or None)
    write_idx_images(aug.images if len(aug) else np.zeros((0, *data.images.shape[1:])), img_path)
    write_idx_labels(aug.labels, lbl_path)
    Path(f"{prefix}-provenance.json").write_text(
        json.dumps({"config": cfg.to_dict(), "records": aug.provenance}))
    bad = sum(1 for r in aug.provenance if r["jacobian_ok"] is False)
    print(f"wrote {len(aug)} images to {img_path}" + (f" ({bad} failed the Jacobian check)" if bad else ""))
    return EXIT_OK


def cmd_viz_pc(args) -> int:
    state = read_model(_require_file(args.model))
    cfg = load_config(args.config, args.set, None, base=state.config)
    out = _require_parent(args.out)
    if args.cls not in state.class_models:
        raise UsageError(f"model has no class {args.cls}; classes are {sorted(state.class_models)}")
    model = state.class_models[args.cls]
    if not 1 <= args.component <= model.d:
        raise UsageError(f"--component must lie in [1, {model.d}]")
    lam, v = principal_components(model, args.component)[args.component - 1]
    image = _load_image(args.image)
    frames = []
    for s in (-args.sd, 0.0, args.sd):
        T = Transformation(s * np.sqrt(lam) * v, state.basis)
        if not jacobian_sign_check(T, 10, cfg.align.integration):
            logger.warning("component %d at %+.1f SD fails the Jacobian check", args.component, s)
        frames.append(warp_image(image, T, cfg.align.integration))
    write_image_grid(frames, 3, out, _config_note(cfg))
    print(f"class {args.cls} component {args.component}: eigenvalue {lam:.4g}, wrote {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    train = _load_prefix(args.train, args.train_limit)
    test = _load_prefix(args.test, args.test_limit)
    if args.aug is not None:
        aug = _load_prefix(args.aug)
        if aug.images.shape[1:] != train.images.shape[1:] and len(aug):
            raise DataError("augmented and training images differ in shape")
    else:
        aug = LabeledDataset(np.zeros((0, *train.images.shape[1:])), np.zeros(0, dtype=np.int64))
    config = {"train": args.train, "aug": args.aug, "test": args.test,
              "train_limit": args.train_limit, "test_limit": args.test_limit}
    report = compare_augmentation(train, aug, test, config=config)
    print(report.summary())
    if args.json is not None:
        Path(_require_parent(args.json)).write_text(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cpabaug", description="Learned diffeomorphic data augmentation.")
    p.add_argument("--threads", type=int, default=None,
                   help="worker processes (default: all cores)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(sp):
        sp.add_argument("--config", help="YAML pipeline config")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. align.iterations=500")

    a = sub.add_parser("align", help="align two images")
    a.add_argument("--src", required=True, help="PGM file or IDX_PATH:INDEX")
    a.add_argument("--dst", required=True, help="PGM file or IDX_PATH:INDEX")
    a.add_argument("--out", required=True, help="output directory")
    a.add_argument("--seed", type=int)
    with_config(a)
    a.set_defaults(func=cmd_align)

    lr = sub.add_parser("learn", help="learn per-class deformation models")
    lr.add_argument("--train-images", required=True)
    lr.add_argument("--train-labels", required=True)
    lr.add_argument("--out-model", required=True)
    lr.add_argument("--seed", type=int)
    with_config(lr)
    lr.set_defaults(func=cmd_learn)

    au = sub.add_parser("augment", help="generate augmented images from a model")
    au.add_argument("--model", required=True)
    au.add_argument("--train-images", required=True)
    au.add_argument("--train-labels", required=True)
    au.add_argument("--count-per-class", type=int)
    au.add_argument("--out-prefix", required=True)
    au.add_argument("--seed", type=int)
    with_config(au)
    au.set_defaults(func=cmd_augment)

    vz = sub.add_parser("viz-pc", help="warp an image along a principal component")
    vz.add_argument("--model", required=True)
    vz.add_argument("--class", dest="cls", type=int, required=True)
    vz.add_argument("--component", type=int, default=1, help="1-based component index")
    vz.add_argument("--image", required=True, help="PGM file or IDX_PATH:INDEX")
    vz.add_argument("--sd", type=float, default=3.0, help="standard deviations either side")
    vz.add_argument("--out", required=True)
    with_config(vz)
    vz.set_defaults(func=cmd_viz_pc)

    ev = sub.add_parser("eval", help="1-NN error with and without augmentation")
    ev.add_argument("--train", required=True, help="IDX prefix, e.g. data/train")
    ev.add_argument("--aug", help="IDX prefix written by augment")
    ev.add_argument("--test", required=True, help="IDX prefix, e.g. data/t10k")
    ev.add_argument("--train-limit", type=int, help="use the first N training images")
    ev.add_argument("--test-limit", type=int, help="use the first N test images")
    ev.add_argument("--json", help="also write the report as JSON")
    ev.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.threads is not None and args.threads < 1:
        print("cpabaug: --threads must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"cpabaug: {exc}", file=sys.stderr)
        return EXIT_USAGE
    # LinAlgError is a ValueError, so numerical failures are checked first
    except (np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"cpabaug: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, IdxFormatError, ModelFileError, OSError, ValueError) as exc:
        print(f"cpabaug: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
