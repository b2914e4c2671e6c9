"""Command-line interface: ``hidenet {train,encode,decode,evaluate,sweep}``.

Exit codes: 0 success, 2 bad usage or flag value, 3 unreadable/missing file, 4 invalid
configuration, 5 bad checkpoint, 6 message or image shape error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import color, metrics, tiling
from .checkpoint import CheckpointError, load_model, save_checkpoint
from .config import ConfigError, load_config
from .datasets import list_images, load_image_dir, read_pixels, write_pixels
from .noise import NoiseKind, NoiseSpec, apply_noise, parse_kind
from .training import train_loop

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_CONFIG, EXIT_CHECKPOINT, EXIT_MESSAGE = 0, 2, 3, 4, 5, 6

log = logging.getLogger("hidenet")


class MessageError(ValueError):
    pass


class UsageError(ValueError):
    pass


def _noise_flag(text: str) -> NoiseSpec:
    try:
        return NoiseSpec.parse(text)
    except ValueError as exc:
        raise UsageError(f"bad --noise value: {exc}") from exc


def parse_message(text: str) -> np.ndarray:
    """A bit string (``1011...``) or hex with a ``0x`` prefix, MSB first."""
    text = text.strip().replace("_", "")
    if text.lower().startswith("0x"):
        digits = text[2:]
        try:
            values = [int(ch, 16) for ch in digits]
        except ValueError as exc:
            raise MessageError(f"bad hex message {text!r}") from exc
        return np.array([(v >> s) & 1 for v in values for s in (3, 2, 1, 0)], dtype=np.uint8)
    if not text or set(text) - {"0", "1"}:
        raise MessageError("message must be a 0/1 bit string or 0x-prefixed hex")
    return np.array([int(ch) for ch in text], dtype=np.uint8)


def format_bits(bits) -> str:
    return "".join(str(int(b)) for b in bits)


def _load_image(path, channels: int) -> np.ndarray:
    return color.pixels_to_model(read_pixels(path), channels)


def _quantize(image: np.ndarray) -> np.ndarray:
    """Round-trip through 8-bit pixels, as writing and re-reading a PNG would."""
    return color.pixels_to_model(color.model_to_pixels(image), image.shape[0])


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.data_dir:
        cfg.data_dir = args.data_dir
    if args.seed is not None:
        cfg.seed = args.seed
    if not cfg.data_dir:
        raise ConfigError("no data_dir given (config key or --data-dir)")
    tcfg = cfg.train_config()
    h = tcfg.header
    images = load_image_dir(cfg.data_dir, h.height, h.width, h.channels, limit=cfg.max_images)
    out = Path(args.out or "model.ckpt")
    meta = {"seed": cfg.seed, "schedule_digest": tcfg.schedule_digest(),
            "schedule": [str(s) for s in tcfg.schedule]}

    def checkpoint_fn(epoch, mp):
        save_checkpoint(f"{out}.epoch{epoch + 1}", mp, {**meta, "epoch": epoch + 1})

    res = train_loop(tcfg, images, metrics_path=args.report, checkpoint_fn=checkpoint_fn, progress=True)
    epochs = len(res.history)
    save_checkpoint(out, res.params, {**meta, "epoch": epochs})
    last = res.history[-1]
    print(f"trained {res.steps} steps over {epochs} epochs; holdout bit accuracy {last.bit_acc_holdout:.4f}; "
          f"checkpoint {out}")
    return EXIT_OK


def cmd_encode(args) -> int:
    mp = load_model(args.model)
    image = _load_image(args.input, mp.header.channels)
    bits = parse_message(args.msg)
    encoded = tiling.tiled_encode(mp, image, bits)
    write_pixels(args.out, color.model_to_pixels(encoded))
    print(f"embedded {bits.size} bits ({metrics.bits_per_pixel(bits.size, *image.shape):.6f} bpp) -> {args.out}")
    return EXIT_OK


def cmd_decode(args) -> int:
    mp = load_model(args.model)
    image = _load_image(args.input, mp.header.channels)
    print(format_bits(metrics.decode_bits(tiling.tiled_decode(mp, image))))
    return EXIT_OK


def _decode_noised(mp, cover: np.ndarray, encoded: np.ndarray, spec: NoiseSpec, seed: int) -> np.ndarray:
    """Noise each model-sized patch independently, then decode it."""
    ph, pw = mp.header.height, mp.header.width
    cp, ep = tiling.to_patches(cover, ph, pw), tiling.to_patches(encoded, ph, pw)
    with ad.no_grad():
        noised = apply_noise(spec, cp, ep, np.random.default_rng(seed)).data
        return metrics.decode_images(mp, noised).reshape(-1)


def cmd_evaluate(args) -> int:
    mp = load_model(args.model)
    spec = _noise_flag(args.noise) if args.noise else NoiseSpec(NoiseKind.IDENTITY)
    seed = args.seed or 0
    paths = list_images(args.input)
    if not paths:
        raise FileNotFoundError(f"no images in {args.input}")
    fixed = parse_message(args.msg) if args.msg else None
    rng = np.random.default_rng(seed)
    rows = []
    for i, path in enumerate(paths):
        cover = _load_image(path, mp.header.channels)
        n_bits = tiling.capacity(mp, cover.shape)
        if fixed is not None and fixed.size != n_bits:
            raise MessageError(f"{path.name}: message has {fixed.size} bits, image holds {n_bits}")
        bits = fixed if fixed is not None else rng.integers(0, 2, n_bits).astype(np.uint8)
        if args.out:
            encoded = _load_image(Path(args.out) / path.name, mp.header.channels)
            if encoded.shape != cover.shape:
                raise MessageError(f"{path.name}: encoded image shape differs from cover")
        else:
            encoded = _quantize(tiling.tiled_encode(mp, cover, bits))
        acc = math.nan
        if fixed is not None or not args.out:
            acc = metrics.bit_accuracy(bits, _decode_noised(mp, cover, encoded, spec, seed + i))
        rows.append({"image": path.name, "bit_accuracy": acc,
                     **{f"psnr_{p}": v for p, v in zip("YUV", metrics.psnr_planes(cover, encoded))},
                     "bpp": metrics.bits_per_pixel(n_bits, *cover.shape)})
    planes = [k for k in rows[0] if k.startswith("psnr_")]
    print(f"images {len(rows)}")
    print(f"noise {spec}")
    print(f"bit_accuracy {np.mean([r['bit_accuracy'] for r in rows]):.6f}")
    for k in planes:
        print(f"{k} {np.mean([r[k] for r in rows]):.4f}")
    print(f"bpp {np.mean([r['bpp'] for r in rows]):.6f}")
    if args.report:
        with open(args.report, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
    return EXIT_OK


def _parse_grid(text: str) -> tuple[NoiseKind, list[float | None]]:
    name, _, grid = text.partition(":")
    try:
        kind = parse_kind(name)
    except ValueError as exc:
        raise UsageError(f"bad --noise value: {exc}") from exc
    if not grid.strip():
        return kind, [None]
    try:
        return kind, [float(x) for x in grid.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"bad intensity grid {grid!r}") from exc


def cmd_sweep(args) -> int:
    mp = load_model(args.model)
    if not args.noise:
        raise UsageError("--noise kind:i1,i2,... is required for sweep")
    h = mp.header
    covers = load_image_dir(args.input, h.height, h.width, h.channels)
    results = []
    for text in args.noise.split(";"):
        kind, grid = _parse_grid(text)
        try:
            results.append(metrics.sweep_robustness(mp, covers, kind, grid, seed=args.seed or 0,
                                                    model_name=str(args.model)))
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    out = args.out or args.report
    if out:
        metrics.write_sweep_csv(out, results)
    else:
        writer = csv.DictWriter(sys.stdout, fieldnames=["kind", "intensity", "mean_acc", "std_acc", "n"])
        writer.writeheader()
        for r in results:
            writer.writerows(r.rows())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hidenet", description="Hide bit messages in images with learned codecs.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="{train,encode,decode,evaluate,sweep}")

    def add(name, func, help_, *flags):
        p = sub.add_parser(name, help=help_)
        for flag in flags:
            dest = "input" if flag == "--in" else None
            kwargs = {"dest": dest} if dest else {}
            if flag == "--seed":
                kwargs["type"] = int
            p.add_argument(flag, **kwargs)
        p.set_defaults(func=func)
        return p

    add("train", cmd_train, "train a model from a run config", "--config", "--data-dir", "--seed", "--out", "--report")
    add("encode", cmd_encode, "embed a message into a PNG", "--model", "--in", "--msg", "--out")
    add("decode", cmd_decode, "print the bit string hidden in an image", "--model", "--in")
    add("evaluate", cmd_evaluate, "bit accuracy, PSNR and BPP over a directory",
        "--model", "--in", "--out", "--msg", "--noise", "--seed", "--report")
    add("sweep", cmd_sweep, "bit accuracy across noise intensities (CSV)",
        "--model", "--in", "--noise", "--seed", "--out", "--report")
    return parser


_REQUIRED = {
    "train": ("config",), "encode": ("model", "input", "msg", "out"), "decode": ("model", "input"),
    "evaluate": ("model", "input"), "sweep": ("model", "input"),
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    missing = [k for k in _REQUIRED[args.command] if getattr(args, k, None) is None]
    if missing:
        flag = "--in" if missing[0] == "input" else f"--{missing[0].replace('_', '-')}"
        print(f"hidenet {args.command}: error: {flag} is required", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        code, msg = EXIT_USAGE, f"error: {exc}"
    except ConfigError as exc:
        code, msg = EXIT_CONFIG, f"config error: {exc}"
    except CheckpointError as exc:
        code, msg = EXIT_CHECKPOINT, f"checkpoint error: {exc}"
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        code, msg = EXIT_IO, f"cannot read file: {exc}"
    except OSError as exc:
        code, msg = EXIT_IO, f"I/O error: {exc}"
    except ValueError as exc:
        code, msg = EXIT_MESSAGE, f"error: {exc}"
    print(f"hidenet {args.command}: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
