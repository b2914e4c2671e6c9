"""Image ingestion: directories of PNG/JPEG files and a small natural-image desk set."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from . import color

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}


def list_images(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def center_crop_resize(img: Image.Image, height: int, width: int) -> Image.Image:
    """Largest centred crop with the target aspect ratio, then bilinear resize."""
    w, h = img.size
    target = width / height
    if w / h > target:
        cw, ch = int(round(h * target)), h
    else:
        cw, ch = w, int(round(w / target))
    left, top = (w - cw) // 2, (h - ch) // 2
    img = img.crop((left, top, left + cw, top + ch))
    if img.size != (width, height):
        img = img.resize((width, height), Image.BILINEAR)
    return img


def read_pixels(path) -> np.ndarray:
    """uint8 pixels of an image file: H x W for grayscale files, H x W x 3 otherwise."""
    with Image.open(path) as im:
        if im.mode in ("L", "1", "I;16", "I"):
            return np.asarray(im.convert("L"))
        return np.asarray(im.convert("RGB"))


def write_pixels(path, pixels: np.ndarray) -> None:
    Image.fromarray(np.asarray(pixels, dtype=np.uint8)).save(path, format="PNG")


def load_image_dir(directory, height: int, width: int, channels: int, limit: int | None = None) -> np.ndarray:
    """All images in ``directory`` as a float32 (N, C, H, W) model-space array."""
    paths = list_images(directory)
    if limit is not None:
        paths = paths[:limit]
    if not paths:
        raise ValueError(f"no PNG/JPEG images in {directory}")
    out = []
    for p in paths:
        with Image.open(p) as im:
            im = center_crop_resize(im.convert("L" if channels == 1 else "RGB"), height, width)
            out.append(color.pixels_to_model(np.asarray(im), channels))
    return np.stack(out)


_DESK_SOURCES = ("camera", "astronaut", "coffee", "chelsea", "rocket", "coins", "moon",
                 "hubble_deep_field", "immunohistochemistry", "grass", "gravel", "brick", "clock", "cell")


def _source_images() -> list[np.ndarray]:
    import skimage.data

    imgs = []
    for name in _DESK_SOURCES:
        arr = getattr(skimage.data, name)()
        if arr.ndim == 2:
            arr = np.repeat(arr[..., None], 3, axis=2)
        imgs.append(np.ascontiguousarray(arr[..., :3]))
    return imgs


def desk_images(n: int, size: int, channels: int, seed: int = 0) -> np.ndarray:
    """``n`` natural-image patches (N, C, size, size) in model space.

    Patches are random windows of random scale cut from the sample photographs
    bundled with scikit-image, resized bilinearly to ``size``.
    """
    rng = np.random.default_rng(seed)
    sources = _source_images()
    out = []
    for _ in range(n):
        src = sources[rng.integers(len(sources))]
        h, w = src.shape[:2]
        side = int(rng.integers(size, min(h, w, 8 * size) + 1))
        top = int(rng.integers(0, h - side + 1))
        left = int(rng.integers(0, w - side + 1))
        im = Image.fromarray(src[top:top + side, left:left + side])
        if side != size:
            im = im.resize((size, size), Image.BILINEAR)
        px = np.asarray(im.convert("L") if channels == 1 else im)
        out.append(color.pixels_to_model(px, channels))
    return np.stack(out)
