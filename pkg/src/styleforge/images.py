"""Image file I/O and a procedural toy dataset.

In memory an image is a float32 tensor (3, H, W) with values in [0, 1].
"""

import os
from pathlib import Path

import numpy as np
import torch
from PIL import Image, ImageDraw, ImageFilter

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


def read_image(path):
    with Image.open(path) as im:
        im.load()
        if im.mode in ("I;16", "I;16B", "I"):
            arr = np.asarray(im, dtype=np.float32) / 65535.0
            arr = np.repeat(arr[..., None], 3, axis=2)
        else:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))


def to_uint8(image):
    arr = image.detach().cpu().clamp(0.0, 1.0).numpy().transpose(1, 2, 0)
    return np.round(arr * 255.0).astype(np.uint8)


def save_png(image, path):
    """Write an 8-bit PNG via a temp file so readers never see a partial file."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp")
    Image.fromarray(to_uint8(image)).save(tmp, format="PNG")
    os.replace(tmp, path)


def list_images(directory):
    return sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def _toy_image(rng, size):
    h = w = size
    yy, xx = np.mgrid[0:h, 0:w] / size
    c0, c1 = rng.uniform(0, 1, 3), rng.uniform(0, 1, 3)
    angle = rng.uniform(0, np.pi)
    t = np.cos(angle) * xx + np.sin(angle) * yy
    base = c0 + (c1 - c0) * t[..., None] / max(t.max(), 1e-6)
    if rng.random() < 0.5:
        freq = rng.uniform(2, 12)
        stripes = 0.15 * np.sin(2 * np.pi * freq * (xx * rng.uniform(-1, 1) + yy * rng.uniform(-1, 1)))
        base = base + stripes[..., None] * rng.uniform(-1, 1, 3)
    im = Image.fromarray(np.uint8(np.clip(base, 0, 1) * 255))
    draw = ImageDraw.Draw(im)
    for _ in range(rng.integers(2, 8)):
        x0, y0 = rng.integers(-size // 4, size, 2)
        x1, y1 = x0 + rng.integers(size // 8, size // 2), y0 + rng.integers(size // 8, size // 2)
        fill = tuple(int(v) for v in rng.integers(0, 256, 3))
        if rng.random() < 0.5:
            draw.ellipse([x0, y0, x1, y1], fill=fill)
        else:
            draw.rectangle([x0, y0, x1, y1], fill=fill)
    if rng.random() < 0.3:
        im = im.filter(ImageFilter.GaussianBlur(rng.uniform(0.5, 2.0)))
    arr = np.asarray(im, dtype=np.float32)
    arr += rng.normal(0, rng.uniform(0, 8), arr.shape)
    return np.uint8(np.clip(arr, 0, 255))


def write_toy_dataset(directory, n=100, size=96, seed=0):
    """Write ``n`` procedurally generated RGB PNGs (gradients, stripes, shapes, noise)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(n):
        path = directory / f"toy_{i:04d}.png"
        Image.fromarray(_toy_image(rng, size)).save(path)
        paths.append(path)
    return paths
