"""Synthetic paired datasets for the three fusion tasks.

ivif  textured visible scene + smoothed-blob thermal field
mef   gamma 0.4 / 2.5 exposures of one scene
mff   complementary half-plane Gaussian blurs of one sharp scene

Pairs are written as A/ and B/ directories with matching filenames (A holds
the infrared / under-exposed / left-focus side, B the visible seed side).
Generation is fully determined by (kind, size, seed, index).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .image import Image, gaussian_blur
from .imgio import save_image

_KINDS = ("ivif", "mef", "mff")


def _norm01(a: np.ndarray) -> np.ndarray:
    lo, hi = a.min(), a.max()
    return np.zeros_like(a) if hi == lo else (a - lo) / (hi - lo)


def _scene(size: int, rng) -> np.ndarray:
    """Textured base scene: smooth field + stripes + a few hard shapes."""
    smooth = _norm01(gaussian_blur(rng.random((size, size)), size / 8.0))
    y, x = np.mgrid[0:size, 0:size] / size
    fx, fy, phase = rng.uniform(2, 6), rng.uniform(2, 6), rng.uniform(0, 2 * np.pi)
    stripes = 0.5 + 0.5 * np.sin(2 * np.pi * (fx * x + fy * y) + phase)
    grain = _norm01(gaussian_blur(rng.random((size, size)), 1.0))
    scene = 0.45 * smooth + 0.3 * stripes + 0.25 * grain
    for _ in range(rng.integers(2, 5)):
        h0, w0 = rng.integers(0, size, 2)
        hh, ww = rng.integers(size // 8, size // 3, 2)
        scene[h0 : h0 + hh, w0 : w0 + ww] = rng.uniform(0.1, 0.9)
    return np.clip(_norm01(scene) * 0.9 + 0.05, 0.0, 1.0)


def _blobs(size: int, rng) -> np.ndarray:
    """Smooth thermal-style field: bright Gaussian blobs on a dark base."""
    y, x = np.mgrid[0:size, 0:size]
    field = np.zeros((size, size))
    for _ in range(rng.integers(2, 5)):
        cy, cx = rng.uniform(0.15, 0.85, 2) * size
        s = rng.uniform(size / 12, size / 5)
        amp = rng.uniform(0.5, 1.0)
        field += amp * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * s * s))
    base = 0.12 * _norm01(gaussian_blur(rng.random((size, size)), size / 6.0))
    return np.clip(base + 0.85 * _norm01(field), 0.0, 1.0)


def make_pair(kind: str, size: int, seed: int, index: int):
    """One (a, b) image pair; a is the infrared-like / dark / left-focus side."""
    if kind not in _KINDS:
        raise ValueError(f"kind must be one of {_KINDS}, got {kind!r}")
    if size % 4:
        raise ValueError(f"size must be divisible by 4, got {size}")
    rng = np.random.default_rng([seed, index, _KINDS.index(kind)])
    scene = _scene(size, rng)
    if kind == "ivif":
        return Image(_blobs(size, rng)), Image(scene)
    if kind == "mef":
        return Image(np.clip(scene, 0, 1) ** 2.5), Image(np.clip(scene, 0, 1) ** 0.4)
    # mff: left half sharp in a, right half sharp in b, soft seam
    blurred = gaussian_blur(scene, 2.0)
    col = np.arange(size)
    seam = 1.0 / (1.0 + np.exp(-(col - size / 2) / (size / 24)))  # 0 left, 1 right
    mask = np.broadcast_to(seam, (size, size))
    a = scene * (1 - mask) + blurred * mask
    b = scene * mask + blurred * (1 - mask)
    return Image(np.clip(a, 0, 1)), Image(np.clip(b, 0, 1))


def generate(kind: str, count: int, size: int, seed: int, outdir, force: bool = False):
    """Write count pairs to outdir/A and outdir/B as PNGs; returns file names."""
    out = Path(outdir)
    if out.exists() and any(out.iterdir()) and not force:
        raise FileExistsError(f"{out} is not empty; pass force to overwrite")
    (out / "A").mkdir(parents=True, exist_ok=True)
    (out / "B").mkdir(parents=True, exist_ok=True)
    names = []
    for idx in range(count):
        a, b = make_pair(kind, size, seed, idx)
        name = f"{idx:04d}.png"
        save_image(out / "A" / name, a)
        save_image(out / "B" / name, b)
        names.append(name)
    return names
