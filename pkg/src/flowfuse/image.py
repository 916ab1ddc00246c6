"""Image type and pixel-domain primitives: Sobel gradients, histograms,
Gaussian blur, BT.601 color conversion.

Pixel values live in [0, 1] float64 everywhere; 8-bit I/O converts by /255
and round(*255) at the file boundary (see imgio). Color images carry an
explicit color-space tag.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor

GRAY = "gray"
RGB = "rgb"
YCBCR = "ycbcr"

# ITU-R BT.601 full-range luma/chroma matrix (rows: Y, Cb, Cr).
_FWD = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168735892, -0.331264108, 0.5],
        [0.5, -0.418687589, -0.081312411],
    ]
)
_INV = np.linalg.inv(_FWD)
_CHROMA_OFFSET = np.array([0.0, 0.5, 0.5])


class Image:
    """H x W (gray) or H x W x 3 (color) pixels in [0, 1], clamped on entry."""

    __slots__ = ("pixels", "space")

    def __init__(self, pixels, space=None):
        arr = np.asarray(pixels, dtype=np.float64)
        if arr.ndim == 2:
            space = GRAY if space is None else space
            if space != GRAY:
                raise ValueError("2-D pixel array must be gray")
        elif arr.ndim == 3 and arr.shape[2] == 3:
            if space not in (RGB, YCBCR):
                raise ValueError("color image needs an explicit space tag (rgb or ycbcr)")
        else:
            raise ValueError(f"bad pixel array shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("empty image")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image contains non-finite values")
        self.pixels = np.clip(arr, 0.0, 1.0)
        self.space = space

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def channels(self):
        return 1 if self.pixels.ndim == 2 else 3

    def __repr__(self):
        return f"Image({self.height}x{self.width}, {self.space})"


def as_gray(img) -> np.ndarray:
    """Gray pixel array from an Image or 2-D array-like; rejects color."""
    if isinstance(img, Image):
        if img.channels != 1:
            raise ValueError("gray image required, got 3 channels")
        return img.pixels
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"gray image required, got shape {arr.shape}")
    return arr


def luma(img) -> np.ndarray:
    """Y channel of a color image, or the gray pixels themselves."""
    if isinstance(img, Image) and img.channels == 3:
        if img.space == YCBCR:
            return img.pixels[:, :, 0]
        return rgb_ycbcr(img, "forward").pixels[:, :, 0]
    return as_gray(img)


# -- Sobel --------------------------------------------------------------------

def replicate_pad(a: np.ndarray, k: int) -> np.ndarray:
    return np.pad(a, k, mode="edge")


def sobel_grad(img):
    """3x3 Sobel responses (gx: horizontal, gy: vertical) and their magnitude.

    Borders are replicate-padded. gx responds to left-to-right intensity
    increase, gy to top-to-bottom. Differences are taken before the smoothing
    sum so constant images give exactly zero.
    """
    a = as_gray(img)
    h, w = a.shape
    if h < 3 or w < 3:
        raise ValueError(f"sobel_grad needs at least 3x3 pixels, got {a.shape}")
    p = replicate_pad(a, 1)
    dx = p[:, 2:] - p[:, :-2]  # (h+2, w)
    gx = dx[:-2, :] + 2.0 * dx[1:-1, :] + dx[2:, :]
    dy = p[2:, :] - p[:-2, :]  # (h, w+2)
    gy = dy[:, :-2] + 2.0 * dy[:, 1:-1] + dy[:, 2:]
    mag = np.sqrt(gx * gx + gy * gy)
    return Tensor(gx), Tensor(gy), Tensor(mag)


# -- histogram ------------------------------------------------------------------

def histogram256(img) -> np.ndarray:
    """256-bin probability histogram; bin k covers [k/256, (k+1)/256), the last
    bin closed at 1."""
    a = as_gray(img)
    if a.size == 0:
        raise ValueError("empty image")
    if a.min() < 0.0 or a.max() > 1.0:
        raise ValueError("pixel values outside [0, 1]")
    bins = np.minimum((a * 256.0).astype(np.int64), 255)
    counts = np.bincount(bins.ravel(), minlength=256).astype(np.float64)
    return counts / a.size


# -- Gaussian blur --------------------------------------------------------------

def gaussian_kernel1d(sigma: float) -> np.ndarray:
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    radius = int(np.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, replicate padding, kernel truncated at 3 sigma."""
    a = as_gray(img)
    k = gaussian_kernel1d(sigma)
    r = (len(k) - 1) // 2
    p = np.pad(a, ((r, r), (0, 0)), mode="edge")
    rows = sum(k[i] * p[i : i + a.shape[0], :] for i in range(len(k)))
    p = np.pad(rows, ((0, 0), (r, r)), mode="edge")
    return sum(k[j] * p[:, j : j + a.shape[1]] for j in range(len(k)))


# -- color conversion ------------------------------------------------------------

def rgb_ycbcr(img: Image, direction: str) -> Image:
    """BT.601 full-range RGB <-> YCbCr conversion for 3-channel images."""
    if not isinstance(img, Image) or img.channels != 3:
        raise ValueError("rgb_ycbcr requires a 3-channel image")
    if direction == "forward":
        if img.space != RGB:
            raise ValueError(f"forward conversion expects rgb, got {img.space}")
        out = img.pixels @ _FWD.T + _CHROMA_OFFSET
        return Image(out, YCBCR)
    if direction == "inverse":
        if img.space != YCBCR:
            raise ValueError(f"inverse conversion expects ycbcr, got {img.space}")
        out = (img.pixels - _CHROMA_OFFSET) @ _INV.T
        return Image(out, RGB)
    raise ValueError(f"direction must be forward or inverse, got {direction!r}")
