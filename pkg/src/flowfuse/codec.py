"""Task-specific latent autoencoder and its two training stages.

The encoder downsamples 4x with two stride-2 convolutions into a 4-channel
latent; the decoder mirrors it with transposed convolutions and a final clamp
to [0, 1]. Stage one fits encoder and decoder with reconstruction plus a
spectral log-magnitude loss; stage two freezes the encoder and fine-tunes the
decoder alone with the fusion loss, so that decoding a source latent starts
producing fused-looking images.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .fft import fft2, fftshift
from .image import Image, as_gray
from .guidance import WeightMaps, saliency_weights
from .optim import ParamSet, adam_step
from .tensor import Tensor, as_array

_K = 3  # all convolutions are 3x3


@dataclass
class LossWeights:
    """Coefficients of the training objectives; all finite and >= 0."""

    fre: float = 0.1
    intensity: float = 1.0
    ssim: float = 1.0
    grad: float = 1.0
    color: float = 0.5
    mask: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"loss weight {f.name} must be finite and >= 0, got {v}")


class CodecParams:
    """Encoder/decoder parameter sets plus architecture and freeze state."""

    def __init__(self, encoder: ParamSet, decoder: ParamSet, in_channels=1,
                 hidden=(32, 64), latent_channels=4, alpha=0.2, freeze="none"):
        if freeze not in ("none", "encoder"):
            raise ValueError(f"freeze must be none or encoder, got {freeze!r}")
        self.encoder = encoder
        self.decoder = decoder
        self.in_channels = int(in_channels)
        self.hidden = tuple(int(h) for h in hidden)
        self.latent_channels = int(latent_channels)
        self.alpha = float(alpha)
        self.freeze = freeze

    @staticmethod
    def initialize(in_channels=1, hidden=(32, 64), latent_channels=4, alpha=0.2,
                   seed=0) -> "CodecParams":
        rng = np.random.default_rng(seed)
        c1, c2 = hidden

        def conv_w(cout, cin):
            std = np.sqrt(2.0 / (cin * _K * _K))
            return rng.standard_normal((cout, cin, _K, _K)) * std

        def tconv_w(cin, cout):
            std = np.sqrt(2.0 / (cin * _K * _K))
            return rng.standard_normal((cin, cout, _K, _K)) * std

        enc = ParamSet({
            "w0": conv_w(c1, in_channels), "b0": np.zeros((c1, 1, 1)),
            "w1": conv_w(c2, c1), "b1": np.zeros((c2, 1, 1)),
            "w2": conv_w(latent_channels, c2), "b2": np.zeros((latent_channels, 1, 1)),
        })
        dec = ParamSet({
            "w0": conv_w(c2, latent_channels), "b0": np.zeros((c2, 1, 1)),
            "w1": tconv_w(c2, c1), "b1": np.zeros((c1, 1, 1)),
            "w2": tconv_w(c1, in_channels),
            # mid-range output at init so the clamp does not start saturated
            "b2": np.full((in_channels, 1, 1), 0.5),
        })
        return CodecParams(enc, dec, in_channels, hidden, latent_channels, alpha)

    def with_freeze(self, freeze: str) -> "CodecParams":
        return CodecParams(self.encoder, self.decoder, self.in_channels, self.hidden,
                           self.latent_channels, self.alpha, freeze)


# -- forward graphs ------------------------------------------------------------------


def _encode_nodes(get, p: CodecParams, x: ad.Node) -> ad.Node:
    h = ad.leaky_relu(ad.conv2d(x, get("w0"), 2, 1) + get("b0"), p.alpha)
    h = ad.leaky_relu(ad.conv2d(h, get("w1"), 2, 1) + get("b1"), p.alpha)
    return ad.conv2d(h, get("w2"), 1, 1) + get("b2")


def _decode_nodes(get, p: CodecParams, z: ad.Node) -> ad.Node:
    n, _, h, w = z.value.shape
    y = ad.leaky_relu(ad.conv2d(z, get("w0"), 1, 1) + get("b0"), p.alpha)
    y = ad.leaky_relu(ad.transposed_conv2d(y, get("w1"), 2, 1, (2 * h, 2 * w)) + get("b1"),
                      p.alpha)
    y = ad.transposed_conv2d(y, get("w2"), 2, 1, (4 * h, 4 * w)) + get("b2")
    return ad.clamp(y, 0.0, 1.0)


def _const_getter(pset: ParamSet):
    cache = {k: ad.constant(pset[k]) for k in pset.names()}
    return lambda k: cache[k]


def _leaf_getter(pset: ParamSet):
    cache = {k: ad.leaf(pset[k]) for k in pset.names()}
    return (lambda k: cache[k]), cache


def _check_divisible(a: np.ndarray):
    h, w = a.shape
    if h % 4 or w % 4:
        raise ValueError(
            f"image extents must be divisible by 4, got {h}x{w}; "
            f"pad by ({(-h) % 4}, {(-w) % 4}) pixels"
        )


def encode(p: CodecParams, img) -> Tensor:
    """Image (H, W) -> latent (latent_channels, H/4, W/4); deterministic."""
    a = as_gray(img)
    _check_divisible(a)
    z = _encode_nodes(_const_getter(p.encoder), p, ad.constant(a[None, None]))
    return Tensor(z.value[0])


def decode(p: CodecParams, z) -> Image:
    """Latent (latent_channels, h, w) -> gray image (4h, 4w) in [0, 1]."""
    a = as_array(z)
    if a.ndim != 3 or a.shape[0] != p.latent_channels:
        raise ValueError(
            f"latent must be ({p.latent_channels}, h, w), got {a.shape}"
        )
    y = _decode_nodes(_const_getter(p.decoder), p, ad.constant(a[None]))
    return Image(y.value[0, 0])


# -- frequency loss -------------------------------------------------------------------


def _log_spectrum_node(img_node: ad.Node) -> ad.Node:
    """Min-max-normalized log(1 + |DFT|). The center shift is omitted on the
    tape: both spectra are permuted identically, so the squared-difference
    mean is unchanged (see freq_loss docstring)."""
    return ad.minmax_normalize(ad.log1p(ad.complex_magnitude(ad.fft2(img_node))))


def _freq_loss_node(a: ad.Node, b: ad.Node) -> ad.Node:
    d = _log_spectrum_node(a) - _log_spectrum_node(b)
    return ad.reduce_mean(d * d)


def freq_loss(x, xr) -> float:
    """Mean squared difference of normalized, center-shifted log-magnitude
    spectra of the two images (gray, or color averaged to one channel).

    Spectra are compared on the power-of-two padded grid. The value is
    identical with or without the center shift, since both spectra are
    shifted by the same permutation before the pixelwise difference.
    """
    a, b = _loss_gray(x), _loss_gray(xr)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(_freq_loss_node(ad.constant(a), ad.constant(b)).value)


def log_spectrum(x) -> np.ndarray:
    """Reference spectrum view: normalized log1p magnitude, center-shifted."""
    mag = np.log1p(np.abs(fftshift(fft2(_loss_gray(x))).data))
    lo, hi = mag.min(), mag.max()
    return np.zeros_like(mag) if hi == lo else (mag - lo) / (hi - lo)


def _loss_gray(img) -> np.ndarray:
    if isinstance(img, Image) and img.channels == 3:
        return img.pixels.mean(axis=2)
    a = as_array(img) if not isinstance(img, Image) else img.pixels
    if a.ndim == 3:
        return a.mean(axis=2)
    return a


# -- fusion loss -----------------------------------------------------------------------

_SSIM_SIGMA = 1.5
_SSIM_WIN = 11
_SSIM_C1 = 0.01**2
_SSIM_C2 = 0.03**2


def _gaussian_window(n: int, sigma: float) -> np.ndarray:
    r = (n - 1) / 2.0
    x = np.arange(n) - r
    k = np.exp(-0.5 * (x / sigma) ** 2)
    k2 = np.outer(k, k)
    return k2 / k2.sum()


def _ssim_node(a: ad.Node, b: ad.Node) -> ad.Node:
    """Mean local SSIM (11x11 Gaussian window, sigma 1.5, L = 1, valid mode)
    between (1, 1, H, W) nodes."""
    h, w = a.value.shape[-2:]
    if h < _SSIM_WIN or w < _SSIM_WIN:
        raise ValueError(f"SSIM needs at least {_SSIM_WIN}x{_SSIM_WIN} pixels, got {h}x{w}")
    k = ad.constant(_gaussian_window(_SSIM_WIN, _SSIM_SIGMA)[None, None])
    mu_a = ad.conv2d(a, k)
    mu_b = ad.conv2d(b, k)
    var_a = ad.conv2d(a * a, k) - mu_a * mu_a
    var_b = ad.conv2d(b * b, k) - mu_b * mu_b
    cov = ad.conv2d(a * b, k) - mu_a * mu_b
    num = (mu_a * mu_b * 2.0 + _SSIM_C1) * (cov * 2.0 + _SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + _SSIM_C1) * (var_a + var_b + _SSIM_C2)
    return ad.reduce_mean(num / den)


_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])


def _sobel_pair(x4: ad.Node):
    kx = ad.constant(_SOBEL_X[None, None])
    ky = ad.constant(_SOBEL_X.T[None, None])
    return ad.absolute(ad.conv2d(x4, kx)), ad.absolute(ad.conv2d(x4, ky))


def _fusion_loss_nodes(f: ad.Node, i2: np.ndarray, v2: np.ndarray, w: LossWeights,
                       weight_maps: WeightMaps | None) -> dict:
    """Per-term scalar nodes for one (1, 1, H, W) fused node against gray
    sources. The color term is handled outside (chroma never passes through
    the decoder here)."""
    i4, v4 = i2[None, None], v2[None, None]
    terms = {}
    if w.intensity:
        target = ad.constant(np.maximum(i4, v4))
        terms["intensity"] = ad.reduce_mean(ad.absolute(f - target))
    if w.ssim:
        two = ad.constant(np.asarray(2.0))
        terms["ssim"] = two - _ssim_node(f, ad.constant(i4)) - _ssim_node(f, ad.constant(v4))
    if w.grad:
        gxf, gyf = _sobel_pair(f)
        gxi, gyi = (np.abs(_conv_valid(i2, _SOBEL_X)), np.abs(_conv_valid(i2, _SOBEL_X.T)))
        gxv, gyv = (np.abs(_conv_valid(v2, _SOBEL_X)), np.abs(_conv_valid(v2, _SOBEL_X.T)))
        tx = ad.constant(np.maximum(gxi, gxv)[None, None])
        ty = ad.constant(np.maximum(gyi, gyv)[None, None])
        gsum = ad.reduce_mean(ad.absolute(gxf - tx)) + ad.reduce_mean(ad.absolute(gyf - ty))
        terms["grad"] = gsum * 0.5
    if w.mask:
        wm = weight_maps if weight_maps is not None else saliency_weights(i2, v2)
        blend = np.clip(wm.w_v * v2 + wm.w_ir * i2, 0.0, 1.0)
        terms["mask"] = ad.reduce_mean(ad.absolute(ad.constant(blend[None, None]) - f))
    return terms


def _conv_valid(a: np.ndarray, k: np.ndarray) -> np.ndarray:
    kh, kw = k.shape
    h, w = a.shape
    out = np.zeros((h - kh + 1, w - kw + 1))
    for di in range(kh):
        for dj in range(kw):
            out += k[di, dj] * a[di : di + h - kh + 1, dj : dj + w - kw + 1]
    return out


def _chroma_l1(f, v) -> float:
    from .image import rgb_ycbcr

    def chroma(img):
        if not isinstance(img, Image) or img.channels != 3:
            return None
        ycc = img if img.space == "ycbcr" else rgb_ycbcr(img, "forward")
        return ycc.pixels[:, :, 1:]

    cf, cv = chroma(f), chroma(v)
    if cf is None or cv is None:
        return 0.0
    return float(np.mean(np.abs(cf - cv)))


def fusion_loss(f, i, v, w: LossWeights, weight_maps: WeightMaps | None = None):
    """Weighted fusion objective against the two sources.

    Terms (each a per-pixel mean): intensity L1 to max(i, v), SSIM deficit to
    both sources, L1 between absolute Sobel responses and their source-wise
    max, chroma L1 between f and v (color inputs only), and the L1 saliency
    mask term. Returns (total, components dict with raw term values).
    """
    f2, i2, v2 = _loss_gray(f), _loss_gray(i), _loss_gray(v)
    if not (f2.shape == i2.shape == v2.shape):
        raise ValueError("fused and source images must share a shape")
    terms = _fusion_loss_nodes(ad.constant(f2[None, None]), i2, v2, w, weight_maps)
    comps = {k: float(n.value) for k, n in terms.items()}
    comps.setdefault("intensity", 0.0)
    comps.setdefault("ssim", 0.0)
    comps.setdefault("grad", 0.0)
    comps.setdefault("mask", 0.0)
    comps["color"] = _chroma_l1(f, v) if w.color else 0.0
    total = (w.intensity * comps["intensity"] + w.ssim * comps["ssim"]
             + w.grad * comps["grad"] + w.color * comps["color"]
             + w.mask * comps["mask"])
    return total, comps


# -- training steps ---------------------------------------------------------------------


def _batch_arrays(batch) -> list:
    out = []
    for item in batch:
        a = _loss_gray(item)
        _check_divisible(a)
        out.append(a)
    return out


def stage1_step(p: CodecParams, batch, w: LossWeights, lr=1e-3, beta1=0.9, beta2=0.999):
    """One Adam step of encoder + decoder on L1 reconstruction plus the
    spectral loss; returns (updated params, component means)."""
    if p.freeze != "none":
        raise ValueError("stage one trains encoder and decoder; freeze must be none")
    imgs = _batch_arrays(batch)
    get_e, enc_leaves = _leaf_getter(p.encoder)
    get_d, dec_leaves = _leaf_getter(p.decoder)
    n = len(imgs)
    l1_nodes, fre_nodes = [], []
    for a in imgs:
        x = ad.constant(a[None, None])
        recon = _decode_nodes(get_d, p, _encode_nodes(get_e, p, x))
        l1_nodes.append(ad.reduce_mean(ad.absolute(recon - x)))
        if w.fre:
            fre_nodes.append(_freq_loss_node(recon, x))
    l1 = l1_nodes[0] if n == 1 else sum(l1_nodes[1:], l1_nodes[0])
    l1 = l1 * (1.0 / n)
    total = l1
    fre = None
    if fre_nodes:
        fre = fre_nodes[0] if n == 1 else sum(fre_nodes[1:], fre_nodes[0])
        fre = fre * (1.0 / n)
        total = l1 + fre * w.fre
    losses = {
        "l1": float(l1.value),
        "fre": float(fre.value) if fre is not None else 0.0,
        "total": float(total.value),
    }
    if not np.isfinite(losses["total"]):
        raise FloatingPointError(f"non-finite stage-one loss: {losses}")
    leaves = {**{f"enc.{k}": nd for k, nd in enc_leaves.items()},
              **{f"dec.{k}": nd for k, nd in dec_leaves.items()}}
    grads = ad.backward(total, list(leaves.values()))
    enc_g = {k: grads[enc_leaves[k]] for k in enc_leaves}
    dec_g = {k: grads[dec_leaves[k]] for k in dec_leaves}
    new = CodecParams(
        adam_step(p.encoder, enc_g, lr, beta1, beta2),
        adam_step(p.decoder, dec_g, lr, beta1, beta2),
        p.in_channels, p.hidden, p.latent_channels, p.alpha, p.freeze,
    )
    return new, losses


def stage2_step(p: CodecParams, pairs, w: LossWeights, lr=1e-3, beta1=0.9, beta2=0.999,
                weight_maps: WeightMaps | None = None):
    """One decoder-only Adam step on the fusion loss over (i, v) pairs.

    The fused candidate is decode(encode(v)): sampling is bypassed during
    training and applied only at inference. The encoder must be frozen and is
    carried over bit-identically.
    """
    if p.freeze != "encoder":
        raise ValueError("stage two requires freeze='encoder'")
    get_e = _const_getter(p.encoder)
    get_d, dec_leaves = _leaf_getter(p.decoder)
    comps_sum = {"intensity": 0.0, "ssim": 0.0, "grad": 0.0, "mask": 0.0}
    total_node = None
    n = 0
    for i_img, v_img in pairs:
        i2, v2 = _loss_gray(i_img), _loss_gray(v_img)
        _check_divisible(v2)
        f = _decode_nodes(get_d, p, _encode_nodes(get_e, p, ad.constant(v2[None, None])))
        terms = _fusion_loss_nodes(f, i2, v2, w, weight_maps)
        pair_total = None
        for name, node in terms.items():
            comps_sum[name] += float(node.value)
            weighted = node * getattr(w, name)
            pair_total = weighted if pair_total is None else pair_total + weighted
        total_node = pair_total if total_node is None else total_node + pair_total
        n += 1
    if n == 0:
        raise ValueError("stage two needs at least one (i, v) pair")
    total_node = total_node * (1.0 / n)
    losses = {k: s / n for k, s in comps_sum.items()}
    losses["color"] = 0.0  # luma-only training path
    losses["total"] = float(total_node.value)
    if not np.isfinite(losses["total"]):
        raise FloatingPointError(f"non-finite stage-two loss: {losses}")
    grads = ad.backward(total_node, list(dec_leaves.values()))
    dec_g = {k: grads[dec_leaves[k]] for k in dec_leaves}
    new = CodecParams(
        p.encoder,  # same object: bit-identical by construction
        adam_step(p.decoder, dec_g, lr, beta1, beta2),
        p.in_channels, p.hidden, p.latent_channels, p.alpha, p.freeze,
    )
    return new, losses
