"""Binary checkpoint container.

Layout (all integers little-endian):

    magic   4 bytes  "RFFZ"
    version u32      currently 1; any other value is a hard error
    count   u32      number of tensors
    per tensor:
        name_len u32, name UTF-8 bytes
        dtype    u8   1 = real64, 2 = complex128
        rank     u8
        extents  rank x u64
        payload  float64 little-endian (complex as re/im pairs)

Round-trips are bit-identical: payloads are the raw float64 buffers.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"RFFZ"
VERSION = 1


def _pack_paramset(prefix: str, pset, out: dict) -> None:
    out[f"{prefix}.step"] = np.array(float(pset.step))
    for k in pset.names():
        out[f"{prefix}.{k}"] = pset.params[k]
        out[f"{prefix}.{k}.m"] = pset.m[k]
        out[f"{prefix}.{k}.v"] = pset.v[k]


def _unpack_paramset(prefix: str, tensors: dict):
    from .optim import ParamSet

    params, m, v = {}, {}, {}
    for key, arr in tensors.items():
        if not key.startswith(prefix + ".") or key == f"{prefix}.step":
            continue
        name = key[len(prefix) + 1 :]
        if name.endswith(".m"):
            m[name[:-2]] = arr
        elif name.endswith(".v"):
            v[name[:-2]] = arr
        else:
            params[name] = arr
    step = int(tensors[f"{prefix}.step"])
    return ParamSet(params, m, v, step)


def save_codec_checkpoint(path, codec) -> None:
    tensors = {
        "codec.meta": np.array(
            [codec.in_channels, *codec.hidden, codec.latent_channels, codec.alpha]
        )
    }
    _pack_paramset("codec.enc", codec.encoder, tensors)
    _pack_paramset("codec.dec", codec.decoder, tensors)
    save_checkpoint(path, tensors)


def load_codec_checkpoint(path):
    from .codec import CodecParams

    tensors = load_checkpoint(path)
    if "codec.meta" not in tensors:
        raise ValueError(f"{path}: not a codec checkpoint")
    in_ch, c1, c2, latent, alpha = tensors["codec.meta"]
    return CodecParams(
        _unpack_paramset("codec.enc", tensors),
        _unpack_paramset("codec.dec", tensors),
        int(in_ch), (int(c1), int(c2)), int(latent), float(alpha),
    )


def save_flow_checkpoint(path, model) -> None:
    if model.kind != "mlp":
        raise ValueError("only mlp velocity models are persisted")
    tensors = {
        "flow.meta": np.array([model.meta["dim"], model.meta["alpha"]]),
        "flow.hidden": np.array(model.meta["hidden"], dtype=np.float64),
    }
    _pack_paramset("flow.params", model.params, tensors)
    save_checkpoint(path, tensors)


def load_flow_checkpoint(path):
    from .flow import VelocityModel

    tensors = load_checkpoint(path)
    if "flow.meta" not in tensors:
        raise ValueError(f"{path}: not a velocity-model checkpoint")
    dim, alpha = tensors["flow.meta"]
    hidden = tuple(int(h) for h in tensors["flow.hidden"])
    model = VelocityModel.mlp(int(dim), hidden, float(alpha), seed=0)
    return model.with_params(_unpack_paramset("flow.params", tensors))


def save_checkpoint(path, tensors: dict) -> None:
    """Write {name: float64/complex128 ndarray} to the container."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        a = np.asarray(arr)
        if a.dtype == np.complex128:
            tag = 2
        else:
            a = a.astype(np.float64, copy=False)
            tag = 1
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<BB", tag, a.ndim))
        parts.append(struct.pack(f"<{a.ndim}Q", *a.shape) if a.ndim else b"")
        parts.append(np.ascontiguousarray(a).astype("<c16" if tag == 2 else "<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> dict:
    """Read a container back into {name: ndarray}; rejects version mismatch."""
    blob = Path(path).read_bytes()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint container (bad magic)")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise ValueError(
            f"{path}: checkpoint version {version} not supported (expected {VERSION})"
        )
    pos = 12
    out = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        tag, rank = struct.unpack_from("<BB", blob, pos)
        pos += 2
        shape = struct.unpack_from(f"<{rank}Q", blob, pos) if rank else ()
        pos += 8 * rank
        n = int(np.prod(shape)) if shape else 1
        if tag == 1:
            arr = np.frombuffer(blob, dtype="<f8", count=n, offset=pos).copy()
            pos += 8 * n
        elif tag == 2:
            arr = np.frombuffer(blob, dtype="<c16", count=n, offset=pos).copy()
            pos += 16 * n
        else:
            raise ValueError(f"{path}: unknown dtype tag {tag}")
        out[name] = arr.reshape(shape)
    return out
