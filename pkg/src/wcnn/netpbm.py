"""Binary Netpbm (P5/P6) reader and P5 writer, maxval 255 only.

Kept dependency-free and bit-exact: an 8-bit image survives a
save/load round trip unchanged, which the dataset tests rely on.
"""

from __future__ import annotations

import numpy as np

from .errors import CodecError
from .tensor import DTYPE, Tensor


def _parse_header(buf):
    """Return (magic, width, height, maxval, payload offset).

    Netpbm headers are ASCII tokens separated by whitespace, with
    '#'-comments running to end of line; exactly one whitespace byte
    separates the maxval from the binary payload.
    """
    if len(buf) < 2 or buf[0:1] != b"P":
        raise CodecError(f"not a Netpbm file (starts with {bytes(buf[:2])!r})", offset=0)
    magic = bytes(buf[0:2])
    off = 2
    tokens = []
    while len(tokens) < 3:
        # skip whitespace and comments
        while off < len(buf):
            ch = buf[off : off + 1]
            if ch.isspace():
                off += 1
            elif ch == b"#":
                nl = buf.find(b"\n", off)
                if nl < 0:
                    raise CodecError("unterminated comment in header", offset=off)
                off = nl + 1
            else:
                break
        start = off
        while off < len(buf) and not buf[off : off + 1].isspace():
            off += 1
        if start == off:
            raise CodecError("truncated header", offset=off)
        token = buf[start:off]
        if not token.isdigit():
            raise CodecError(f"expected integer in header, got {bytes(token)!r}", offset=start)
        tokens.append(int(token))
    if off >= len(buf) or not buf[off : off + 1].isspace():
        raise CodecError("missing whitespace after maxval", offset=off)
    off += 1
    width, height, maxval = tokens
    return magic, width, height, maxval, off


def _load(path, expect_magic, channels):
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, width, height, maxval, off = _parse_header(buf)
    if magic != expect_magic:
        raise CodecError(f"expected {expect_magic.decode()} file, got {magic.decode()}", offset=0)
    if maxval != 255:
        raise CodecError(f"only maxval 255 is supported, got {maxval}")
    need = width * height * channels
    if len(buf) - off < need:
        raise CodecError(
            f"truncated payload: need {need} bytes, have {len(buf) - off}", offset=off
        )
    flat = np.frombuffer(buf, dtype=np.uint8, count=need, offset=off)
    img = flat.reshape(height, width, channels).transpose(2, 0, 1)
    return Tensor(img.astype(DTYPE) / DTYPE(255.0))


def load_ppm(path):
    """Read a binary P6 image as a [3, H, W] tensor with values in [0, 1]."""
    return _load(path, b"P6", 3)


def load_pgm(path):
    """Read a binary P5 image as a [1, H, W] tensor with values in [0, 1]."""
    return _load(path, b"P5", 1)


def load_image(path):
    """Read P5 or P6 by sniffing the magic."""
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"P6":
        return load_ppm(path)
    if magic == b"P5":
        return load_pgm(path)
    raise CodecError(f"unsupported magic {magic!r}", offset=0)


def save_pgm(image, path, lo=None, hi=None):
    """Write a grayscale image as binary P5, maxval 255.

    Values map affinely from [lo, hi] (defaults: the data's min/max) onto
    [0, 255] and are clamped after rounding. Multi-channel input is
    collapsed to its channel mean; a degenerate range writes black.
    """
    data = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=DTYPE)
    if data.ndim == 3:
        data = data.mean(axis=0)
    if data.ndim != 2:
        raise CodecError(f"expected a 2D or [C,H,W] image, got shape {data.shape}")
    lo = float(data.min()) if lo is None else float(lo)
    hi = float(data.max()) if hi is None else float(hi)
    if hi > lo:
        scaled = (data.astype(np.float64) - lo) * (255.0 / (hi - lo))
    else:
        scaled = np.zeros_like(data, dtype=np.float64)
    quant = np.clip(np.rint(scaled), 0, 255).astype(np.uint8)
    h, w = quant.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(quant.tobytes())
