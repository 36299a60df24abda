"""Image readers and writers: Radiance HDR (RGBE), PFM, and PNG.

HDR and PFM are parsed directly so behavior is identical everywhere; PNG
goes through Pillow. All functions exchange numpy float32 arrays shaped
(H, W, 3) or (H, W), with row 0 at the top of the image.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image

_HDR_MAGICS = (b"#?RADIANCE", b"#?RGBE")


def _float_to_rgbe(rgb: np.ndarray) -> np.ndarray:
    """(H, W, 3) float -> (H, W, 4) uint8 shared-exponent encoding."""
    maxc = rgb.max(axis=-1)
    rgbe = np.zeros(rgb.shape[:2] + (4,), dtype=np.uint8)
    valid = maxc >= 1e-32
    mant, exp = np.frexp(maxc[valid])
    scale = mant * 256.0 / maxc[valid]
    # Round for accuracy; the max channel can land on 256 exactly, clip it.
    quant = np.clip(np.round(rgb[valid] * scale[:, None]), 0, 255).astype(np.uint8)
    rgbe[valid, :3] = quant
    rgbe[valid, 3] = (exp + 128).astype(np.uint8)
    return rgbe


def _rgbe_to_float(rgbe: np.ndarray) -> np.ndarray:
    exp = rgbe[..., 3].astype(np.int32)
    scale = np.ldexp(1.0, exp - 136).astype(np.float32)  # 136 = 128 + 8 mantissa bits
    out = rgbe[..., :3].astype(np.float32) * scale[..., None]
    out[exp == 0] = 0.0
    return out


def _rle_encode_component(comp: np.ndarray) -> bytes:
    """Radiance new-style RLE for one component of one scanline."""
    out = bytearray()
    # Collapse to (value, length) runs first so the loop is over runs.
    change = np.nonzero(np.diff(comp))[0] + 1
    starts = np.concatenate(([0], change))
    lengths = np.diff(np.concatenate((starts, [len(comp)])))
    i = 0
    literal: list[int] = []

    def flush_literal() -> None:
        pos = 0
        while pos < len(literal):
            n = min(128, len(literal) - pos)
            out.append(n)
            out.extend(literal[pos : pos + n])
            pos += n
        literal.clear()

    for start, length in zip(starts, lengths):
        if length < 4:
            literal.extend(comp[start : start + length])
            continue
        flush_literal()
        remaining = int(length)
        val = int(comp[start])
        while remaining > 0:
            n = min(127, remaining)
            out.append(128 + n)
            out.append(val)
            remaining -= n
    flush_literal()
    return bytes(out)


def save_hdr(path: str | Path, rgb: np.ndarray) -> None:
    """Write a Radiance .hdr file with RLE-compressed RGBE scanlines.

    Args:
        path: output file path.
        rgb: (H, W, 3) non-negative linear radiance.
    """
    rgb = np.asarray(rgb, dtype=np.float32)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) array, got {rgb.shape}")
    if not np.isfinite(rgb).all() or (rgb < 0).any():
        raise ValueError("radiance values must be finite and non-negative")
    h, w = rgb.shape[:2]
    rgbe = _float_to_rgbe(rgb)
    with open(path, "wb") as f:
        f.write(b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n")
        f.write(f"-Y {h} +X {w}\n".encode("ascii"))
        if 8 <= w < 32768:
            for row in rgbe:
                f.write(bytes([2, 2, (w >> 8) & 0xFF, w & 0xFF]))
                for c in range(4):
                    f.write(_rle_encode_component(row[:, c]))
        else:
            f.write(rgbe.tobytes())


def load_hdr(path: str | Path | bytes) -> np.ndarray:
    """Read a Radiance .hdr file (path or raw bytes) into (H, W, 3) float32."""
    raw = bytes(path) if isinstance(path, (bytes, bytearray)) else Path(path).read_bytes()
    if not raw.startswith(_HDR_MAGICS):
        raise ValueError("not a Radiance HDR file (bad magic)")
    pos = raw.index(b"\n") + 1
    # Header lines until the blank separator.
    while True:
        end = raw.index(b"\n", pos)
        line = raw[pos:end]
        pos = end + 1
        if line == b"":
            break
        if line.startswith(b"FORMAT=") and b"rgbe" not in line:
            raise ValueError(f"unsupported HDR pixel format: {line!r}")
    end = raw.index(b"\n", pos)
    dims = raw[pos:end].split()
    pos = end + 1
    if len(dims) != 4 or dims[0] != b"-Y" or dims[2] != b"+X":
        raise ValueError(f"unsupported HDR orientation: {b' '.join(dims)!r}")
    h, w = int(dims[1]), int(dims[3])
    rgbe = np.empty((h, w, 4), dtype=np.uint8)
    for y in range(h):
        if pos + 4 <= len(raw) and raw[pos] == 2 and raw[pos + 1] == 2 and ((raw[pos + 2] << 8) | raw[pos + 3]) == w and 8 <= w < 32768:
            pos += 4
            for c in range(4):
                filled = 0
                while filled < w:
                    code = raw[pos]
                    pos += 1
                    if code > 128:
                        n = code - 128
                        rgbe[y, filled : filled + n, c] = raw[pos]
                        pos += 1
                    else:
                        n = code
                        rgbe[y, filled : filled + n, c] = np.frombuffer(
                            raw, np.uint8, count=n, offset=pos
                        )
                        pos += n
                    filled += n
                if filled != w:
                    raise ValueError("corrupt RLE scanline")
        else:
            flat = np.frombuffer(raw, np.uint8, count=4 * w, offset=pos)
            rgbe[y] = flat.reshape(w, 4)
            pos += 4 * w
    return _rgbe_to_float(rgbe)


def save_pfm(path: str | Path, img: np.ndarray) -> None:
    """Write a little-endian PFM ("PF" color or "Pf" grayscale).

    Float32 values pass through untouched, so a save/load pair is
    bit-exact. Rows are stored bottom-up per the format.
    """
    img = np.asarray(img, dtype=np.float32)
    if img.ndim == 3 and img.shape[2] == 3:
        magic = b"PF"
    elif img.ndim == 2:
        magic = b"Pf"
    else:
        raise ValueError(f"expected (H, W, 3) or (H, W) array, got {img.shape}")
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(magic + b"\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")  # negative scale marks little-endian
        f.write(np.flipud(img).astype("<f4").tobytes())


def load_pfm(path: str | Path) -> np.ndarray:
    """Read a PFM file into float32 (H, W, 3) or (H, W), top row first."""
    raw = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PFM header")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace after the scale token
    magic, w_tok, h_tok, scale_tok = tokens
    if magic not in (b"PF", b"Pf"):
        raise ValueError(f"not a PFM file: magic {magic!r}")
    w, h = int(w_tok), int(h_tok)
    scale = float(scale_tok)
    channels = 3 if magic == b"PF" else 1
    count = w * h * channels
    dtype = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=pos).astype(np.float32)
    img = data.reshape(h, w, channels) if channels == 3 else data.reshape(h, w)
    # The |scale| brightness factor is ignored; files we write use 1.0.
    return np.flipud(img).copy()


def save_png(path: str | Path, img: np.ndarray) -> None:
    """Write an 8-bit PNG from float values in [0, 1] ((H, W, 3) or (H, W))."""
    img = np.asarray(img, dtype=np.float32)
    quant = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(quant).save(path, format="PNG")


def png_bytes(img: np.ndarray) -> bytes:
    img = np.asarray(img, dtype=np.float32)
    quant = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(quant).save(buf, format="PNG")
    return buf.getvalue()


def load_png(path: str | Path) -> np.ndarray:
    """Read a PNG into float32 in [0, 1]; RGBA stays 4-channel."""
    with Image.open(path) as im:
        arr = np.asarray(im)
    return arr.astype(np.float32) / 255.0
