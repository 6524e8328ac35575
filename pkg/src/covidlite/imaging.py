"""Raster I/O and the white balance -> CLAHE -> normalize -> resize pipeline.

Images are ``uint8`` arrays of shape (H, W, C) with C in {1, 3}. The
normalized network input is ``float32`` (H, W, 3) in [0, 1].
"""

import io
import math
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

__all__ = [
    "ImageDecodeError",
    "PreprocessConfig",
    "as_image",
    "decode_image",
    "read_image",
    "encode_image",
    "white_balance",
    "clahe",
    "resize_bilinear",
    "normalize_and_resize",
    "preprocess",
    "load_preprocessed",
]

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
JPEG_SOI = b"\xff\xd8"


class ImageDecodeError(ValueError):
    """Raised for malformed raster streams; ``offset`` is the first bad byte."""

    def __init__(self, offset, reason):
        super().__init__(f"cannot decode image at byte offset {offset}: {reason}")
        self.offset = offset
        self.reason = reason


@dataclass(frozen=True)
class PreprocessConfig:
    apply_white_balance: bool = True
    apply_clahe: bool = True
    clahe_tiles: int = 8
    clahe_clip: float = 2.0
    target_size: int = 224
    percentile: float = 0.0005

    def __post_init__(self):
        if self.clahe_tiles < 1:
            raise ValueError("clahe_tiles must be >= 1")
        if self.clahe_clip < 1.0:
            raise ValueError("clahe_clip must be >= 1.0")
        if not 0 <= self.percentile < 0.5:
            raise ValueError("percentile must be in [0, 0.5)")
        if self.target_size < 8:
            raise ValueError("target_size must be >= 8")


def as_image(arr):
    """Coerce a (H, W) or (H, W, C) uint8 array to the (H, W, C) convention."""
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        raise TypeError(f"expected uint8 pixels, got {arr.dtype}")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3) or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"expected (H, W, 1|3) image, got shape {arr.shape}")
    return arr


# --------------------------------------------------------------------------
# decoding / encoding
# --------------------------------------------------------------------------


def _scan_png(data):
    """Walk PNG chunks; return the offset of the first corrupt one or None."""
    pos = len(PNG_SIGNATURE)
    while pos < len(data):
        if pos + 8 > len(data):
            return pos, "truncated chunk header"
        length, ctype = struct.unpack(">I4s", data[pos : pos + 8])
        end = pos + 12 + length
        if end > len(data):
            return pos, f"chunk {ctype!r} truncated"
        body = data[pos + 4 : pos + 8 + length]
        (crc,) = struct.unpack(">I", data[pos + 8 + length : end])
        if zlib.crc32(body) != crc:
            return pos, f"chunk {ctype!r} CRC mismatch"
        if ctype == b"IEND":
            return None
        pos = end
    return pos, "missing IEND chunk"


def _scan_jpeg(data):
    """Walk JPEG marker segments up to the scan; return (offset, reason) or None."""
    pos = 2
    while pos < len(data):
        if data[pos] != 0xFF:
            return pos, "expected marker"
        if pos + 4 > len(data):
            return pos, "truncated marker segment"
        marker = data[pos + 1]
        (length,) = struct.unpack(">H", data[pos + 2 : pos + 4])
        if pos + 2 + length > len(data):
            return pos, f"marker 0x{marker:02X} truncated"
        if marker == 0xDA:
            return None if data.rstrip(b"\x00").endswith(b"\xff\xd9") else (
                len(data),
                "missing end-of-image marker",
            )
        pos += 2 + length
    return pos, "no scan data"


def decode_image(data):
    """Decode PNG or JPEG bytes to an (H, W, C) uint8 array.

    16-bit samples are reduced by integer division by 257. An alpha channel
    is dropped; palette images are expanded to RGB.
    """
    data = bytes(data)
    if data.startswith(PNG_SIGNATURE):
        bad = _scan_png(data)
    elif data.startswith(JPEG_SOI):
        bad = _scan_jpeg(data)
    else:
        raise ImageDecodeError(0, "not a PNG or JPEG signature")
    if bad is not None:
        raise ImageDecodeError(*bad)
    try:
        with PILImage.open(io.BytesIO(data)) as im:
            im.load()
            return _pil_to_array(im)
    except (OSError, SyntaxError, ValueError) as exc:
        raise ImageDecodeError(0, str(exc)) from exc


def _pil_to_array(im):
    mode = im.mode
    if mode in ("I;16", "I;16B", "I;16L", "I"):
        # 16-bit grayscale PNG
        arr = np.asarray(im).astype(np.int64)
        return as_image((np.clip(arr, 0, 65535) // 257).astype(np.uint8))
    if mode in ("L", "LA"):
        return as_image(np.asarray(im.convert("L")))
    if mode == "1":
        return as_image(np.asarray(im.convert("L")))
    return as_image(np.asarray(im.convert("RGB")))


def read_image(path):
    path = Path(path)
    return decode_image(path.read_bytes())


def encode_image(img, path):
    """Write ``img`` as a lossless PNG."""
    img = as_image(img)
    mode_arr = img[:, :, 0] if img.shape[2] == 1 else img
    try:
        PILImage.fromarray(mode_arr).save(Path(path), format="PNG")
    except OSError as exc:
        raise OSError(f"cannot write image to {path}: {exc}") from exc
    return Path(path)


# --------------------------------------------------------------------------
# white balance
# --------------------------------------------------------------------------


def _nearest_rank(sorted_vals, fraction):
    n = sorted_vals.size
    rank = max(1, math.ceil(round(fraction * n, 9)))
    return int(sorted_vals[min(rank, n) - 1])


def white_balance(img, percentile=0.0005):
    """Per-channel percentile stretch to the full 8-bit range.

    The low/high anchors are the nearest-rank ``percentile`` and
    ``1 - percentile`` values of each channel; pixels are mapped affinely,
    clipped to [0, 255] and rounded half up. Constant channels are left as is.
    """
    img = as_image(img)
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        chan = img[:, :, c]
        s = np.sort(chan, axis=None)
        lo = _nearest_rank(s, percentile)
        hi = _nearest_rank(s, 1.0 - percentile)
        if hi <= lo:
            out[:, :, c] = chan
            continue
        v = chan.astype(np.int64)
        num = np.clip(v - lo, 0, hi - lo) * 255
        den = hi - lo
        out[:, :, c] = (2 * num + den) // (2 * den)
    return out


# --------------------------------------------------------------------------
# CLAHE
# --------------------------------------------------------------------------


def _tile_luts(chan, tiles, clip):
    """Per-tile float remapping tables, shape (tiles, tiles, 256)."""
    th = chan.shape[0] // tiles
    tw = chan.shape[1] // tiles
    npix = th * tw
    limit = clip * npix / 256.0
    luts = np.empty((tiles, tiles, 256), dtype=np.float64)
    for ty in range(tiles):
        for tx in range(tiles):
            tile = chan[ty * th : (ty + 1) * th, tx * tw : (tx + 1) * tw]
            hist = np.bincount(tile.ravel(), minlength=256).astype(np.float64)
            excess = np.maximum(hist - limit, 0.0).sum()
            hist = np.minimum(hist, limit) + excess / 256.0
            cdf = np.cumsum(hist) / npix
            pmin, pmax = float(tile.min()), float(tile.max())
            luts[ty, tx] = (pmax - pmin) * cdf + pmin
    return luts


def _interp_coords(size, tile, tiles):
    """Lower/upper tile index and fractional weight along one axis."""
    t = (np.arange(size) + 0.5) / tile - 0.5
    lo = np.floor(t).astype(np.int64)
    frac = t - lo
    hi = np.clip(lo + 1, 0, tiles - 1)
    lo = np.clip(lo, 0, tiles - 1)
    return lo, hi, frac


def clahe(img, tiles=8, clip=2.0):
    """Contrast-limited adaptive histogram equalization, channel by channel.

    Each channel is edge-padded to a multiple of ``tiles`` per axis. Every
    tile's 256-bin histogram is clipped at ``clip * tile_pixels / 256`` and
    the excess spread evenly over all bins (one pass). A tile maps value v to
    ``(pmax - pmin) * CDF(v) + pmin`` with its own extrema; output pixels
    blend the four nearest tile maps bilinearly and round half up.
    """
    img = as_image(img)
    if tiles < 1:
        raise ValueError("tiles must be >= 1")
    h, w = img.shape[:2]
    th = -(-h // tiles)
    tw = -(-w // tiles)
    ph, pw = th * tiles, tw * tiles
    y0, y1, fy = _interp_coords(ph, th, tiles)
    x0, x1, fx = _interp_coords(pw, tw, tiles)
    y0, y1, fy = y0[:, None], y1[:, None], fy[:, None]
    out = np.empty_like(img)
    for c in range(img.shape[2]):
        chan = np.pad(img[:, :, c], ((0, ph - h), (0, pw - w)), mode="edge")
        luts = _tile_luts(chan, tiles, clip)
        v = chan.astype(np.int64)
        m00 = luts[y0, x0, v]
        m01 = luts[y0, x1, v]
        m10 = luts[y1, x0, v]
        m11 = luts[y1, x1, v]
        top = m00 + fx * (m01 - m00)
        bottom = m10 + fx * (m11 - m10)
        val = top + fy * (bottom - top)
        res = np.clip(np.floor(val + 0.5), 0, 255).astype(np.uint8)
        out[:, :, c] = res[:h, :w]
    return out


# --------------------------------------------------------------------------
# normalize / resize
# --------------------------------------------------------------------------


def _axis_weights(n_in, n_out):
    scale = np.float32(n_in / n_out)
    src = (np.arange(n_out, dtype=np.float32) + np.float32(0.5)) * scale - np.float32(0.5)
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, (src - lo).astype(np.float32)


def resize_bilinear(arr, height, width):
    """Half-pixel-centre bilinear resample of a float (H, W, C) array."""
    arr = np.asarray(arr)
    h, w = arr.shape[:2]
    y0, y1, fy = _axis_weights(h, height)
    x0, x1, fx = _axis_weights(w, width)
    fy = fy[:, None, None].astype(arr.dtype)
    fx = fx[None, :, None].astype(arr.dtype)
    rows0 = arr[y0]
    rows1 = arr[y1]
    top = rows0[:, x0] + fx * (rows0[:, x1] - rows0[:, x0])
    bottom = rows1[:, x0] + fx * (rows1[:, x1] - rows1[:, x0])
    return top + fy * (bottom - top)


def normalize_and_resize(img, target=224):
    """Scale to [0, 1] float32, replicate grayscale to RGB, resize to target^2."""
    img = as_image(img)
    x = img.astype(np.float32) / np.float32(255)
    if x.shape[2] == 1:
        x = np.repeat(x, 3, axis=2)
    if x.shape[:2] != (target, target):
        x = resize_bilinear(x, target, target)
    return np.clip(x, 0.0, 1.0).astype(np.float32)


def preprocess(img, config=PreprocessConfig()):
    """Run the enabled enhancement steps in fixed order, then normalize."""
    img = as_image(img)
    if config.apply_white_balance:
        img = white_balance(img, config.percentile)
    if config.apply_clahe:
        img = clahe(img, config.clahe_tiles, config.clahe_clip)
    return normalize_and_resize(img, config.target_size)


def load_preprocessed(path, config=PreprocessConfig()):
    return preprocess(read_image(path), config)
