"""Minimal PNG and binary PGM/PPM codecs (non-interlaced PNG).

PNG input may use any standard bit depth; samples are reduced to 8 bits.

Decoded images come back as float64 arrays in [0, 1] shaped (C, H, W);
masks as binary (1, H, W) arrays.  Malformed input raises
:class:`ImageFormatError` carrying the byte offset of the problem.
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_CHANNELS = {0: 1, 2: 3, 3: 1, 4: 2, 6: 4}
_DEPTHS = {0: (1, 2, 4, 8, 16), 2: (8, 16), 3: (1, 2, 4, 8), 4: (8, 16), 6: (8, 16)}


class ImageFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


def _paeth(a, b, c):
    p = a + b - c
    pa, pb, pc = np.abs(p - a), np.abs(p - b), np.abs(p - c)
    return np.where((pa <= pb) & (pa <= pc), a, np.where(pb <= pc, b, c))


def _unfilter(raw: bytes, height: int, stride: int, bpp: int, offset: int) -> np.ndarray:
    expected = height * (stride + 1)
    if len(raw) < expected:
        raise ImageFormatError(
            f"image data holds {len(raw)} bytes, expected {expected}", offset
        )
    rows = np.frombuffer(raw[:expected], dtype=np.uint8).reshape(height, stride + 1)
    out = np.zeros((height, stride), dtype=np.int64)
    prev = np.zeros(stride, dtype=np.int64)
    for y in range(height):
        ftype = rows[y, 0]
        line = rows[y, 1:].astype(np.int64)
        if ftype == 0:
            cur = line
        elif ftype == 2:
            cur = (line + prev) & 0xFF
        elif ftype in (1, 3, 4):
            # left-dependent filters are sequential within a row
            cur = np.zeros(stride, dtype=np.int64)
            for x in range(stride):
                left = cur[x - bpp] if x >= bpp else 0
                if ftype == 1:
                    pred = left
                elif ftype == 3:
                    pred = (left + prev[x]) >> 1
                else:
                    upleft = prev[x - bpp] if x >= bpp else 0
                    pred = int(_paeth(np.int64(left), np.int64(prev[x]), np.int64(upleft)))
                cur[x] = (line[x] + pred) & 0xFF
        else:
            raise ImageFormatError(f"unknown PNG filter type {ftype} in row {y}", offset)
        out[y] = cur
        prev = cur
    return out.astype(np.uint8)


def decode_png(data: bytes) -> np.ndarray:
    """Decode PNG bytes to a uint8 array shaped (H, W, C)."""
    if data[:8] != PNG_SIGNATURE:
        raise ImageFormatError("missing PNG signature", 0)
    pos = 8
    header = None
    palette = None
    idat = []
    idat_offset = None
    while True:
        if pos + 8 > len(data):
            raise ImageFormatError("truncated chunk header", pos)
        length, ctype = struct.unpack(">I4s", data[pos : pos + 8])
        body_start = pos + 8
        end = body_start + length
        if end + 4 > len(data):
            raise ImageFormatError(f"chunk {ctype!r} runs past end of file", pos)
        body = data[body_start:end]
        (crc,) = struct.unpack(">I", data[end : end + 4])
        if zlib.crc32(ctype + body) & 0xFFFFFFFF != crc:
            raise ImageFormatError(f"CRC mismatch in chunk {ctype!r}", end)
        if ctype == b"IHDR":
            if length != 13:
                raise ImageFormatError("IHDR must be 13 bytes", pos)
            header = struct.unpack(">IIBBBBB", body)
        elif ctype == b"PLTE":
            palette = np.frombuffer(body, dtype=np.uint8).reshape(-1, 3)
        elif ctype == b"IDAT":
            if idat_offset is None:
                idat_offset = body_start
            idat.append(body)
        elif ctype == b"IEND":
            break
        pos = end + 4

    if header is None:
        raise ImageFormatError("no IHDR chunk", 8)
    width, height, depth, color, _, _, interlace = header
    if color not in _CHANNELS:
        raise ImageFormatError(f"unsupported colour type {color}", 25)
    if depth not in _DEPTHS[color]:
        raise ImageFormatError(f"bit depth {depth} invalid for colour type {color}", 24)
    if interlace != 0:
        raise ImageFormatError("interlaced PNG is not supported", 28)
    if not idat:
        raise ImageFormatError("no IDAT chunk", pos)
    try:
        raw = zlib.decompress(b"".join(idat))
    except zlib.error as exc:
        raise ImageFormatError(f"corrupt image data: {exc}", idat_offset) from None

    channels = _CHANNELS[color]
    bits = width * channels * depth
    stride = (bits + 7) // 8
    pixels = _unfilter(raw, height, stride, max(1, channels * depth // 8), idat_offset)
    if depth == 16:
        img = pixels[:, 0::2].reshape(height, width, channels)
    elif depth == 8:
        img = pixels.reshape(height, width, channels)
    else:
        samples = np.unpackbits(pixels, axis=1).reshape(height, stride * 8 // depth, depth)
        values = (samples * (1 << np.arange(depth - 1, -1, -1))).sum(axis=2)[:, :width]
        if color == 0:
            values = values * (255 // ((1 << depth) - 1))
        img = values.astype(np.uint8)[..., None]
    if color == 3:
        if palette is None:
            raise ImageFormatError("palette image without PLTE", 8)
        img = palette[img[..., 0]]
    return img


def encode_png(img: np.ndarray) -> bytes:
    """Encode a uint8 (H, W) or (H, W, C) array, C in {1, 3, 4}."""
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise TypeError(f"encode_png needs uint8 data, got {img.dtype}")
    if img.ndim == 2:
        img = img[..., None]
    h, w, c = img.shape
    color = {1: 0, 2: 4, 3: 2, 4: 6}[c]
    raw = b"".join(b"\x00" + img[y].tobytes() for y in range(h))

    def chunk(ctype: bytes, body: bytes) -> bytes:
        crc = zlib.crc32(ctype + body) & 0xFFFFFFFF
        return struct.pack(">I", len(body)) + ctype + body + struct.pack(">I", crc)

    ihdr = struct.pack(">IIBBBBB", w, h, 8, color, 0, 0, 0)
    return (
        PNG_SIGNATURE
        + chunk(b"IHDR", ihdr)
        + chunk(b"IDAT", zlib.compress(raw, 9))
        + chunk(b"IEND", b"")
    )


def _pnm_tokens(data: bytes, count: int) -> tuple[list[int], int]:
    tokens, pos = [], 2
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise ImageFormatError("malformed PNM header", start)
        tokens.append(int(data[start:pos]))
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise ImageFormatError("PNM header must end in a single whitespace byte", pos)
    return tokens, pos + 1


def decode_pnm(data: bytes, magic: bytes | None = None) -> np.ndarray:
    """Decode binary PGM (P5) or PPM (P6) to uint8 (H, W, C)."""
    found = data[:2]
    if magic is not None and found != magic:
        raise ImageFormatError(f"expected magic {magic!r}, found {found!r}", 0)
    if found not in (b"P5", b"P6"):
        raise ImageFormatError(f"unsupported PNM magic {found!r}", 0)
    (w, h, maxval), pos = _pnm_tokens(data, 3)
    if not 0 < maxval <= 255:
        raise ImageFormatError(f"only 8-bit PNM supported, maxval={maxval}", pos - 1)
    c = 1 if found == b"P5" else 3
    n = w * h * c
    if len(data) - pos < n:
        raise ImageFormatError(f"pixel data truncated: need {n} bytes", pos)
    img = np.frombuffer(data[pos : pos + n], dtype=np.uint8).reshape(h, w, c)
    if maxval != 255:
        img = np.round(img.astype(np.float64) * 255.0 / maxval).astype(np.uint8)
    return img


def encode_pnm(img: np.ndarray) -> bytes:
    img = np.asarray(img, dtype=np.uint8)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    magic = b"P5" if img.ndim == 2 else b"P6"
    h, w = img.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode() + img.tobytes()


def read_raw(path: str | Path) -> np.ndarray:
    path = Path(path)
    data = path.read_bytes()
    if data[:8] == PNG_SIGNATURE:
        return decode_png(data)
    if data[:1] == b"P":
        return decode_pnm(data, b"P5" if path.suffix.lower() == ".pgm" else None)
    raise ImageFormatError(f"unrecognised image format for {path.name}", 0)


def write_raw(path: str | Path, img: np.ndarray) -> None:
    path = Path(path)
    if path.suffix.lower() in (".pgm", ".ppm"):
        path.write_bytes(encode_pnm(img))
    else:
        path.write_bytes(encode_png(img))


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def read_image(path: str | Path) -> np.ndarray:
    """RGB float image (3, H, W) in [0, 1]; grey input is replicated."""
    raw = read_raw(path)
    if raw.shape[2] in (2, 4):
        raw = raw[..., :-1]
    if raw.shape[2] == 1:
        raw = np.repeat(raw, 3, axis=2)
    return raw.transpose(2, 0, 1).astype(np.float64) / 255.0


def write_image(path: str | Path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    write_raw(path, to_uint8(img.transpose(1, 2, 0)))


def read_mask(path: str | Path) -> np.ndarray:
    raw = read_raw(path)
    return (raw[..., 0] > 127).astype(np.float64)[None]


def write_mask(path: str | Path, mask: np.ndarray) -> None:
    m = np.asarray(mask).reshape(np.shape(mask)[-2:])
    write_raw(path, np.where(m > 0.5, 255, 0).astype(np.uint8))


def write_heatmap(path: str | Path, arr: np.ndarray) -> tuple[float, float]:
    """Min-max stretched 8-bit greyscale; returns the raw (min, max)."""
    a = np.asarray(arr, dtype=np.float64).reshape(np.shape(arr)[-2:])
    lo, hi = float(a.min()), float(a.max())
    scaled = (a - lo) / (hi - lo) if hi > lo else np.zeros_like(a)
    write_raw(path, to_uint8(scaled))
    return lo, hi
