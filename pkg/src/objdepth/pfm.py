"""Portable float map (PFM) rasters, little-endian, rows stored bottom-to-top."""

import numpy as np

from .errors import ParseError


def write_pfm(path, data):
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 2:
        tag = b"Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        tag = b"PF"
    else:
        raise ValueError(f"PFM holds H x W or H x W x 3 rasters, got {data.shape}")
    h, w = data.shape[:2]
    with open(path, "wb") as fh:
        fh.write(tag + b"\n")
        fh.write(f"{w} {h}\n".encode("ascii"))
        fh.write(b"-1.0\n")
        fh.write(np.ascontiguousarray(data[::-1], dtype="<f4").tobytes())


def _read_token(fh, path):
    line = fh.readline()
    if not line.endswith(b"\n"):
        raise ParseError(f"{path}: truncated PFM header")
    return line.strip()


def read_pfm(path):
    with open(path, "rb") as fh:
        tag = _read_token(fh, path)
        if tag not in (b"PF", b"Pf"):
            raise ParseError(f"{path}: not a PFM file (tag {tag!r})")
        try:
            w, h = (int(v) for v in _read_token(fh, path).split())
            scale = float(_read_token(fh, path))
        except ValueError:
            raise ParseError(f"{path}: malformed PFM header") from None
        channels = 3 if tag == b"PF" else 1
        dtype = "<f4" if scale < 0 else ">f4"
        count = w * h * channels
        raw = fh.read()
    if len(raw) != 4 * count:
        raise ParseError(f"{path}: expected {4 * count} bytes of pixel data, found {len(raw)}")
    data = np.frombuffer(raw, dtype=dtype)
    shape = (h, w, 3) if channels == 3 else (h, w)
    return data.reshape(shape)[::-1].astype(np.float64)
