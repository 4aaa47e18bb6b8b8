"""Binary netpbm emission (PGM P5 / PPM P6) and the fixed overlay colormap.

Headers are single-space separated with one newline before the payload,
e.g. b"P5 16 16 255\\n". The reader accepts exactly this layout so golden
files round-trip byte-for-byte.
"""

from __future__ import annotations

import numpy as np


class ImageFormatError(ValueError):
    """A netpbm file does not decode under this module's layout."""


# value -> (r, g, b) stops, linearly interpolated; pinned so overlay bytes
# are stable golden-test material
COLOR_STOPS = (
    (0.00, (0, 0, 64)),
    (0.25, (0, 64, 255)),
    (0.50, (0, 255, 128)),
    (0.75, (255, 200, 0)),
    (1.00, (255, 32, 0)),
)


def quantize_unit(values: np.ndarray) -> np.ndarray:
    """[0, 1] floats to u8 by round-half-up: floor(255 v + 0.5)."""
    v = np.asarray(values, dtype=np.float64)
    if v.min() < 0 or v.max() > 1:
        raise ValueError("values must lie in [0, 1]")
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def write_pgm(path, gray: np.ndarray) -> None:
    gray = np.asarray(gray)
    if gray.dtype != np.uint8 or gray.ndim != 2:
        raise ValueError("write_pgm expects a 2-d uint8 array")
    h, w = gray.shape
    with open(path, "wb") as f:
        f.write(f"P5 {w} {h} 255\n".encode("ascii"))
        f.write(gray.tobytes())


def write_ppm(path, rgb: np.ndarray) -> None:
    rgb = np.asarray(rgb)
    if rgb.dtype != np.uint8 or rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError("write_ppm expects an (H, W, 3) uint8 array")
    h, w = rgb.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6 {w} {h} 255\n".encode("ascii"))
        f.write(rgb.tobytes())


def _read_netpbm(path, magic: bytes, channels: int) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    nl = blob.find(b"\n")
    if nl < 0:
        raise ImageFormatError(f"{path}: missing header newline")
    fields = blob[:nl].split(b" ")
    if len(fields) != 4 or fields[0] != magic:
        raise ImageFormatError(f"{path}: bad header {blob[:nl]!r}")
    try:
        w, h, maxval = (int(x) for x in fields[1:])
    except ValueError as e:
        raise ImageFormatError(f"{path}: non-numeric header field") from e
    if maxval != 255 or w < 1 or h < 1:
        raise ImageFormatError(f"{path}: unsupported header {blob[:nl]!r}")
    payload = blob[nl + 1:]
    if len(payload) != w * h * channels:
        raise ImageFormatError(f"{path}: payload is {len(payload)} bytes, "
                               f"expected {w * h * channels}")
    arr = np.frombuffer(payload, dtype=np.uint8)
    return arr.reshape((h, w) if channels == 1 else (h, w, 3))


def read_pgm(path) -> np.ndarray:
    return _read_netpbm(path, b"P5", 1)


def read_ppm(path) -> np.ndarray:
    return _read_netpbm(path, b"P6", 3)


def colormap(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] values to RGB floats in [0, 1] via the fixed stops."""
    v = np.asarray(values, dtype=np.float64)
    xs = np.array([s[0] for s in COLOR_STOPS])
    out = np.empty(v.shape + (3,), dtype=np.float64)
    for ch in range(3):
        ys = np.array([s[1][ch] for s in COLOR_STOPS]) / 255.0
        out[..., ch] = np.interp(v, xs, ys)
    return out


def overlay(image01: np.ndarray, map01: np.ndarray) -> np.ndarray:
    """Blend 0.5 * grayscale image + 0.5 * colormapped saliency, as u8."""
    img = np.asarray(image01, dtype=np.float64)
    sal = np.asarray(map01, dtype=np.float64)
    if img.shape != sal.shape:
        raise ValueError(f"image shape {img.shape} != map shape {sal.shape}")
    blend = 0.5 * img[..., None] + 0.5 * colormap(sal)
    return quantize_unit(blend)
