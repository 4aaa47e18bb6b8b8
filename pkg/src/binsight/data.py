"""Desk-scale datasets: IDX ingestion and a synthetic shapes generator."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import rng

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

SHAPE_CLASSES = ("square", "circle", "triangle")


class IdxFormatError(ValueError):
    """An IDX file failed to parse; messages carry the offending byte offset."""


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or self.images.shape[0] < 1:
            raise ValueError(f"images must be a non-empty NCHW array, got "
                             f"shape {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise ValueError(f"{self.labels.shape[0]} labels for "
                             f"{self.images.shape[0]} images")
        if self.images.min() < 0 or self.images.max() > 1:
            raise ValueError("image values must lie in [0, 1]")
        if self.labels.min() < 0:
            raise ValueError("labels must be non-negative")

    @property
    def n(self) -> int:
        return self.images.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx])


def _read_exact(f, n: int, path, offset: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise IdxFormatError(f"{path}: truncated at byte {offset + len(buf)}, "
                             f"expected {n} more bytes")
    return buf


def load_idx(image_path, label_path) -> Dataset:
    """Decode the big-endian IDX pair: u8 images (magic 0x803, dims N,H,W)
    and u8 labels (magic 0x801, dim N). Pixels scale to [0,1] by /255."""
    with open(image_path, "rb") as f:
        magic, n, h, w = struct.unpack(">IIII", _read_exact(f, 16,
                                                            image_path, 0))
        if magic != IDX_IMAGE_MAGIC:
            raise IdxFormatError(f"{image_path}: bad magic 0x{magic:08x} at "
                                 f"byte 0, expected 0x{IDX_IMAGE_MAGIC:08x}")
        pixels = _read_exact(f, n * h * w, image_path, 16)
        if f.read(1):
            raise IdxFormatError(f"{image_path}: trailing data at byte "
                                 f"{16 + n * h * w}")
    with open(label_path, "rb") as f:
        magic, nl = struct.unpack(">II", _read_exact(f, 8, label_path, 0))
        if magic != IDX_LABEL_MAGIC:
            raise IdxFormatError(f"{label_path}: bad magic 0x{magic:08x} at "
                                 f"byte 0, expected 0x{IDX_LABEL_MAGIC:08x}")
        raw_labels = _read_exact(f, nl, label_path, 8)
        if f.read(1):
            raise IdxFormatError(f"{label_path}: trailing data at byte "
                                 f"{8 + nl}")
    if n != nl:
        raise IdxFormatError(f"{image_path} holds {n} images but "
                             f"{label_path} holds {nl} labels "
                             f"(counts at bytes 4)")
    images = np.frombuffer(pixels, dtype=np.uint8).astype(np.float32) / 255.0
    return Dataset(images.reshape(n, 1, h, w),
                   np.frombuffer(raw_labels, dtype=np.uint8).astype(np.int64))


def save_idx(dataset: Dataset, image_path, label_path) -> None:
    """Inverse of load_idx for single-channel data; pixels quantize to u8."""
    n, c, h, w = dataset.images.shape
    if c != 1:
        raise ValueError("IDX export supports single-channel images only")
    pix = np.floor(dataset.images[:, 0] * 255.0 + 0.5).astype(np.uint8)
    with open(image_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, n, h, w))
        f.write(pix.tobytes())
    with open(label_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABEL_MAGIC, n))
        f.write(dataset.labels.astype(np.uint8).tobytes())


# ---------------------------------------------------------------------------
# synthetic shapes
# ---------------------------------------------------------------------------

def shape_geometry(seed: int, class_id: int, index: int, size: int) -> dict:
    """Jittered geometry for one sample; pure function of its arguments.

    Tests may call this to recompute what gen_shapes drew.
    """
    r = rng.CounterRng(seed, stream=3 * index + class_id)
    intensity = r.uniform(0.7, 1.0)
    if class_id == 0:  # filled square
        side = r.randint(max(3, round(0.30 * size)), round(0.55 * size))
        top = r.randint(1, size - side - 1)
        left = r.randint(1, size - side - 1)
        return {"kind": "square", "intensity": intensity, "side": side,
                "top": top, "left": left}
    if class_id == 1:  # filled circle
        radius = r.uniform(0.16 * size, 0.27 * size)
        cy = r.uniform(radius + 1, size - radius - 2)
        cx = r.uniform(radius + 1, size - radius - 2)
        return {"kind": "circle", "intensity": intensity, "radius": radius,
                "cy": cy, "cx": cx}
    if class_id == 2:  # hollow triangle outline
        base = r.randint(round(0.45 * size), round(0.70 * size))
        height = r.randint(round(0.40 * size), round(0.65 * size))
        top = r.randint(1, size - height - 2)
        left = r.randint(1, size - base - 2)
        apex_x = left + base // 2
        return {"kind": "triangle", "intensity": intensity,
                "v0": (top, apex_x),
                "v1": (top + height, left),
                "v2": (top + height, left + base)}
    raise ValueError(f"class_id {class_id} out of range [0, 3)")


def _draw_line(canvas: np.ndarray, p0, p1, value: float) -> None:
    y0, x0 = p0
    y1, x1 = p1
    steps = 2 * max(abs(y1 - y0), abs(x1 - x0)) + 1
    t = np.linspace(0.0, 1.0, steps)
    ys = np.rint(y0 + t * (y1 - y0)).astype(int)
    xs = np.rint(x0 + t * (x1 - x0)).astype(int)
    canvas[ys, xs] = value


def render_shape(geom: dict, size: int) -> np.ndarray:
    """Rasterize one geometry record onto a zero background."""
    canvas = np.zeros((size, size), dtype=np.float32)
    val = np.float32(geom["intensity"])
    if geom["kind"] == "square":
        t, l, s = geom["top"], geom["left"], geom["side"]
        canvas[t:t + s, l:l + s] = val
    elif geom["kind"] == "circle":
        yy, xx = np.mgrid[0:size, 0:size]
        d2 = (yy - geom["cy"]) ** 2 + (xx - geom["cx"]) ** 2
        canvas[d2 <= geom["radius"] ** 2] = val
    elif geom["kind"] == "triangle":
        _draw_line(canvas, geom["v0"], geom["v1"], val)
        _draw_line(canvas, geom["v1"], geom["v2"], val)
        _draw_line(canvas, geom["v2"], geom["v0"], val)
    else:
        raise ValueError(f"unknown geometry kind {geom['kind']!r}")
    return canvas


def gen_shapes(seed: int, n_per_class: int, size: int = 16) -> Dataset:
    """Three shape classes on a size x size grayscale canvas, exactly
    n_per_class samples each, with seeded position/scale jitter."""
    if size < 12:
        raise ValueError(f"size must be >= 12, got {size}")
    if n_per_class < 1:
        raise ValueError("n_per_class must be positive")
    n = 3 * n_per_class
    images = np.zeros((n, 1, size, size), dtype=np.float32)
    labels = np.zeros(n, dtype=np.int64)
    for class_id in range(3):
        for j in range(n_per_class):
            k = class_id * n_per_class + j
            geom = shape_geometry(seed, class_id, j, size)
            images[k, 0] = render_shape(geom, size)
            labels[k] = class_id
    return Dataset(images, labels)
