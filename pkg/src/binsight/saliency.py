"""Gradient-based saliency maps: plain input gradients, noise-averaged
gradients, and class-activation maps from the last conv layer.

All maps are H x W, normalized to [0, 1] with the maximum pixel exactly 1
unless the raw map was degenerate (uniformly constant), in which case the
map is all zeros and flagged. Noise-averaged maps average the RAW
pre-normalization maps and normalize once at the end; the perturbations
come from the package's counter RNG, sample index keyed, so parallel and
serial evaluation would draw identical noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng
from .autodiff import backward
from .net import Network, class_score, forward, last_conv_output

GRADCAM_VARIANTS = ("standard", "no_relu_inverted")


@dataclass
class SaliencyMap:
    values: np.ndarray          # (H, W) float32 in [0, 1]
    method: str
    params: dict = field(default_factory=dict)
    all_zero: bool = False


def normalize_map(raw: np.ndarray) -> tuple[np.ndarray, bool]:
    """(raw - min) / (max - min); a constant map becomes all zeros with the
    degeneracy flag set."""
    raw = np.asarray(raw, dtype=np.float32)
    if not np.all(np.isfinite(raw)):
        raise ValueError("normalize_map: input contains non-finite values")
    lo = raw.min()
    hi = raw.max()
    if hi == lo:
        return np.zeros_like(raw), True
    return (raw - lo) / (hi - lo), False


def _image_array(net: Network, image) -> np.ndarray:
    arr = np.asarray(getattr(image, "data", image), dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    return arr


def gradient_map_raw(net: Network, image, class_id: int) -> np.ndarray:
    """Un-normalized gradient map: max over channels of |d logit_c / d x|."""
    arr = _image_array(net, image)
    trace = forward(net, arr, record=False, input_requires_grad=True)
    score = class_score(trace, class_id)
    backward(score)
    g = trace.input_node.grad
    if g is None:
        g = np.zeros_like(arr)
    return np.abs(g).max(axis=1)[0]


def vanilla_gradient(net: Network, image, class_id: int) -> SaliencyMap:
    """One backward pass: the class logit's gradient with respect to the
    input image, reduced over channels by max of absolute values."""
    values, zero = normalize_map(gradient_map_raw(net, image, class_id))
    return SaliencyMap(values, "gradient", {"class_id": class_id}, zero)


def smoothgrad(net: Network, image, class_id: int, noise_pct: float,
               n_samples: int = 25, seed: int = 0,
               base=gradient_map_raw) -> SaliencyMap:
    """Average of the base method's raw maps over inputs perturbed with
    Gaussian noise of sigma = noise_pct * (max(image) - min(image)).

    Sample k draws its noise from substream k of the counter RNG in
    row-major pixel order. noise_pct = 0 short-circuits to the unperturbed
    map so the degenerate case is bit-identical to the base method.
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    if not 0.0 <= noise_pct <= 0.5:
        raise ValueError(f"noise_pct must lie in [0, 0.5], got {noise_pct}")
    arr = _image_array(net, image)
    params = {"class_id": class_id, "noise_pct": noise_pct,
              "n_samples": n_samples, "seed": seed}
    if noise_pct == 0.0:
        raw = base(net, arr, class_id)
    else:
        sigma = float(noise_pct) * float(arr.max() - arr.min())
        acc = None
        for k in range(n_samples):
            noise = (rng.gaussians(seed, k, arr.size) * sigma) \
                .astype(np.float32).reshape(arr.shape)
            sample = base(net, arr + noise, class_id)
            acc = sample if acc is None else acc + sample
        raw = acc / np.float32(n_samples)
    values, zero = normalize_map(raw)
    return SaliencyMap(values, "smoothgrad", params, zero)


def bilinear_upsample(m: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Corner-aligned bilinear resampling of a 2-d grid."""
    m = np.asarray(m, dtype=np.float64)
    u, v = m.shape
    h, w = out_hw
    src_r = np.linspace(0.0, u - 1.0, h)
    src_c = np.linspace(0.0, v - 1.0, w)
    r0 = np.floor(src_r).astype(int)
    c0 = np.floor(src_c).astype(int)
    r1 = np.minimum(r0 + 1, u - 1)
    c1 = np.minimum(c0 + 1, v - 1)
    tr = (src_r - r0)[:, None]
    tc = (src_c - c0)[None, :]
    top = m[r0][:, c0] * (1 - tc) + m[r0][:, c1] * tc
    bot = m[r1][:, c0] * (1 - tc) + m[r1][:, c1] * tc
    return (top * (1 - tr) + bot * tr).astype(np.float32)


def gradcam_combined(net: Network, image, class_id: int,
                     variant: str = "standard") -> np.ndarray:
    """The un-normalized combined map at conv resolution: feature maps
    weighted by the spatial mean of the class gradient, summed over
    channels, then rectified (standard) or inverted via max - L
    (no_relu_inverted)."""
    if variant not in GRADCAM_VARIANTS:
        raise ValueError(f"unknown gradcam variant {variant!r}")
    arr = _image_array(net, image)
    trace = forward(net, arr, record=True, input_requires_grad=False)
    score = class_score(trace, class_id)
    a_node = last_conv_output(trace)
    backward(score)
    d_a = a_node.grad
    if d_a is None:
        d_a = np.zeros_like(a_node.data)
    alpha = d_a.mean(axis=(2, 3))[0]                        # (K,)
    combined = np.tensordot(alpha, a_node.data[0], axes=1)  # (U, V)
    if variant == "standard":
        return np.maximum(combined, 0)
    return combined.max() - combined


def gradcam(net: Network, image, class_id: int,
            variant: str = "standard") -> SaliencyMap:
    """Class-activation map, upsampled to the input size and normalized.
    A uniformly constant combined map is emitted as all zeros with the
    all_zero flag set."""
    arr = _image_array(net, image)
    combined = gradcam_combined(net, arr, class_id, variant)
    h, w = arr.shape[2], arr.shape[3]
    params = {"class_id": class_id, "variant": variant}
    if combined.max() == combined.min():
        return SaliencyMap(np.zeros((h, w), dtype=np.float32), "gradcam",
                           params, all_zero=True)
    values, zero = normalize_map(bilinear_upsample(combined, (h, w)))
    return SaliencyMap(values, "gradcam", params, zero)
