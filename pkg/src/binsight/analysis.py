"""Quantitative comparison of saliency maps and noise-sensitivity probes.

Total variation stands in for visual noisiness; Pearson/Spearman measure
map similarity. The sweep, amplification, and randomization procedures are
deterministic given their seeds, so their outputs are reproducible rows
for the experiment harness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from . import rng
from .data import Dataset  # noqa: F401  (re-exported for harness typing)
from .net import Network, _init_weight, forward, plan
from .saliency import SaliencyMap, gradcam, smoothgrad, vanilla_gradient

DEFAULT_NOISE_LEVELS = (0.01, 0.02, 0.04, 0.06, 0.10, 0.20, 0.35, 0.50)
DEFAULT_DELTA_SCALE = 0.05

SANITY_METHODS = ("vanilla_gradient", "smoothgrad", "gradcam")


def _values(m) -> np.ndarray:
    return np.asarray(getattr(m, "values", m), dtype=np.float64)


def total_variation(m) -> float:
    """Mean absolute difference over horizontally and vertically adjacent
    pixel pairs."""
    v = _values(m)
    if v.ndim != 2:
        raise ValueError(f"expected a 2-d map, got shape {v.shape}")
    dh = np.abs(np.diff(v, axis=1))
    dv = np.abs(np.diff(v, axis=0))
    pairs = dh.size + dv.size
    if pairs == 0:
        return 0.0
    return float((dh.sum() + dv.sum()) / pairs)


def pearson(a, b) -> float:
    """Sample correlation of the flattened maps; 0.0 when either input is
    constant (the correlation is undefined there)."""
    va, vb = _values(a).ravel(), _values(b).ravel()
    if va.shape != vb.shape:
        raise ValueError(f"shape mismatch {va.shape} vs {vb.shape}")
    ca = va - va.mean()
    cb = vb - vb.mean()
    ssa = float(ca @ ca)
    ssb = float(cb @ cb)
    if ssa == 0.0 or ssb == 0.0:
        return 0.0
    # single product under the sqrt keeps r(x, x) == 1.0 exactly
    return float((ca @ cb) / np.sqrt(ssa * ssb))


def spearman(a, b) -> float:
    """Pearson correlation of average-ranked values (ties get mean rank)."""
    va, vb = _values(a).ravel(), _values(b).ravel()
    if va.shape != vb.shape:
        raise ValueError(f"shape mismatch {va.shape} vs {vb.shape}")
    return pearson(rankdata(va, method="average"),
                   rankdata(vb, method="average"))


@dataclass
class SweepResult:
    levels: tuple[float, ...]
    maps: list[SaliencyMap]
    total_variation: list[float]
    pearson_to_vanilla: list[float]
    spearman_to_vanilla: list[float]
    vanilla: SaliencyMap


def noise_sweep(net: Network, image, class_id: int,
                levels=DEFAULT_NOISE_LEVELS, n_samples: int = 25,
                seed: int = 0) -> SweepResult:
    """Noise-averaged maps at each level plus metrics against the plain
    gradient map. Each level is one direct smoothgrad call with the same
    seed, so a single-level sweep is bit-identical to that call."""
    levels = tuple(float(x) for x in levels)
    if not levels:
        raise ValueError("levels must be non-empty")
    for prev, cur in zip(levels, levels[1:]):
        if cur <= prev:
            raise ValueError(f"levels must be strictly increasing, got "
                             f"{prev} before {cur}")
    if levels[0] <= 0.0 or levels[-1] > 0.5:
        raise ValueError(f"levels must lie in (0, 0.5], got {levels}")
    base = vanilla_gradient(net, image, class_id)
    maps, tvs, pears, spears = [], [], [], []
    for level in levels:
        m = smoothgrad(net, image, class_id, noise_pct=level,
                       n_samples=n_samples, seed=seed)
        maps.append(m)
        tvs.append(total_variation(m))
        pears.append(pearson(m, base))
        spears.append(spearman(m, base))
    return SweepResult(levels, maps, tvs, pears, spears, base)


def optimal_noise(sweep: SweepResult) -> float:
    """Level with minimal total variation; ties go to the smaller level."""
    if not sweep.levels:
        raise ValueError("empty sweep")
    return sweep.levels[int(np.argmin(sweep.total_variation))]


@dataclass
class AmplificationProfile:
    ratios: list[float]  # per recorded layer, in stack order
    kinds: list[str]


def amplification_profile(net: Network, image, delta_scale: float,
                          seed: int = 0) -> AmplificationProfile:
    """Per-layer ratio of output-perturbation norm to input-perturbation
    norm for one Gaussian probe delta with ||delta|| = delta_scale."""
    if delta_scale <= 0:
        raise ValueError(f"delta_scale must be positive, got {delta_scale}")
    arr = np.asarray(getattr(image, "data", image), dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    g = rng.gaussians(seed, 0, arr.size)
    delta = (delta_scale * g / np.linalg.norm(g)).astype(np.float32) \
        .reshape(arr.shape)
    base = forward(net, arr, record=True, input_requires_grad=False)
    pert = forward(net, arr + delta, record=True, input_requires_grad=False)
    dnorm = float(np.linalg.norm(delta.astype(np.float64)))
    ratios, kinds = [], []
    for spec, a0, a1 in zip(net.definition.layers, base.layer_outputs,
                            pert.layer_outputs):
        diff = a1.data.astype(np.float64) - a0.data.astype(np.float64)
        ratios.append(float(np.linalg.norm(diff) / dnorm))
        kinds.append(spec.kind)
    return AmplificationProfile(ratios, kinds)


def _apply_method(net: Network, image, class_id: int, method: str, seed: int,
                  smoothgrad_noise: float, n_samples: int,
                  gradcam_variant: str) -> SaliencyMap:
    if method == "vanilla_gradient":
        return vanilla_gradient(net, image, class_id)
    if method == "smoothgrad":
        return smoothgrad(net, image, class_id, noise_pct=smoothgrad_noise,
                          n_samples=n_samples, seed=seed)
    if method == "gradcam":
        return gradcam(net, image, class_id, variant=gradcam_variant)
    raise ValueError(f"unknown method {method!r}; expected one of "
                     f"{SANITY_METHODS}")


def randomization_sanity(net: Network, image, class_id: int, method: str,
                         seed: int = 0, *, smoothgrad_noise: float = 0.2,
                         n_samples: int = 8,
                         gradcam_variant: str = "standard"
                         ) -> list[tuple[int, float]]:
    """Cascading top-down parameter randomization: after re-initializing
    the top k parameterized layers, recompute the map and its Spearman
    correlation to the original. Returns one (k, correlation) pair per
    stage, k = 0 .. number of parameterized layers."""
    base_map = _apply_method(net, image, class_id, method, seed,
                             smoothgrad_noise, n_samples, gradcam_variant)
    p = plan(net.definition)
    n_param = len(p.param_layers)
    results: list[tuple[int, float]] = []
    work = net.copy()
    # stage 0 compares the map with itself; report 1.0 even when the map is
    # degenerate (a constant map correlated with anything else reports 0)
    results.append((0, 1.0))
    for k in range(1, n_param + 1):
        ordinal = n_param - k  # randomize from the top of the stack down
        work.weights[ordinal] = _init_weight(net.definition, ordinal, seed,
                                             stream_base=1000)
        work.biases[ordinal] = np.zeros_like(work.biases[ordinal])
        m = _apply_method(work, image, class_id, method, seed,
                          smoothgrad_noise, n_samples, gradcam_variant)
        results.append((k, spearman(m, base_map)))
    return results
