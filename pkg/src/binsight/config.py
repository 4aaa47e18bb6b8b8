"""Experiment configuration: strict JSON parsing with fail-fast validation.

Unknown keys are rejected everywhere so a typo cannot silently fall back
to a default, and anything that would fail a precondition later (missing
dataset files, malformed levels) is rejected before any compute starts.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

from .analysis import DEFAULT_NOISE_LEVELS, SANITY_METHODS
from .data import Dataset, gen_shapes, load_idx
from .net import (DefError, NetworkDef, conv, def_from_json, dense, flatten,
                  maxpool, relu, signact)
from .saliency import GRADCAM_VARIANTS
from .train import TrainConfig

CONFIG_VERSION = 1

# offset between the train-split seed and the test-split seed of a
# generated shapes dataset
TEST_SEED_OFFSET = 1_000_003


class ConfigError(ValueError):
    """The experiment configuration is invalid."""


def micro16() -> NetworkDef:
    """Default desk-scale stack for 16x16 single-channel 3-class data.

    Declared in its binarized flavor: binary weights on the middle layers
    (the ends are forced full by policy), sign activations after each
    pooling stage, and a small full-precision hidden dense whose He-scaled
    weights keep the logits O(1) without batch normalization. Derive the
    full-precision twin with `net.fp_variant`.
    """
    return NetworkDef(
        layers=(
            conv(8, 3, stride=1, padding=1, precision="binary"),
            maxpool(2),
            signact(),
            conv(16, 3, stride=1, padding=1, precision="binary"),
            maxpool(2),
            signact(),
            flatten(),
            dense(24, precision="full"),
            relu(),
            dense(3, precision="binary"),
        ),
        input_shape=(1, 16, 16),
        classes=3,
    )


BUILTIN_NETWORKS = {"micro16": micro16}


@dataclass(frozen=True)
class ShapesSpec:
    size: int = 16
    n_per_class: int = 250
    test_n_per_class: int = 60
    seed: int = 7


@dataclass(frozen=True)
class IdxSpec:
    train_images: str
    train_labels: str
    test_images: str
    test_labels: str


@dataclass(frozen=True)
class SaliencySettings:
    method: str = "smoothgrad"
    noise_levels: tuple[float, ...] = DEFAULT_NOISE_LEVELS
    n_samples: int = 25
    gradcam_variant: str = "standard"
    image_index: int = 0


@dataclass(frozen=True)
class ExperimentConfig:
    version: int
    network: NetworkDef
    dataset: ShapesSpec | IdxSpec
    train: TrainConfig
    saliency: SaliencySettings
    seeds: tuple[int, ...]
    out_dir: str


def _check_keys(section: str, d: dict, known: set[str]) -> None:
    extra = set(d) - known
    if extra:
        raise ConfigError(f"unknown key(s) {sorted(extra)} in {section}")


def _parse_network(value) -> NetworkDef:
    if isinstance(value, str):
        if value not in BUILTIN_NETWORKS:
            raise ConfigError(f"unknown network name {value!r}; built-ins: "
                              f"{sorted(BUILTIN_NETWORKS)}")
        return BUILTIN_NETWORKS[value]()
    if not isinstance(value, dict):
        raise ConfigError("network must be a name or an inline definition")
    try:
        return def_from_json(value)
    except (DefError, ValueError) as e:
        raise ConfigError(f"bad network definition: {e}") from e


def _parse_dataset(d) -> ShapesSpec | IdxSpec:
    if not isinstance(d, dict) or "kind" not in d:
        raise ConfigError("dataset must be an object with a 'kind' key")
    kind = d["kind"]
    if kind == "shapes":
        _check_keys("dataset", d, {"kind", "size", "n_per_class",
                                   "test_n_per_class", "seed"})
        spec = ShapesSpec(size=int(d.get("size", 16)),
                          n_per_class=int(d.get("n_per_class", 250)),
                          test_n_per_class=int(d.get("test_n_per_class", 60)),
                          seed=int(d.get("seed", 7)))
        if spec.size < 12 or spec.n_per_class < 1 or spec.test_n_per_class < 1:
            raise ConfigError("shapes dataset sizes out of range")
        return spec
    if kind == "idx":
        _check_keys("dataset", d, {"kind", "train_images", "train_labels",
                                   "test_images", "test_labels"})
        try:
            spec = IdxSpec(d["train_images"], d["train_labels"],
                           d["test_images"], d["test_labels"])
        except KeyError as e:
            raise ConfigError(f"idx dataset is missing {e.args[0]!r}") from e
        for path in (spec.train_images, spec.train_labels, spec.test_images,
                     spec.test_labels):
            if not os.path.exists(path):
                raise ConfigError(f"dataset path does not exist: {path}")
        return spec
    raise ConfigError(f"unknown dataset kind {kind!r}")


def _parse_train(d) -> TrainConfig:
    if not isinstance(d, dict):
        raise ConfigError("train must be an object")
    _check_keys("train", d, {"learning_rate", "epochs", "batch_size", "clip"})
    try:
        return TrainConfig(learning_rate=float(d.get("learning_rate", 0.02)),
                           epochs=int(d.get("epochs", 30)),
                           batch_size=int(d.get("batch_size", 32)),
                           clip=float(d.get("clip", 1.0)))
    except ValueError as e:
        raise ConfigError(f"bad train section: {e}") from e


def _parse_saliency(d) -> SaliencySettings:
    if not isinstance(d, dict):
        raise ConfigError("saliency must be an object")
    _check_keys("saliency", d, {"method", "noise_levels", "n_samples",
                                "gradcam_variant", "image_index"})
    s = SaliencySettings(
        method=d.get("method", "smoothgrad"),
        noise_levels=tuple(float(x) for x in
                           d.get("noise_levels", DEFAULT_NOISE_LEVELS)),
        n_samples=int(d.get("n_samples", 25)),
        gradcam_variant=d.get("gradcam_variant", "standard"),
        image_index=int(d.get("image_index", 0)),
    )
    if s.method not in SANITY_METHODS:
        raise ConfigError(f"unknown saliency method {s.method!r}; expected "
                          f"one of {SANITY_METHODS}")
    if s.gradcam_variant not in GRADCAM_VARIANTS:
        raise ConfigError(f"unknown gradcam variant {s.gradcam_variant!r}")
    if s.n_samples < 1:
        raise ConfigError("n_samples must be >= 1")
    if not s.noise_levels:
        raise ConfigError("noise_levels must be non-empty")
    for prev, cur in zip(s.noise_levels, s.noise_levels[1:]):
        if cur <= prev:
            raise ConfigError("noise_levels must be strictly increasing")
    if s.noise_levels[0] <= 0 or s.noise_levels[-1] > 0.5:
        raise ConfigError("noise_levels must lie in (0, 0.5]")
    if s.image_index < 0:
        raise ConfigError("image_index must be non-negative")
    return s


def parse_config(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    _check_keys("config", raw, {"version", "network", "dataset", "train",
                                "saliency", "seeds", "out"})
    if raw.get("version") != CONFIG_VERSION:
        raise ConfigError(f"config version must be {CONFIG_VERSION}, got "
                          f"{raw.get('version')!r}")
    seeds = raw.get("seeds", [0])
    if (not isinstance(seeds, list) or not seeds
            or not all(isinstance(s, int) for s in seeds)):
        raise ConfigError("seeds must be a non-empty list of integers")
    return ExperimentConfig(
        version=CONFIG_VERSION,
        network=_parse_network(raw.get("network", "micro16")),
        dataset=_parse_dataset(raw.get("dataset", {"kind": "shapes"})),
        train=_parse_train(raw.get("train", {})),
        saliency=_parse_saliency(raw.get("saliency", {})),
        seeds=tuple(seeds),
        out_dir=str(raw.get("out", "results")),
    )


def load_config(path) -> ExperimentConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file does not exist: {path}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path} is not valid JSON: {e}") from e
    return parse_config(raw)


def make_datasets(spec: ShapesSpec | IdxSpec) -> tuple[Dataset, Dataset]:
    """Materialize (train, test) splits for a dataset spec."""
    if isinstance(spec, ShapesSpec):
        return (gen_shapes(spec.seed, spec.n_per_class, spec.size),
                gen_shapes(spec.seed + TEST_SEED_OFFSET,
                           spec.test_n_per_class, spec.size))
    return (load_idx(spec.train_images, spec.train_labels),
            load_idx(spec.test_images, spec.test_labels))
