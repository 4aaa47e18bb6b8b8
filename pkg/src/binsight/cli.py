"""Command-line harness: train network pairs, emit saliency maps, run
noise sweeps and probes, compare map files.

Every command is a pure function of its config and seeds, and file
contents are written with pinned formats, so repeated runs produce
byte-identical output trees.

Exit codes: 0 ok, 2 missing/invalid input, 3 corrupt model file,
4 shape mismatch, 5 training divergence.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__
from .analysis import (DEFAULT_DELTA_SCALE, SANITY_METHODS,
                       amplification_profile, noise_sweep, pearson,
                       randomization_sanity, spearman, total_variation)
from .autodiff import ShapeError
from .config import (ConfigError, ExperimentConfig, load_config,
                     make_datasets)
from .data import Dataset, IdxFormatError, load_idx
from .imageio import (ImageFormatError, overlay, quantize_unit, read_pgm,
                      write_pgm, write_ppm)
from .net import (ModelFormatError, build_network, forward, fp_variant,
                  load_model, save_model)
from .saliency import gradcam, smoothgrad, vanilla_gradient
from .train import TrainingDiverged, evaluate, train

CSV_HEADER = ("seed", "network", "method", "params", "metric", "value")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_MODEL = 3
EXIT_SHAPE = 4
EXIT_DIVERGED = 5


@dataclass(frozen=True)
class ResultRow:
    seed: int
    network: str  # "fp" | "bnn"
    method: str
    params: str
    metric: str
    value: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"non-finite value for metric {self.metric!r}")


def write_rows(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for r in rows:
            writer.writerow([r.seed, r.network, r.method, r.params, r.metric,
                             repr(float(r.value))])


def _fmt_level(level: float) -> str:
    return format(level, ".4f")


def _require_file(path, what: str) -> None:
    if not os.path.exists(path):
        raise ConfigError(f"{what} does not exist: {path}")


def _out_dir(cfg: ExperimentConfig, args) -> str:
    out = args.out if args.out else cfg.out_dir
    os.makedirs(os.path.join(out, "maps"), exist_ok=True)
    return out


def _seeds(cfg: ExperimentConfig, args) -> tuple[int, ...]:
    return (args.seed,) if args.seed is not None else cfg.seeds


def _load_pair(args):
    _require_file(args.fp_model, "fp model file")
    _require_file(args.bnn_model, "bnn model file")
    return (("fp", load_model(args.fp_model)),
            ("bnn", load_model(args.bnn_model)))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(cfg, args)
    train_data, test_data = make_datasets(cfg.dataset)
    # the config network is authored in its binarized flavor; the fp twin
    # replaces sign activations with relu and lifts every layer to full
    variants = (("fp", fp_variant(cfg.network)), ("bnn", cfg.network))
    rows: list[ResultRow] = []
    written: list[str] = []
    try:
        for seed in _seeds(cfg, args):
            for label, defn in variants:
                net = build_network(defn, seed)
                run_cfg = type(cfg.train)(
                    learning_rate=cfg.train.learning_rate,
                    epochs=cfg.train.epochs,
                    batch_size=cfg.train.batch_size,
                    seed=seed, clip=cfg.train.clip)
                trained, history = train(net, train_data, run_cfg)
                path = os.path.join(out, "models", f"{label}_s{seed}.bsm")
                os.makedirs(os.path.dirname(path), exist_ok=True)
                save_model(trained, path)
                written.append(path)
                for epoch, acc in enumerate(history, start=1):
                    rows.append(ResultRow(seed, label, "train",
                                          f"epoch={epoch}",
                                          "train_accuracy", acc))
                test_acc = evaluate(trained, test_data)
                rows.append(ResultRow(seed, label, "train", "",
                                      "test_accuracy", test_acc))
                print(f"{label} seed {seed}: train_acc={history[-1]:.4f} "
                      f"test_acc={test_acc:.4f}")
    except TrainingDiverged:
        for path in written:
            if os.path.exists(path):
                os.remove(path)
        raise
    write_rows(os.path.join(out, "train_accuracy.csv"), rows)
    return EXIT_OK


def _single_image(cfg: ExperimentConfig, args) -> tuple[np.ndarray, int, str]:
    """Resolve (image, true label or -1, identifier) for cmd_saliency."""
    if args.image_file is not None:
        _require_file(args.image_file, "image file")
        if args.label_file is not None:
            _require_file(args.label_file, "label file")
            ds = load_idx(args.image_file, args.label_file)
            label = int(ds.labels[0])
        else:
            with open(args.image_file, "rb") as f:
                blob = f.read()
            import struct
            if len(blob) < 16:
                raise IdxFormatError(f"{args.image_file}: truncated at byte "
                                     f"{len(blob)}")
            magic, n, h, w = struct.unpack(">IIII", blob[:16])
            if magic != 0x00000803:
                raise IdxFormatError(f"{args.image_file}: bad magic "
                                     f"0x{magic:08x} at byte 0")
            pix = np.frombuffer(blob[16:16 + n * h * w], dtype=np.uint8)
            if pix.size != n * h * w:
                raise IdxFormatError(f"{args.image_file}: truncated pixel "
                                     f"data at byte {16 + pix.size}")
            ds = Dataset(pix.reshape(n, 1, h, w).astype(np.float32) / 255.0,
                         np.zeros(n, dtype=np.int64))
            label = -1
        idx = args.image_index or 0
        name = os.path.splitext(os.path.basename(args.image_file))[0]
        return ds.images[idx], label, f"{name}_i{idx}"
    _, test_data = make_datasets(cfg.dataset)
    idx = args.image_index if args.image_index is not None \
        else cfg.saliency.image_index
    if not 0 <= idx < test_data.n:
        raise ConfigError(f"image index {idx} out of range "
                          f"[0, {test_data.n})")
    return test_data.images[idx], int(test_data.labels[idx]), f"test_i{idx}"


def cmd_saliency(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(cfg, args)
    _require_file(args.model, "model file")
    net = load_model(args.model)
    image, label, image_id = _single_image(cfg, args)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    method = args.method or cfg.saliency.method

    trace = forward(net, image, record=False, input_requires_grad=False)
    predicted = int(np.argmax(trace.logits.data[0]))
    class_id = args.class_id if args.class_id is not None else predicted

    if method == "vanilla_gradient":
        smap = vanilla_gradient(net, image, class_id)
    elif method == "smoothgrad":
        smap = smoothgrad(net, image, class_id,
                          noise_pct=cfg.saliency.noise_levels[-1]
                          if args.noise is None else args.noise,
                          n_samples=cfg.saliency.n_samples, seed=seed)
    elif method == "gradcam":
        smap = gradcam(net, image, class_id,
                       variant=cfg.saliency.gradcam_variant)
    else:
        raise ConfigError(f"unknown method {method!r}; expected one of "
                          f"{SANITY_METHODS}")

    stem = os.path.splitext(os.path.basename(args.model))[0]
    map_path = os.path.join(out, "maps", f"{method}_{stem}_{image_id}.pgm")
    write_pgm(map_path, quantize_unit(smap.values))
    if args.overlay:
        ppm_path = os.path.join(out, "maps",
                                f"{method}_{stem}_{image_id}_overlay.ppm")
        write_ppm(ppm_path, overlay(image[0], smap.values))
    correct = -1 if label < 0 else int(predicted == label)
    params = f"class={class_id}|image={image_id}"
    rows = [
        ResultRow(seed, stem, method, params, "predicted_class",
                  float(predicted)),
        ResultRow(seed, stem, method, params, "correct", float(correct)),
        ResultRow(seed, stem, method, params, "blank",
                  float(int(smap.all_zero))),
    ]
    write_rows(os.path.join(out, "saliency.csv"), rows)
    print(f"{method}: predicted={predicted} correct={correct} "
          f"blank={int(smap.all_zero)} -> {map_path}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(cfg, args)
    nets = _load_pair(args)
    _, test_data = make_datasets(cfg.dataset)
    idx = cfg.saliency.image_index
    if not 0 <= idx < test_data.n:
        raise ConfigError(f"image index {idx} out of range "
                          f"[0, {test_data.n})")
    image = test_data.images[idx]
    class_id = int(test_data.labels[idx])
    rows: list[ResultRow] = []
    for seed in _seeds(cfg, args):
        for label, net in nets:
            sweep = noise_sweep(net, image, class_id,
                                levels=cfg.saliency.noise_levels,
                                n_samples=cfg.saliency.n_samples, seed=seed)
            for level, smap, tv, pear, spear in zip(
                    sweep.levels, sweep.maps, sweep.total_variation,
                    sweep.pearson_to_vanilla, sweep.spearman_to_vanilla):
                params = f"noise={_fmt_level(level)}|" \
                         f"n={cfg.saliency.n_samples}"
                rows.append(ResultRow(seed, label, "smoothgrad", params,
                                      "total_variation", tv))
                rows.append(ResultRow(seed, label, "smoothgrad", params,
                                      "pearson_to_vanilla", pear))
                rows.append(ResultRow(seed, label, "smoothgrad", params,
                                      "spearman_to_vanilla", spear))
                name = f"sweep_{label}_s{seed}_n{_fmt_level(level)}.pgm"
                write_pgm(os.path.join(out, "maps", name),
                          quantize_unit(smap.values))
    write_rows(os.path.join(out, "sweep.csv"), rows)
    print(f"sweep: {len(rows)} rows -> {os.path.join(out, 'sweep.csv')}")
    return EXIT_OK


def cmd_probe(args) -> int:
    cfg = load_config(args.config)
    out = _out_dir(cfg, args)
    nets = _load_pair(args)
    _, test_data = make_datasets(cfg.dataset)
    idx = cfg.saliency.image_index
    image = test_data.images[idx]
    class_id = int(test_data.labels[idx])
    amp_rows: list[ResultRow] = []
    sanity_rows: list[ResultRow] = []
    for seed in _seeds(cfg, args):
        for label, net in nets:
            prof = amplification_profile(net, image, DEFAULT_DELTA_SCALE,
                                         seed)
            for layer, (ratio, kind) in enumerate(zip(prof.ratios,
                                                      prof.kinds)):
                amp_rows.append(ResultRow(seed, label, "probe",
                                          f"layer={layer}|kind={kind}",
                                          "amplification_ratio", ratio))
            for method in SANITY_METHODS:
                stages = randomization_sanity(
                    net, image, class_id, method, seed,
                    n_samples=cfg.saliency.n_samples,
                    gradcam_variant=cfg.saliency.gradcam_variant)
                for k, rho in stages:
                    sanity_rows.append(ResultRow(
                        seed, label, method, f"stages={k}",
                        "sanity_spearman", rho))
    write_rows(os.path.join(out, "amplification.csv"), amp_rows)
    write_rows(os.path.join(out, "sanity.csv"), sanity_rows)
    print(f"probe: {len(amp_rows)} amplification rows, "
          f"{len(sanity_rows)} sanity rows -> {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    _require_file(args.map_a, "map file")
    _require_file(args.map_b, "map file")
    a = read_pgm(args.map_a)
    b = read_pgm(args.map_b)
    if a.shape != b.shape:
        raise ShapeError(f"map dimensions differ: {a.shape} vs {b.shape}")
    fa = a.astype(np.float64) / 255.0
    fb = b.astype(np.float64) / 255.0
    print(f"pearson={pearson(fa, fb)!r}")
    print(f"spearman={spearman(fa, fb)!r}")
    print(f"tv_a={total_variation(fa)!r}")
    print(f"tv_b={total_variation(fb)!r}")
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    stem_a = os.path.splitext(os.path.basename(args.map_a))[0]
    stem_b = os.path.splitext(os.path.basename(args.map_b))[0]
    diff = np.abs(a.astype(np.int16) - b.astype(np.int16)).astype(np.uint8)
    diff_path = os.path.join(out, f"diff_{stem_a}_{stem_b}.pgm")
    write_pgm(diff_path, diff)
    print(f"diff -> {diff_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing and entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="binsight",
        description="Train binary/full-precision CNN pairs and compare "
                    "gradient saliency methods on them.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seeds list")
        p.add_argument("--out", default=None,
                       help="override the config output directory")

    p = sub.add_parser("train", help="train the fp/bnn pair per seed")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("saliency", help="emit one saliency map")
    common(p)
    p.add_argument("--model", required=True, help="model file (.bsm)")
    p.add_argument("--method", default=None, choices=SANITY_METHODS)
    p.add_argument("--image-index", type=int, default=None)
    p.add_argument("--image-file", default=None,
                   help="IDX image file instead of a dataset index")
    p.add_argument("--label-file", default=None,
                   help="IDX label file paired with --image-file")
    p.add_argument("--class-id", type=int, default=None,
                   help="explain this class instead of the prediction")
    p.add_argument("--noise", type=float, default=None,
                   help="smoothgrad noise fraction")
    p.add_argument("--overlay", action="store_true",
                   help="also write a colormapped PPM overlay")
    p.set_defaults(func=cmd_saliency)

    p = sub.add_parser("sweep", help="noise sweep over both networks")
    common(p)
    p.add_argument("--fp-model", required=True)
    p.add_argument("--bnn-model", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("probe", help="amplification and sanity checks")
    common(p)
    p.add_argument("--fp-model", required=True)
    p.add_argument("--bnn-model", required=True)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("compare", help="similarity report for two PGM maps")
    p.add_argument("map_a")
    p.add_argument("map_b")
    p.add_argument("--out", default=None, help="directory for the diff map")
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, IdxFormatError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (ModelFormatError,) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MODEL
    except (ShapeError, ImageFormatError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_SHAPE
    except TrainingDiverged as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
