"""Shared fixtures. The trained network pairs are expensive (tens of
seconds per pair), so they are built once per session and reused by the
behavioral and acceptance tests."""

import time

import pytest

import binsight as bs

SEEDS = (1, 2, 3, 4, 5)

TRAIN_CFG = dict(learning_rate=0.02, epochs=30, batch_size=32)

_timings = {}


@pytest.fixture(scope="session")
def shapes_train():
    return bs.gen_shapes(7, 250, 16)


@pytest.fixture(scope="session")
def shapes_test():
    return bs.gen_shapes(7 + 1_000_003, 60, 16)


@pytest.fixture(scope="session")
def base_def():
    return bs.micro16()


@pytest.fixture(scope="session")
def trained_pairs(base_def, shapes_train):
    """seed -> dict with trained fp/bnn networks and accuracy histories."""
    t0 = time.monotonic()
    fp_def = bs.fp_variant(base_def)
    pairs = {}
    for seed in SEEDS:
        cfg = bs.TrainConfig(seed=seed, **TRAIN_CFG)
        fp_net, fp_hist = bs.train(bs.build_network(fp_def, seed),
                                   shapes_train, cfg)
        bnn_net, bnn_hist = bs.train(bs.build_network(base_def, seed),
                                     shapes_train, cfg)
        pairs[seed] = {"fp": fp_net, "bnn": bnn_net,
                       "fp_hist": fp_hist, "bnn_hist": bnn_hist}
    _timings["train"] = time.monotonic() - t0
    return pairs


@pytest.fixture()
def train_elapsed(trained_pairs):
    """Wall-clock seconds spent building the trained pairs."""
    return _timings["train"]


@pytest.fixture(scope="session")
def probe_image(shapes_test):
    """(image, true label) the experiments attribute against."""
    return shapes_test.images[0], int(shapes_test.labels[0])
