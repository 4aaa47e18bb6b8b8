"""Config parsing: strict key checking and fail-fast precondition checks."""

import json

import pytest

import binsight as bs
from binsight.config import (ConfigError, load_config, make_datasets,
                             parse_config)


def valid_raw(**overrides):
    raw = {
        "version": 1,
        "network": "micro16",
        "dataset": {"kind": "shapes", "size": 16, "n_per_class": 4,
                    "test_n_per_class": 2, "seed": 3},
        "train": {"learning_rate": 0.05, "epochs": 2, "batch_size": 4},
        "saliency": {"method": "smoothgrad", "noise_levels": [0.1, 0.2],
                     "n_samples": 3, "gradcam_variant": "standard",
                     "image_index": 0},
        "seeds": [1, 2],
        "out": "results",
    }
    raw.update(overrides)
    return raw


class TestParse:
    def test_valid_config(self):
        cfg = parse_config(valid_raw())
        assert cfg.seeds == (1, 2)
        assert cfg.train.epochs == 2
        assert cfg.saliency.noise_levels == (0.1, 0.2)
        assert cfg.network == bs.micro16()

    def test_defaults_fill_missing_sections(self):
        cfg = parse_config({"version": 1})
        assert cfg.network == bs.micro16()
        assert cfg.saliency.method == "smoothgrad"
        assert cfg.out_dir == "results"

    def test_unknown_top_level_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown key.*'noise'"):
            parse_config(valid_raw(noise=0.1))

    def test_unknown_nested_key_rejected(self):
        raw = valid_raw()
        raw["train"]["momentum"] = 0.9
        with pytest.raises(ConfigError, match="momentum"):
            parse_config(raw)

    def test_missing_version_rejected(self):
        raw = valid_raw()
        del raw["version"]
        with pytest.raises(ConfigError, match="version"):
            parse_config(raw)

    def test_wrong_version_rejected(self):
        with pytest.raises(ConfigError, match="version"):
            parse_config(valid_raw(version=2))

    def test_unknown_method_rejected(self):
        raw = valid_raw()
        raw["saliency"]["method"] = "occlusion"
        with pytest.raises(ConfigError, match="occlusion"):
            parse_config(raw)

    def test_bad_levels_rejected(self):
        raw = valid_raw()
        raw["saliency"]["noise_levels"] = [0.2, 0.1]
        with pytest.raises(ConfigError, match="increasing"):
            parse_config(raw)
        raw["saliency"]["noise_levels"] = [0.1, 0.9]
        with pytest.raises(ConfigError, match="0, 0.5"):
            parse_config(raw)

    def test_unknown_network_name_rejected(self):
        with pytest.raises(ConfigError, match="unknown network"):
            parse_config(valid_raw(network="meganet"))

    def test_inline_network_definition(self):
        inline = {
            "layers": [
                {"kind": "conv", "out_channels": 2, "kernel": 3,
                 "stride": 1, "padding": 1, "precision": "binary"},
                {"kind": "maxpool", "window": 2},
                {"kind": "signact"},
                {"kind": "flatten"},
                {"kind": "dense", "units": 3},
            ],
            "input_shape": [1, 12, 12],
            "classes": 3,
        }
        cfg = parse_config(valid_raw(network=inline,
                                     dataset={"kind": "shapes", "size": 12,
                                              "n_per_class": 4}))
        assert cfg.network.input_shape == (1, 12, 12)
        assert cfg.network.layers[0].precision == "binary"

    def test_inline_network_unknown_field_rejected(self):
        inline = {"layers": [{"kind": "conv", "out_channels": 2,
                              "kernel": 3, "dilation": 2}],
                  "input_shape": [1, 12, 12], "classes": 3}
        with pytest.raises(ConfigError, match="dilation"):
            parse_config(valid_raw(network=inline))

    def test_invalid_inline_network_rejected(self):
        inline = {"layers": [{"kind": "flatten"},
                             {"kind": "dense", "units": 3}],
                  "input_shape": [1, 12, 12], "classes": 3}
        with pytest.raises(ConfigError, match="bad network"):
            parse_config(valid_raw(network=inline))

    def test_empty_seeds_rejected(self):
        with pytest.raises(ConfigError, match="seeds"):
            parse_config(valid_raw(seeds=[]))

    def test_missing_idx_path_rejected(self, tmp_path):
        raw = valid_raw(dataset={"kind": "idx",
                                 "train_images": str(tmp_path / "none.idx"),
                                 "train_labels": str(tmp_path / "none.idx"),
                                 "test_images": str(tmp_path / "none.idx"),
                                 "test_labels": str(tmp_path / "none.idx")})
        with pytest.raises(ConfigError, match="does not exist"):
            parse_config(raw)


class TestLoadConfig:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="does not exist"):
            load_config(tmp_path / "nope.json")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="not valid JSON"):
            load_config(path)

    def test_round_trip(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps(valid_raw()))
        cfg = load_config(path)
        assert cfg.seeds == (1, 2)


class TestMakeDatasets:
    def test_shapes_split_sizes(self):
        cfg = parse_config(valid_raw())
        train, test = make_datasets(cfg.dataset)
        assert train.n == 12 and test.n == 6

    def test_splits_differ(self):
        cfg = parse_config(valid_raw())
        train, test = make_datasets(cfg.dataset)
        assert train.images[:6].tobytes() != test.images.tobytes()

    def test_idx_datasets(self, tmp_path):
        from binsight.data import save_idx
        ds = bs.gen_shapes(1, 3, 12)
        paths = {}
        for name in ("train", "test"):
            img, lab = tmp_path / f"{name}i.idx", tmp_path / f"{name}l.idx"
            save_idx(ds, img, lab)
            paths[f"{name}_images"] = str(img)
            paths[f"{name}_labels"] = str(lab)
        raw = valid_raw(dataset={"kind": "idx", **paths})
        cfg = parse_config(raw)
        train, test = make_datasets(cfg.dataset)
        assert train.n == test.n == 9
