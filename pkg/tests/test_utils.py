import os
import tempfile

import pytest

from pt_estimation.utils import (
    DEFAULT_CONFIG,
    config_hash,
    load_config,
    resolve_out_dir,
    substream,
)


def test_load_config_overlays_defaults():
    with tempfile.TemporaryDirectory() as tmp_dir:
        path = os.path.join(tmp_dir, "config.yaml")
        with open(path, "w") as f:
            f.write("analysis:\n  bootstrap: 50\n")
        config = load_config(path)
    assert config["analysis"]["bootstrap"] == 50
    assert config["analysis"]["k_max"] == DEFAULT_CONFIG["analysis"]["k_max"]
    assert config["dpt"] == DEFAULT_CONFIG["dpt"]
    assert load_config() == DEFAULT_CONFIG


def test_load_config_rejects_non_mapping():
    with tempfile.TemporaryDirectory() as tmp_dir:
        path = os.path.join(tmp_dir, "config.yaml")
        with open(path, "w") as f:
            f.write("- just\n- a list\n")
        with pytest.raises(ValueError):
            load_config(path)


def test_results_directories_are_numbered():
    with tempfile.TemporaryDirectory() as tmp_dir:
        root = os.path.join(tmp_dir, "results")
        first = resolve_out_dir(root=root)
        second = resolve_out_dir(root=root)
        assert os.path.basename(first) == "1"
        assert os.path.basename(second) == "2"
        chosen = os.path.join(tmp_dir, "mine")
        assert resolve_out_dir(chosen, root=root) == chosen
        assert os.path.isdir(chosen)


def test_substreams_depend_only_on_seed_and_key():
    a = substream(3, "bootstrap", "x1", "g", "llm", 2).random(4)
    b = substream(3, "bootstrap", "x1", "g", "llm", 2).random(4)
    c = substream(3, "bootstrap", "x1", "g", "llm", 3).random(4)
    d = substream(4, "bootstrap", "x1", "g", "llm", 2).random(4)
    assert a.tolist() == b.tolist()
    assert a.tolist() != c.tolist()
    assert a.tolist() != d.tolist()


def test_config_hash_ignores_key_order():
    assert config_hash({"a": 1, "b": {"c": 2}}) == config_hash({"b": {"c": 2}, "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
