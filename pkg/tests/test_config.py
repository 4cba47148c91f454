import numpy as np
import pytest

from geots.config import ConfigError, load_config, load_synth, parse_config


def test_defaults():
    cfg = load_config(None)
    assert [m.name for m in cfg.models] == ["LSTM", "GRU", "MLP"]
    assert cfg.split.train_val == 0.8
    assert cfg.outliers.k == 3


@pytest.mark.parametrize("data,key", [
    ({"ktif": {"half_widht": 5}}, "ktif.half_widht"),
    ({"statespace": {"alpha": 1.5}}, "statespace.alpha"),
    ({"models": [{"arch": "LSTM", "windw": 3}]}, "models.0.windw"),
    ({"models": [{"arch": "Transformerish"}]}, "models.0.arch"),
    ({"split": {"long": 0.5}}, "split"),
    ({"wqe_weights": [0.5, 0.5, 0.5]}, "wqe_weights"),
    ({"unknown": 1}, "unknown"),
])
def test_invalid_keys_are_reported_with_their_path(data, key):
    with pytest.raises(ConfigError) as err:
        parse_config(data, "cfg.yaml")
    assert err.value.key == key
    assert str(err.value).startswith("cfg.yaml: ")


def test_duplicate_model_names_rejected():
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config({"models": [{"arch": "GRU"}, {"arch": "GRU"}]})
    cfg = parse_config({"models": [{"arch": "GRU"}, {"arch": "GRU", "name": "GRU_small", "hidden": 4}]})
    assert [m.name for m in cfg.models] == ["GRU", "GRU_small"]


def test_ktif_config_merges_sections_and_seed():
    cfg = parse_config({"seed": 9, "statespace": {"periods": [10.0], "em": False},
                        "ktif": {"half_width": 7}})
    k = cfg.ktif_config()
    assert k.seed == 9 and k.half_width == 7 and k.periods == (10.0,) and k.em is False


def test_yaml_files(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("seed: 4\nmodels:\n  - {arch: MLP, epochs: 2}\n")
    assert load_config(path).seed == 4
    path.write_text("- a\n- b\n")
    with pytest.raises(ConfigError, match="mapping"):
        load_config(path)
    path.write_text("seed: [1\n")
    with pytest.raises(ConfigError, match="YAML"):
        load_config(path)
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.yaml")


def test_synth_recipe(tmp_path):
    path = tmp_path / "s.yaml"
    path.write_text("length: 100\nsigma: 1.0\nchannels: [east, north]\n"
                    "harmonics:\n  - {amplitude: 2, period: 25}\n")
    syn = load_synth(path)
    a, b = syn.generate(), syn.generate()
    assert a.channels == ("east", "north") and a.values.shape == (100, 2)
    np.testing.assert_array_equal(a.values, b.values)
    assert not np.allclose(a.values[:, 0], a.values[:, 1])
    path.write_text("length: 100\nharmonics:\n  - {amplitude: 1, period: -2}\n")
    with pytest.raises(ConfigError) as err:
        load_synth(path)
    assert err.value.key == "harmonics.0.period"
