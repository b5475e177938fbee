import pytest

from affmixer.config import MixerConfig, RunConfig, load_config, save_config
from affmixer.errors import ConfigError


def test_defaults_validate():
    cfg = RunConfig().validate()
    assert cfg.mixer.out_dim == 192 and cfg.clip.length == 16


def test_yaml_round_trip(tmp_path):
    cfg = RunConfig(tasks=("va", "emi")).with_overrides(["mixer.levels=[2, 3]", "optim.lr=0.01"])
    save_config(cfg, tmp_path / "c.yaml")
    again = load_config(tmp_path / "c.yaml")
    assert again == cfg
    assert again.mixer.levels == (2, 3) and again.optim.lr == 0.01


@pytest.mark.parametrize("override", [
    "mixer.levels=[1, 1]", "mixer.levels=[4]", "tasks=[pose]", "image_size=48", "optim.kind=lbfgs",
    "backbone.trainable_suffix=6", "clip.policy=shuffle", "mixer.mixing_order=[temporal, temporal]",
    "nonsense=1", "mixer.nonsense=1", "noequals", "loss_weights.au=-1",
])
def test_invalid_overrides(override):
    with pytest.raises(ConfigError):
        load_config(None, [override])


def test_unknown_file_key(tmp_path):
    (tmp_path / "c.yaml").write_text("mixer:\n  levles: [1]\n")
    with pytest.raises(ConfigError, match="mixer.levles"):
        load_config(tmp_path / "c.yaml")


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml")
    (tmp_path / "bad.yaml").write_text("a: [1, 2\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.yaml")


def test_feature_path_needs_one_level():
    with pytest.raises(ConfigError):
        RunConfig(input_kind="features").validate()
    RunConfig(input_kind="features", mixer=MixerConfig(levels=(3,))).validate()


def test_mixing_order_subset_allowed():
    MixerConfig(mixing_order=("channel", "temporal")).validate()
