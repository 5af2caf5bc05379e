import pytest

from droneguard.config import ConfigError, RunConfig, dump_config, load_config, parse_config_text


def test_defaults_match_reference_settings():
    cfg = RunConfig()
    fc = cfg.feature_config()
    assert (fc.frame.window_samples(24000), fc.frame.hop_samples(24000), fc.hop_s) == (960, 480, 0.02)
    assert cfg.cnn_architecture().flatten_size == 7680
    assert cfg.rnn_architecture().hidden == 300
    assert cfg.train_config("rnn").learning_rate == 0.0005


def test_parse_text_with_comments():
    items = parse_config_text("# run\nwindow_ms = 40  # frame\n\nseed=3\n")
    assert items == {"window_ms": "40", "seed": "3"}
    with pytest.raises(ConfigError, match="line 1"):
        parse_config_text("window_ms 40")


def test_file_then_overrides(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("seed = 3\nhop_ms = 10\ncnn_conv_channels = 8,8,16,16\nmfcc_full_band = yes\n")
    cfg = load_config(path, {"seed": "4"})
    assert (cfg.seed, cfg.hop_ms, cfg.cnn_conv_channels, cfg.mfcc_full_band) == (4, 10.0, (8, 8, 16, 16), True)


@pytest.mark.parametrize("overrides, match", [
    ({"windw_ms": "40"}, "unknown config key"),
    ({"seed": "abc"}, "bad value for seed"),
    ({"mfcc_full_band": "maybe"}, "bad value"),
    ({"val_split": "1.5"}, "val_split"),
    ({"gmm_smoothing_frames": "4"}, "odd"),
    ({"peak_margin": "0.9"}, "margin"),
    ({"hop_ms": "-5"}, "hop"),
])
def test_invalid_settings_are_config_errors(overrides, match):
    with pytest.raises(ConfigError, match=match):
        load_config(None, overrides)


def test_hash_is_stable_and_sensitive():
    a = RunConfig()
    assert a.config_hash() == RunConfig().config_hash()
    assert len(a.config_hash()) == 16
    assert a.with_overrides({"seed": "1"}).config_hash() != a.config_hash()


def test_dump_load_roundtrip(tmp_path):
    cfg = RunConfig().with_overrides({"seed": "9", "cnn_conv_channels": "4,4,8,8", "mfcc_full_band": "true"})
    path = tmp_path / "dump.cfg"
    path.write_text(dump_config(cfg))
    back = load_config(path)
    assert back == cfg and back.config_hash() == cfg.config_hash()
