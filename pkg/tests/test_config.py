"""Tests for run configuration parsing, overrides and runtime settings."""
from pathlib import Path

import pytest

from histotnet.config import SECTIONS, RunConfig, RuntimeSettings, load_config, parse_config
from histotnet.errors import ConfigError
from histotnet.nn.train import SegLoss, SegMode
from histotnet.tiling import MeanScope


def test_defaults():
    config = RunConfig()
    assert config.train.epochs == 150
    assert config.train.downsampled_epochs == 1500
    assert config.train.lr0 == 0.01
    assert config.tiling.patch_size == 500
    assert config.tiling.stride == 100
    assert config.postprocess.blur_kernel == 11
    assert config.postprocess.blur_sigma == pytest.approx(11 / 6)
    assert config.stack.folds == 10 and config.stack.shuffles == 20
    assert set(SECTIONS) == {
        "synth", "tiling", "train", "classify", "predict", "postprocess", "blend", "stack",
        "gradcheck", "render",
    }


def test_with_overrides_ignores_none():
    config = RunConfig()
    updated = config.with_overrides("train", epochs=5, depth=None)
    assert updated.train.epochs == 5
    assert updated.train.depth == config.train.depth
    assert config.train.epochs == 150
    assert config.with_overrides("train", epochs=None) is config


def test_with_overrides_rejects_bad_values():
    with pytest.raises(ConfigError, match="unknown section"):
        RunConfig().with_overrides("optimizer", lr0=0.1)
    with pytest.raises(ConfigError, match="postprocess"):
        RunConfig().with_overrides("postprocess", blur_kernel=4)
    with pytest.raises(ConfigError):
        RunConfig().with_overrides("train", not_a_key=1)


def test_text_round_trip():
    config = (
        RunConfig()
        .with_overrides("classify", widths=(16,), spp_levels=2)
        .with_overrides("train", mean_scope=MeanScope.PATCH, boundary_ramp=6.5)
        .with_overrides("postprocess", blur_sigma=2.25)
    )
    parsed = parse_config(config.to_text())
    assert parsed == config
    assert parsed.classify.widths == (16,)
    assert parsed.postprocess.blur_sigma == 2.25


def test_parse_partial_file_keeps_other_defaults():
    text = "# tuned\n[train]\nepochs = 12   # short run\n\n[blend]\nweight = 0.25\n"
    config = parse_config(text)
    assert config.train.epochs == 12
    assert config.blend.weight == 0.25
    assert config.stack == RunConfig().stack


@pytest.mark.parametrize(
    "text, line, message",
    [
        ("[train]\nepochs = 3\n[optimizer]\n", 3, "unknown section"),
        ("[train]\nepoch = 3\n", 2, "unknown key"),
        ("[train]\nepochs = 3\nepochs = 4\n", 3, "duplicate key"),
        ("epochs = 3\n[train]\n", 1, "before any"),
        ("[train]\nepochs 3\n", 2, "key = value"),
        ("[train]\n\nepochs = many\n", 3, "epochs"),
    ],
)
def test_parse_errors_carry_path_and_line(text, line, message):
    with pytest.raises(ConfigError, match=message) as info:
        parse_config(text, "run.cfg")
    assert info.value.path == "run.cfg"
    assert info.value.line == line
    assert str(info.value).startswith(f"run.cfg:{line}: ")


def test_load_config(tmp_path: Path):
    assert load_config(None) == RunConfig()

    path = tmp_path / "run.cfg"
    path.write_text("[stack]\nrounds = 7\n", encoding="utf-8")
    assert load_config(path).stack.rounds == 7

    with pytest.raises(ConfigError, match="cannot read config") as info:
        load_config(tmp_path / "missing.cfg")
    assert info.value.path == str(tmp_path / "missing.cfg")
    assert info.value.line is None


def test_scaled_for_toy():
    toy = RunConfig().scaled_for_toy()
    assert toy.train.epochs == 15
    assert toy.train.downsampled_epochs == 150
    assert toy.train.patch_size == 64
    assert toy.classify.epochs == 12
    assert toy.classify.patch_size == 64
    assert toy.tiling.patch_size == 64
    assert toy.tiling.stride == 16
    assert toy.tiling.downsample_factor == 4

    tiny = RunConfig().with_overrides("train", epochs=3).scaled_for_toy()
    assert tiny.train.epochs == 1


def test_command_switches_have_config_keys():
    text = (
        "[synth]\ndataset = true\nper_class = 5\n\n"
        "[train]\nmode = downsampled\nloss = boundary\n\n"
        "[classify]\nhead = one-vs-all\npositive_class = 3\nkfold = true\n\n"
        "[predict]\nmode = segment\ntiled = true\ndownsample = 40\ncolumn = 2\n\n"
        "[blend]\nshifted = true\n\n"
        "[stack]\nmodels = deep,\nexhaustive = true\n\n"
        "[gradcheck]\narch = unet\nsize = 4\ntolerance = 0.01\n\n"
        "[render]\nalpha = 0.25\n"
    )
    config = parse_config(text)
    assert config.synth.dataset and config.synth.per_class == 5
    assert config.train.mode is SegMode.DOWNSAMPLED and config.train.loss is SegLoss.BOUNDARY
    classify = config.classify
    assert (classify.head, classify.positive_class, classify.kfold) == ("one-vs-all", 3, True)
    assert config.predict.mode == "segment" and config.predict.tiled and config.predict.downsample == 40
    assert config.predict.column == 2 and config.predict.height is None
    assert config.blend.shifted
    assert config.stack.models == ("deep",) and config.stack.exhaustive
    assert (config.gradcheck.arch, config.gradcheck.size, config.gradcheck.tolerance) == ("unet", 4, 0.01)
    assert config.render.alpha == 0.25
    assert parse_config(config.to_text()) == config


@pytest.mark.parametrize(
    "section, key, value",
    [
        ("predict", "mode", "paint"),
        ("classify", "head", "softmax"),
        ("classify", "positive_class", 4),
        ("gradcheck", "arch", "resnet"),
        ("render", "alpha", 1.5),
    ],
)
def test_command_switches_are_validated(section, key, value):
    with pytest.raises(ConfigError, match=section):
        RunConfig().with_overrides(section, **{key: value})


def test_runtime_settings_from_environment(monkeypatch):
    monkeypatch.setenv("HISTOTNET_TOY", "1")
    monkeypatch.setenv("HISTOTNET_OUTPUT_DIR", "/tmp/histo-runs")
    settings = RuntimeSettings()
    assert settings.toy is True
    assert settings.verbose is False
    assert settings.output_dir == Path("/tmp/histo-runs")
