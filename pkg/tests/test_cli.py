"""Command-line tests driven through Typer's CliRunner."""
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from typer.testing import CliRunner

from histotnet.cli import EXIT_VALIDATION, app
from histotnet.config import RunConfig, load_config
from histotnet.core.io import (
    read_image,
    read_mask,
    read_pred_matrix,
    read_probmap,
    write_image,
    write_mask,
    write_pred_matrix,
    write_probmap,
)
from histotnet.core.types import Image, LabelMask, ProbMap
from histotnet.nn.bundle import load_network
from histotnet.stage_logger import stage_logger

runner = CliRunner()


def invoke(*args: str):
    return runner.invoke(app, [str(a) for a in args])


def test_version():
    result = invoke("version")
    assert result.exit_code == 0
    assert "histotnet" in result.output


def test_config_writes_toy_settings(tmp_path: Path):
    out = tmp_path / "toy.cfg"
    result = invoke("config", "--toy", "--write", out)
    assert result.exit_code == 0
    assert load_config(out) == RunConfig().scaled_for_toy()


def test_bad_config_file_is_a_validation_error(tmp_path: Path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[train]\nepochz = 3\n", encoding="utf-8")
    result = invoke("config", "--config", bad)
    assert result.exit_code == EXIT_VALIDATION
    assert "epochz" in result.output


def test_synth_slides(tmp_path: Path):
    result = invoke("synth", "--out", tmp_path, "--count", 2, "--height", 32, "--width", 24, "--seed", 3)
    assert result.exit_code == 0, result.output
    for index in range(2):
        img = read_image(tmp_path / f"slide_{index}.png")
        mask = read_mask(tmp_path / f"slide_{index}_mask.png")
        assert (img.height, img.width, img.channels) == (32, 24, 3)
        assert mask.shape == (32, 24)


def test_synth_dataset(tmp_path: Path):
    result = invoke("synth", "--dataset", "--per-class", 2, "--height", 16, "--width", 16, "--out", tmp_path)
    assert result.exit_code == 0, result.output
    labels = pd.read_csv(tmp_path / "labels.csv", dtype={"image": str})
    assert list(labels.columns) == ["image", "label"]
    assert sorted(labels["label"]) == [0, 0, 1, 1, 2, 2, 3, 3]
    assert all((tmp_path / f"{name}.png").exists() for name in labels["image"])


def test_eval_report(tmp_path: Path):
    write_mask(tmp_path / "pred.png", LabelMask(np.array([[3, 3]])))
    write_mask(tmp_path / "gt.png", LabelMask(np.array([[1, 3]])))
    report = tmp_path / "report.csv"
    result = invoke("eval", "--pred", tmp_path / "pred.png", "--gt", tmp_path / "gt.png",
                    "--out", report, "--id", "case1")
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(report)
    assert list(frame.columns) == ["image", "metric", "value"]
    assert set(frame["image"]) == {"case1"}
    assert frame.set_index("metric").loc["bach", "value"] == pytest.approx(0.6)


def test_missing_input_exits_with_validation_code(tmp_path: Path):
    write_mask(tmp_path / "gt.png", LabelMask(np.zeros((2, 2), dtype=np.uint8)))
    result = invoke("eval", "--pred", tmp_path / "absent.png", "--gt", tmp_path / "gt.png")
    assert result.exit_code == EXIT_VALIDATION


def test_postprocess_keeps_the_block(tmp_path: Path):
    values = np.full((20, 20), 0.1, dtype=np.float32)
    values[6:14, 6:14] = 0.9
    write_probmap(tmp_path / "map.pmap", ProbMap(values))
    out = tmp_path / "mask.png"
    result = invoke("postprocess", "--map", tmp_path / "map.pmap", "--out", out,
                    "--blur-kernel", 3, "--closing", 3)
    assert result.exit_code == 0, result.output
    mask = read_mask(out).labels
    assert set(np.unique(mask)) <= {0, 1}
    assert mask[10, 10] == 1
    assert mask[0, 0] == 0


def test_postprocess_rejects_even_kernel(tmp_path: Path):
    write_probmap(tmp_path / "map.pmap", ProbMap(np.zeros((4, 4))))
    result = invoke("postprocess", "--map", tmp_path / "map.pmap", "--out", tmp_path / "m.png",
                    "--blur-kernel", 4)
    assert result.exit_code == EXIT_VALIDATION


def test_blend(tmp_path: Path):
    a = np.random.default_rng(0).random((5, 6))
    b = np.random.default_rng(1).random((5, 6))
    write_probmap(tmp_path / "a.pmap", ProbMap(a))
    write_probmap(tmp_path / "b.pmap", ProbMap(b))
    out = tmp_path / "blend.pmap"
    result = invoke("blend", "--a", tmp_path / "a.pmap", "--b", tmp_path / "b.pmap", "--out", out,
                    "--weight", 0.25)
    assert result.exit_code == 0, result.output
    np.testing.assert_allclose(read_probmap(out).values[0], 0.25 * a + 0.75 * b, atol=1e-6)


def test_compose_and_shifted(tmp_path: Path):
    write_mask(tmp_path / "binary.png", LabelMask(np.array([[0, 1], [1, 0]])))
    write_mask(tmp_path / "tnet3.png", LabelMask(np.array([[2, 2], [0, 0]])))

    result = invoke("compose", "--binary", tmp_path / "binary.png", "--tnet3", tmp_path / "tnet3.png",
                    "--out", tmp_path / "composed.png")
    assert result.exit_code == 0, result.output
    np.testing.assert_array_equal(read_mask(tmp_path / "composed.png").labels, [[2, 3], [3, 0]])

    result = invoke("compose", "--binary", tmp_path / "binary.png", "--shifted",
                    "--out", tmp_path / "shifted.png")
    assert result.exit_code == 0, result.output
    np.testing.assert_array_equal(read_mask(tmp_path / "shifted.png").labels, [[1, 3], [3, 1]])

    result = invoke("compose", "--binary", tmp_path / "binary.png", "--out", tmp_path / "x.png")
    assert result.exit_code == EXIT_VALIDATION


def test_stitch_covers_each_pixel_once(tmp_path: Path):
    scores = np.array([[0.1], [0.4], [0.6], [0.9]])
    write_pred_matrix(tmp_path / "pred.csv", scores)
    out = tmp_path / "map.pmap"
    result = invoke("stitch", "--pred", tmp_path / "pred.csv", "--out", out, "--height", 8, "--width", 8,
                    "--patch", 4, "--stride", 4)
    assert result.exit_code == 0, result.output
    values = read_probmap(out).values[0]
    assert values.shape == (8, 8)
    assert values.mean() == pytest.approx(scores.mean(), abs=1e-6)
    assert set(np.round(np.unique(values).astype(np.float64), 6)) == {0.1, 0.4, 0.6, 0.9}


def test_stitch_needs_a_size(tmp_path: Path):
    write_pred_matrix(tmp_path / "pred.csv", np.array([[0.5]]))
    result = invoke("stitch", "--pred", tmp_path / "pred.csv", "--out", tmp_path / "m.pmap")
    assert result.exit_code == EXIT_VALIDATION


def test_render_overlay(tmp_path: Path):
    write_image(tmp_path / "slide.png", Image(np.full((4, 4, 3), 100, dtype=np.uint8)))
    write_mask(tmp_path / "mask.png", LabelMask(np.array([[0, 1, 2, 3]] * 4)))
    out = tmp_path / "overlay.png"
    result = invoke("render", "--image", tmp_path / "slide.png", "--mask", tmp_path / "mask.png",
                    "--out", out, "--alpha", 1.0)
    assert result.exit_code == 0, result.output
    data = read_image(out).data
    assert tuple(data[0, 0]) == (100, 100, 100)
    assert tuple(data[0, 1]) == (255, 0, 0)
    assert tuple(data[0, 3]) == (0, 0, 255)


def test_gradcheck_small_tnet():
    result = invoke("gradcheck", "--arch", "tnet", "--depth", 2, "--base", 2, "--size", 4)
    assert result.exit_code == 0, result.output


def test_gradcheck_unknown_arch():
    result = invoke("gradcheck", "--arch", "resnet")
    assert result.exit_code == EXIT_VALIDATION


def _write_model_preds(root: Path, name: str, labels, seed: int) -> Path:
    rng = np.random.default_rng(seed)
    directory = root / name
    for index, label in enumerate(labels):
        matrix = rng.random((5, 2)) * 0.3
        matrix[:, label] += 0.6
        write_pred_matrix(directory / f"image_{index:02d}.csv", matrix)
    return directory


def test_features_and_stack_commands(tmp_path: Path):
    labels = [0, 1] * 4
    deep = _write_model_preds(tmp_path, "deep", labels, seed=1)
    shallow = _write_model_preds(tmp_path, "shallow", labels, seed=2)
    pd.DataFrame({"image": [f"image_{i:02d}" for i in range(8)], "label": labels}).to_csv(
        tmp_path / "labels.csv", index=False
    )
    table = tmp_path / "features.csv"
    result = invoke("features", "--model", f"deep={deep}", "--model", f"shallow={shallow}",
                    "--labels", tmp_path / "labels.csv", "--out", table)
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(table)
    assert frame.columns[0] == "image_id" and frame.columns[-1] == "label"
    assert frame.shape == (8, 1 + 2 * 20 + 1)

    model = tmp_path / "gbt.json"
    result = invoke("stack", "train", "--table", table, "--out", model, "--rounds", 3, "--max-depth", 1)
    assert result.exit_code == 0, result.output

    predictions = tmp_path / "predictions.csv"
    result = invoke("stack", "predict", "--model", model, "--table", table, "--out", predictions)
    assert result.exit_code == 0, result.output
    out = pd.read_csv(predictions)
    assert list(out.columns) == ["image_id", "prediction", "prob_0", "prob_1"]
    assert list(out["prediction"]) == labels

    trace = tmp_path / "selection.csv"
    result = invoke("stack", "select", "--table", table, "--folds", 2, "--shuffles", 1, "--out", trace)
    assert result.exit_code == 0, result.output
    steps = pd.read_csv(trace)
    assert list(steps.columns) == ["step", "removed", "models", "score"]
    assert steps.loc[0, "models"] == "deep|shallow"


def test_features_rejects_malformed_model_flag(tmp_path: Path):
    result = invoke("features", "--model", "deep", "--out", tmp_path / "f.csv")
    assert result.exit_code == EXIT_VALIDATION


def _small_run_config(tmp_path: Path) -> Path:
    path = tmp_path / "small.cfg"
    path.write_text(
        "[train]\nepochs = 1\nsteps_per_epoch = 2\nbatch_size = 2\npatch_size = 16\n"
        "depth = 2\nbase_channels = 2\n\n"
        "[classify]\nepochs = 1\nsteps_per_epoch = 1\nbatch_size = 2\npatch_size = 8\n\n"
        "[tiling]\npatch_size = 8\nstride = 8\ndownsample_factor = 2\n",
        encoding="utf-8",
    )
    return path


def test_train_seg_predict_postprocess_chain(tmp_path: Path):
    data = tmp_path / "data"
    config = _small_run_config(tmp_path)
    assert invoke("synth", "--out", data, "--count", 2, "--height", 32, "--width", 32).exit_code == 0

    model = tmp_path / "tnet1.nnw"
    log = tmp_path / "stages.json"
    result = invoke("train-seg", "--data", data, "--out", model, "--config", config, "--log", log)
    assert result.exit_code == 0, result.output
    assert log.exists()
    assert load_network(model).descriptor().startswith("tnet depth=2 base=2")

    pmap = tmp_path / "slide_0.pmap"
    result = invoke("predict", "--model", model, "--image", data / "slide_0.png", "--out", pmap,
                    "--mode", "segment", "--config", config)
    assert result.exit_code == 0, result.output
    assert read_probmap(pmap).values.shape == (1, 32, 32)

    result = invoke("postprocess", "--map", pmap, "--out", tmp_path / "binary.png",
                    "--blur-kernel", 3, "--closing", 3)
    assert result.exit_code == 0, result.output
    assert set(np.unique(read_mask(tmp_path / "binary.png").labels)) <= {0, 1}


def test_train_cls_kfold_and_predict(tmp_path: Path):
    data = tmp_path / "micro"
    config = _small_run_config(tmp_path)
    result = invoke("synth", "--dataset", "--per-class", 3, "--height", 16, "--width", 16, "--out", data)
    assert result.exit_code == 0, result.output

    out = tmp_path / "cls"
    result = invoke("train-cls", "--data", data, "--out", out, "--kfold", "--folds", 3, "--widths", "2",
                    "--spp", 1, "--config", config)
    assert result.exit_code == 0, result.output
    assert sorted(p.name for p in out.glob("fold_*.nnw")) == ["fold_0.nnw", "fold_1.nnw", "fold_2.nnw"]
    oof = sorted(out.glob("oof/*.csv"))
    assert len(oof) == 12
    assert read_pred_matrix(oof[0]).shape == (4, 4)

    pred = tmp_path / "pred.csv"
    result = invoke("predict", "--model", out / "fold_0.nnw", "--model", out / "fold_1.nnw",
                    "--image", data / "image_000.png", "--out", pred, "--config", config)
    assert result.exit_code == 0, result.output
    matrix = read_pred_matrix(pred)
    assert matrix.shape == (4, 4)
    np.testing.assert_allclose(matrix.sum(axis=1), 1.0, atol=1e-5)


def test_train_cls_rejects_bad_widths(tmp_path: Path):
    data = tmp_path / "micro"
    invoke("synth", "--dataset", "--per-class", 1, "--height", 8, "--width", 8, "--out", data)
    result = invoke("train-cls", "--data", data, "--out", tmp_path / "m.nnw", "--widths", "a,b")
    assert result.exit_code == EXIT_VALIDATION


EFFECTIVE_CONFIG = """\
[synth]
height = 16
width = 16
count = 1
per_class = 3
seed = 3

[tiling]
patch_size = 8
stride = 8
downsample_factor = 2

[train]
epochs = 1
steps_per_epoch = 1
batch_size = 1
patch_size = 8
depth = 2
base_channels = 2

[classify]
epochs = 1
steps_per_epoch = 1
batch_size = 2
patch_size = 8
widths = 2,
spp_levels = 1

[postprocess]
blur_kernel = 3
closing_size = 3

[stack]
folds = 2
shuffles = 1
rounds = 2
max_depth = 1

[gradcheck]
size = 4

[render]
alpha = 0.75
"""


def test_every_command_logs_its_effective_config(tmp_path: Path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(EFFECTIVE_CONFIG, encoding="utf-8")
    expected = load_config(cfg)
    labels = [0, 1] * 4
    deep = _write_model_preds(tmp_path, "deep", labels, seed=1)
    pd.DataFrame({"image": [f"image_{i:02d}" for i in range(8)], "label": labels}).to_csv(
        tmp_path / "labels.csv", index=False
    )
    data, micro = tmp_path / "data", tmp_path / "micro"

    commands = [
        ("synth", "--out", data),
        ("synth", "--out", micro, "--dataset"),
        ("preprocess", "--data", data, "--out", tmp_path / "small"),
        ("train-seg", "--data", data, "--out", tmp_path / "tnet.nnw"),
        ("train-cls", "--data", micro, "--out", tmp_path / "cls.nnw"),
        ("predict", "--model", tmp_path / "cls.nnw", "--image", micro / "image_000.png",
         "--out", tmp_path / "pred.csv"),
        ("predict", "--model", tmp_path / "tnet.nnw", "--image", data / "slide_0.png",
         "--out", tmp_path / "map.pmap", "--mode", "segment"),
        ("stitch", "--pred", tmp_path / "pred.csv", "--image", micro / "image_000.png",
         "--out", tmp_path / "stitched.pmap"),
        ("postprocess", "--map", tmp_path / "map.pmap", "--out", tmp_path / "binary.png"),
        ("blend", "--a", tmp_path / "map.pmap", "--b", tmp_path / "map.pmap", "--out", tmp_path / "b.pmap"),
        ("compose", "--binary", tmp_path / "binary.png", "--shifted", "--out", tmp_path / "labels.png"),
        ("eval", "--pred", tmp_path / "labels.png", "--gt", data / "slide_0_mask.png"),
        ("render", "--image", data / "slide_0.png", "--mask", tmp_path / "labels.png",
         "--out", tmp_path / "overlay.png"),
        ("gradcheck",),
        ("features", "--model", f"deep={deep}", "--labels", tmp_path / "labels.csv",
         "--out", tmp_path / "features.csv"),
        ("stack", "train", "--table", tmp_path / "features.csv", "--out", tmp_path / "gbt.json"),
        ("stack", "select", "--table", tmp_path / "features.csv"),
        ("stack", "predict", "--model", tmp_path / "gbt.json", "--table", tmp_path / "features.csv",
         "--out", tmp_path / "predictions.csv"),
        ("config",),
    ]
    for command in commands:
        before = len(stage_logger.records)
        result = invoke(*command, "--config", cfg, "--verbose")
        assert result.exit_code == 0, (command, result.output)
        logged = [r for r in stage_logger.records[before:] if r.stage == "config"]
        assert len(logged) == 1, command
        text = logged[0].summary["text"]
        assert "[render]\nalpha = 0.75\n" in text
        assert "[gradcheck]" in text and "[predict]" in text
        for line in text.splitlines():
            assert line in result.output, (command, line)

    assert read_image(tmp_path / "overlay.png").height == expected.synth.height
    assert read_probmap(tmp_path / "stitched.pmap").values.shape == (1, 16, 16)


def test_flags_override_config_file_values(tmp_path: Path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("[render]\nalpha = 0.0\n\n[blend]\nshifted = true\n", encoding="utf-8")
    write_image(tmp_path / "slide.png", Image(np.full((2, 2, 3), 100, dtype=np.uint8)))
    write_mask(tmp_path / "mask.png", LabelMask(np.array([[1, 1], [1, 1]])))

    result = invoke("render", "--image", tmp_path / "slide.png", "--mask", tmp_path / "mask.png",
                    "--out", tmp_path / "plain.png", "--config", cfg)
    assert result.exit_code == 0, result.output
    assert tuple(read_image(tmp_path / "plain.png").data[0, 0]) == (100, 100, 100)

    result = invoke("render", "--image", tmp_path / "slide.png", "--mask", tmp_path / "mask.png",
                    "--out", tmp_path / "red.png", "--config", cfg, "--alpha", 1.0)
    assert result.exit_code == 0, result.output
    assert tuple(read_image(tmp_path / "red.png").data[0, 0]) == (255, 0, 0)

    # shifted = true in the file stands in for --shifted
    write_mask(tmp_path / "binary.png", LabelMask(np.array([[0, 1]])))
    result = invoke("compose", "--binary", tmp_path / "binary.png", "--out", tmp_path / "shifted.png",
                    "--config", cfg)
    assert result.exit_code == 0, result.output
    np.testing.assert_array_equal(read_mask(tmp_path / "shifted.png").labels, [[1, 3]])
