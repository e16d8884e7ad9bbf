import json
from pathlib import Path

import pytest

from histotnet.stage_logger import StageLogger


def test_stage_context_records_summary_and_timing():
    logger = StageLogger()
    with logger.stage("postprocess", threshold=0.5) as summary:
        summary["components"] = 3
    (record,) = logger.get_records("postprocess")
    assert record.success
    assert record.params == {"threshold": 0.5}
    assert record.summary == {"components": 3}
    assert record.elapsed >= 0.0


def test_failed_stage_is_recorded_and_reraised():
    logger = StageLogger()
    with pytest.raises(RuntimeError):
        with logger.stage("train-seg.epoch", epoch=0):
            raise RuntimeError("diverged")
    stats = logger.get_statistics()
    assert stats["failed_stages"] == 1
    assert stats["stages"]["train-seg.epoch"] == {
        "count": 1,
        "failed": 1,
        "total_elapsed": pytest.approx(logger.records[0].elapsed),
    }
    assert logger.records[0].error == "diverged"


def test_empty_statistics():
    stats = StageLogger().get_statistics()
    assert stats["total_stages"] == 0
    assert stats["stages"] == {}


def test_export_to_json(tmp_path: Path):
    logger = StageLogger()
    logger.log_config("[train]\nepochs = 3\n")
    logger.log_stage("kfold.fold", {"fold": 0}, {"final_loss": 0.25})
    logger.export_to_json(str(tmp_path / "stages.json"))
    data = json.loads((tmp_path / "stages.json").read_text())
    assert [r["stage"] for r in data["records"]] == ["config", "kfold.fold"]
    assert data["statistics"]["total_stages"] == 2
    logger.clear()
    assert logger.records == []
