"""
Stage Logger - Track pipeline stages, training epochs and their outcomes.
"""
import json
import time
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Dict, Iterator, List, Optional

from rich import box
from rich.console import Console
from rich.table import Table


@dataclass
class StageRecord:
    """Record of a single pipeline stage (a command, an epoch, a CV fold...)."""
    stage: str
    timestamp: float
    params: Dict[str, Any]
    summary: Dict[str, Any] = field(default_factory=dict)
    success: bool = True
    elapsed: float = 0.0
    error: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        """Convert to dictionary."""
        return {
            "stage": self.stage,
            "timestamp": self.timestamp,
            "datetime": datetime.fromtimestamp(self.timestamp).isoformat(),
            "params": self.params,
            "summary": self.summary,
            "success": self.success,
            "elapsed": self.elapsed,
            "error": self.error,
        }


class StageLogger:
    """
    Logger for pipeline stages.

    Collects one StageRecord per logged stage, provides per-stage statistics
    and exports everything to JSON.
    """

    def __init__(self, console: Optional[Console] = None):
        self.records: List[StageRecord] = []
        self.session_start = time.time()
        self.console = console or Console(stderr=True)
        self.echo = False

    def log_stage(
        self,
        stage: str,
        params: Optional[Dict[str, Any]] = None,
        summary: Optional[Dict[str, Any]] = None,
        success: bool = True,
        elapsed: float = 0.0,
        error: Optional[str] = None,
    ) -> StageRecord:
        """
        Log a finished stage.

        Args:
            stage: Dotted stage name (e.g. "train-seg.epoch")
            params: Inputs that identify the stage
            summary: Outputs worth keeping (loss, lr, score...)
            success: Whether the stage completed
            elapsed: Wall time in seconds
            error: Error message if failed
        """
        record = StageRecord(
            stage=stage,
            timestamp=time.time(),
            params=dict(params or {}),
            summary=dict(summary or {}),
            success=success,
            elapsed=elapsed,
            error=error,
        )
        self.records.append(record)
        if self.echo:
            status = "[green]ok[/green]" if success else "[red]failed[/red]"
            details = ", ".join(f"{k}={_short(v)}" for k, v in record.summary.items())
            self.console.print(f"[dim]{stage}[/dim] {status} {details}")
        return record

    @contextmanager
    def stage(self, name: str, **params: Any) -> Iterator[Dict[str, Any]]:
        """
        Time a block and record it. The yielded dict becomes the record summary.

        Example:
            >>> with stage_logger.stage("postprocess", threshold=0.5) as summary:
            ...     summary["components"] = 3
        """
        summary: Dict[str, Any] = {}
        start = time.perf_counter()
        try:
            yield summary
        except Exception as exc:
            self.log_stage(name, params, summary, success=False,
                           elapsed=time.perf_counter() - start, error=str(exc))
            raise
        self.log_stage(name, params, summary, elapsed=time.perf_counter() - start)

    def log_config(self, text: str) -> None:
        """Record the effective configuration verbatim."""
        self.log_stage("config", summary={"text": text})
        if self.echo:
            self.console.print(text, markup=False, highlight=False)

    def get_statistics(self) -> Dict[str, Any]:
        """
        Get stage statistics.

        Returns:
            Dictionary with counts, failure rates and timings per stage
        """
        if not self.records:
            return {
                "total_stages": 0,
                "session_duration": time.time() - self.session_start,
                "stages": {},
            }

        counts = Counter(record.stage for record in self.records)
        failed = sum(1 for record in self.records if not record.success)

        per_stage = {}
        for name in counts:
            records = [r for r in self.records if r.stage == name]
            per_stage[name] = {
                "count": len(records),
                "failed": sum(1 for r in records if not r.success),
                "total_elapsed": sum(r.elapsed for r in records),
            }

        return {
            "total_stages": len(self.records),
            "failed_stages": failed,
            "session_duration": time.time() - self.session_start,
            "total_elapsed": sum(r.elapsed for r in self.records),
            "stages": per_stage,
        }

    def get_records(self, stage: str) -> List[StageRecord]:
        """All records logged under one stage name."""
        return [record for record in self.records if record.stage == stage]

    def print_statistics(self) -> None:
        """Print stage statistics as a rich table."""
        stats = self.get_statistics()
        table = Table(title="Stage Statistics", box=box.ROUNDED, header_style="bold cyan")
        table.add_column("Stage", style="yellow")
        table.add_column("Count", justify="right")
        table.add_column("Failed", justify="right")
        table.add_column("Time (s)", justify="right")
        for name, item in stats["stages"].items():
            table.add_row(name, str(item["count"]), str(item["failed"]),
                          f"{item['total_elapsed']:.2f}")
        self.console.print(table)

    def export_to_json(self, filepath: str) -> None:
        """
        Export all records to a JSON file.

        Args:
            filepath: Path to save the JSON file
        """
        data = {
            "session_start": datetime.fromtimestamp(self.session_start).isoformat(),
            "statistics": self.get_statistics(),
            "records": [record.to_dict() for record in self.records],
        }
        with open(filepath, "w", encoding="utf-8") as handle:
            json.dump(data, handle, indent=2, default=str)

    def clear(self) -> None:
        """Clear all records."""
        self.records = []
        self.session_start = time.time()


def _short(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.4g}"
    text = str(value)
    return text if len(text) <= 40 else text[:37] + "..."


# Global logger instance
stage_logger = StageLogger()


__all__ = [
    "StageRecord",
    "StageLogger",
    "stage_logger",
]
