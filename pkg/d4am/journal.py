"""RunJournal: flight recorder for a harness execution.

Timestamped lines in `<out>/harness.log`, `[INCIDENT]` blocks for failed cells
(each record keeps the log tail at the moment of failure) and an atomically
written `progress.json` heartbeat.
"""

import json
import os
import sys
import threading
import traceback
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional


class RunJournal:
    """Thread-safe: worker threads report cell outcomes concurrently."""

    def __init__(
        self,
        log_path: Path,
        progress_path: Optional[Path] = None,
        snapshot_lines: int = 50,
    ):
        self.log_path = Path(log_path)
        self.progress_path = progress_path
        self.snapshot_lines = snapshot_lines
        self.incidents: list[dict] = []
        self._lock = threading.Lock()

    def _ts(self) -> str:
        return datetime.now(timezone.utc).strftime("%Y-%m-%d %H:%M:%S UTC")

    def log(self, msg: str, level: str = "INFO") -> None:
        line = f"[{self._ts()}] [{level}] {msg}\n"
        with self._lock:
            try:
                self.log_path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.log_path, "a", encoding="utf-8") as f:
                    f.write(line)
            except OSError:
                print(line, file=sys.stderr, end="")

    def incident(
        self,
        category: str,
        summary: str,
        detail: Optional[str] = None,
        exc: Optional[BaseException] = None,
        cell: Optional[str] = None,
        severity: str = "error",
    ) -> dict:
        if exc is not None and detail is None:
            detail = "".join(traceback.format_exception(type(exc), exc, exc.__traceback__))

        self.log(f"[INCIDENT] {category}: {summary}", level=severity.upper())
        if detail:
            for line in detail.strip().splitlines():
                self.log(f"  {line}", level=severity.upper())

        record = {"category": category, "summary": summary, "cell": cell, "severity": severity}
        with self._lock:
            record["log_tail"] = self.get_log_snapshot()
            self.incidents.append(record)
        return record

    def get_log_snapshot(self, lines: Optional[int] = None) -> str:
        lines = lines or self.snapshot_lines
        if not self.log_path.exists():
            return ""
        try:
            all_lines = self.log_path.read_text(encoding="utf-8", errors="replace").splitlines()
            return "\n".join(all_lines[-lines:])
        except OSError:
            return ""

    def write_progress(self, done: int, total: int, failed: int = 0, current: Optional[str] = None) -> None:
        if self.progress_path is None:
            return
        payload = {
            "pid": os.getpid(),
            "ts": datetime.now(timezone.utc).isoformat(),
            "cells_done": done,
            "cells_total": total,
            "cells_failed": failed,
            "last_cell": current,
        }
        with self._lock:
            try:
                self.progress_path.parent.mkdir(parents=True, exist_ok=True)
                tmp_path = self.progress_path.with_suffix(".tmp")
                tmp_path.write_text(json.dumps(payload), encoding="utf-8")
                os.replace(tmp_path, self.progress_path)
            except OSError:
                pass

    @property
    def has_incidents(self) -> bool:
        return bool(self.incidents)
