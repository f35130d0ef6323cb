"""
middleware/audit.py
===================
Structured audit records for every CLI run.

Each run of main.py produces one JSON file under the log directory:
    logs/run_<RUNID>_<YYYY-MM-DD>.json
The record is the verifiable execution evidence of the run: which
subcommand ran with which arguments, what it wrote, the headline numbers
and any errors. Records carry a run id and a wall-clock timestamp and are
not byte-reproducible.
"""

from __future__ import annotations

import json
import os
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Literal

import numpy as np

RunStatus = Literal["OK", "ERROR", "FAILED_CHECKS"]


@dataclass
class AuditRecord:
    subcommand: str
    arguments: dict = field(default_factory=dict)
    run_id: str = field(default_factory=lambda: str(uuid.uuid4())[:8].upper())
    timestamp: str = field(
        default_factory=lambda: datetime.now(timezone.utc).isoformat().replace("+00:00", "Z")
    )
    status: RunStatus | None = None
    outputs: list[str] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    errors: list[str] = field(default_factory=list)


def _jsonable(value: Any) -> Any:
    """numpy scalars/arrays and paths are not JSON-native."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, os.PathLike):
        return os.fspath(value)
    return value


def build_audit_log(record: AuditRecord) -> dict:
    return {
        "run_id":     record.run_id,
        "timestamp":  record.timestamp,
        "subcommand": record.subcommand,
        "status":     record.status,
        "arguments":  _jsonable(record.arguments),
        "outputs":    _jsonable(record.outputs),
        "summary":    _jsonable(record.summary),
        "errors":     record.errors,
    }


def write_audit_log(record: AuditRecord, log_dir: str = "logs") -> str:
    """Write the record as pretty JSON and return the file path."""
    os.makedirs(log_dir, exist_ok=True)
    log_path = os.path.join(log_dir, f"run_{record.run_id}_{record.timestamp[:10]}.json")
    with open(log_path, "w") as f:
        json.dump(build_audit_log(record), f, indent=2)
    return log_path
