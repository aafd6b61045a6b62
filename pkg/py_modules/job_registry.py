"""Run ledger: one record per CLI invocation in `<out>/jobs.json`.

Writes are best-effort; a broken or missing ledger reads as empty.
"""
import json
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime
from typing import Any, Callable, Dict, List, Optional

from config import outputs_root

REG_PATH = os.path.join(outputs_root(), "jobs.json")
TERMINAL = frozenset({"completed", "canceled", "error"})


def set_registry_path(out_dir: str) -> None:
    global REG_PATH
    REG_PATH = os.path.join(out_dir, "jobs.json")


def _stamp() -> str:
    return datetime.now().isoformat(timespec="seconds")


@dataclass
class JobRecord:
    id: str
    command: str
    args: Dict[str, Any] = field(default_factory=dict)
    status: str = "pending"
    created_at: str = field(default_factory=_stamp)
    updated_at: str = field(default_factory=_stamp)
    ended_at: str = ""
    details: Dict[str, Any] = field(default_factory=lambda: {"stage": "start"})
    history: List[Dict[str, str]] = field(default_factory=list)

    def transition(self, status: str, details: Optional[Dict[str, Any]] = None) -> None:
        self.status = status
        self.details.update(details or {})
        self.updated_at = _stamp()
        self.history.append({"at": self.updated_at, "status": status})
        if status in TERMINAL:
            self.ended_at = self.updated_at


def _read() -> List[Dict[str, Any]]:
    try:
        with open(REG_PATH, "r", encoding="utf-8") as f:
            jobs = json.load(f)
        return jobs if isinstance(jobs, list) else []
    except (OSError, ValueError):
        return []


def _write(jobs: List[Dict[str, Any]]) -> None:
    try:
        os.makedirs(os.path.dirname(REG_PATH) or ".", exist_ok=True)
        tmp = REG_PATH + ".tmp"
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump(jobs, f, indent=1)
        os.replace(tmp, REG_PATH)
    except OSError:
        pass


def _edit(task_id: str, change: Callable[[JobRecord], None]) -> None:
    jobs = _read()
    for k, raw in enumerate(jobs):
        if raw.get("id") == task_id:
            try:
                record = JobRecord(**raw)
            except TypeError:
                return
            change(record)
            jobs[k] = asdict(record)
            _write(jobs)
            return


def create_job(task_id: str, command: str, args: Optional[Dict[str, Any]] = None) -> None:
    """Registers a pending run; an earlier record with the same id is replaced."""
    record = JobRecord(task_id, command, dict(args or {}))
    record.history.append({"at": record.created_at, "status": "pending"})
    jobs = [j for j in _read() if j.get("id") != task_id]
    jobs.append(asdict(record))
    _write(jobs)


def update_job(task_id: str, status: str, details: Optional[Dict[str, Any]] = None) -> None:
    _edit(task_id, lambda record: record.transition(status, details))


def get_jobs() -> List[Dict[str, Any]]:
    return _read()


def search_jobs(query: str = "", status: str = "") -> List[Dict[str, Any]]:
    """Case-insensitive match on id, command and arguments; status "any" or "" matches every run."""
    needle = (query or "").lower()
    wanted = (status or "").lower()

    def matches(job: Dict[str, Any]) -> bool:
        if wanted not in ("", "any") and str(job.get("status", "")).lower() != wanted:
            return False
        if not needle:
            return True
        text = f"{job.get('id', '')} {job.get('command', '')} {json.dumps(job.get('args', {}), sort_keys=True)}"
        return needle in text.lower()

    return [j for j in _read() if matches(j)]
