"""Per-run progress snapshots in `<out>/progress/<task_id>.json`.

Training loops write through `ProgressReporter`; the dashboard reads the
snapshots and requests cancellation with `set_canceled`.
"""
import json
import os
from typing import Dict, Optional

from config import outputs_root
from job_registry import get_jobs

BASE_DIR = os.path.join(outputs_root(), "progress")

# job-registry status -> (snapshot status, percent)
_FROM_JOB = {"completed": ("done", 100), "error": ("error", 100), "canceled": ("canceled", 100)}


def set_base_dir(out_dir: str) -> None:
    global BASE_DIR
    BASE_DIR = os.path.join(out_dir, "progress")


def _snapshot_path(task_id: str) -> str:
    safe = "".join(c for c in task_id if c.isalnum() or c in "-_") or "default"
    return os.path.join(BASE_DIR, f"{safe}.json")


def _store(task_id: str, snapshot: Dict) -> None:
    path = _snapshot_path(task_id)
    try:
        os.makedirs(BASE_DIR, exist_ok=True)
        with open(path + ".tmp", "w", encoding="utf-8") as f:
            json.dump(snapshot, f)
        os.replace(path + ".tmp", path)
    except OSError:
        pass


def _from_registry(task_id: str) -> Optional[Dict]:
    job = next((j for j in get_jobs() if j.get("id") == task_id), None)
    if job is None:
        return None
    status, percent = _FROM_JOB.get(str(job.get("status")), ("pending", 0))
    snapshot = {"task_id": task_id, "status": status, "percent": percent, "command": job.get("command")}
    details = job.get("details") or {}
    snapshot.update({k: details[k] for k in ("stage", "message") if details.get(k)})
    return snapshot


def get_progress(task_id: str) -> Dict:
    """Stored snapshot, else one inferred from the job registry, else status "unknown"."""
    try:
        with open(_snapshot_path(task_id), "r", encoding="utf-8") as f:
            return json.load(f)
    except (OSError, ValueError):
        return _from_registry(task_id) or {"task_id": task_id, "status": "unknown", "percent": 0}


def set_progress(task_id: str, status: str, percent: float, extra: Optional[Dict] = None) -> None:
    if not task_id:
        return
    snapshot = get_progress(task_id)
    if snapshot.get("canceled") and status == "running":
        status = "canceling"
    snapshot.update(task_id=task_id, status=status, percent=int(min(100, max(0, percent))))
    snapshot.update(extra or {})
    _store(task_id, snapshot)


def set_canceled(task_id: str, message: str = "") -> None:
    snapshot = get_progress(task_id)
    snapshot.update(status="canceling", canceled=True)
    snapshot.setdefault("percent", 0)
    if message:
        snapshot["message"] = message
    _store(task_id, snapshot)


def is_canceled(task_id: Optional[str]) -> bool:
    return bool(task_id) and bool(get_progress(task_id).get("canceled"))


def clear_progress(task_id: str) -> None:
    try:
        os.remove(_snapshot_path(task_id))
    except OSError:
        pass


class ProgressReporter:
    """Progress and cancel bridge for one training loop; a None task id makes it inert."""

    def __init__(self, task_id: Optional[str], stage: str, total: int):
        self.task_id = task_id
        self.stage = stage
        self.total = max(1, total)

    def _position(self, iteration: int) -> Dict:
        return {"stage": self.stage, "iteration": iteration, "total": self.total}

    def update(self, iteration: int, losses: Optional[Dict] = None, status: str = "running") -> None:
        extra = self._position(iteration)
        if losses:
            extra["losses"] = {k: round(float(v), 6) for k, v in losses.items()}
        set_progress(self.task_id, status, 100.0 * iteration / self.total, extra)

    def canceled(self) -> bool:
        return is_canceled(self.task_id)

    def finish(self, iteration: int, canceled: bool = False, message: str = "") -> None:
        extra = self._position(iteration)
        if message:
            extra["message"] = message
        if canceled:
            set_progress(self.task_id, "canceled", 100.0 * iteration / self.total, extra)
        else:
            set_progress(self.task_id, "done", 100, extra)
