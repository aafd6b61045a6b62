import json

import job_registry
import progress


class TestProgress:
    def test_missing_task_is_unknown(self, out_dir):
        assert progress.get_progress("nope") == {"task_id": "nope", "status": "unknown", "percent": 0}

    def test_blank_task_is_ignored(self, out_dir):
        progress.set_progress("", "running", 50)
        assert not (out_dir / "progress").exists()
        assert not progress.is_canceled("")

    def test_percent_is_clamped(self, out_dir):
        progress.set_progress("t1", "running", 150.0, {"stage": "train-gen"})
        data = progress.get_progress("t1")
        assert data["percent"] == 100 and data["stage"] == "train-gen"

    def test_cancel_survives_running_updates(self, out_dir):
        progress.set_progress("t2", "running", 10)
        progress.set_canceled("t2", "stop please")
        progress.set_progress("t2", "running", 20)
        data = progress.get_progress("t2")
        assert progress.is_canceled("t2")
        assert data["status"] == "canceling" and data["message"] == "stop please"

    def test_ids_are_sanitized(self, out_dir):
        progress.set_progress("../evil id", "running", 1)
        assert (out_dir / "progress" / "evilid.json").exists()

    def test_clear(self, out_dir):
        progress.set_progress("t3", "running", 1)
        progress.clear_progress("t3")
        assert progress.get_progress("t3")["status"] == "unknown"

    def test_inferred_from_job_registry(self, out_dir):
        job_registry.create_job("j1", "make-data")
        job_registry.update_job("j1", "completed", {"message": "ok"})
        data = progress.get_progress("j1")
        assert (data["status"], data["percent"], data["command"]) == ("done", 100, "make-data")


class TestProgressReporter:
    def test_update_and_finish(self, out_dir):
        reporter = progress.ProgressReporter("r1", "train-afa", 4)
        reporter.update(1, {"rec_l2": 0.1234567891})
        data = progress.get_progress("r1")
        assert data["percent"] == 25 and data["losses"] == {"rec_l2": 0.123457}
        assert data["iteration"] == 1 and data["total"] == 4
        reporter.finish(4)
        assert progress.get_progress("r1")["status"] == "done"

    def test_canceled_finish_keeps_partial_percent(self, out_dir):
        reporter = progress.ProgressReporter("r2", "train-encoder", 10)
        progress.set_canceled("r2")
        assert reporter.canceled()
        reporter.finish(3, canceled=True)
        data = progress.get_progress("r2")
        assert data["status"] == "canceled" and data["percent"] == 30

    def test_without_task_id(self, out_dir):
        reporter = progress.ProgressReporter(None, "train-gen", 0)
        reporter.update(1)
        reporter.finish(1)
        assert not reporter.canceled()
        assert not (out_dir / "progress").exists()


class TestJobRegistry:
    def test_lifecycle(self, out_dir):
        job_registry.create_job("a", "train-gen", {"seed": 1})
        job_registry.update_job("a", "running")
        job_registry.update_job("a", "completed", {"iterations": 2})
        (job,) = job_registry.get_jobs()
        assert job["status"] == "completed" and job["ended_at"]
        assert job["details"] == {"stage": "start", "iterations": 2}
        assert [h["status"] for h in job["history"]] == ["pending", "running", "completed"]
        assert json.loads((out_dir / "jobs.json").read_text())[0]["id"] == "a"

    def test_recreate_replaces(self, out_dir):
        job_registry.create_job("a", "train-gen")
        job_registry.create_job("a", "train-encoder")
        assert [j["command"] for j in job_registry.get_jobs()] == ["train-encoder"]

    def test_search(self, out_dir):
        job_registry.create_job("a", "train-gen", {"config": "small.json"})
        job_registry.create_job("b", "eval")
        job_registry.update_job("b", "error")
        assert [j["id"] for j in job_registry.search_jobs("SMALL")] == ["a"]
        assert [j["id"] for j in job_registry.search_jobs(status="error")] == ["b"]
        assert len(job_registry.search_jobs(status="any")) == 2

    def test_unreadable_registry(self, out_dir):
        (out_dir / "jobs.json").write_text("{broken")
        assert job_registry.get_jobs() == []
