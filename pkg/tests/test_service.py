import threading
import time

import pytest
from fastapi.testclient import TestClient

from alspot.data import generate_synthetic, spots_in_window
from alspot.harness import ScheduleConfig, StopConfig
from alspot.service import (STATUS_AWAITING, STATUS_DONE, STATUS_FAILED, STATUS_SELECTING,
                            STATUS_TRAINING, Session, create_app)
from conftest import fast_train_config, small_dataset_config
from test_harness import small_al_config

POLL = 0.01
DEADLINE = 30.0


@pytest.fixture
def dataset():
    return generate_synthetic(small_dataset_config())


def remote_config(**overrides):
    cfg = small_al_config(oracle="remote", **overrides)
    return cfg


def start_session(dataset, tmp_path=None, **overrides):
    session = Session("s1", remote_config(**overrides), dataset=dataset,
                      out_dir=tmp_path)
    client = TestClient(create_app({"s1": session}))
    session.start()
    return session, client


def wait_status(client, *statuses, deadline=DEADLINE):
    t0 = time.time()
    while time.time() - t0 < deadline:
        status = client.get("/sessions/s1/status").json()
        if status["status"] in statuses:
            return status
        time.sleep(POLL)
    pytest.fail(f"never reached {statuses}; last: {status}")


def label_from_ground_truth(client, dataset, task):
    video = next(v for v in dataset.videos if v.video_id == task["video_id"])
    start = task["clip_index"] * task["duration"]
    spots = spots_in_window(video.spots, start, start + task["duration"])
    return client.post(f"/sessions/s1/tasks/{task['task_id']}/labels",
                       json={"spots": [{"class_id": s.class_id, "time": s.time}
                                       for s in spots]})


def drive_to_completion(client, dataset, on_batch=None):
    batches = 0
    while True:
        status = wait_status(client, STATUS_AWAITING, STATUS_DONE, STATUS_FAILED)
        if status["status"] != STATUS_AWAITING:
            return batches, status
        tasks = client.get("/sessions/s1/tasks").json()["tasks"]
        if on_batch:
            on_batch(batches, tasks)
        for task in tasks:
            assert label_from_ground_truth(client, dataset, task).status_code == 200
        batches += 1


class TestSessionLifecycle:
    def test_unknown_session_404(self, dataset):
        session, client = start_session(dataset)
        try:
            assert client.get("/sessions/nope/status").status_code == 404
            assert client.get("/sessions/nope/tasks").status_code == 404
        finally:
            session.stop()

    def test_tasks_conflict_before_first_batch(self, dataset):
        session = Session("s1", remote_config(), dataset=dataset)
        client = TestClient(create_app({"s1": session}))
        # loop not started: no batch has ever been posted
        assert client.get("/sessions/s1/tasks").status_code == 409

    def test_pending_counts_and_completion(self, dataset):
        session, client = start_session(dataset)
        try:
            wait_status(client, STATUS_AWAITING)
            tasks = client.get("/sessions/s1/tasks").json()["tasks"]
            assert len(tasks) == 8  # 25% of the 32-clip universe
            r = label_from_ground_truth(client, dataset, tasks[0])
            assert r.json()["remaining"] == 7
            assert len(client.get("/sessions/s1/tasks").json()["tasks"]) == 7
            # finish the batch; the last ack reports zero remaining and the
            # session turns to training
            for task in tasks[1:-1]:
                label_from_ground_truth(client, dataset, task)
            final = label_from_ground_truth(client, dataset, tasks[-1])
            assert final.json()["remaining"] == 0
            status = client.get("/sessions/s1/status").json()
            assert status["status"] in (STATUS_TRAINING, STATUS_SELECTING,
                                        STATUS_AWAITING, STATUS_DONE)
            # completed batch reads back as an empty task list, not an error
            if status["status"] == STATUS_TRAINING:
                assert client.get("/sessions/s1/tasks").json()["tasks"] == []
        finally:
            session.stop()

    def test_full_run_matches_simulated_curve(self, dataset, tmp_path):
        from alspot.harness import run_active_learning
        sim_dir = tmp_path / "sim"
        run_active_learning(small_al_config(), dataset=dataset, out_dir=sim_dir)

        session, client = start_session(dataset, tmp_path=tmp_path / "remote")
        try:
            batches, status = drive_to_completion(client, dataset)
            assert status["status"] == STATUS_DONE
            assert batches == 4
            session.join(10)
        finally:
            session.stop()
        assert ((tmp_path / "remote" / "curve.csv").read_bytes()
                == (sim_dir / "curve.csv").read_bytes())


class TestSubmissionValidation:
    def _awaiting_task(self, client):
        wait_status(client, STATUS_AWAITING)
        return client.get("/sessions/s1/tasks").json()["tasks"][0]

    def test_boundary_time_rejected(self, dataset):
        session, client = start_session(dataset)
        try:
            task = self._awaiting_task(client)
            r = client.post(f"/sessions/s1/tasks/{task['task_id']}/labels",
                            json={"spots": [{"class_id": 0, "time": task["duration"]}]})
            assert r.status_code == 400
            # nothing persisted: the task is still pending
            pending = client.get("/sessions/s1/tasks").json()["tasks"]
            assert any(t["task_id"] == task["task_id"] for t in pending)
        finally:
            session.stop()

    def test_bad_class_rejected(self, dataset):
        session, client = start_session(dataset)
        try:
            task = self._awaiting_task(client)
            r = client.post(f"/sessions/s1/tasks/{task['task_id']}/labels",
                            json={"spots": [{"class_id": 9, "time": 0.5}]})
            assert r.status_code == 400
        finally:
            session.stop()

    def test_empty_spot_list_is_valid(self, dataset):
        session, client = start_session(dataset)
        try:
            task = self._awaiting_task(client)
            r = client.post(f"/sessions/s1/tasks/{task['task_id']}/labels",
                            json={"spots": []})
            assert r.status_code == 200
        finally:
            session.stop()

    def test_resubmission_conflicts_first_write_wins(self, dataset):
        session, client = start_session(dataset)
        try:
            task = self._awaiting_task(client)
            first = client.post(f"/sessions/s1/tasks/{task['task_id']}/labels",
                                json={"spots": [{"class_id": 0, "time": 1.0}]})
            assert first.status_code == 200
            second = client.post(f"/sessions/s1/tasks/{task['task_id']}/labels",
                                 json={"spots": [{"class_id": 1, "time": 2.0}]})
            assert second.status_code == 409
            assert session.tasks[task["task_id"]].spots[0].class_id == 0
        finally:
            session.stop()

    def test_unknown_task_404(self, dataset):
        session, client = start_session(dataset)
        try:
            wait_status(client, STATUS_AWAITING)
            r = client.post("/sessions/s1/tasks/missing/labels", json={"spots": []})
            assert r.status_code == 404
        finally:
            session.stop()


class TestConcurrency:
    def test_concurrent_distinct_tasks_both_persist(self, dataset):
        session, client = start_session(dataset)
        try:
            wait_status(client, STATUS_AWAITING)
            tasks = client.get("/sessions/s1/tasks").json()["tasks"]
            results = []
            def submit(task):
                results.append(client.post(
                    f"/sessions/s1/tasks/{task['task_id']}/labels",
                    json={"spots": []}).status_code)
            threads = [threading.Thread(target=submit, args=(t,)) for t in tasks[:2]]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
            assert results == [200, 200]
        finally:
            session.stop()

    def test_concurrent_same_task_single_write(self, dataset):
        session, client = start_session(dataset)
        try:
            wait_status(client, STATUS_AWAITING)
            task = client.get("/sessions/s1/tasks").json()["tasks"][0]
            codes = []
            def submit(k):
                codes.append(client.post(
                    f"/sessions/s1/tasks/{task['task_id']}/labels",
                    json={"spots": [{"class_id": k, "time": 1.0}]}).status_code)
            threads = [threading.Thread(target=submit, args=(k,)) for k in (0, 1)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
            assert sorted(codes) == [200, 409]
            assert len(session.tasks[task["task_id"]].spots) == 1
        finally:
            session.stop()


class TestPersistenceAndResume:
    def test_state_file_tracks_transitions(self, dataset, tmp_path):
        import json
        out = tmp_path / "sess"
        session, client = start_session(dataset, tmp_path=out)
        try:
            wait_status(client, STATUS_AWAITING)
            state = json.loads((out / "state.json").read_text())
            assert state["status"] == STATUS_AWAITING
            assert len(state["tasks"]) == 8
        finally:
            session.stop()

    def test_resume_replays_journal_to_same_batch(self, dataset, tmp_path):
        out = tmp_path / "sess"
        session, client = start_session(dataset, tmp_path=out)
        first_batch = None
        try:
            wait_status(client, STATUS_AWAITING)
            first_batch = [t["task_id"] for t in
                           client.get("/sessions/s1/tasks").json()["tasks"]]
            for tid in first_batch:
                task = next(t for t in client.get("/sessions/s1/tasks").json()["tasks"]
                            if t["task_id"] == tid)
                label_from_ground_truth(client, dataset, task)
            wait_status(client, STATUS_AWAITING)  # second batch published
            second_batch = sorted(t["task_id"] for t in
                                  client.get("/sessions/s1/tasks").json()["tasks"])
        finally:
            session.stop()  # simulated crash while awaiting batch 2

        # a fresh service on the same directory replays batch 1 from the
        # journal and ends up awaiting the same second batch
        session2, client2 = start_session(dataset, tmp_path=out)
        try:
            wait_status(client2, STATUS_AWAITING)
            resumed = sorted(t["task_id"] for t in
                             client2.get("/sessions/s1/tasks").json()["tasks"])
            assert resumed == second_batch
        finally:
            session2.stop()


class TestTaskPayload:
    def test_task_carries_preview_and_catalog(self, dataset):
        session, client = start_session(dataset)
        try:
            wait_status(client, STATUS_AWAITING)
            task = client.get("/sessions/s1/tasks").json()["tasks"][0]
            assert task["classes"] == {"0": "class_0", "1": "class_1"}
            assert len(task["preview"]) == 20  # one bucket per frame
            assert all(0 <= v <= 7 for v in task["preview"])
            assert task["duration"] == pytest.approx(10.0)
            assert all(0 <= s["time"] < task["duration"] for s in task["suggestions"])
        finally:
            session.stop()

    def test_oracle_timeout_fails_session(self, dataset):
        session, client = start_session(dataset, oracle_timeout=0.2)
        try:
            status = wait_status(client, STATUS_FAILED)
            assert "timed out" in status["error"]
        finally:
            session.stop()
