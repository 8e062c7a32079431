"""HTTP annotation service: a human oracle for a running AL session.

The AL loop runs in a worker thread.  When it reaches the annotate step the
remote oracle publishes the batch as tasks, parks the loop, and waits until
every task has labels; submissions arrive over the API.  The session walks
training -> selecting -> awaiting_labels -> training ... and every
transition and submission is persisted, so a restarted service replays the
label journal and ends up awaiting the same batch.

Endpoints (JSON bodies):
    GET  /sessions
    GET  /sessions/{id}/status
    GET  /sessions/{id}/tasks
    POST /sessions/{id}/tasks/{task_id}/labels   {"spots": [{"class_id", "time"}]}
    GET  /sessions/{id}/curve
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import Body, FastAPI, HTTPException

from .data import Dataset, Spot
from .harness import ALConfig, AnnotationRequest, CurveRow, run_active_learning

STATUS_TRAINING = "training"
STATUS_SELECTING = "selecting"
STATUS_AWAITING = "awaiting_labels"
STATUS_DONE = "done"
STATUS_FAILED = "failed"


class OracleTimeout(RuntimeError):
    """The configured wait for human labels ran out."""


class SessionAborted(RuntimeError):
    pass


@dataclass
class Task:
    task_id: str
    step: int
    video_id: str
    clip_index: int
    duration: float
    class_catalog: dict[int, str]
    energy_sketch: list[int]
    suggestions: list[dict]
    spots: list[Spot] | None = None  # submitted labels

    @property
    def submitted(self) -> bool:
        return self.spots is not None

    def to_api(self) -> dict:
        return {
            "task_id": self.task_id,
            "video_id": self.video_id,
            "clip_index": self.clip_index,
            "duration": self.duration,
            "classes": {str(k): v for k, v in self.class_catalog.items()},
            "preview": self.energy_sketch,
            "suggestions": self.suggestions,
            "status": "submitted" if self.submitted else "pending",
        }


def _task_id(step: int, video_id: str, clip_index: int) -> str:
    return f"{step:03d}-{video_id}-{clip_index:04d}"


class Session:
    """One AL run plus the bookkeeping the API needs to drive it."""

    def __init__(self, session_id: str, config: ALConfig, dataset: Dataset | None = None,
                 out_dir: str | Path | None = None):
        self.session_id = session_id
        self.config = config
        self.dataset = dataset
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.lock = threading.Lock()
        self.ready = threading.Condition(self.lock)
        self.status = STATUS_TRAINING
        self.step = 0
        self.tasks: dict[str, Task] = {}
        self.batch_seen = False
        self.curve: list[CurveRow] = []
        self.labeled_clips = 0
        self.error: str | None = None
        self.abort = False
        self._journal: dict[str, list[Spot]] = {}
        self._thread: threading.Thread | None = None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            self._load_journal()

    # -- persistence --------------------------------------------------------

    def _journal_path(self) -> Path:
        return self.out_dir / "labels.jsonl"

    def _load_journal(self) -> None:
        path = self._journal_path()
        if not path.exists():
            return
        with path.open() as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                self._journal[rec["task_id"]] = [
                    Spot(int(s["class_id"]), float(s["time"])) for s in rec["spots"]]

    def _append_journal(self, task_id: str, spots: list[Spot]) -> None:
        if self.out_dir is None:
            return
        with self._journal_path().open("a") as fh:
            fh.write(json.dumps({"task_id": task_id, "spots": [
                {"class_id": s.class_id, "time": s.time} for s in spots]}) + "\n")

    def _persist_state(self) -> None:
        if self.out_dir is None:
            return
        state = {
            "session_id": self.session_id,
            "status": self.status,
            "step": self.step,
            "labeled_clips": self.labeled_clips,
            "tasks": {tid: {"submitted": t.submitted} for tid, t in self.tasks.items()},
            "curve": [{"step": r.step, "labeled_ratio": r.labeled_ratio,
                       "labeled_clips": r.labeled_clips,
                       "loose_avg_map": r.loose_avg_map,
                       "tight_avg_map": r.tight_avg_map} for r in self.curve],
            "error": self.error,
        }
        tmp = self.out_dir / "state.json.tmp"
        with tmp.open("w") as fh:
            json.dump(state, fh, indent=2)
            fh.write("\n")
        tmp.replace(self.out_dir / "state.json")

    # -- loop-side hooks ----------------------------------------------------

    def on_phase(self, phase: str, payload: dict) -> None:
        with self.lock:
            if phase in (STATUS_TRAINING, STATUS_SELECTING):
                self.status = phase
                self.step = payload.get("step", self.step)
                if phase == STATUS_TRAINING:
                    self.labeled_clips = payload.get("labeled_clips", self.labeled_clips)
            elif phase == "curve_point":
                self.curve.append(payload["row"])
            elif phase == "done":
                self.status = STATUS_DONE
            elif phase == "failed":
                self.status = STATUS_FAILED
                self.error = payload.get("error")
            self._persist_state()

    def publish_batch(self, requests: list[AnnotationRequest]) -> list[str]:
        """Called by the oracle: expose the batch and switch to awaiting."""
        with self.lock:
            ids = []
            replayed = []
            self.tasks = {}
            for req in requests:
                tid = _task_id(req.step, req.video_id, req.clip_index)
                task = Task(
                    task_id=tid, step=req.step, video_id=req.video_id,
                    clip_index=req.clip_index, duration=req.duration,
                    class_catalog=req.class_catalog, energy_sketch=req.energy_sketch,
                    suggestions=[{"class_id": s.class_id, "time": s.time,
                                  "confidence": s.confidence} for s in req.suggestions])
                if tid in self._journal:
                    task.spots = self._journal[tid]
                    replayed.append(tid)
                self.tasks[tid] = task
                ids.append(tid)
            self.batch_seen = True
            self.step = requests[0].step if requests else self.step
            if all(t.submitted for t in self.tasks.values()):
                self.status = STATUS_TRAINING  # fully replayed batch, no waiting
            else:
                self.status = STATUS_AWAITING
            self._persist_state()
            self.ready.notify_all()
            return ids

    def wait_for_batch(self, ids: list[str], timeout: float | None) -> list[list[Spot]]:
        """Block until every task in the batch has labels; None waits forever."""
        with self.lock:
            def complete() -> bool:
                return self.abort or all(self.tasks[t].submitted for t in ids)
            if not self.ready.wait_for(complete, timeout=timeout):
                self.status = STATUS_FAILED
                self.error = "timed out waiting for labels"
                self._persist_state()
                raise OracleTimeout(self.error)
            if self.abort:
                raise SessionAborted("session aborted")
            return [list(self.tasks[t].spots) for t in ids]

    # -- API-side operations ------------------------------------------------

    def pending_tasks(self) -> list[Task]:
        with self.lock:
            if not self.batch_seen:
                raise HTTPException(status_code=409,
                                    detail=f"session is {self.status}, no batch posted yet")
            return [t for t in self.tasks.values() if not t.submitted]

    def submit(self, task_id: str, spots_payload: list[dict]) -> int:
        with self.lock:
            task = self.tasks.get(task_id)
            if task is None:
                raise HTTPException(status_code=404, detail=f"unknown task {task_id!r}")
            if task.submitted:
                raise HTTPException(status_code=409,
                                    detail="task already submitted; labels are immutable")
            spots = []
            for i, rec in enumerate(spots_payload):
                try:
                    k = int(rec["class_id"])
                    t = float(rec["time"])
                except (KeyError, TypeError, ValueError):
                    raise HTTPException(status_code=400,
                                        detail=f"spot {i}: need numeric class_id and time")
                if not (0 <= k < len(task.class_catalog)):
                    raise HTTPException(status_code=400, detail=f"spot {i}: class {k} out of range")
                if not (0.0 <= t < task.duration):
                    raise HTTPException(
                        status_code=400,
                        detail=f"spot {i}: time {t} outside [0, {task.duration})")
                spots.append(Spot(k, t))
            spots.sort(key=lambda s: (s.time, s.class_id))
            task.spots = spots
            self._append_journal(task_id, spots)
            remaining = sum(1 for t in self.tasks.values() if not t.submitted)
            if remaining == 0:
                self.status = STATUS_TRAINING  # loop resumes as soon as it wakes
            self._persist_state()
            self.ready.notify_all()
            return remaining

    def status_payload(self) -> dict:
        with self.lock:
            return {
                "session_id": self.session_id,
                "status": self.status,
                "step": self.step,
                "labeled_clips": self.labeled_clips,
                "remaining_tasks": sum(1 for t in self.tasks.values() if not t.submitted),
                "curve_points": len(self.curve),
                "error": self.error,
            }

    def curve_payload(self) -> dict:
        with self.lock:
            return {"points": [{
                "step": r.step,
                "labeled_ratio": r.labeled_ratio,
                "labeled_clips": r.labeled_clips,
                "loose_avg_map": r.loose_avg_map,
                "tight_avg_map": r.tight_avg_map,
            } for r in self.curve]}

    # -- lifecycle ----------------------------------------------------------

    def start(self) -> None:
        oracle = RemoteOracle(self, timeout=self.config.oracle_timeout)
        def runner():
            try:
                run_active_learning(self.config, dataset=self.dataset, oracle=oracle,
                                    on_phase=self.on_phase, out_dir=self.out_dir)
            except Exception:
                pass  # status/error already recorded via on_phase or wait_for_batch
        self._thread = threading.Thread(target=runner, daemon=True,
                                        name=f"al-{self.session_id}")
        self._thread.start()

    def stop(self) -> None:
        with self.lock:
            self.abort = True
            self.ready.notify_all()
        if self._thread is not None:
            self._thread.join(timeout=10)

    def join(self, timeout: float | None = None) -> None:
        if self._thread is not None:
            self._thread.join(timeout=timeout)


class RemoteOracle:
    """Oracle adapter that parks the AL loop on the session until labels land."""

    def __init__(self, session: Session, timeout: float | None = None):
        self.session = session
        self.timeout = timeout

    def annotate(self, requests: list[AnnotationRequest]) -> list[list[Spot]]:
        ids = self.session.publish_batch(requests)
        return self.session.wait_for_batch(ids, self.timeout)


def create_app(sessions: dict[str, Session]) -> FastAPI:
    app = FastAPI(title="alspot annotation service")

    def _session(session_id: str) -> Session:
        s = sessions.get(session_id)
        if s is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
        return s

    @app.get("/sessions")
    def list_sessions():
        return {"sessions": [s.status_payload() for s in sessions.values()]}

    @app.get("/sessions/{session_id}/status")
    def session_status(session_id: str):
        return _session(session_id).status_payload()

    @app.get("/sessions/{session_id}/tasks")
    def session_tasks(session_id: str):
        s = _session(session_id)
        pending = s.pending_tasks()
        return {"status": s.status, "tasks": [t.to_api() for t in pending]}

    @app.post("/sessions/{session_id}/tasks/{task_id}/labels")
    def submit_labels(session_id: str, task_id: str, payload: dict = Body(...)):
        s = _session(session_id)
        spots = payload.get("spots")
        if not isinstance(spots, list):
            raise HTTPException(status_code=400, detail='body must be {"spots": [...]}')
        remaining = s.submit(task_id, spots)
        return {"ok": True, "task_id": task_id, "remaining": remaining}

    @app.get("/sessions/{session_id}/curve")
    def session_curve(session_id: str):
        return _session(session_id).curve_payload()

    return app
