"""HTTP job service: submit edits, poll progress, fetch ranked results,
and drive multi-step sessions.

Jobs persist in a flat workspace layout:

    workspace/jobs/<id>/job.json           record + wire payload
    workspace/jobs/<id>/results/rank_001.png ...
    workspace/jobs/<id>/results/report.json
    workspace/sessions/<id>.json           session export + service state

All writes are atomic (tmp file + rename), so a killed process leaves
parseable records: on startup, jobs found queued/running are marked failed
and completed jobs keep serving their results.  Execution happens on a
fixed worker pool and never blocks request handling.
"""

from __future__ import annotations

import base64
import json
import os
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from contextlib import asynccontextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import FileResponse, JSONResponse, Response
from fastapi.staticfiles import StaticFiles

from . import editor
from .guidance import UnknownPromptError
from .imaging import (
    ImageFormatError,
    Raster8,
    decode_png,
    encode_png,
    from_diffusion_domain,
    to_diffusion_domain,
)

__all__ = ["create_app", "JobStore", "MAX_SIDE"]

#: largest accepted image side; this service targets desk-scale canvases
MAX_SIDE = 1024


class ApiError(Exception):
    def __init__(self, status: int, message: str, **extra):
        super().__init__(message)
        self.status = status
        self.body = {"error": message, **extra}


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_suffix(path.suffix + f".tmp{os.getpid()}")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _now() -> float:
    return time.time()


@dataclass
class JobRecord:
    job_id: str
    state: str  # queued | running | done | failed
    created: float
    payload: dict
    progress: dict = field(default_factory=lambda: {"completed": 0, "total": 0})
    error: str | None = None
    results: list = field(default_factory=list)
    idempotency_key: str | None = None
    session_id: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(doc: dict) -> "JobRecord":
        return JobRecord(**doc)


class JobStore:
    """Flat-directory persistence for jobs and sessions."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.jobs_dir = self.root / "jobs"
        self.sessions_dir = self.root / "sessions"
        self.jobs_dir.mkdir(parents=True, exist_ok=True)
        self.sessions_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    # -- jobs --

    def job_dir(self, job_id: str) -> Path:
        return self.jobs_dir / job_id

    def save_job(self, record: JobRecord) -> None:
        jdir = self.job_dir(record.job_id)
        jdir.mkdir(parents=True, exist_ok=True)
        _atomic_write(
            jdir / "job.json", json.dumps(record.to_dict(), sort_keys=True).encode()
        )

    def load_job(self, job_id: str) -> JobRecord | None:
        path = self.job_dir(job_id) / "job.json"
        if not path.exists():
            return None
        return JobRecord.from_dict(json.loads(path.read_text()))

    def list_jobs(self) -> list[JobRecord]:
        records = []
        for jdir in sorted(self.jobs_dir.iterdir()):
            if (jdir / "job.json").exists():
                records.append(JobRecord.from_dict(json.loads((jdir / "job.json").read_text())))
        return records

    def find_idempotent(self, key: str) -> JobRecord | None:
        for record in self.list_jobs():
            if record.idempotency_key == key:
                return record
        return None

    def result_path(self, job_id: str, rank: int) -> Path:
        return self.job_dir(job_id) / "results" / f"rank_{rank:03d}.png"

    def save_results(self, job_id: str, results: list[editor.EditResult], payload: dict) -> list:
        rdir = self.job_dir(job_id) / "results"
        rdir.mkdir(parents=True, exist_ok=True)
        listing = []
        for res in results:
            if res.error is not None:
                listing.append({"rank": None, "seed": res.seed, "error": res.error})
                continue
            png = encode_png(from_diffusion_domain(res.image))
            _atomic_write(rdir / f"rank_{res.rank:03d}.png", png)
            listing.append({"rank": res.rank, "seed": res.seed, "score": res.score})
        report = {"job_id": job_id, "config": _public_config(payload), "results": listing}
        _atomic_write(rdir / "report.json", json.dumps(report, sort_keys=True).encode())
        return listing

    def sweep_interrupted(self) -> None:
        """Mark queued/running jobs from a previous process as failed."""
        for record in self.list_jobs():
            if record.state in ("queued", "running"):
                record.state = "failed"
                record.error = "interrupted by service restart"
                self.save_job(record)

    # -- sessions --

    def session_path(self, session_id: str) -> Path:
        return self.sessions_dir / f"{session_id}.json"

    def save_session(self, doc: dict) -> None:
        _atomic_write(
            self.session_path(doc["id"]),
            json.dumps(doc, sort_keys=True, separators=(",", ":")).encode(),
        )

    def load_session(self, session_id: str) -> dict | None:
        path = self.session_path(session_id)
        if not path.exists():
            return None
        return json.loads(path.read_text())


def _public_config(payload: dict) -> dict:
    """Payload without bulky base64 fields, for reports and status bodies."""
    return {
        k: v
        for k, v in payload.items()
        if k not in ("image", "mask", "scribble_image", "scribble_mask")
    }


def _b64_png(data: str, what: str) -> Raster8:
    try:
        raw = base64.b64decode(data, validate=True)
    except Exception as exc:
        raise ApiError(400, f"{what}: invalid base64: {exc}") from exc
    try:
        return decode_png(raw)
    except ImageFormatError as exc:
        raise ApiError(400, f"{what}: {exc}") from exc


def _check_side(raster: Raster8, what: str) -> None:
    if raster.height > MAX_SIDE or raster.width > MAX_SIDE:
        raise ApiError(422, f"{what} is {raster.width}x{raster.height}; max side is {MAX_SIDE}")


def create_app(
    engine: editor.EditEngine,
    workspace: Path,
    workers: int = 2,
    ui_dir: Path | None = None,
) -> FastAPI:
    store = JobStore(Path(workspace))
    store.sweep_interrupted()
    pool = ThreadPoolExecutor(max_workers=max(1, workers))

    @asynccontextmanager
    async def lifespan(_app: FastAPI):
        yield
        pool.shutdown(wait=False, cancel_futures=True)

    app = FastAPI(title="blendiff", docs_url=None, redoc_url=None, lifespan=lifespan)
    session_locks: dict[str, threading.Lock] = {}
    locks_guard = threading.Lock()

    def session_lock(session_id: str) -> threading.Lock:
        with locks_guard:
            return session_locks.setdefault(session_id, threading.Lock())

    @app.exception_handler(ApiError)
    async def _api_error(_request, exc: ApiError):
        return JSONResponse(status_code=exc.status, content=exc.body)

    def _run_job(job_id: str, job: editor.EditJob) -> None:
        record = store.load_job(job_id)
        record.state = "running"
        store.save_job(record)

        def on_progress(done: int, total: int) -> None:
            record.progress = {"completed": done, "total": total}
            store.save_job(record)

        try:
            results = editor.run_job(job, engine, on_progress)
            record.results = store.save_results(job_id, results, record.payload)
            record.state = "done"
        except Exception as exc:
            record.state = "failed"
            record.error = f"{type(exc).__name__}: {exc}"
        store.save_job(record)

    def _validate_prompts(payload: dict) -> None:
        if engine.model is None:
            return
        for key in ("prompt", "prompt_left", "prompt_right"):
            prompt = payload.get(key) or ""
            if prompt:
                try:
                    engine.model.embed_text(prompt)
                except UnknownPromptError as exc:
                    raise ApiError(
                        422,
                        f"{key}: unknown prompt {prompt!r}",
                        known_prompts=exc.known,
                    ) from exc

    def _submit(payload: dict, source: np.ndarray | None, session_id: str | None) -> JobRecord:
        key = payload.get("idempotency_key")
        if key:
            existing = store.find_idempotent(key)
            if existing is not None:
                return existing
        _validate_prompts(payload)
        try:
            job = editor.job_from_wire(payload, source=source)
            job.validate(engine.schedule)
        except ApiError:
            raise
        except ImageFormatError as exc:
            raise ApiError(400, str(exc)) from exc
        except (ValueError, KeyError) as exc:
            raise ApiError(422, str(exc)) from exc
        src = np.asarray(job.request.source)
        if src.shape[0] > MAX_SIDE or src.shape[1] > MAX_SIDE:
            raise ApiError(422, f"image is {src.shape[1]}x{src.shape[0]}; max side is {MAX_SIDE}")
        job_id = uuid.uuid4().hex[:12]
        record = JobRecord(
            job_id=job_id,
            state="queued",
            created=_now(),
            payload=payload,
            progress={"completed": 0, "total": payload.get("num_samples", 0)},
            idempotency_key=key,
            session_id=session_id,
        )
        store.save_job(record)
        pool.submit(_run_job, job_id, job)
        return record

    async def _json_body(request: Request) -> dict:
        try:
            doc = await request.json()
        except Exception as exc:
            raise ApiError(400, f"request body is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ApiError(400, "request body must be a JSON object")
        return doc

    # -- endpoints --

    @app.get("/health")
    async def health():
        return {"status": "ok", "jobs_dir": str(store.jobs_dir)}

    @app.get("/api/lexicon")
    async def lexicon():
        prompts = engine.model.prompts() if engine.model is not None else []
        return {"prompts": prompts}

    @app.post("/api/edits", status_code=202)
    async def submit_edit(request: Request):
        payload = await _json_body(request)
        if "image" not in payload:
            raise ApiError(400, "missing required field 'image'")
        record = _submit(payload, source=None, session_id=None)
        return {"job_id": record.job_id, "state": record.state}

    @app.get("/api/edits/{job_id}")
    async def job_status(job_id: str):
        record = store.load_job(job_id)
        if record is None:
            raise ApiError(404, f"no job {job_id!r}")
        doc = record.to_dict()
        doc["payload"] = _public_config(record.payload)
        return doc

    @app.get("/api/edits/{job_id}/results/{rank}.png")
    async def job_result(job_id: str, rank: int):
        record = store.load_job(job_id)
        if record is None:
            raise ApiError(404, f"no job {job_id!r}")
        path = store.result_path(job_id, rank)
        if record.state != "done" or not path.exists():
            raise ApiError(404, f"job {job_id!r} has no result with rank {rank}")
        return FileResponse(path, media_type="image/png")

    @app.get("/api/edits")
    async def list_jobs():
        return {
            "jobs": [
                {
                    "job_id": r.job_id,
                    "state": r.state,
                    "created": r.created,
                    "progress": r.progress,
                }
                for r in store.list_jobs()
            ]
        }

    # -- sessions --

    def _load_session_doc(session_id: str) -> dict:
        doc = store.load_session(session_id)
        if doc is None:
            raise ApiError(404, f"no session {session_id!r}")
        return doc

    def _session_view(doc: dict) -> dict:
        view = dict(doc["session"])
        view["canvas_png"] = _canvas_png(doc)
        view["pending"] = doc.get("pending")
        if view["pending"]:
            record = store.load_job(view["pending"]["job_id"])
            if record is not None:
                view["pending"] = {
                    "job_id": record.job_id,
                    "state": record.state,
                    "progress": record.progress,
                    "error": record.error,
                }
        view["id"] = doc["id"]
        return view

    def _canvas_png(doc: dict) -> str:
        export = doc["session"]
        for step in reversed(export["steps"]):
            if step.get("chosen_png"):
                return step["chosen_png"]
        return export["base_png"]

    @app.post("/api/sessions", status_code=201)
    async def create_session(request: Request):
        payload = await _json_body(request)
        if "image" not in payload:
            raise ApiError(400, "missing required field 'image'")
        raster = _b64_png(payload["image"], "image")
        if raster.channels == 4:
            raster = Raster8.from_array(raster.data[:, :, :3].copy())
        _check_side(raster, "image")
        session_id = uuid.uuid4().hex[:12]
        session = editor.session_new(session_id, raster)
        doc = {
            "id": session_id,
            "session": editor.session_export(session),
            "pending": None,
            "job_ids": [],
        }
        store.save_session(doc)
        return {"session_id": session_id}

    @app.get("/api/sessions/{session_id}")
    async def get_session(session_id: str):
        return _session_view(_load_session_doc(session_id))

    @app.post("/api/sessions/{session_id}/steps", status_code=202)
    async def add_step(session_id: str, request: Request):
        payload = await _json_body(request)
        if "image" in payload:
            raise ApiError(400, "session steps take their source from the canvas; omit 'image'")
        with session_lock(session_id):
            doc = _load_session_doc(session_id)
            if doc.get("pending"):
                raise ApiError(409, "session already has a step in flight")
            canvas = decode_png(base64.b64decode(_canvas_png(doc)))
            source = to_diffusion_domain(canvas)
            record = _submit(payload, source=source, session_id=session_id)
            doc["pending"] = {"job_id": record.job_id, "payload": payload}
            store.save_session(doc)
        return {"job_id": record.job_id, "session_id": session_id}

    @app.post("/api/sessions/{session_id}/choose")
    async def choose(session_id: str, request: Request):
        payload = await _json_body(request)
        rank = payload.get("rank")
        if not isinstance(rank, int) or rank < 1:
            raise ApiError(422, "'rank' must be a positive integer")
        with session_lock(session_id):
            doc = _load_session_doc(session_id)
            pending = doc.get("pending")
            if not pending:
                raise ApiError(409, "session has no step awaiting a choice")
            record = store.load_job(pending["job_id"])
            if record is None or record.state in ("queued", "running"):
                raise ApiError(409, "cannot choose from a job that has not finished")
            if record.state == "failed":
                raise ApiError(409, f"step job failed: {record.error}")
            path = store.result_path(record.job_id, rank)
            if not path.exists():
                ranks = [r["rank"] for r in record.results if r.get("rank")]
                raise ApiError(422, f"no result with rank {rank}; have {ranks}")
            chosen_png = path.read_bytes()
            session = editor.session_import(doc["session"])
            job = editor.job_from_wire(
                pending["payload"],
                source=to_diffusion_domain(
                    decode_png(base64.b64decode(_canvas_png(doc)))
                ),
            )
            session = editor.session_append_pending(session, job)
            export = editor.session_export(session)
            # attach the chosen output byte-for-byte from the job's result file
            export["steps"][-1]["chosen_rank"] = rank
            export["steps"][-1]["chosen_png"] = base64.b64encode(chosen_png).decode()
            export["steps"][-1]["job_id"] = record.job_id
            doc["session"] = export
            doc["job_ids"].append(record.job_id)
            doc["pending"] = None
            store.save_session(doc)
        return _session_view(doc)

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    else:

        @app.get("/")
        async def index():
            return Response(
                "<!doctype html><title>blendiff</title>"
                "<h1>blendiff service</h1><p>No UI bundle configured; "
                "the API lives under <code>/api</code>.</p>",
                media_type="text/html",
            )

    app.state.store = store
    app.state.engine = engine
    return app
