"""HTTP service exposing sessions, canvas commands, and job status.

One logical writer per session: every mutation runs under that session's
lock, so concurrent requests are applied in some total order. Pipeline work
runs as background jobs the client polls; enrichment jobs re-check the block
generation when they land, which is how a superseded edit gets discarded.
"""

from __future__ import annotations

import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel

from . import canvas, pipeline, store
from .errors import (
    ConfigError,
    EmptyBlockText,
    EmptyTopic,
    EngineError,
    InvalidConfig,
    ProviderError,
    TraceParseError,
    UnknownBlock,
    UnknownJob,
    UnknownMap,
    UnknownSession,
)
from .model import EngineConfig, MapMode, Session, TopicBrief, check_invariants
from .providers import Engine

_NOT_FOUND = (UnknownSession, UnknownMap, UnknownBlock, UnknownJob)
_BAD_REQUEST = (EmptyTopic, InvalidConfig, EmptyBlockText, TraceParseError, ConfigError)

TERMINAL_JOB_STATES = frozenset({"done", "failed", "superseded"})


def _status_for(error: EngineError) -> int:
    if isinstance(error, _NOT_FOUND):
        return 404
    if isinstance(error, _BAD_REQUEST):
        return 400
    if isinstance(error, ProviderError):
        return 502
    return 409


class JobRegistry:
    """Thread-safe job table; terminal states are absorbing."""

    def __init__(self):
        self._jobs: dict[str, dict] = {}
        self._lock = threading.Lock()

    def create(self, kind: str, session_id: str, state: str = "running", command_id: str | None = None) -> dict:
        job = {
            "job_id": uuid.uuid4().hex[:12],
            "kind": kind,
            "state": state,
            "session_id": session_id,
            "command_id": command_id,
            "result": {},
            "error": None,
        }
        with self._lock:
            self._jobs[job["job_id"]] = job
        return dict(job)

    def _update(self, job_id: str, **fields) -> None:
        with self._lock:
            job = self._jobs.get(job_id)
            if job is None or job["state"] in TERMINAL_JOB_STATES:
                return
            job.update(fields)

    def finish(self, job_id: str, command_id: str | None = None, **result) -> None:
        self._update(job_id, state="done", command_id=command_id, result=result)

    def supersede(self, job_id: str, **result) -> None:
        self._update(job_id, state="superseded", result=result)

    def fail(self, job_id: str, error: EngineError) -> None:
        self._update(job_id, state="failed", error={"code": error.code, "message": error.message})

    def get(self, job_id: str) -> dict:
        with self._lock:
            job = self._jobs.get(job_id)
            if job is None:
                raise UnknownJob(job_id)
            return dict(job)


@dataclass
class SessionHandle:
    session: Session
    lock: threading.RLock = field(default_factory=threading.RLock)


class ServiceState:
    def __init__(self, engine: Engine, default_config: EngineConfig | None = None,
                 store_dir: Optional[str] = None, max_workers: int = 8):
        self.engine = engine
        self.default_config = default_config or EngineConfig()
        self.store_dir = store_dir
        self.handles: dict[str, SessionHandle] = {}
        self.jobs = JobRegistry()
        self.executor = ThreadPoolExecutor(max_workers=max_workers)
        self._registry_lock = threading.Lock()
        if store_dir:
            for session_id in store.list_sessions(store_dir):
                session = store.load_session(session_id, store_dir)
                self.handles[session_id] = SessionHandle(session=session)
                self.engine.audit.register(session_id)

    def handle(self, session_id: str) -> SessionHandle:
        with self._registry_lock:
            handle = self.handles.get(session_id)
        if handle is None:
            raise UnknownSession(session_id)
        return handle

    def add(self, session: Session) -> SessionHandle:
        handle = SessionHandle(session=session)
        with self._registry_lock:
            self.handles[session.id] = handle
        return handle

    def persist(self, handle: SessionHandle) -> None:
        # System clock for saved_at: envelope metadata must not consume
        # scripted-clock ticks, or digests would differ across transports.
        if self.store_dir:
            store.save_session(handle.session, self.store_dir)


# -- request bodies ------------------------------------------------------------

class ConfigBody(BaseModel):
    theme_count: int = 3
    blocks_per_pool: int = 4
    search_top_k: int = 5
    lm_temperature: float = 0.3
    max_structured_retries: int = 2
    content_language: str = "en"


class CreateSessionBody(BaseModel):
    topic: str
    supplements: list[str] = []
    audience_hint: Optional[str] = None
    content_language: Optional[str] = None
    config: Optional[ConfigBody] = None


class BriefBody(BaseModel):
    topic: Optional[str] = None
    supplements: Optional[list[str]] = None
    audience_hint: Optional[str] = None
    content_language: Optional[str] = None


class TextBody(BaseModel):
    text: str


class MapBody(BaseModel):
    mode: str = "ai_generated"


class FinalizeBody(BaseModel):
    map_id: str


def _session_payload(session: Session) -> dict:
    return {"session": store.session_to_dict(session)}


def create_app(
    engine: Engine,
    default_config: EngineConfig | None = None,
    store_dir: Optional[str] = None,
) -> FastAPI:
    app = FastAPI(title="jokeasy", version="0.1.0")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    state = ServiceState(engine, default_config, store_dir)
    app.state.service = state

    @app.exception_handler(EngineError)
    async def engine_error_handler(_request: Request, error: EngineError):
        return JSONResponse(
            status_code=_status_for(error),
            content={"error": {"code": error.code, "message": error.message}},
        )

    def run_command(handle: SessionHandle, fn) -> Session:
        """Apply one synchronous command under the session lock."""
        with handle.lock:
            handle.session = fn(handle.session)
            state.persist(handle)
            return handle.session

    def submit_pipeline_job(handle: SessionHandle, kind: str, fn) -> dict:
        """Run a whole pipeline command as a polled job."""
        job = state.jobs.create(kind, handle.session.id)

        def work():
            try:
                with handle.lock:
                    handle.session = fn(handle.session)
                    state.persist(handle)
                    last = handle.session.event_log[-1]
                state.jobs.finish(job["job_id"], command_id=last.command_id, **last.payload_dict())
            except EngineError as e:
                state.jobs.fail(job["job_id"], e)

        state.executor.submit(work)
        return job

    def submit_enrichment_jobs(handle: SessionHandle, result: canvas.CommandResult) -> list[dict]:
        """Schedule the enrichment runs a command planned; applying re-checks
        the generation so a newer edit supersedes an in-flight run."""
        jobs = []
        snapshot = result.session
        for plan in result.plans:
            job = state.jobs.create("enrichment", snapshot.id, command_id=result.command_id)
            jobs.append(job)

            def work(plan=plan, job_id=job["job_id"]):
                try:
                    evidence, echo_text = pipeline.execute_enrichment(engine, snapshot, plan)
                except EngineError as e:
                    with handle.lock:
                        before = handle.session
                        handle.session = pipeline.fail_enrichment(engine, handle.session, plan, e)
                        absorbed = handle.session is not before
                        state.persist(handle)
                    if absorbed:
                        state.jobs.fail(job_id, e)
                    else:
                        state.jobs.supersede(job_id, block_id=plan.block_id)
                    return
                with handle.lock:
                    handle.session, applied = pipeline.apply_enrichment(
                        engine, handle.session, plan, evidence, echo_text
                    )
                    state.persist(handle)
                if applied:
                    state.jobs.finish(job_id, command_id=plan.command_id, block_id=plan.block_id)
                else:
                    state.jobs.supersede(job_id, block_id=plan.block_id)

            state.executor.submit(work)
        return jobs

    def done_job(kind: str, session_id: str, command_id: str | None, **result) -> dict:
        job = state.jobs.create(kind, session_id, state="running", command_id=command_id)
        state.jobs.finish(job["job_id"], command_id=command_id, **result)
        return state.jobs.get(job["job_id"])

    # -- sessions ---------------------------------------------------------

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSessionBody):
        config_body = body.config or ConfigBody(**{
            "theme_count": state.default_config.theme_count,
            "blocks_per_pool": state.default_config.blocks_per_pool,
            "search_top_k": state.default_config.search_top_k,
            "lm_temperature": state.default_config.lm_temperature,
            "max_structured_retries": state.default_config.max_structured_retries,
            "content_language": state.default_config.content_language,
        })
        config = EngineConfig(**config_body.model_dump())
        brief = TopicBrief(
            topic=body.topic,
            supplements=tuple(body.supplements),
            audience_hint=body.audience_hint,
            content_language=body.content_language,
        )
        session = engine.create_session(brief, config)
        handle = state.add(session)
        state.persist(handle)
        return _session_payload(session)

    @app.get("/sessions")
    def list_all():
        with state._registry_lock:
            handles = list(state.handles.values())
        rows = [
            {
                "id": h.session.id,
                "topic": h.session.brief.topic,
                "stage": h.session.stage.value,
                "maps": len(h.session.maps),
            }
            for h in handles
        ]
        return {"sessions": sorted(rows, key=lambda r: r["id"])}

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return _session_payload(state.handle(session_id).session)

    # -- topic ideation ------------------------------------------------------

    @app.post("/sessions/{session_id}/summary")
    def summarize(session_id: str):
        handle = state.handle(session_id)
        job = submit_pipeline_job(handle, "generation", lambda s: pipeline.summarize_topic(engine, s))
        return {"job": job, **_session_payload(handle.session)}

    @app.post("/sessions/{session_id}/summary/regenerate")
    def regenerate_summary(session_id: str, body: BriefBody):
        handle = state.handle(session_id)
        current = handle.session.brief
        brief = TopicBrief(
            topic=body.topic if body.topic is not None else current.topic,
            supplements=tuple(body.supplements) if body.supplements is not None else current.supplements,
            audience_hint=body.audience_hint if body.audience_hint is not None else current.audience_hint,
            content_language=body.content_language or current.content_language,
        )
        job = submit_pipeline_job(handle, "generation", lambda s: pipeline.resummarize(engine, s, brief))
        return {"job": job, **_session_payload(handle.session)}

    def finish_sync(kind: str, session: Session) -> dict:
        last = session.event_log[-1]
        return done_job(kind, session.id, last.command_id, **last.payload_dict())

    @app.post("/sessions/{session_id}/summary/confirm")
    def confirm(session_id: str):
        handle = state.handle(session_id)
        session = run_command(handle, lambda s: pipeline.confirm_summary(engine, s))
        return {"job": finish_sync("generation", session), **_session_payload(session)}

    # -- generation ------------------------------------------------------------

    @app.post("/sessions/{session_id}/generate")
    def generate(session_id: str):
        handle = state.handle(session_id)
        job = submit_pipeline_job(handle, "generation", lambda s: pipeline.initial_generation(engine, s))
        return {"job": job, **_session_payload(handle.session)}

    # -- maps --------------------------------------------------------------------

    @app.post("/sessions/{session_id}/maps")
    def add_map(session_id: str, body: MapBody):
        handle = state.handle(session_id)
        raw = body.mode
        mode = MapMode.AI_GENERATED if raw in ("ai", "ai_generated") else MapMode.MANUAL
        if mode is MapMode.MANUAL:
            session = run_command(handle, lambda s: canvas.add_joke_map(engine, s, mode).session)
            return {"job": finish_sync("generation", session), **_session_payload(session)}
        job = submit_pipeline_job(
            handle, "generation", lambda s: canvas.add_joke_map(engine, s, mode).session
        )
        return {"job": job, **_session_payload(handle.session)}

    @app.delete("/sessions/{session_id}/maps/{map_id}")
    def remove_map(session_id: str, map_id: str):
        handle = state.handle(session_id)
        session = run_command(handle, lambda s: canvas.remove_joke_map(engine, s, map_id).session)
        return {"job": finish_sync("generation", session), **_session_payload(session)}

    @app.post("/sessions/{session_id}/maps/{map_id}/regenerate")
    def regenerate(session_id: str, map_id: str):
        handle = state.handle(session_id)
        job = submit_pipeline_job(
            handle, "regeneration", lambda s: pipeline.regenerate_joke(engine, s, map_id)
        )
        return {"job": job, **_session_payload(handle.session)}

    @app.post("/sessions/{session_id}/maps/{map_id}/complete")
    def complete_map(session_id: str, map_id: str):
        handle = state.handle(session_id)
        job = submit_pipeline_job(
            handle, "generation", lambda s: pipeline.complete_manual_map(engine, s, map_id)
        )
        return {"job": job, **_session_payload(handle.session)}

    # -- blocks ---------------------------------------------------------------------

    @app.post("/sessions/{session_id}/maps/{map_id}/blocks")
    def add_manual_block(session_id: str, map_id: str, body: TextBody):
        handle = state.handle(session_id)
        with handle.lock:
            result = canvas.add_block_manual(
                engine, handle.session, map_id, body.text, defer_enrichment=True
            )
            handle.session = result.session
            state.persist(handle)
        jobs = submit_enrichment_jobs(handle, result)
        return {"job": jobs[0], **_session_payload(handle.session)}

    @app.post("/sessions/{session_id}/maps/{map_id}/blocks/ai")
    def add_ai_block(session_id: str, map_id: str):
        handle = state.handle(session_id)
        job = submit_pipeline_job(
            handle, "generation", lambda s: canvas.add_block_ai(engine, s, map_id).session
        )
        return {"job": job, **_session_payload(handle.session)}

    @app.patch("/sessions/{session_id}/maps/{map_id}/blocks/{block_id}")
    def patch_block(session_id: str, map_id: str, block_id: str, body: TextBody):
        handle = state.handle(session_id)
        with handle.lock:
            result = canvas.edit_block(
                engine, handle.session, map_id, block_id, body.text, defer_enrichment=True
            )
            handle.session = result.session
            state.persist(handle)
        jobs = submit_enrichment_jobs(handle, result)
        return {"job": jobs[0], **_session_payload(handle.session)}

    @app.delete("/sessions/{session_id}/maps/{map_id}/blocks/{block_id}")
    def drop_block(session_id: str, map_id: str, block_id: str):
        handle = state.handle(session_id)
        session = run_command(handle, lambda s: canvas.delete_block(engine, s, map_id, block_id).session)
        return {"job": finish_sync("enrichment", session), **_session_payload(session)}

    @app.get("/sessions/{session_id}/maps/{map_id}/blocks/{block_id}/echo")
    def echo_view(session_id: str, map_id: str, block_id: str):
        view = canvas.inspect_block(state.handle(session_id).session, map_id, block_id)
        return {
            "map_id": view.map_id,
            "block_id": view.block_id,
            "text": view.text,
            "echo": view.echo_text,
            "enrichment_state": view.enrichment_state,
            "evidence": [
                {
                    "url": e.url,
                    "title": e.title,
                    "snippet": e.snippet,
                    "retrieved_at": e.retrieved_at.isoformat(),
                }
                for e in view.evidence
            ],
        }

    # -- finalize / export / audit ------------------------------------------------

    @app.post("/sessions/{session_id}/finalize")
    def finalize(session_id: str, body: FinalizeBody):
        handle = state.handle(session_id)
        session = run_command(handle, lambda s: canvas.finalize_joke(engine, s, body.map_id).session)
        return {"job": finish_sync("generation", session), **_session_payload(session)}

    @app.get("/sessions/{session_id}/export")
    def export(session_id: str):
        return PlainTextResponse(store.export_final(state.handle(session_id).session))

    @app.get("/sessions/{session_id}/audit")
    def audit(session_id: str):
        state.handle(session_id)
        records = engine.audit_log(session_id)
        return {
            "records": [
                {
                    "seq": r.seq,
                    "kind": r.kind,
                    "request_digest": r.request_digest,
                    "outcome": r.outcome,
                    "latency": r.latency,
                }
                for r in records
            ]
        }

    @app.get("/sessions/{session_id}/invariants")
    def invariants(session_id: str):
        found = check_invariants(state.handle(session_id).session)
        return {"violations": [str(v) for v in found]}

    # -- jobs / health -----------------------------------------------------------------

    @app.get("/jobs/{job_id}")
    def job_status(job_id: str):
        return {"job": state.jobs.get(job_id)}

    @app.get("/health")
    def health():
        return {"status": "ok"}

    return app
