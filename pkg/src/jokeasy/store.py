"""Session persistence, listing, and final-joke export.

One JSON envelope per session id under a sessions directory, written
atomically (temp file then rename) and human-diffable. The field names in
the session record double as the wire contract with the UI.
"""

from __future__ import annotations

import hashlib
import json
import os
from datetime import datetime
from pathlib import Path
from typing import Any

from .errors import CorruptEnvelope, InvariantViolation, IoFailure, NotFinalized, UnknownSession, UnsupportedVersion
from .model import (
    BlockOrigin,
    Clock,
    DraftState,
    EchoSummary,
    EngineConfig,
    EnrichmentState,
    Event,
    EvidenceItem,
    IdCounters,
    InspirationBlock,
    InspirationTheme,
    JokeMap,
    JokePrototype,
    MapMode,
    Session,
    SystemClock,
    TopicBrief,
    TopicSummary,
    WorkflowStage,
    check_invariants,
)

FORMAT_VERSION = 1


# -- serialization ----------------------------------------------------------------

def _dt(value: datetime) -> str:
    return value.isoformat()


def _parse_dt(value: str) -> datetime:
    return datetime.fromisoformat(value)


def _theme_to_dict(theme: InspirationTheme | None) -> dict | None:
    if theme is None:
        return None
    return {"id": theme.id, "label": theme.label, "rationale": theme.rationale}


def _block_to_dict(block: InspirationBlock) -> dict:
    return {
        "id": block.id,
        "text": block.text,
        "origin": block.origin.value,
        "evidence": [
            {"url": e.url, "title": e.title, "snippet": e.snippet, "retrieved_at": _dt(e.retrieved_at)}
            for e in block.evidence
        ],
        "echo": (
            {
                "block_id": block.echo.block_id,
                "text": block.echo.text,
                "source_generation": block.echo.source_generation,
            }
            if block.echo
            else None
        ),
        "enrichment_state": block.enrichment_state.value,
        "generation": block.generation,
        "annotation": block.annotation,
    }


def _map_to_dict(map_: JokeMap) -> dict:
    return {
        "id": map_.id,
        "mode": map_.mode.value,
        "theme": _theme_to_dict(map_.theme),
        "pool": [_block_to_dict(b) for b in map_.pool],
        "prototypes": [
            {
                "version": p.version,
                "title": p.title,
                "setup": p.setup,
                "punchline": p.punchline,
                "informed_by": list(p.informed_by),
                "created_at": _dt(p.created_at),
            }
            for p in map_.prototypes
        ],
        "current_version": map_.current_version,
        "draft_state": map_.draft_state.value,
        "annotation": map_.annotation,
    }


def session_to_dict(session: Session) -> dict:
    return {
        "id": session.id,
        "brief": {
            "topic": session.brief.topic,
            "supplements": list(session.brief.supplements),
            "audience_hint": session.brief.audience_hint,
            "content_language": session.brief.content_language,
        },
        "config": {
            "theme_count": session.config.theme_count,
            "blocks_per_pool": session.config.blocks_per_pool,
            "search_top_k": session.config.search_top_k,
            "lm_temperature": session.config.lm_temperature,
            "max_structured_retries": session.config.max_structured_retries,
            "content_language": session.config.content_language,
        },
        "stage": session.stage.value,
        "summary": (
            {
                "theme": session.summary.theme,
                "audience": session.summary.audience,
                "style": session.summary.style,
                "techniques": list(session.summary.techniques),
                "raw_text": session.summary.raw_text,
                "confirmed": session.summary.confirmed,
            }
            if session.summary
            else None
        ),
        "maps": [_map_to_dict(m) for m in session.maps],
        "final_map_id": session.final_map_id,
        "event_log": [
            {
                "at": _dt(e.at),
                "name": e.name,
                "command_id": e.command_id,
                "payload": dict(e.payload),
            }
            for e in session.event_log
        ],
        "counters": {
            "map": session.counters.map,
            "block": session.counters.block,
            "command": session.counters.command,
            "theme": session.counters.theme,
        },
    }


def _block_from_dict(d: dict) -> InspirationBlock:
    echo = d.get("echo")
    return InspirationBlock(
        id=d["id"],
        text=d["text"],
        origin=BlockOrigin(d["origin"]),
        evidence=tuple(
            EvidenceItem(
                url=e["url"], title=e["title"], snippet=e["snippet"], retrieved_at=_parse_dt(e["retrieved_at"])
            )
            for e in d["evidence"]
        ),
        echo=(
            EchoSummary(block_id=echo["block_id"], text=echo["text"], source_generation=echo["source_generation"])
            if echo
            else None
        ),
        enrichment_state=EnrichmentState(d["enrichment_state"]),
        generation=d["generation"],
        annotation=d.get("annotation"),
    )


def _map_from_dict(d: dict) -> JokeMap:
    theme = d.get("theme")
    return JokeMap(
        id=d["id"],
        mode=MapMode(d["mode"]),
        theme=(
            InspirationTheme(id=theme["id"], label=theme["label"], rationale=theme["rationale"]) if theme else None
        ),
        pool=tuple(_block_from_dict(b) for b in d["pool"]),
        prototypes=tuple(
            JokePrototype(
                version=p["version"],
                title=p["title"],
                setup=p["setup"],
                punchline=p["punchline"],
                informed_by=tuple(p["informed_by"]),
                created_at=_parse_dt(p["created_at"]),
            )
            for p in d["prototypes"]
        ),
        current_version=d["current_version"],
        draft_state=DraftState(d["draft_state"]),
        annotation=d.get("annotation"),
    )


def session_from_dict(d: dict) -> Session:
    summary = d.get("summary")
    counters = d.get("counters", {})
    return Session(
        id=d["id"],
        brief=TopicBrief(
            topic=d["brief"]["topic"],
            supplements=tuple(d["brief"]["supplements"]),
            audience_hint=d["brief"].get("audience_hint"),
            content_language=d["brief"].get("content_language"),
        ),
        config=EngineConfig(**d["config"]),
        stage=WorkflowStage(d["stage"]),
        summary=(
            TopicSummary(
                theme=summary["theme"],
                audience=summary["audience"],
                style=summary["style"],
                techniques=tuple(summary["techniques"]),
                raw_text=summary["raw_text"],
                confirmed=summary["confirmed"],
            )
            if summary
            else None
        ),
        maps=tuple(_map_from_dict(m) for m in d["maps"]),
        final_map_id=d.get("final_map_id"),
        event_log=tuple(
            Event(
                at=_parse_dt(e["at"]),
                name=e["name"],
                command_id=e.get("command_id"),
                payload=tuple(sorted(e["payload"].items())),
            )
            for e in d["event_log"]
        ),
        counters=IdCounters(
            map=counters.get("map", 0),
            block=counters.get("block", 0),
            command=counters.get("command", 0),
            theme=counters.get("theme", 0),
        ),
    )


def canonical_json(value: Any) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def session_digest(session: Session) -> str:
    return digest_of_dict(session_to_dict(session))


def digest_of_dict(d: dict) -> str:
    return hashlib.sha256(canonical_json(d).encode("utf-8")).hexdigest()


# -- persistence ----------------------------------------------------------------------

def session_path(root: str | Path, session_id: str) -> Path:
    return Path(root) / f"{session_id}.json"


def save_session(session: Session, root: str | Path, clock: Clock | None = None) -> Path:
    """Persist one session envelope atomically; refuses corrupt state."""
    violations = check_invariants(session)
    if violations:
        raise InvariantViolation("; ".join(str(v) for v in violations))
    clock = clock or SystemClock()
    envelope = {
        "format_version": FORMAT_VERSION,
        "saved_at": _dt(clock.now()),
        "session": session_to_dict(session),
    }
    target = session_path(root, session.id)
    tmp = target.with_suffix(".json.tmp")
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_text(json.dumps(envelope, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
        os.replace(tmp, target)
    except OSError as e:
        raise IoFailure(f"cannot persist session {session.id}: {e}")
    return target


def load_session(session_id: str, root: str | Path) -> Session:
    """Read a session envelope back; the result is field-for-field equal to
    what was saved."""
    target = session_path(root, session_id)
    if not target.exists():
        raise UnknownSession(session_id)
    try:
        envelope = json.loads(target.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise CorruptEnvelope(f"session {session_id}: {e}")
    version = envelope.get("format_version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"envelope format {version!r} not supported")
    try:
        session = session_from_dict(envelope["session"])
    except (KeyError, TypeError, ValueError) as e:
        raise CorruptEnvelope(f"session {session_id}: malformed record ({e})")
    violations = check_invariants(session)
    if violations:
        raise CorruptEnvelope(f"session {session_id}: invariants violated after load")
    return session


def list_sessions(root: str | Path) -> list[str]:
    base = Path(root)
    if not base.exists():
        return []
    return sorted(p.stem for p in base.glob("*.json"))


# -- export -----------------------------------------------------------------------------

def export_final(session: Session) -> str:
    """Plain-text document for the finalized joke, with its provenance trail."""
    if session.stage is not WorkflowStage.FINAL_SYNTHESIS or session.final_map_id is None:
        raise NotFinalized("session has no finalized joke")
    map_ = session.map_by_id(session.final_map_id)
    prototype = map_.prototypes[-1]
    lines = [
        f"# {prototype.title}",
        "",
        f"Topic: {session.brief.topic}",
        f"Version: {prototype.version}",
        "",
        "## Setup",
        "",
        prototype.setup,
        "",
        "## Punchline",
        "",
        prototype.punchline,
        "",
        "## Sources",
        "",
    ]
    by_id = {b.id: b for b in map_.pool}
    for block_id in prototype.informed_by:
        block = by_id.get(block_id)
        if block is None:
            continue
        lines.append(f"- {block.text}")
        for item in block.evidence:
            lines.append(f"  * {item.url}")
    return "\n".join(lines) + "\n"
