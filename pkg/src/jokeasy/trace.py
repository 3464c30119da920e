"""Command trace format and replay driver.

A trace is a line-oriented script of canvas commands with 1-based positional
references (map=2 means the second map on the canvas). Replaying a trace
against a fixture script makes an entire co-writing session deterministic.
"""

from __future__ import annotations

import shlex
import time
from dataclasses import dataclass, field

from .canvas import (
    add_block_ai,
    add_block_manual,
    add_joke_map,
    delete_block,
    edit_block,
    finalize_joke,
    inspect_block,
    remove_joke_map,
)
from .errors import TraceParseError, UnknownBlock, UnknownMap
from .model import EngineConfig, MapMode, Session, TopicBrief, Violation, check_invariants
from .pipeline import (
    complete_manual_map,
    confirm_summary,
    draft_joke,
    initial_generation,
    regenerate_joke,
    resummarize,
    summarize_topic,
)
from .providers import Engine
from .store import session_digest

COMMANDS = frozenset(
    {
        "new",
        "summarize",
        "resummarize",
        "confirm",
        "generate",
        "add_map",
        "remove_map",
        "add_block_manual",
        "add_block_ai",
        "edit_block",
        "delete_block",
        "inspect_block",
        "regenerate",
        "draft",
        "complete_map",
        "finalize",
    }
)

_MULTI_KEYS = {"supplement"}


@dataclass(frozen=True, slots=True)
class TraceCommand:
    name: str
    args: dict
    line_no: int

    def get(self, key: str, default=None):
        return self.args.get(key, default)


def parse_trace(text: str) -> list[TraceCommand]:
    """Parse a trace file; unknown commands or malformed lines carry their
    line number in the error."""
    commands: list[TraceCommand] = []
    for line_no, raw in enumerate(text.splitlines(), 1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        try:
            tokens = shlex.split(stripped)
        except ValueError as e:
            raise TraceParseError(line_no, f"cannot tokenize: {e}")
        name, *rest = tokens
        if name not in COMMANDS:
            raise TraceParseError(line_no, f"unknown command {name!r}")
        args: dict = {}
        for token in rest:
            key, sep, value = token.partition("=")
            if not sep:
                raise TraceParseError(line_no, f"expected key=value, got {token!r}")
            if key in _MULTI_KEYS:
                args.setdefault(key, []).append(value)
            else:
                args[key] = value
        commands.append(TraceCommand(name=name, args=args, line_no=line_no))
    if not commands or commands[0].name != "new":
        raise TraceParseError(1, "trace must start with a 'new' command")
    return commands


def _map_id_at(session: Session, index_text: str, line_no: int) -> str:
    try:
        index = int(index_text)
    except (TypeError, ValueError):
        raise TraceParseError(line_no, f"map index must be an integer, got {index_text!r}")
    if not (1 <= index <= len(session.maps)):
        raise UnknownMap(f"map index {index} out of range (have {len(session.maps)})")
    return session.maps[index - 1].id


def _block_id_at(session: Session, map_id: str, index_text: str, line_no: int) -> str:
    try:
        index = int(index_text)
    except (TypeError, ValueError):
        raise TraceParseError(line_no, f"block index must be an integer, got {index_text!r}")
    pool = session.map_by_id(map_id).pool
    if not (1 <= index <= len(pool)):
        raise UnknownBlock(f"block index {index} out of range (map has {len(pool)})")
    return pool[index - 1].id


@dataclass
class ReplayReport:
    session: Session
    digest: str
    commands_run: int
    lm_calls: int
    search_calls: int
    violations: list[Violation] = field(default_factory=list)
    elapsed: float = 0.0


def run_trace(
    engine: Engine, commands: list[TraceCommand], config: EngineConfig | None = None
) -> ReplayReport:
    """Execute a parsed trace against the engine's providers, in process."""
    started = time.perf_counter()
    session: Session | None = None
    count = 0
    for cmd in commands:
        if cmd.name == "new":
            brief = TopicBrief(
                topic=cmd.get("topic", ""),
                supplements=tuple(cmd.get("supplement", ())),
                audience_hint=cmd.get("audience"),
                content_language=cmd.get("lang"),
            )
            session = engine.create_session(brief, config)
        elif session is None:
            raise TraceParseError(cmd.line_no, "commands before 'new'")
        elif cmd.name == "summarize":
            session = summarize_topic(engine, session)
        elif cmd.name == "resummarize":
            brief = TopicBrief(
                topic=cmd.get("topic", session.brief.topic),
                supplements=tuple(cmd.get("supplement", session.brief.supplements)),
                audience_hint=cmd.get("audience", session.brief.audience_hint),
                content_language=cmd.get("lang", session.brief.content_language),
            )
            session = resummarize(engine, session, brief)
        elif cmd.name == "confirm":
            session = confirm_summary(engine, session)
        elif cmd.name == "generate":
            session = initial_generation(engine, session)
        elif cmd.name == "add_map":
            raw_mode = cmd.get("mode", "ai")
            if raw_mode in ("ai", "ai_generated"):
                mode = MapMode.AI_GENERATED
            elif raw_mode == "manual":
                mode = MapMode.MANUAL
            else:
                raise TraceParseError(cmd.line_no, f"unknown map mode {raw_mode!r}")
            session = add_joke_map(engine, session, mode).session
        elif cmd.name == "remove_map":
            session = remove_joke_map(engine, session, _map_id_at(session, cmd.get("map"), cmd.line_no)).session
        elif cmd.name == "add_block_manual":
            map_id = _map_id_at(session, cmd.get("map"), cmd.line_no)
            session = add_block_manual(engine, session, map_id, cmd.get("text", "")).session
        elif cmd.name == "add_block_ai":
            map_id = _map_id_at(session, cmd.get("map"), cmd.line_no)
            session = add_block_ai(engine, session, map_id).session
        elif cmd.name == "edit_block":
            map_id = _map_id_at(session, cmd.get("map"), cmd.line_no)
            block_id = _block_id_at(session, map_id, cmd.get("block"), cmd.line_no)
            session = edit_block(engine, session, map_id, block_id, cmd.get("text", "")).session
        elif cmd.name == "delete_block":
            map_id = _map_id_at(session, cmd.get("map"), cmd.line_no)
            block_id = _block_id_at(session, map_id, cmd.get("block"), cmd.line_no)
            session = delete_block(engine, session, map_id, block_id).session
        elif cmd.name == "inspect_block":
            map_id = _map_id_at(session, cmd.get("map"), cmd.line_no)
            block_id = _block_id_at(session, map_id, cmd.get("block"), cmd.line_no)
            inspect_block(session, map_id, block_id)
        elif cmd.name == "regenerate":
            session = regenerate_joke(engine, session, _map_id_at(session, cmd.get("map"), cmd.line_no))
        elif cmd.name == "draft":
            session = draft_joke(engine, session, _map_id_at(session, cmd.get("map"), cmd.line_no))
        elif cmd.name == "complete_map":
            session = complete_manual_map(engine, session, _map_id_at(session, cmd.get("map"), cmd.line_no))
        elif cmd.name == "finalize":
            session = finalize_joke(engine, session, _map_id_at(session, cmd.get("map"), cmd.line_no)).session
        count += 1

    records = engine.audit_log(session.id)
    return ReplayReport(
        session=session,
        digest=session_digest(session),
        commands_run=count,
        lm_calls=sum(1 for r in records if r.kind == "lm"),
        search_calls=sum(1 for r in records if r.kind == "search"),
        violations=check_invariants(session),
        elapsed=time.perf_counter() - started,
    )


def replay(script_path, trace_path, config: EngineConfig | None = None) -> ReplayReport:
    """Replay a trace file against a fixture script file."""
    from pathlib import Path

    from .model import TickingClock
    from .providers import FixtureScript, fixture_providers

    script = FixtureScript.load(script_path)
    clock = TickingClock()
    lm, search, _state = fixture_providers(script, clock)
    engine = Engine(lm, search, clock=clock)
    commands = parse_trace(Path(trace_path).read_text(encoding="utf-8"))
    return run_trace(engine, commands, config)
