"""Domain model: canvas objects and the four-stage workflow state machine.

Sessions are immutable snapshots. Every operation returns a new snapshot,
so values can be shared freely across threads for reading; per-session
write ordering is the service layer's job.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from enum import Enum
from typing import Iterable, Optional, Protocol

from .errors import EmptyTopic, GuardUnsatisfied, IllegalTransition, InvalidConfig


class WorkflowStage(str, Enum):
    TOPIC_IDEATION = "topic_ideation"
    INSPIRATION_GENERATION = "inspiration_generation"
    VALIDATION_REFINEMENT = "validation_refinement"
    FINAL_SYNTHESIS = "final_synthesis"


# Legal transitions. Self-loops cover the re-summary loop (topic ideation)
# and in-place edits (validation refinement).
_TRANSITIONS: frozenset[tuple[WorkflowStage, WorkflowStage]] = frozenset(
    {
        (WorkflowStage.TOPIC_IDEATION, WorkflowStage.TOPIC_IDEATION),
        (WorkflowStage.TOPIC_IDEATION, WorkflowStage.INSPIRATION_GENERATION),
        (WorkflowStage.INSPIRATION_GENERATION, WorkflowStage.VALIDATION_REFINEMENT),
        (WorkflowStage.VALIDATION_REFINEMENT, WorkflowStage.VALIDATION_REFINEMENT),
        (WorkflowStage.VALIDATION_REFINEMENT, WorkflowStage.FINAL_SYNTHESIS),
    }
)


def legal_transition(current: WorkflowStage, target: WorkflowStage) -> bool:
    return (current, target) in _TRANSITIONS


class BlockOrigin(str, Enum):
    AI = "ai"
    MANUAL = "manual"


class EnrichmentState(str, Enum):
    PENDING = "pending"
    ENRICHED = "enriched"
    STALE = "stale"


class MapMode(str, Enum):
    AI_GENERATED = "ai_generated"
    MANUAL = "manual"


class DraftState(str, Enum):
    FRESH = "fresh"
    STALE = "stale"
    EMPTY = "empty"


# -- clock and id plumbing ----------------------------------------------------

class Clock(Protocol):
    def now(self) -> datetime: ...


class SystemClock:
    def now(self) -> datetime:
        return datetime.now(timezone.utc)


class TickingClock:
    """Scripted clock: strictly increasing, deterministic timestamps."""

    def __init__(self, start: datetime | None = None, step_seconds: float = 1.0):
        self._current = start or datetime(2026, 1, 1, tzinfo=timezone.utc)
        self._step = timedelta(seconds=step_seconds)

    def now(self) -> datetime:
        stamp = self._current
        self._current = self._current + self._step
        return stamp


class SequentialIds:
    """Deterministic id source, one counter per prefix."""

    def __init__(self):
        self._counters: dict[str, itertools.count] = {}

    def next_id(self, prefix: str) -> str:
        counter = self._counters.setdefault(prefix, itertools.count(1))
        return f"{prefix}-{next(counter)}"


# -- domain types ---------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class TopicBrief:
    topic: str
    supplements: tuple[str, ...] = ()
    audience_hint: Optional[str] = None
    content_language: Optional[str] = None


@dataclass(frozen=True, slots=True)
class TopicSummary:
    theme: str
    audience: str
    style: str
    techniques: tuple[str, ...]
    raw_text: str
    confirmed: bool = False


@dataclass(frozen=True, slots=True)
class InspirationTheme:
    id: str
    label: str
    rationale: str


@dataclass(frozen=True, slots=True)
class EvidenceItem:
    url: str
    title: str
    snippet: str
    retrieved_at: datetime


@dataclass(frozen=True, slots=True)
class EchoSummary:
    block_id: str
    text: str
    source_generation: int


@dataclass(frozen=True, slots=True)
class InspirationBlock:
    id: str
    text: str
    origin: BlockOrigin
    evidence: tuple[EvidenceItem, ...] = ()
    echo: Optional[EchoSummary] = None
    enrichment_state: EnrichmentState = EnrichmentState.PENDING
    generation: int = 0
    annotation: Optional[str] = None


@dataclass(frozen=True, slots=True)
class JokePrototype:
    version: int
    title: str
    setup: str
    punchline: str
    informed_by: tuple[str, ...]
    created_at: datetime


@dataclass(frozen=True, slots=True)
class JokeMap:
    id: str
    mode: MapMode
    theme: Optional[InspirationTheme] = None
    pool: tuple[InspirationBlock, ...] = ()
    prototypes: tuple[JokePrototype, ...] = ()
    current_version: int = 0
    draft_state: DraftState = DraftState.EMPTY
    annotation: Optional[str] = None

    def block(self, block_id: str) -> Optional[InspirationBlock]:
        for b in self.pool:
            if b.id == block_id:
                return b
        return None


@dataclass(frozen=True, slots=True)
class EngineConfig:
    theme_count: int = 3
    blocks_per_pool: int = 4
    search_top_k: int = 5
    lm_temperature: float = 0.3
    max_structured_retries: int = 2
    content_language: str = "en"


@dataclass(frozen=True, slots=True)
class Event:
    """One append-only log entry.

    ``command_id`` links pipeline sub-events to the command that caused them;
    command events carry their own id there as well.
    """

    at: datetime
    name: str
    command_id: Optional[str] = None
    payload: tuple[tuple[str, str], ...] = ()

    def payload_dict(self) -> dict[str, str]:
        return dict(self.payload)


# Event names considered top-level commands (one per executed command).
COMMAND_EVENTS = frozenset(
    {
        "session_created",
        "topic_summarized",
        "topic_resummarized",
        "summary_confirmed",
        "initial_generation_completed",
        "block_edited",
        "block_deleted",
        "block_added_ai",
        "block_added_manual",
        "map_added",
        "map_removed",
        "joke_drafted",
        "joke_regenerated",
        "manual_map_completed",
        "joke_finalized",
    }
)


@dataclass(frozen=True, slots=True)
class IdCounters:
    """Per-session monotone counters; kept on the snapshot so id allocation is
    deterministic regardless of how many sessions share an engine."""

    map: int = 0
    block: int = 0
    command: int = 0
    theme: int = 0


@dataclass(frozen=True, slots=True)
class Session:
    id: str
    brief: TopicBrief
    config: EngineConfig
    stage: WorkflowStage = WorkflowStage.TOPIC_IDEATION
    summary: Optional[TopicSummary] = None
    maps: tuple[JokeMap, ...] = ()
    final_map_id: Optional[str] = None
    event_log: tuple[Event, ...] = ()
    counters: IdCounters = field(default_factory=IdCounters)

    def map_by_id(self, map_id: str) -> Optional[JokeMap]:
        for m in self.maps:
            if m.id == map_id:
                return m
        return None

    def effective_language(self) -> str:
        return self.brief.content_language or self.config.content_language


# -- construction ---------------------------------------------------------------

def validate_config(config: EngineConfig) -> list[str]:
    problems = []
    if config.theme_count < 1:
        problems.append("theme_count must be >= 1")
    if config.blocks_per_pool < 1:
        problems.append("blocks_per_pool must be >= 1")
    if config.search_top_k < 1:
        problems.append("search_top_k must be >= 1")
    if not (0.0 <= config.lm_temperature <= 1.0):
        problems.append("lm_temperature must be within [0, 1]")
    if config.max_structured_retries < 0:
        problems.append("max_structured_retries must be >= 0")
    if not config.content_language.strip():
        problems.append("content_language must be nonempty")
    return problems


def validate_brief(brief: TopicBrief) -> None:
    if not brief.topic.strip():
        raise EmptyTopic("topic is blank")


def create_session(
    brief: TopicBrief,
    config: EngineConfig | None = None,
    *,
    session_id: str,
    clock: Clock,
) -> Session:
    """Open a fresh canvas at the topic ideation stage."""
    config = config or EngineConfig()
    validate_brief(brief)
    problems = validate_config(config)
    if problems:
        raise InvalidConfig("; ".join(problems))
    created = Event(at=clock.now(), name="session_created", command_id="cmd-0")
    return Session(id=session_id, brief=brief, config=config, event_log=(created,))


# -- snapshot update helpers ------------------------------------------------------

def append_event(
    session: Session,
    clock: Clock,
    name: str,
    command_id: str | None = None,
    **payload: str,
) -> Session:
    event = Event(
        at=clock.now(),
        name=name,
        command_id=command_id,
        payload=tuple(sorted(payload.items())),
    )
    return replace(session, event_log=session.event_log + (event,))


def next_command_id(session: Session) -> tuple[Session, str]:
    n = session.counters.command + 1
    return replace(session, counters=replace(session.counters, command=n)), f"cmd-{n}"


def next_map_id(session: Session) -> tuple[Session, str]:
    n = session.counters.map + 1
    return replace(session, counters=replace(session.counters, map=n)), f"map-{n}"


def next_block_id(session: Session) -> tuple[Session, str]:
    n = session.counters.block + 1
    return replace(session, counters=replace(session.counters, block=n)), f"blk-{n}"


def next_theme_id(session: Session) -> tuple[Session, str]:
    n = session.counters.theme + 1
    return replace(session, counters=replace(session.counters, theme=n)), f"theme-{n}"


def replace_map(session: Session, updated: JokeMap) -> Session:
    maps = tuple(updated if m.id == updated.id else m for m in session.maps)
    return replace(session, maps=maps)


def replace_block(map_: JokeMap, updated: InspirationBlock) -> JokeMap:
    pool = tuple(updated if b.id == updated.id else b for b in map_.pool)
    return replace(map_, pool=pool)


# -- stage transitions ------------------------------------------------------------

def _transition_guard(session: Session, target: WorkflowStage) -> str | None:
    """Return the name of the failing guard, or None when all guards hold."""
    needs_summary = {
        WorkflowStage.INSPIRATION_GENERATION,
        WorkflowStage.VALIDATION_REFINEMENT,
        WorkflowStage.FINAL_SYNTHESIS,
    }
    if target in needs_summary:
        if session.summary is None or not session.summary.confirmed:
            return "confirmed summary required before " + target.value
    if target is WorkflowStage.FINAL_SYNTHESIS:
        final = session.map_by_id(session.final_map_id) if session.final_map_id else None
        if final is None:
            return "final_map_id must name an existing map"
        if final.draft_state is not DraftState.FRESH:
            return "final map draft must be fresh"
    return None


def transition(
    session: Session,
    target: WorkflowStage,
    *,
    clock: Clock,
    command_id: str | None = None,
) -> Session:
    """Move the workflow to ``target``, enforcing legality and guards."""
    if not legal_transition(session.stage, target):
        raise IllegalTransition(session.stage.value, target.value)
    failing = _transition_guard(session, target)
    if failing:
        raise GuardUnsatisfied(failing)
    moved = replace(session, stage=target)
    return append_event(
        moved,
        clock,
        "stage_changed",
        command_id=command_id,
        from_stage=session.stage.value,
        to_stage=target.value,
    )


# -- invariant checking -------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class Violation:
    type_name: str
    field: str
    rule: str
    subject: str = ""

    def __str__(self) -> str:
        where = f" [{self.subject}]" if self.subject else ""
        return f"{self.type_name}.{self.field}: {self.rule}{where}"


def _check_block(block: InspirationBlock, watermark: datetime | None, out: list[Violation]) -> None:
    if block.generation < 0:
        out.append(Violation("InspirationBlock", "generation", "must be nonnegative", block.id))
    if block.enrichment_state is EnrichmentState.ENRICHED:
        if block.echo is None:
            out.append(Violation("InspirationBlock", "echo", "enriched block must carry an echo summary", block.id))
        if not block.evidence:
            out.append(Violation("InspirationBlock", "evidence", "enriched block must carry evidence", block.id))
        if block.echo is not None and block.echo.source_generation != block.generation:
            out.append(
                Violation(
                    "EchoSummary",
                    "source_generation",
                    "must equal the block generation while enriched",
                    block.id,
                )
            )
    if block.origin is BlockOrigin.MANUAL and block.enrichment_state is EnrichmentState.PENDING:
        if block.echo is not None:
            out.append(Violation("InspirationBlock", "echo", "pending manual block must have no echo", block.id))
    if block.echo is not None and block.echo.block_id != block.id:
        out.append(Violation("EchoSummary", "block_id", "must reference the owning block", block.id))
    for item in block.evidence:
        if not item.url.strip():
            out.append(Violation("EvidenceItem", "url", "must be nonempty", block.id))
        if watermark is not None and item.retrieved_at > watermark:
            out.append(
                Violation("EvidenceItem", "retrieved_at", "must not be in the future of the session clock", block.id)
            )


def _check_map(map_: JokeMap, watermark: datetime | None, out: list[Violation]) -> None:
    versions = [p.version for p in map_.prototypes]
    if versions != list(range(1, len(versions) + 1)):
        out.append(Violation("JokeMap", "prototypes", "versions must be 1..N consecutive", map_.id))
    if map_.prototypes:
        if map_.current_version != len(map_.prototypes):
            out.append(Violation("JokeMap", "current_version", "must equal the latest version", map_.id))
        if map_.draft_state is DraftState.EMPTY:
            out.append(Violation("JokeMap", "draft_state", "map with prototypes cannot be empty", map_.id))
    else:
        if map_.draft_state is not DraftState.EMPTY:
            out.append(Violation("JokeMap", "draft_state", "map without prototypes must be empty", map_.id))
        if map_.current_version != 0:
            out.append(Violation("JokeMap", "current_version", "must be 0 without prototypes", map_.id))
    if map_.theme is not None and not map_.theme.label.strip():
        out.append(Violation("InspirationTheme", "label", "must be nonempty", map_.id))
    for block in map_.pool:
        _check_block(block, watermark, out)


def check_invariants(session: Session) -> list[Violation]:
    """Total invariant check; empty list means the snapshot is consistent."""
    out: list[Violation] = []
    if not session.brief.topic.strip():
        out.append(Violation("TopicBrief", "topic", "must be nonempty after trimming", session.id))
    for problem in validate_config(session.config):
        out.append(Violation("EngineConfig", problem.split(" ", 1)[0], problem, session.id))

    if not session.event_log:
        out.append(Violation("Session", "event_log", "must start with a session_created event", session.id))
    watermark = max((e.at for e in session.event_log), default=None)

    staged = {
        WorkflowStage.INSPIRATION_GENERATION,
        WorkflowStage.VALIDATION_REFINEMENT,
        WorkflowStage.FINAL_SYNTHESIS,
    }
    if session.stage in staged:
        if session.summary is None or not session.summary.confirmed:
            out.append(Violation("Session", "summary", "stages past ideation require a confirmed summary", session.id))

    map_ids = [m.id for m in session.maps]
    if len(set(map_ids)) != len(map_ids):
        out.append(Violation("Session", "maps", "map ids must be unique", session.id))
    block_ids = [b.id for m in session.maps for b in m.pool]
    if len(set(block_ids)) != len(block_ids):
        out.append(Violation("Session", "maps", "block ids must be unique across the session", session.id))

    if session.final_map_id is not None:
        if session.stage is not WorkflowStage.FINAL_SYNTHESIS:
            out.append(Violation("Session", "final_map_id", "only a finalized session names a final map", session.id))
        final = session.map_by_id(session.final_map_id)
        if final is None:
            out.append(Violation("Session", "final_map_id", "must reference an existing map", session.id))
        elif final.draft_state is not DraftState.FRESH:
            out.append(Violation("Session", "final_map_id", "final map draft must be fresh", session.id))
    elif session.stage is WorkflowStage.FINAL_SYNTHESIS:
        out.append(Violation("Session", "final_map_id", "final synthesis requires a final map", session.id))

    for map_ in session.maps:
        _check_map(map_, watermark, out)
    return out


def command_event_count(events: Iterable[Event]) -> int:
    return sum(1 for e in events if e.name in COMMAND_EVENTS)
