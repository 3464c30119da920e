"""User-facing canvas commands: block and map CRUD over a session snapshot.

Every executed command appends exactly one command event; pipeline work it
triggers shows up as sub-events tagged with the command id. Guard failures
raise and leave the snapshot untouched; provider failures during enrichment
are absorbed into the targeted block's state.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

from .errors import (
    DraftStale,
    EmptyBlockText,
    EmptyEvidence,
    EngineError,
    GuardUnsatisfied,
    MapFinalized,
    NoPrototype,
    ThemeMissing,
    UnknownBlock,
    UnknownMap,
)
from .model import (
    BlockOrigin,
    DraftState,
    EchoSummary,
    EnrichmentState,
    EvidenceItem,
    InspirationBlock,
    JokeMap,
    MapMode,
    Session,
    WorkflowStage,
    append_event,
    next_block_id,
    next_command_id,
    next_map_id,
    replace_block,
    replace_map,
    transition,
)
from .pipeline import (
    EnrichmentPlan,
    _build_theme_map,
    _material_text,
    derive_themes,
    plan_reenrichment,
    run_enrichment,
    run_structured,
)
from .prompts import block_schema, echo_schema
from .providers import Engine, SearchRequest


@dataclass(frozen=True, slots=True)
class CommandResult:
    session: Session
    command_id: str
    plans: tuple[EnrichmentPlan, ...] = ()


@dataclass(frozen=True, slots=True)
class EchoAssistantView:
    map_id: str
    block_id: str
    text: str
    echo_text: Optional[str]
    evidence: tuple[EvidenceItem, ...]
    enrichment_state: str


def _require_stage(session: Session, stage: WorkflowStage, action: str) -> None:
    if session.stage is not stage:
        raise GuardUnsatisfied(f"stage={stage.value} required for {action}")


def _get_map(session: Session, map_id: str) -> JokeMap:
    map_ = session.map_by_id(map_id)
    if map_ is None:
        raise UnknownMap(map_id)
    return map_


def _get_block(map_: JokeMap, block_id: str) -> InspirationBlock:
    block = map_.block(block_id)
    if block is None:
        raise UnknownBlock(block_id)
    return block


def _mark_draft_stale(map_: JokeMap) -> JokeMap:
    # Pool mutations only stale a draft that exists; an empty map stays empty.
    if map_.prototypes:
        return replace(map_, draft_state=DraftState.STALE)
    return map_


def edit_block(
    engine: Engine,
    session: Session,
    map_id: str,
    block_id: str,
    new_text: str,
    *,
    defer_enrichment: bool = False,
) -> CommandResult:
    """Replace a block's text and re-enrich it; the draft goes stale."""
    _require_stage(session, WorkflowStage.VALIDATION_REFINEMENT, "block editing")
    map_ = _get_map(session, map_id)
    block = _get_block(map_, block_id)
    if not new_text.strip():
        raise EmptyBlockText("block text is blank")
    base, cmd = next_command_id(session)
    edited = replace(block, text=new_text, enrichment_state=EnrichmentState.STALE)
    base = replace_map(base, _mark_draft_stale(replace_block(map_, edited)))
    base, plan = plan_reenrichment(base, map_id, block_id, cmd)
    base = append_event(base, engine.clock, "block_edited", command_id=cmd, map=map_id, block=block_id)
    if defer_enrichment:
        return CommandResult(base, cmd, (plan,))
    return CommandResult(run_enrichment(engine, base, plan), cmd)


def delete_block(engine: Engine, session: Session, map_id: str, block_id: str) -> CommandResult:
    """Remove a block together with its echo and evidence."""
    _require_stage(session, WorkflowStage.VALIDATION_REFINEMENT, "block deletion")
    map_ = _get_map(session, map_id)
    _get_block(map_, block_id)
    base, cmd = next_command_id(session)
    shrunk = replace(map_, pool=tuple(b for b in map_.pool if b.id != block_id))
    base = replace_map(base, _mark_draft_stale(shrunk))
    base = append_event(base, engine.clock, "block_deleted", command_id=cmd, map=map_id, block=block_id)
    return CommandResult(base, cmd)


def add_block_ai(engine: Engine, session: Session, map_id: str) -> CommandResult:
    """Search again under the map's theme and insert one fresh enriched block."""
    _require_stage(session, WorkflowStage.VALIDATION_REFINEMENT, "AI block add")
    map_ = _get_map(session, map_id)
    if map_.theme is None:
        raise ThemeMissing(f"map {map_id} has no theme to search under")
    base, cmd = next_command_id(session)
    results = engine.search(
        base.id, SearchRequest(keywords=(map_.theme.label,), top_k=base.config.search_top_k)
    )
    if not results:
        raise EmptyEvidence(f"search returned nothing for theme {map_.theme.label}")
    distilled = run_structured(
        engine,
        base,
        "blockDistillGen",
        {
            "theme": f"{map_.theme.label}: {map_.theme.rationale}",
            "material": _material_text(results),
            "block_count": "1",
        },
        block_schema(1),
    )
    text = distilled.value["blocks"][0]
    base, block_id = next_block_id(base)
    echo_out = run_structured(
        engine,
        base,
        "inspirationPopupGen",
        {"summary": base.summary.raw_text, "block": text, "material": _material_text(results)},
        echo_schema(),
    )
    block = InspirationBlock(
        id=block_id,
        text=text,
        origin=BlockOrigin.AI,
        evidence=tuple(results),
        echo=EchoSummary(block_id=block_id, text=echo_out.value["echo"], source_generation=1),
        enrichment_state=EnrichmentState.ENRICHED,
        generation=1,
    )
    grown = replace(map_, pool=map_.pool + (block,))
    base = replace_map(base, _mark_draft_stale(grown))
    base = append_event(base, engine.clock, "block_added_ai", command_id=cmd, map=map_id, block=block_id)
    return CommandResult(base, cmd)


def add_block_manual(
    engine: Engine,
    session: Session,
    map_id: str,
    text: str,
    *,
    defer_enrichment: bool = False,
) -> CommandResult:
    """Append a writer-drafted block, then fetch supporting material for it."""
    _require_stage(session, WorkflowStage.VALIDATION_REFINEMENT, "manual block add")
    map_ = _get_map(session, map_id)
    if not text.strip():
        raise EmptyBlockText("block text is blank")
    base, cmd = next_command_id(session)
    base, block_id = next_block_id(base)
    block = InspirationBlock(id=block_id, text=text, origin=BlockOrigin.MANUAL)
    grown = replace(map_, pool=map_.pool + (block,))
    base = replace_map(base, _mark_draft_stale(grown))
    base, plan = plan_reenrichment(base, map_id, block_id, cmd)
    base = append_event(
        base, engine.clock, "block_added_manual", command_id=cmd, map=map_id, block=block_id
    )
    if defer_enrichment:
        return CommandResult(base, cmd, (plan,))
    return CommandResult(run_enrichment(engine, base, plan), cmd)


def add_joke_map(engine: Engine, session: Session, mode: MapMode) -> CommandResult:
    """Introduce a new map: AI mode reruns the full pipeline under a fresh
    theme, manual mode adds an empty frame."""
    _require_stage(session, WorkflowStage.VALIDATION_REFINEMENT, "map add")
    base, cmd = next_command_id(session)
    if mode is MapMode.MANUAL:
        base, map_id = next_map_id(base)
        frame = JokeMap(id=map_id, mode=MapMode.MANUAL)
        base = replace(base, maps=base.maps + (frame,))
        base = append_event(base, engine.clock, "map_added", command_id=cmd, map=map_id, mode=mode.value)
        return CommandResult(base, cmd)

    existing = tuple(m.theme.label for m in base.maps if m.theme is not None)
    checkpoint = base
    try:
        base, themes = derive_themes(engine, base, count=1, exclusions=existing)
        base = _build_theme_map(engine, base, themes[0], cmd)
        map_id = base.maps[-1].id
    except EngineError as e:
        base, map_id = next_map_id(checkpoint)
        failed = JokeMap(id=map_id, mode=MapMode.AI_GENERATED, annotation=e.code)
        base = replace(base, maps=base.maps + (failed,))
        base = append_event(base, engine.clock, "map_failed", command_id=cmd, map=map_id, error=e.code)
    base = append_event(base, engine.clock, "map_added", command_id=cmd, map=map_id, mode=mode.value)
    return CommandResult(base, cmd)


def remove_joke_map(engine: Engine, session: Session, map_id: str) -> CommandResult:
    """Remove a map and everything in it; the finalized map is protected."""
    if session.stage not in (WorkflowStage.VALIDATION_REFINEMENT, WorkflowStage.FINAL_SYNTHESIS):
        raise GuardUnsatisfied("stage=validation_refinement required for map removal")
    _get_map(session, map_id)
    if session.final_map_id == map_id:
        raise MapFinalized(f"map {map_id} is the finalized map")
    base, cmd = next_command_id(session)
    base = replace(base, maps=tuple(m for m in base.maps if m.id != map_id))
    base = append_event(base, engine.clock, "map_removed", command_id=cmd, map=map_id)
    return CommandResult(base, cmd)


def inspect_block(session: Session, map_id: str, block_id: str) -> EchoAssistantView:
    """Read-only echo-assistant projection; no state change, no provider calls."""
    map_ = _get_map(session, map_id)
    block = _get_block(map_, block_id)
    return EchoAssistantView(
        map_id=map_id,
        block_id=block_id,
        text=block.text,
        echo_text=block.echo.text if block.echo else None,
        evidence=block.evidence,
        enrichment_state=block.enrichment_state.value,
    )


def finalize_joke(engine: Engine, session: Session, map_id: str) -> CommandResult:
    """Confirm a map's current prototype as the final joke."""
    map_ = _get_map(session, map_id)
    if not map_.prototypes:
        raise NoPrototype(f"map {map_id} has no prototype")
    if map_.draft_state is not DraftState.FRESH:
        raise DraftStale(f"map {map_id} changed since its last draft")
    base, cmd = next_command_id(session)
    base = replace(base, final_map_id=map_id)
    base = transition(base, WorkflowStage.FINAL_SYNTHESIS, clock=engine.clock, command_id=cmd)
    base = append_event(base, engine.clock, "joke_finalized", command_id=cmd, map=map_id)
    return CommandResult(base, cmd)
