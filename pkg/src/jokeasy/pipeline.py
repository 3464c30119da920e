"""The LLM-chain pipeline: summary, themes, keywords, retrieval, block
distillation, echo generation, joke drafting, and the re-enrichment flow.

Schema-validation retries happen here (identical prompt, up to
config.max_structured_retries); transport retries live in the providers
module. Raw provider text only enters the domain model through
prompts.validate_output.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any, Optional

from .errors import (
    BlocksPending,
    EmptyEvidence,
    EmptyPool,
    EngineError,
    GuardUnsatisfied,
    InitialGenerationFailed,
    NoSummary,
    NotStale,
    SchemaError,
    StructuredOutputFailed,
    SummaryAlreadyConfirmed,
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
    InspirationTheme,
    JokeMap,
    JokePrototype,
    MapMode,
    Session,
    TopicBrief,
    TopicSummary,
    WorkflowStage,
    append_event,
    next_block_id,
    next_command_id,
    next_map_id,
    next_theme_id,
    replace_block,
    replace_map,
    transition,
    validate_brief,
)
from .prompts import (
    OutputSchema,
    assemble_prompt,
    block_schema,
    echo_schema,
    joke_draft_schema,
    keyword_schema,
    load_templates,
    theme_schema,
    topic_summary_schema,
    validate_output,
)
from .providers import Engine, LmRequest, SearchRequest


@dataclass(frozen=True, slots=True)
class PipelineOutcome:
    value: Any
    retries_used: int
    call_records: tuple[int, ...] = ()


@dataclass(frozen=True, slots=True)
class EnrichmentPlan:
    """A scheduled enrichment run for one block.

    ``target_generation`` is the generation stamped when the run started;
    applying the result requires the block to still be at that generation,
    which is how superseded jobs get discarded.
    """

    map_id: str
    block_id: str
    target_generation: int
    keywords: tuple[str, ...]
    block_text: str
    command_id: Optional[str] = None


# -- binding formatters --------------------------------------------------------

def _supplements_text(brief: TopicBrief) -> str:
    parts = list(brief.supplements)
    if brief.audience_hint:
        parts.append(f"audience: {brief.audience_hint}")
    return "; ".join(parts) if parts else "(none)"


def _material_text(evidence: tuple[EvidenceItem, ...] | list[EvidenceItem]) -> str:
    lines = [f"{i}. {item.title}: {item.snippet} ({item.url})" for i, item in enumerate(evidence, 1)]
    return "\n".join(lines)


def _pool_text(pool: tuple[InspirationBlock, ...]) -> str:
    return "\n".join(f"{i}. {block.text}" for i, block in enumerate(pool, 1))


def _summary_text(session: Session) -> str:
    if session.summary is None:
        raise NoSummary("no topic summary on session")
    return session.summary.raw_text


# -- structured call with retry accounting ---------------------------------------

def run_structured(
    engine: Engine,
    session: Session,
    template_name: str,
    bindings: dict[str, str],
    schema: OutputSchema,
) -> PipelineOutcome:
    """Issue one lm call and validate; on SchemaError re-issue the identical
    prompt up to config.max_structured_retries, then fail."""
    template = load_templates(session.effective_language())[template_name]
    prompt = assemble_prompt(template, bindings)
    request = LmRequest(
        prompt=prompt,
        temperature=session.config.lm_temperature,
        schema_name=schema.name,
        max_retries=engine.transport_retries,
    )
    attempts = 0
    seqs: list[int] = []
    last: SchemaError | None = None
    while attempts <= session.config.max_structured_retries:
        raw = engine.lm_complete(session.id, request)
        records = engine.audit_log(session.id)
        if records:
            seqs.append(records[-1].seq)
        attempts += 1
        try:
            value = validate_output(raw, schema)
            return PipelineOutcome(value=value, retries_used=attempts - 1, call_records=tuple(seqs))
        except SchemaError as e:
            last = e
    raise StructuredOutputFailed(template_name, attempts, last)


# -- topic ideation ----------------------------------------------------------------

def summarize_topic(engine: Engine, session: Session) -> Session:
    """Generate (or re-generate) the unconfirmed topic summary."""
    if session.summary is not None and session.summary.confirmed:
        raise SummaryAlreadyConfirmed("summary is already confirmed")
    if session.stage is not WorkflowStage.TOPIC_IDEATION:
        raise GuardUnsatisfied("stage=topic_ideation required for summarization")
    base, cmd = next_command_id(session)
    outcome = run_structured(
        engine,
        base,
        "topicSumGen",
        {"topic": base.brief.topic, "supplements": _supplements_text(base.brief)},
        topic_summary_schema(),
    )
    rec = outcome.value
    summary = TopicSummary(
        theme=rec["theme"],
        audience=rec["audience"],
        style=rec["style"],
        techniques=tuple(rec.get("techniques", ())),
        raw_text=rec["summary"],
        confirmed=False,
    )
    updated = replace(base, summary=summary)
    return append_event(
        updated, engine.clock, "topic_summarized", command_id=cmd, retries=str(outcome.retries_used)
    )


def resummarize(engine: Engine, session: Session, new_brief: TopicBrief) -> Session:
    """Replace the brief and regenerate the summary (the re-summary loop)."""
    if session.summary is not None and session.summary.confirmed:
        raise SummaryAlreadyConfirmed("summary is already confirmed")
    if session.stage is not WorkflowStage.TOPIC_IDEATION:
        raise GuardUnsatisfied("stage=topic_ideation required for re-summary")
    validate_brief(new_brief)
    base, cmd = next_command_id(replace(session, brief=new_brief, summary=None))
    outcome = run_structured(
        engine,
        base,
        "topicSumGen",
        {"topic": new_brief.topic, "supplements": _supplements_text(new_brief)},
        topic_summary_schema(),
    )
    rec = outcome.value
    summary = TopicSummary(
        theme=rec["theme"],
        audience=rec["audience"],
        style=rec["style"],
        techniques=tuple(rec.get("techniques", ())),
        raw_text=rec["summary"],
        confirmed=False,
    )
    updated = replace(base, summary=summary)
    return append_event(
        updated, engine.clock, "topic_resummarized", command_id=cmd, retries=str(outcome.retries_used)
    )


def confirm_summary(engine: Engine, session: Session) -> Session:
    """Confirm the summary and advance to inspiration generation."""
    if session.summary is None:
        raise NoSummary("nothing to confirm")
    if session.summary.confirmed:
        raise SummaryAlreadyConfirmed("summary is already confirmed")
    base, cmd = next_command_id(session)
    confirmed = replace(base, summary=replace(base.summary, confirmed=True))
    advanced = transition(
        confirmed, WorkflowStage.INSPIRATION_GENERATION, clock=engine.clock, command_id=cmd
    )
    return append_event(advanced, engine.clock, "summary_confirmed", command_id=cmd)


# -- inspiration generation -----------------------------------------------------------

def derive_themes(
    engine: Engine,
    session: Session,
    *,
    count: int | None = None,
    exclusions: tuple[str, ...] = (),
) -> tuple[Session, list[InspirationTheme]]:
    """Derive ``count`` distinct inspiration themes from the confirmed summary."""
    if session.summary is None or not session.summary.confirmed:
        raise GuardUnsatisfied("confirmed summary required for theme derivation")
    wanted = count if count is not None else session.config.theme_count
    outcome = run_structured(
        engine,
        session,
        "themeGen",
        {
            "summary": _summary_text(session),
            "theme_count": str(wanted),
            "exclusions": "; ".join(exclusions) if exclusions else "(none)",
        },
        theme_schema(wanted),
    )
    themes = []
    for row in outcome.value["themes"]:
        session, theme_id = next_theme_id(session)
        themes.append(InspirationTheme(id=theme_id, label=row["label"], rationale=row["rationale"]))
    return session, themes


def expand_keywords(engine: Engine, session: Session, theme: InspirationTheme) -> list[str]:
    """Expand a theme into distinct search keywords (order-preserving dedup)."""
    outcome = run_structured(
        engine,
        session,
        "keywordGen",
        {"summary": _summary_text(session), "theme": f"{theme.label}: {theme.rationale}"},
        keyword_schema(),
    )
    return list(dict.fromkeys(outcome.value["keywords"]))


def build_inspiration_pool(
    engine: Engine,
    session: Session,
    theme: InspirationTheme,
    keywords: list[str],
    *,
    block_count: int | None = None,
) -> tuple[Session, tuple[InspirationBlock, ...]]:
    """One search, one distillation, one echo per block; returns enriched blocks.

    Evidence is partitioned round-robin across blocks in distillation order so
    every block carries at least one item whenever results >= blocks.
    """
    if not keywords:
        raise GuardUnsatisfied("keywords must be nonempty for pool building")
    results = engine.search(
        session.id, SearchRequest(keywords=tuple(keywords), top_k=session.config.search_top_k)
    )
    if not results:
        raise EmptyEvidence(f"search returned nothing for theme {theme.label}")
    wanted = block_count if block_count is not None else session.config.blocks_per_pool
    # Never distill more blocks than there is evidence to back them.
    n_blocks = min(wanted, len(results))
    outcome = run_structured(
        engine,
        session,
        "blockDistillGen",
        {
            "theme": f"{theme.label}: {theme.rationale}",
            "material": _material_text(results),
            "block_count": str(n_blocks),
        },
        block_schema(n_blocks),
    )
    texts = outcome.value["blocks"]
    shares: list[list[EvidenceItem]] = [[] for _ in range(n_blocks)]
    for i, item in enumerate(results):
        shares[i % n_blocks].append(item)
    blocks = []
    for text, share in zip(texts, shares):
        session, block_id = next_block_id(session)
        echo_out = run_structured(
            engine,
            session,
            "inspirationPopupGen",
            {"summary": _summary_text(session), "block": text, "material": _material_text(share)},
            echo_schema(),
        )
        blocks.append(
            InspirationBlock(
                id=block_id,
                text=text,
                origin=BlockOrigin.AI,
                evidence=tuple(share),
                echo=EchoSummary(block_id=block_id, text=echo_out.value["echo"], source_generation=1),
                enrichment_state=EnrichmentState.ENRICHED,
                generation=1,
            )
        )
    return session, tuple(blocks)


def _append_draft(engine: Engine, session: Session, map_id: str, command_id: str | None) -> Session:
    """Draft one prototype from the map's pool and append it as the next version."""
    map_ = session.map_by_id(map_id)
    if map_ is None:
        raise UnknownMap(map_id)
    if not map_.pool:
        raise EmptyPool(f"map {map_id} has no inspiration blocks")
    for block in map_.pool:
        if block.enrichment_state is not EnrichmentState.ENRICHED:
            raise BlocksPending(block.id)
    outcome = run_structured(
        engine,
        session,
        "jokeDraftGen",
        {"summary": _summary_text(session), "blocks": _pool_text(map_.pool)},
        joke_draft_schema(),
    )
    rec = outcome.value
    version = len(map_.prototypes) + 1
    prototype = JokePrototype(
        version=version,
        title=rec["title"],
        setup=rec["setup"],
        punchline=rec["punchline"],
        informed_by=tuple(b.id for b in map_.pool),
        created_at=engine.clock.now(),
    )
    updated = replace(
        map_,
        prototypes=map_.prototypes + (prototype,),
        current_version=version,
        draft_state=DraftState.FRESH,
    )
    session = replace_map(session, updated)
    return append_event(
        session,
        engine.clock,
        "draft_appended",
        command_id=command_id,
        map=map_id,
        version=str(version),
    )


def draft_joke(engine: Engine, session: Session, map_id: str) -> Session:
    """Draft the first (or next) prototype for a map, as an explicit command."""
    if session.stage is not WorkflowStage.VALIDATION_REFINEMENT:
        raise GuardUnsatisfied("stage=validation_refinement required for drafting")
    base, cmd = next_command_id(session)
    drafted = _append_draft(engine, base, map_id, cmd)
    return append_event(drafted, engine.clock, "joke_drafted", command_id=cmd, map=map_id)


def regenerate_joke(engine: Engine, session: Session, map_id: str) -> Session:
    """Append a fresh prototype version; prior versions stay retrievable."""
    if session.stage is not WorkflowStage.VALIDATION_REFINEMENT:
        raise GuardUnsatisfied("stage=validation_refinement required for regeneration")
    base, cmd = next_command_id(session)
    drafted = _append_draft(engine, base, map_id, cmd)
    return append_event(drafted, engine.clock, "joke_regenerated", command_id=cmd, map=map_id)


def _build_theme_map(
    engine: Engine, session: Session, theme: InspirationTheme, command_id: str | None
) -> Session:
    """Keyword expansion, pool building, and drafting for one theme."""
    session, map_id = next_map_id(session)
    keywords = expand_keywords(engine, session, theme)
    session, blocks = build_inspiration_pool(engine, session, theme, keywords)
    map_ = JokeMap(id=map_id, mode=MapMode.AI_GENERATED, theme=theme, pool=blocks)
    session = replace(session, maps=session.maps + (map_,))
    session = _append_draft(engine, session, map_id, command_id)
    return append_event(
        session, engine.clock, "map_populated", command_id=command_id, map=map_id, theme=theme.label
    )


def initial_generation(engine: Engine, session: Session) -> Session:
    """Derive themes and build one complete joke map per theme.

    A failing theme degrades to an annotated empty map; the whole operation
    fails only when every theme fails.
    """
    if session.stage is not WorkflowStage.INSPIRATION_GENERATION:
        raise GuardUnsatisfied("stage=inspiration_generation required for initial generation")
    base, cmd = next_command_id(session)
    base, themes = derive_themes(engine, base)
    successes = 0
    for theme in themes:
        checkpoint = base
        try:
            base = _build_theme_map(engine, base, theme, cmd)
            successes += 1
        except EngineError as e:
            base, map_id = next_map_id(checkpoint)
            failed = JokeMap(
                id=map_id,
                mode=MapMode.AI_GENERATED,
                theme=theme,
                annotation=e.code,
            )
            base = replace(base, maps=base.maps + (failed,))
            base = append_event(
                base, engine.clock, "map_failed", command_id=cmd, map=map_id, error=e.code
            )
    if successes == 0:
        raise InitialGenerationFailed("every theme failed during initial generation")
    advanced = transition(base, WorkflowStage.VALIDATION_REFINEMENT, clock=engine.clock, command_id=cmd)
    return append_event(advanced, engine.clock, "initial_generation_completed", command_id=cmd)


# -- enrichment (shared by edit, manual add, completion) --------------------------------

def plan_reenrichment(
    session: Session,
    map_id: str,
    block_id: str,
    command_id: str | None = None,
    *,
    allow_enriched: bool = False,
) -> tuple[Session, EnrichmentPlan]:
    """Start an enrichment run: bump the block generation and fix the target."""
    map_ = session.map_by_id(map_id)
    if map_ is None:
        raise UnknownMap(map_id)
    block = map_.block(block_id)
    if block is None:
        raise UnknownBlock(block_id)
    if block.enrichment_state is EnrichmentState.ENRICHED and not allow_enriched:
        raise NotStale(f"block {block_id} is already enriched")
    target = block.generation + 1
    session = replace_map(session, replace_block(map_, replace(block, generation=target)))
    plan = EnrichmentPlan(
        map_id=map_id,
        block_id=block_id,
        target_generation=target,
        keywords=(block.text,),
        block_text=block.text,
        command_id=command_id,
    )
    return session, plan


def execute_enrichment(
    engine: Engine, session: Session, plan: EnrichmentPlan
) -> tuple[tuple[EvidenceItem, ...], str]:
    """Provider side of an enrichment run: one search plus one echo call."""
    results = engine.search(
        session.id, SearchRequest(keywords=plan.keywords, top_k=session.config.search_top_k)
    )
    if not results:
        raise EmptyEvidence(f"search returned nothing for block {plan.block_id}")
    echo_out = run_structured(
        engine,
        session,
        "inspirationPopupGen",
        {
            "summary": _summary_text(session),
            "block": plan.block_text,
            "material": _material_text(results),
        },
        echo_schema(),
    )
    return tuple(results), echo_out.value["echo"]


def apply_enrichment(
    engine: Engine,
    session: Session,
    plan: EnrichmentPlan,
    evidence: tuple[EvidenceItem, ...],
    echo_text: str,
) -> tuple[Session, bool]:
    """Apply a finished enrichment run; a stale target generation means a newer
    run superseded this one and the result is discarded."""
    map_ = session.map_by_id(plan.map_id)
    block = map_.block(plan.block_id) if map_ is not None else None
    if map_ is None or block is None or block.generation != plan.target_generation:
        return session, False
    updated = replace(
        block,
        evidence=evidence,
        echo=EchoSummary(block_id=block.id, text=echo_text, source_generation=plan.target_generation),
        enrichment_state=EnrichmentState.ENRICHED,
        annotation=None,
    )
    session = replace_map(session, replace_block(map_, updated))
    session = append_event(
        session,
        engine.clock,
        "enrichment_applied",
        command_id=plan.command_id,
        map=plan.map_id,
        block=plan.block_id,
        generation=str(plan.target_generation),
    )
    return session, True


def fail_enrichment(
    engine: Engine, session: Session, plan: EnrichmentPlan, error: EngineError
) -> Session:
    """Record a failed enrichment run: the block stays stale and annotated."""
    map_ = session.map_by_id(plan.map_id)
    block = map_.block(plan.block_id) if map_ is not None else None
    if map_ is None or block is None or block.generation != plan.target_generation:
        return session
    updated = replace(block, enrichment_state=EnrichmentState.STALE, annotation=error.code)
    session = replace_map(session, replace_block(map_, updated))
    return append_event(
        session,
        engine.clock,
        "enrichment_failed",
        command_id=plan.command_id,
        map=plan.map_id,
        block=plan.block_id,
        error=error.code,
    )


def run_enrichment(engine: Engine, session: Session, plan: EnrichmentPlan) -> Session:
    """Execute and apply one enrichment plan inline, absorbing provider errors
    into the block state."""
    try:
        evidence, echo_text = execute_enrichment(engine, session, plan)
    except EngineError as e:
        return fail_enrichment(engine, session, plan, e)
    session, _ = apply_enrichment(engine, session, plan, evidence, echo_text)
    return session


def reenrich_block(engine: Engine, session: Session, map_id: str, block_id: str) -> Session:
    """Re-run search and echo generation for a stale or pending block."""
    session, plan = plan_reenrichment(session, map_id, block_id)
    return run_enrichment(engine, session, plan)


def complete_manual_map(engine: Engine, session: Session, map_id: str) -> Session:
    """Enrich every unenriched block of a manual map, then draft its prototype.

    Any enrichment failure aborts before drafting; failed blocks stay stale.
    """
    if session.stage is not WorkflowStage.VALIDATION_REFINEMENT:
        raise GuardUnsatisfied("stage=validation_refinement required for map completion")
    map_ = session.map_by_id(map_id)
    if map_ is None:
        raise UnknownMap(map_id)
    if map_.mode is not MapMode.MANUAL:
        raise GuardUnsatisfied("manual map required for completion")
    if not map_.pool:
        raise EmptyPool(f"map {map_id} has no inspiration blocks")
    base, cmd = next_command_id(session)
    all_ok = True
    for block in map_.pool:
        if block.enrichment_state is EnrichmentState.ENRICHED:
            continue
        base, plan = plan_reenrichment(base, map_id, block.id, cmd)
        base = run_enrichment(engine, base, plan)
        refreshed = base.map_by_id(map_id).block(block.id)
        if refreshed.enrichment_state is not EnrichmentState.ENRICHED:
            all_ok = False
    if all_ok:
        base = _append_draft(engine, base, map_id, cmd)
    return append_event(
        base,
        engine.clock,
        "manual_map_completed",
        command_id=cmd,
        map=map_id,
        drafted=str(all_ok).lower(),
    )
