"""Core model: construction, stage machine, invariant checking."""

from __future__ import annotations

from dataclasses import replace

import pytest

from jokeasy.errors import EmptyTopic, GuardUnsatisfied, IllegalTransition, InvalidConfig
from jokeasy.model import (
    BlockOrigin,
    DraftState,
    EchoSummary,
    EngineConfig,
    EnrichmentState,
    InspirationBlock,
    JokeMap,
    MapMode,
    Session,
    TickingClock,
    TopicBrief,
    TopicSummary,
    WorkflowStage,
    check_invariants,
    create_session,
    legal_transition,
    transition,
)


def make_session(brief, config=None, clock=None) -> Session:
    return create_session(brief, config, session_id="s-1", clock=clock or TickingClock())


class TestCreateSession:
    def test_fresh_session_at_topic_ideation(self, brief, clock):
        session = make_session(brief, clock=clock)
        assert session.stage is WorkflowStage.TOPIC_IDEATION
        assert session.maps == ()
        assert [e.name for e in session.event_log] == ["session_created"]

    def test_blank_topic_rejected(self, clock):
        with pytest.raises(EmptyTopic):
            make_session(TopicBrief(topic="   "), clock=clock)

    def test_config_bounds_rejected(self, brief, clock):
        with pytest.raises(InvalidConfig):
            make_session(brief, EngineConfig(theme_count=0), clock=clock)
        with pytest.raises(InvalidConfig):
            make_session(brief, EngineConfig(lm_temperature=1.5), clock=clock)
        with pytest.raises(InvalidConfig):
            make_session(brief, EngineConfig(max_structured_retries=-1), clock=clock)

    def test_fresh_session_has_no_violations(self, brief):
        assert check_invariants(make_session(brief)) == []


class TestTransitions:
    def test_legal_table(self):
        ti, ig = WorkflowStage.TOPIC_IDEATION, WorkflowStage.INSPIRATION_GENERATION
        vr, fs = WorkflowStage.VALIDATION_REFINEMENT, WorkflowStage.FINAL_SYNTHESIS
        assert legal_transition(ti, ti)
        assert legal_transition(ti, ig)
        assert legal_transition(ig, vr)
        assert legal_transition(vr, vr)
        assert legal_transition(vr, fs)
        assert not legal_transition(fs, ti)
        assert not legal_transition(ti, vr)
        assert not legal_transition(ig, fs)
        assert not legal_transition(fs, fs)

    def test_confirmed_summary_gates_inspiration_generation(self, brief, clock):
        session = make_session(brief, clock=clock)
        with pytest.raises(GuardUnsatisfied) as exc:
            transition(session, WorkflowStage.INSPIRATION_GENERATION, clock=clock)
        assert "summary" in str(exc.value)

        summary = TopicSummary(
            theme="t", audience="a", style="s", techniques=(), raw_text="r", confirmed=True
        )
        ready = replace(session, summary=summary)
        moved = transition(ready, WorkflowStage.INSPIRATION_GENERATION, clock=clock)
        assert moved.stage is WorkflowStage.INSPIRATION_GENERATION
        assert moved.event_log[-1].name == "stage_changed"

    def test_no_backward_jump(self, brief, clock):
        session = replace(make_session(brief, clock=clock), stage=WorkflowStage.FINAL_SYNTHESIS)
        with pytest.raises(IllegalTransition) as exc:
            transition(session, WorkflowStage.TOPIC_IDEATION, clock=clock)
        assert "final_synthesis" in str(exc.value) and "topic_ideation" in str(exc.value)


class TestInvariants:
    def test_enriched_block_without_echo_is_flagged(self, brief):
        session = make_session(brief)
        bad_block = InspirationBlock(
            id="blk-1",
            text="x",
            origin=BlockOrigin.AI,
            enrichment_state=EnrichmentState.ENRICHED,
            generation=1,
        )
        bad_map = JokeMap(id="map-1", mode=MapMode.AI_GENERATED, pool=(bad_block,))
        broken = replace(session, maps=(bad_map,))
        violations = check_invariants(broken)
        assert any(v.type_name == "InspirationBlock" and v.field == "echo" for v in violations)

    def test_echo_generation_mismatch_is_flagged(self, brief):
        session = make_session(brief)
        block = InspirationBlock(
            id="blk-1",
            text="x",
            origin=BlockOrigin.AI,
            evidence=(),
            echo=EchoSummary(block_id="blk-1", text="e", source_generation=1),
            enrichment_state=EnrichmentState.ENRICHED,
            generation=2,
        )
        broken = replace(session, maps=(JokeMap(id="map-1", mode=MapMode.AI_GENERATED, pool=(block,)),))
        violations = check_invariants(broken)
        assert any(v.field == "source_generation" for v in violations)

    def test_duplicate_ids_flagged(self, brief):
        session = make_session(brief)
        m = JokeMap(id="map-1", mode=MapMode.MANUAL)
        broken = replace(session, maps=(m, m))
        assert any("unique" in v.rule for v in check_invariants(broken))

    def test_final_stage_requires_fresh_final_map(self, brief):
        session = make_session(brief)
        summary = TopicSummary(
            theme="t", audience="a", style="s", techniques=(), raw_text="r", confirmed=True
        )
        broken = replace(
            session,
            stage=WorkflowStage.FINAL_SYNTHESIS,
            summary=summary,
            final_map_id="map-9",
        )
        assert any(v.field == "final_map_id" for v in check_invariants(broken))

    def test_manual_map_without_prototype_must_be_empty(self, brief):
        session = make_session(brief)
        bad = JokeMap(id="map-1", mode=MapMode.MANUAL, draft_state=DraftState.STALE)
        broken = replace(session, maps=(bad,))
        assert any(v.field == "draft_state" for v in check_invariants(broken))
