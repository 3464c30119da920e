"""Persistence round-trips, atomicity, and final-joke export."""

from __future__ import annotations

import json
import os
import random

import pytest

from helpers import (
    draft_payload,
    echo_payload,
    initial_generation_entries,
    lm_entry,
    make_engine,
    results_payload,
    search_entry,
)
from jokeasy import canvas, pipeline
from jokeasy.errors import (
    CorruptEnvelope,
    InvariantViolation,
    IoFailure,
    NotFinalized,
    UnknownSession,
    UnsupportedVersion,
)
from jokeasy.model import MapMode, TickingClock, TopicBrief, check_invariants
from jokeasy.store import (
    export_final,
    list_sessions,
    load_session,
    save_session,
    session_digest,
    session_path,
    session_to_dict,
)


def build_session(seed: int = 0):
    """A refined session grown by a few seeded random commands."""
    rng = random.Random(seed)
    extra = []
    for _ in range(6):
        extra.append(search_entry("*", results_payload(f"r{rng.randrange(100)}")))
        extra.append(lm_entry("inspirationPopupGen", echo_payload(f"echo {rng.randrange(100)}")))
    extra += [lm_entry("jokeDraftGen", draft_payload("Angle 1", v)) for v in (2, 3)]
    engine, _ = make_engine(initial_generation_entries() + extra)
    brief = TopicBrief(topic=f"Topic {seed}", supplements=("one", "two"))
    session = engine.create_session(brief)
    session = pipeline.summarize_topic(engine, session)
    session = pipeline.confirm_summary(engine, session)
    session = pipeline.initial_generation(engine, session)
    for _ in range(rng.randrange(4)):
        map_ = rng.choice(session.maps)
        action = rng.randrange(3)
        if action == 0 and map_.pool:
            session = canvas.edit_block(engine, session, map_.id, rng.choice(map_.pool).id, "edited").session
        elif action == 1 and len(map_.pool) > 1:
            session = canvas.delete_block(engine, session, map_.id, rng.choice(map_.pool).id).session
        else:
            session = canvas.add_block_manual(engine, session, map_.id, f"idea {seed}").session
    return engine, session


class TestRoundTrip:
    def test_save_then_load_is_identity(self, tmp_path):
        _, session = build_session()
        save_session(session, tmp_path, TickingClock())
        loaded = load_session(session.id, tmp_path)
        assert loaded == session
        assert session_digest(loaded) == session_digest(session)
        assert check_invariants(loaded) == []

    def test_save_twice_overwrites_single_file(self, tmp_path):
        _, session = build_session()
        save_session(session, tmp_path)
        save_session(session, tmp_path)
        assert list_sessions(tmp_path) == [session.id]

    def test_refuses_invariant_violations(self, tmp_path):
        from dataclasses import replace

        _, session = build_session()
        broken = replace(session, maps=session.maps + (session.maps[0],))
        with pytest.raises(InvariantViolation):
            save_session(broken, tmp_path)

    def test_io_failure_wrapped(self, tmp_path):
        _, session = build_session()
        target = tmp_path / "blocked"
        target.write_text("a file, not a directory")
        with pytest.raises(IoFailure):
            save_session(session, target / "nested")


class TestLoadErrors:
    def test_unknown_session(self, tmp_path):
        with pytest.raises(UnknownSession):
            load_session("s-404", tmp_path)

    def test_truncated_file(self, tmp_path):
        _, session = build_session()
        path = save_session(session, tmp_path)
        path.write_text(path.read_text(encoding="utf-8")[:120], encoding="utf-8")
        with pytest.raises(CorruptEnvelope):
            load_session(session.id, tmp_path)

    def test_future_format_version(self, tmp_path):
        _, session = build_session()
        path = save_session(session, tmp_path)
        envelope = json.loads(path.read_text(encoding="utf-8"))
        envelope["format_version"] = 2
        path.write_text(json.dumps(envelope), encoding="utf-8")
        with pytest.raises(UnsupportedVersion):
            load_session(session.id, tmp_path)

    def test_tampered_record(self, tmp_path):
        _, session = build_session()
        path = save_session(session, tmp_path)
        envelope = json.loads(path.read_text(encoding="utf-8"))
        del envelope["session"]["brief"]
        path.write_text(json.dumps(envelope), encoding="utf-8")
        with pytest.raises(CorruptEnvelope):
            load_session(session.id, tmp_path)


class TestAtomicity:
    def test_crash_between_write_and_rename_preserves_previous(self, tmp_path, monkeypatch):
        engine, session = build_session()
        save_session(session, tmp_path)
        before = session_path(tmp_path, session.id).read_text(encoding="utf-8")

        mutated = canvas.add_joke_map(engine, session, MapMode.MANUAL).session

        real_replace = os.replace

        def crash(src, dst):
            raise OSError("injected crash before rename")

        monkeypatch.setattr(os, "replace", crash)
        with pytest.raises(IoFailure):
            save_session(mutated, tmp_path)
        monkeypatch.setattr(os, "replace", real_replace)

        assert session_path(tmp_path, session.id).read_text(encoding="utf-8") == before
        assert load_session(session.id, tmp_path) == session


class TestExport:
    def test_export_lists_prototype_and_sources(self):
        engine, session = build_session()
        target = next(m for m in session.maps if m.draft_state.value == "fresh")
        session = canvas.finalize_joke(engine, session, target.id).session
        document = export_final(session)
        final = session.map_by_id(session.final_map_id)
        assert final.prototypes[-1].title in document
        assert final.prototypes[-1].punchline in document
        for block in final.pool:
            assert block.text in document
            assert block.evidence[0].url in document

    def test_not_finalized_rejected(self):
        _, session = build_session()
        with pytest.raises(NotFinalized):
            export_final(session)

    def test_export_is_deterministic(self):
        engine, session = build_session()
        target = next(m for m in session.maps if m.draft_state.value == "fresh")
        session = canvas.finalize_joke(engine, session, target.id).session
        assert export_final(session).encode() == export_final(session).encode()


class TestDictShape:
    def test_wire_field_names_stable(self):
        _, session = build_session()
        d = session_to_dict(session)
        assert set(d) == {
            "id",
            "brief",
            "config",
            "stage",
            "summary",
            "maps",
            "final_map_id",
            "event_log",
            "counters",
        }
        assert set(d["maps"][0]) == {
            "id",
            "mode",
            "theme",
            "pool",
            "prototypes",
            "current_version",
            "draft_state",
            "annotation",
        }
