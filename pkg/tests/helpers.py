"""Shared fixture-script builders and the random-walk driver."""

from __future__ import annotations

import json
import random
import threading

from jokeasy import canvas, pipeline
from jokeasy.errors import EngineError
from jokeasy.model import (
    EngineConfig,
    EnrichmentState,
    MapMode,
    Session,
    TickingClock,
    TopicBrief,
    WorkflowStage,
    check_invariants,
)
from jokeasy.providers import (
    Engine,
    FixtureEntry,
    FixtureLmProvider,
    FixtureScript,
    FixtureSearchProvider,
    FixtureState,
    fixture_providers,
)


def lm_entry(template: str, payload, *, fenced: bool = False) -> FixtureEntry:
    text = json.dumps(payload, ensure_ascii=False)
    if fenced:
        text = f"Here is the record:\n```json\n{text}\n```"
    return FixtureEntry(kind="lm", matcher=template, response=text)


def raw_lm_entry(template: str, text: str) -> FixtureEntry:
    return FixtureEntry(kind="lm", matcher=template, response=text)


def search_entry(pattern: str, items: list[dict]) -> FixtureEntry:
    return FixtureEntry(kind="search", matcher=pattern, response=json.dumps(items, ensure_ascii=False))


def error_entry(kind: str, matcher: str, error: str = "ProviderUnavailable", retryable: bool = False) -> FixtureEntry:
    return FixtureEntry(kind=kind, matcher=matcher, error=error, error_retryable=retryable)


def summary_payload(topic: str = "Troubles of Adult Life") -> dict:
    return {
        "theme": f"{topic}, seen through small daily defeats",
        "audience": "young professionals",
        "style": "exaggerated, self-deprecating",
        "techniques": ["exaggeration", "callback"],
        "summary": f"Jokes about {topic.lower()} for young professionals, leaning on exaggeration.",
    }


def themes_payload(labels: list[str]) -> dict:
    return {"themes": [{"label": label, "rationale": f"{label} grounds the brief in shared experience."} for label in labels]}


def keywords_payload(words: list[str]) -> dict:
    return {"keywords": words}


def blocks_payload(texts: list[str]) -> dict:
    return {"blocks": texts}


def echo_payload(text: str) -> dict:
    return {"echo": text}


def draft_payload(title: str, version: int = 1) -> dict:
    return {
        "title": title,
        "setup": f"Setup v{version} for {title}: everyone recognizes the scene.",
        "punchline": f"Punchline v{version} for {title}: the scene recognizes you back.",
    }


def results_payload(tag: str, count: int = 5) -> list[dict]:
    return [
        {
            "url": f"https://example.com/{tag}/{i}",
            "title": f"{tag} story {i}",
            "snippet": f"A relatable anecdote about {tag}, number {i}.",
        }
        for i in range(1, count + 1)
    ]


def theme_pipeline_entries(
    label: str,
    *,
    blocks: int = 4,
    results: int = 5,
    draft_title: str | None = None,
    version: int = 1,
) -> list[FixtureEntry]:
    """Entries for one theme's sub-pipeline: keywords, search, distill, echoes, draft."""
    tag = label.lower().replace(" ", "-")
    entries = [
        lm_entry("keywordGen", keywords_payload([f"{tag} stories", f"{tag} complaints"])),
        search_entry("*", results_payload(tag, results)),
        lm_entry("blockDistillGen", blocks_payload([f"{label}: distilled note {i}" for i in range(1, blocks + 1)])),
    ]
    entries += [
        lm_entry("inspirationPopupGen", echo_payload(f"Note {i} about {label} lands because it is familiar."))
        for i in range(1, blocks + 1)
    ]
    entries.append(lm_entry("jokeDraftGen", draft_payload(draft_title or label, version)))
    return entries


def initial_generation_entries(
    labels: list[str] | None = None,
    *,
    config: EngineConfig | None = None,
    with_summary: bool = True,
) -> list[FixtureEntry]:
    """A clean fixture covering summarize + initial_generation under config."""
    cfg = config or EngineConfig()
    labels = labels or [f"Angle {i}" for i in range(1, cfg.theme_count + 1)]
    entries: list[FixtureEntry] = []
    if with_summary:
        entries.append(lm_entry("topicSumGen", summary_payload()))
    entries.append(lm_entry("themeGen", themes_payload(labels)))
    for label in labels:
        entries += theme_pipeline_entries(label, blocks=cfg.blocks_per_pool, results=cfg.search_top_k)
    return entries


def make_engine(
    entries: list[FixtureEntry],
    *,
    strict: bool = False,
    transport_retries: int = 2,
) -> tuple[Engine, FixtureState]:
    clock = TickingClock()
    script = FixtureScript(entries=tuple(entries), strict=strict)
    lm, search, state = fixture_providers(script, clock)
    engine = Engine(lm, search, clock=clock, transport_retries=transport_retries)
    return engine, state


# -- dynamic feed + random walk --------------------------------------------------


class FeedState:
    """Fixture-state variant whose entries are pushed just before each command,
    so a random walk can script exactly the calls it is about to trigger."""

    def __init__(self):
        self._entries: list[FixtureEntry] = []
        self._lock = threading.Lock()

    def push(self, entries) -> None:
        with self._lock:
            self._entries.extend(entries)

    def take(self, kind: str, key: str):
        with self._lock:
            for i, entry in enumerate(self._entries):
                if entry.matches(kind, key):
                    return self._entries.pop(i)
            return None

    realize = staticmethod(FixtureState.realize)


def feed_engine(transport_retries: int = 0) -> tuple[Engine, FeedState]:
    feed = FeedState()
    clock = TickingClock()
    engine = Engine(
        FixtureLmProvider(feed),
        FixtureSearchProvider(feed, clock),
        clock=clock,
        transport_retries=transport_retries,
    )
    return engine, feed


_INJECTABLE = ("ProviderUnavailable", "Timeout", "QuotaExceeded")


class RandomWalk:
    """Drives one random legal command sequence against a scripted feed.

    With injection enabled, a fraction of scripted provider responses are
    replaced by transport errors or garbage, at random positions.
    """

    def __init__(self, seed: int, inject: bool = False, max_commands: int = 8):
        self.rng = random.Random(seed)
        self.inject = inject
        self.max_commands = max_commands
        self.config = EngineConfig(
            theme_count=self.rng.randint(1, 3),
            blocks_per_pool=self.rng.randint(1, 3),
            search_top_k=self.rng.randint(2, 5),
            max_structured_retries=self.rng.randint(0, 2),
        )
        self.engine, self.feed = feed_engine()
        self.failures_injected = 0
        self.commands_run = 0
        self.errors_seen = 0
        self.touched: str | None = None

    def _corrupt(self, entries: list[FixtureEntry]) -> list[FixtureEntry]:
        if self.inject and entries and self.rng.random() < 0.3:
            i = self.rng.randrange(len(entries))
            base = entries[i]
            self.failures_injected += 1
            if self.rng.random() < 0.5:
                entries[i] = FixtureEntry(
                    kind=base.kind, matcher=base.matcher, error=self.rng.choice(_INJECTABLE)
                )
            else:
                entries[i] = FixtureEntry(kind=base.kind, matcher=base.matcher, response="<garbled>")
        return entries

    def _tag(self) -> str:
        return f"w{self.rng.randrange(10**6)}"

    def _theme_bundle(self, label: str) -> list[FixtureEntry]:
        results_n = self.rng.randint(1, self.config.search_top_k)
        blocks_n = min(self.config.blocks_per_pool, results_n)
        entries = [
            lm_entry("keywordGen", keywords_payload([f"{label} kw"])),
            search_entry("*", results_payload(label, results_n)),
            lm_entry("blockDistillGen", blocks_payload([f"{label} note {i}" for i in range(blocks_n)])),
        ]
        entries += [lm_entry("inspirationPopupGen", echo_payload(f"{label} echo {i}")) for i in range(blocks_n)]
        entries.append(lm_entry("jokeDraftGen", draft_payload(label)))
        return entries

    def _enrichment_bundle(self) -> list[FixtureEntry]:
        tag = self._tag()
        return [
            search_entry("*", results_payload(tag, self.rng.randint(1, self.config.search_top_k))),
            lm_entry("inspirationPopupGen", echo_payload(f"{tag} echo")),
        ]

    def _push(self, entries: list[FixtureEntry]) -> None:
        self.feed.push(self._corrupt(entries))

    def _step(self, session: Session) -> Session:
        rng, engine = self.rng, self.engine
        stage = session.stage
        if stage is WorkflowStage.TOPIC_IDEATION:
            if session.summary is None or rng.random() < 0.3:
                self._push([lm_entry("topicSumGen", summary_payload(self._tag()))])
                return pipeline.summarize_topic(engine, session)
            return pipeline.confirm_summary(engine, session)
        if stage is WorkflowStage.INSPIRATION_GENERATION:
            labels = [f"{self._tag()}-{i}" for i in range(self.config.theme_count)]
            bundle = [lm_entry("themeGen", themes_payload(labels))]
            for label in labels:
                bundle += self._theme_bundle(label)
            self._push(bundle)
            return pipeline.initial_generation(engine, session)
        if stage is WorkflowStage.FINAL_SYNTHESIS:
            removable = [m for m in session.maps if m.id != session.final_map_id]
            if removable and rng.random() < 0.5:
                return canvas.remove_joke_map(engine, session, rng.choice(removable).id).session
            return session

        # validation refinement
        action = rng.randrange(9)
        maps = list(session.maps)
        if action == 0 and maps:
            map_ = rng.choice(maps)
            if map_.pool:
                self._push(self._enrichment_bundle())
                block = rng.choice(map_.pool)
                self.touched = map_.id
                return canvas.edit_block(engine, session, map_.id, block.id, f"edited {self._tag()}").session
        elif action == 1 and maps:
            map_ = rng.choice(maps)
            if map_.pool:
                self.touched = map_.id
                return canvas.delete_block(engine, session, map_.id, rng.choice(map_.pool).id).session
        elif action == 2 and maps:
            map_ = rng.choice(maps)
            self._push(self._enrichment_bundle())
            self.touched = map_.id
            return canvas.add_block_manual(engine, session, map_.id, f"idea {self._tag()}").session
        elif action == 3:
            themed = [m for m in maps if m.theme is not None]
            if themed:
                map_ = rng.choice(themed)
                tag = self._tag()
                self._push(
                    [
                        search_entry("*", results_payload(tag, self.rng.randint(1, self.config.search_top_k))),
                        lm_entry("blockDistillGen", blocks_payload([f"{tag} note"])),
                        lm_entry("inspirationPopupGen", echo_payload(f"{tag} echo")),
                    ]
                )
                self.touched = map_.id
                return canvas.add_block_ai(engine, session, map_.id).session
        elif action == 4:
            if rng.random() < 0.5:
                return canvas.add_joke_map(engine, session, MapMode.MANUAL).session
            label = self._tag()
            bundle = [lm_entry("themeGen", themes_payload([label]))] + self._theme_bundle(label)
            self._push(bundle)
            return canvas.add_joke_map(engine, session, MapMode.AI_GENERATED).session
        elif action == 5 and len(maps) > 1:
            return canvas.remove_joke_map(engine, session, rng.choice(maps).id).session
        elif action == 6 and maps:
            map_ = rng.choice(maps)
            if map_.pool:
                self._push([lm_entry("jokeDraftGen", draft_payload(self._tag(), map_.current_version + 1))])
                self.touched = map_.id
                return pipeline.regenerate_joke(engine, session, map_.id)
        elif action == 7:
            manual = [m for m in maps if m.mode is MapMode.MANUAL and m.pool]
            if manual:
                map_ = rng.choice(manual)
                bundle = []
                for block in map_.pool:
                    if block.enrichment_state is not EnrichmentState.ENRICHED:
                        bundle += self._enrichment_bundle()
                bundle.append(lm_entry("jokeDraftGen", draft_payload(self._tag())))
                self._push(bundle)
                self.touched = map_.id
                return pipeline.complete_manual_map(engine, session, map_.id)
        elif action == 8:
            fresh = [m for m in maps if m.prototypes and m.draft_state.value == "fresh"]
            if fresh:
                return canvas.finalize_joke(engine, session, rng.choice(fresh).id).session
        return session

    def run(self) -> Session:
        brief = TopicBrief(topic=f"Walk topic {self.rng.randrange(10**6)}", supplements=("s",))
        session = self.engine.create_session(brief, self.config)
        for _ in range(self.max_commands):
            before = session
            self.touched = None
            try:
                session = self._step(session)
            except EngineError:
                self.errors_seen += 1
                session = before
            if session is not before:
                self.commands_run += 1
                violations = check_invariants(session)
                assert violations == [], f"walk violated invariants: {violations}"
                assert len(session.event_log) > len(before.event_log), "mutation without event"
                for old_map in before.maps:
                    new_map = session.map_by_id(old_map.id)
                    if new_map is None:
                        continue
                    assert new_map.prototypes[: len(old_map.prototypes)] == old_map.prototypes, (
                        "prototype history must be append-only"
                    )
                    if old_map.id != self.touched:
                        assert new_map is old_map, (
                            f"command touching {self.touched} also changed map {old_map.id}"
                        )
        return session
