"""Language-model and web-search provider contracts.

Ships a deterministic fixture provider pair driven by an ordered script of
canned responses, live HTTP-backed implementations, and a per-session audit
log. Transport retries live here; schema-validation retries belong to the
pipeline.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from fnmatch import fnmatch
from typing import Callable, Optional, Protocol, TypeVar

from . import errors
from .errors import ProviderError, ProviderUnavailable, QuotaExceeded, ScriptExhausted, Timeout, UnknownSession
from .model import Clock, EvidenceItem, SequentialIds, SystemClock, create_session
from .prompts import RenderedPrompt

ENV_LM_API_KEY = "JOKEASY_LM_API_KEY"
ENV_LM_BASE_URL = "JOKEASY_LM_BASE_URL"
ENV_LM_MODEL = "JOKEASY_LM_MODEL"
ENV_SEARCH_API_KEY = "JOKEASY_SEARCH_API_KEY"

# Documented model context ceiling; no token budgeting is performed against it.
LM_CONTEXT_CEILING_TOKENS = 128_000

T = TypeVar("T")


@dataclass(frozen=True, slots=True)
class LmRequest:
    prompt: RenderedPrompt
    temperature: float
    schema_name: str
    max_retries: int = 2

    def __post_init__(self):
        if not (0.0 <= self.temperature <= 1.0):
            raise ValueError("temperature must be within [0, 1]")


@dataclass(frozen=True, slots=True)
class SearchRequest:
    keywords: tuple[str, ...]
    top_k: int
    freshness_hint: Optional[float] = None  # seconds

    def __post_init__(self):
        if not self.keywords:
            raise ValueError("keywords must be nonempty")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")

    def joined(self) -> str:
        return " ".join(self.keywords)


@dataclass(frozen=True, slots=True)
class ProviderCallRecord:
    seq: int
    kind: str  # lm | search
    request_digest: str
    outcome: str  # ok | retried(n) | failed
    latency: float


def lm_request_digest(request: LmRequest) -> str:
    sha = hashlib.sha256(request.prompt.text.encode("utf-8")).hexdigest()[:12]
    return f"lm:{request.prompt.template_name}:temp={request.temperature}:sha256={sha}"


def search_request_digest(request: SearchRequest) -> str:
    sha = hashlib.sha256(request.joined().encode("utf-8")).hexdigest()[:12]
    return f"search:top_k={request.top_k}:sha256={sha}"


class LmProvider(Protocol):
    def complete(self, request: LmRequest) -> str: ...


class SearchProvider(Protocol):
    def search(self, request: SearchRequest) -> list[EvidenceItem]: ...


# -- fixture scripts -----------------------------------------------------------

@dataclass(frozen=True, slots=True)
class FixtureEntry:
    kind: str  # lm | search
    matcher: str  # template name (lm) or keyword pattern (search); "*" matches all
    response: str = ""
    delay: float = 0.0
    error: Optional[str] = None  # error class name to raise instead of responding
    error_retryable: bool = False

    def matches(self, kind: str, key: str) -> bool:
        if self.kind != kind:
            return False
        if self.matcher == "*":
            return True
        if kind == "lm":
            return self.matcher == key
        if any(ch in self.matcher for ch in "*?["):
            return fnmatch(key, self.matcher)
        return self.matcher in key


@dataclass(frozen=True)
class FixtureScript:
    """Ordered canned responses; in strict mode every call must match the next
    unconsumed entry."""

    entries: tuple[FixtureEntry, ...]
    strict: bool = False

    @classmethod
    def from_text(cls, text: str) -> "FixtureScript":
        strict = False
        entries: list[FixtureEntry] = []
        current: Optional[dict] = None
        in_header = True

        def close(entry: dict) -> None:
            lines = entry.pop("lines")
            delay = 0.0
            error = None
            retryable = False
            while lines and lines[0].startswith("!"):
                directive = lines.pop(0).split()
                if directive[0] == "!delay":
                    delay = float(directive[1])
                elif directive[0] == "!error":
                    error = directive[1]
                    retryable = "retryable" in directive[2:]
                else:
                    raise ValueError(f"unknown fixture directive {directive[0]}")
            entries.append(
                FixtureEntry(
                    kind=entry["kind"],
                    matcher=entry["matcher"],
                    response="\n".join(lines).rstrip("\n"),
                    delay=delay,
                    error=error,
                    error_retryable=retryable,
                )
            )

        for raw in text.splitlines():
            if raw.startswith("--- "):
                if current is not None:
                    close(current)
                in_header = False
                parts = raw[4:].split(None, 1)
                if len(parts) != 2 or parts[0] not in ("lm", "search"):
                    raise ValueError(f"bad fixture entry header: {raw}")
                current = {"kind": parts[0], "matcher": parts[1].strip(), "lines": []}
                continue
            if in_header:
                stripped = raw.strip()
                if not stripped or stripped.startswith("#"):
                    continue
                key, _, value = stripped.partition(":")
                if key.strip() == "strict":
                    strict = value.strip().lower() == "true"
                continue
            if current is not None:
                current["lines"].append(raw)
        if current is not None:
            close(current)
        return cls(entries=tuple(entries), strict=strict)

    @classmethod
    def load(cls, path) -> "FixtureScript":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def to_text(self) -> str:
        out = [f"strict: {'true' if self.strict else 'false'}"]
        for entry in self.entries:
            out.append(f"--- {entry.kind} {entry.matcher}")
            if entry.delay:
                out.append(f"!delay {entry.delay}")
            if entry.error:
                out.append(f"!error {entry.error}" + (" retryable" if entry.error_retryable else ""))
            if entry.response:
                out.append(entry.response)
        return "\n".join(out) + "\n"


_ERROR_CLASSES = {
    "ProviderUnavailable": ProviderUnavailable,
    "Timeout": Timeout,
    "QuotaExceeded": QuotaExceeded,
}


class FixtureState:
    """Shared consumption cursor over a script; thread-safe."""

    def __init__(self, script: FixtureScript):
        self.script = script
        self._used = [False] * len(script.entries)
        self._lock = threading.Lock()

    def remaining(self) -> int:
        with self._lock:
            return self._used.count(False)

    def take(self, kind: str, key: str) -> Optional[FixtureEntry]:
        """Consume the entry answering this call, or None (non-strict search miss)."""
        with self._lock:
            if self.script.strict:
                for i, used in enumerate(self._used):
                    if used:
                        continue
                    entry = self.script.entries[i]
                    if entry.matches(kind, key):
                        self._used[i] = True
                        return entry
                    raise ProviderUnavailable(
                        f"strict fixture expected [{entry.kind} {entry.matcher}], got [{kind} {key}]",
                        detail="UnmatchedCall",
                        retryable=False,
                    )
                raise ScriptExhausted(f"strict fixture has no entry left for [{kind} {key}]")
            for i, used in enumerate(self._used):
                if not used and self.script.entries[i].matches(kind, key):
                    self._used[i] = True
                    return self.script.entries[i]
            return None

    @staticmethod
    def realize(entry: FixtureEntry) -> str:
        if entry.delay:
            time.sleep(entry.delay)
        if entry.error:
            exc = _ERROR_CLASSES.get(entry.error)
            if exc is None:
                raise ValueError(f"fixture names unknown error {entry.error}")
            raise exc(f"scripted {entry.error}", retryable=entry.error_retryable)
        return entry.response


class FixtureLmProvider:
    def __init__(self, state: FixtureState):
        self.state = state

    def complete(self, request: LmRequest) -> str:
        entry = self.state.take("lm", request.prompt.template_name)
        if entry is None:
            raise ProviderUnavailable(
                f"no fixture entry for lm call {request.prompt.template_name}",
                detail="UnmatchedCall",
                retryable=False,
            )
        return self.state.realize(entry)


class FixtureSearchProvider:
    def __init__(self, state: FixtureState, clock: Clock | None = None):
        self.state = state
        self.clock = clock or SystemClock()

    def search(self, request: SearchRequest) -> list[EvidenceItem]:
        entry = self.state.take("search", request.joined())
        if entry is None:
            return []
        raw = self.state.realize(entry)
        try:
            rows = json.loads(raw) if raw.strip() else []
        except json.JSONDecodeError as e:
            raise ProviderUnavailable(f"fixture search entry is not JSON: {e}", retryable=False)
        stamp = self.clock.now()
        items = [
            EvidenceItem(
                url=row.get("url", ""),
                title=row.get("title", ""),
                snippet=row.get("snippet", ""),
                retrieved_at=stamp,
            )
            for row in rows
        ]
        return items[: request.top_k]


def fixture_providers(script: FixtureScript, clock: Clock | None = None) -> tuple[FixtureLmProvider, FixtureSearchProvider, FixtureState]:
    state = FixtureState(script)
    return FixtureLmProvider(state), FixtureSearchProvider(state, clock), state


# -- live providers --------------------------------------------------------------

def _map_httpx_error(e: Exception) -> ProviderError:
    import httpx

    if isinstance(e, httpx.TimeoutException):
        return Timeout(str(e))
    return ProviderUnavailable(str(e))


class LiveLmProvider:
    """OpenAI-compatible chat-completions client."""

    def __init__(self, api_key: str, base_url: str, model: str, timeout: float = 60.0):
        self.api_key = api_key
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.timeout = timeout

    def complete(self, request: LmRequest) -> str:
        import httpx

        body = {
            "model": self.model,
            "temperature": request.temperature,
            "messages": [{"role": "user", "content": request.prompt.text}],
        }
        try:
            resp = httpx.post(
                f"{self.base_url}/chat/completions",
                json=body,
                headers={"Authorization": f"Bearer {self.api_key}"},
                timeout=self.timeout,
            )
        except Exception as e:  # transport failure
            raise _map_httpx_error(e)
        if resp.status_code == 429:
            raise QuotaExceeded(f"lm provider quota: {resp.text[:200]}")
        if resp.status_code >= 400:
            raise ProviderUnavailable(f"lm provider returned {resp.status_code}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as e:
            raise ProviderUnavailable(f"malformed lm provider payload: {e}", retryable=False)


class LiveSearchProvider:
    """Tavily-style search client, normalized to url/title/snippet."""

    def __init__(self, api_key: str, endpoint: str = "https://api.tavily.com/search",
                 clock: Clock | None = None, timeout: float = 30.0):
        self.api_key = api_key
        self.endpoint = endpoint
        self.clock = clock or SystemClock()
        self.timeout = timeout

    def search(self, request: SearchRequest) -> list[EvidenceItem]:
        import httpx

        body = {"api_key": self.api_key, "query": request.joined(), "max_results": request.top_k}
        try:
            resp = httpx.post(self.endpoint, json=body, timeout=self.timeout)
        except Exception as e:
            raise _map_httpx_error(e)
        if resp.status_code == 429:
            raise QuotaExceeded(f"search provider quota: {resp.text[:200]}")
        if resp.status_code >= 400:
            raise ProviderUnavailable(f"search provider returned {resp.status_code}")
        stamp = self.clock.now()
        items = []
        for row in resp.json().get("results", []):
            url = row.get("url", "")
            if not url:
                continue
            items.append(
                EvidenceItem(
                    url=url,
                    title=row.get("title", ""),
                    snippet=row.get("content", row.get("snippet", "")),
                    retrieved_at=stamp,
                )
            )
        return items[: request.top_k]


def providers_from_env(clock: Clock | None = None) -> tuple[LmProvider, SearchProvider]:
    """Build live providers from environment credentials."""
    missing = [v for v in (ENV_LM_API_KEY, ENV_LM_BASE_URL, ENV_LM_MODEL, ENV_SEARCH_API_KEY) if not os.environ.get(v)]
    if missing:
        raise errors.ConfigError(f"missing environment variables: {', '.join(missing)}")
    lm = LiveLmProvider(
        api_key=os.environ[ENV_LM_API_KEY],
        base_url=os.environ[ENV_LM_BASE_URL],
        model=os.environ[ENV_LM_MODEL],
    )
    search = LiveSearchProvider(api_key=os.environ[ENV_SEARCH_API_KEY], clock=clock)
    return lm, search


# -- audit log ---------------------------------------------------------------------

class AuditLog:
    """Append-only per-session record of provider calls; seq assignment is atomic."""

    def __init__(self):
        self._records: dict[str, list[ProviderCallRecord]] = {}
        self._lock = threading.Lock()

    def register(self, session_id: str) -> None:
        with self._lock:
            self._records.setdefault(session_id, [])

    def append(self, session_id: str, kind: str, request_digest: str, outcome: str, latency: float) -> ProviderCallRecord:
        with self._lock:
            rows = self._records.setdefault(session_id, [])
            record = ProviderCallRecord(
                seq=len(rows) + 1,
                kind=kind,
                request_digest=request_digest,
                outcome=outcome,
                latency=latency,
            )
            rows.append(record)
            return record

    def records(self, session_id: str) -> list[ProviderCallRecord]:
        with self._lock:
            if session_id not in self._records:
                raise UnknownSession(session_id)
            return list(self._records[session_id])


# -- engine: providers + audit + clock + ids ------------------------------------------

class Engine:
    """Bundles the pluggable providers with the session-visible clock and the
    audit log. All provider traffic flows through here so every call is
    recorded and retried under one policy."""

    def __init__(
        self,
        lm: LmProvider,
        search: SearchProvider,
        *,
        clock: Clock | None = None,
        transport_retries: int = 2,
    ):
        self.lm = lm
        self.search_provider = search
        self.clock = clock or SystemClock()
        self.transport_retries = transport_retries
        self.audit = AuditLog()
        self.ids = SequentialIds()

    def _run_audited(
        self, session_id: str, kind: str, digest: str, max_retries: int, call: Callable[[], T]
    ) -> T:
        start = time.perf_counter()
        retries = 0
        while True:
            try:
                value = call()
            except ProviderError as e:
                if e.retryable and retries < max_retries:
                    retries += 1
                    continue
                self.audit.append(session_id, kind, digest, "failed", time.perf_counter() - start)
                raise
            outcome = "ok" if retries == 0 else f"retried({retries})"
            self.audit.append(session_id, kind, digest, outcome, time.perf_counter() - start)
            return value

    def lm_complete(self, session_id: str, request: LmRequest) -> str:
        return self._run_audited(
            session_id, "lm", lm_request_digest(request), request.max_retries,
            lambda: self.lm.complete(request),
        )

    def search(self, session_id: str, request: SearchRequest) -> list[EvidenceItem]:
        return self._run_audited(
            session_id, "search", search_request_digest(request), self.transport_retries,
            lambda: self.search_provider.search(request),
        )

    def audit_log(self, session_id: str) -> list[ProviderCallRecord]:
        return self.audit.records(session_id)

    def create_session(self, brief, config=None, *, session_id: str | None = None):
        """Open a session with ids/clock supplied by this engine and register
        it with the audit log."""
        sid = session_id or self.ids.next_id("s")
        session = create_session(brief, config, session_id=sid, clock=self.clock)
        self.audit.register(session.id)
        return session
