"""Search-grounded human-AI co-writing engine for thematic joke creation."""

from .model import (
    EngineConfig,
    Session,
    TopicBrief,
    WorkflowStage,
    check_invariants,
)
from .providers import Engine, FixtureScript, fixture_providers

__all__ = [
    "Engine",
    "EngineConfig",
    "FixtureScript",
    "Session",
    "TopicBrief",
    "WorkflowStage",
    "check_invariants",
    "fixture_providers",
]
