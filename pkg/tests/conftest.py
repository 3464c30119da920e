import sys
from pathlib import Path

import pytest

# Make tests/helpers.py importable regardless of invocation directory.
sys.path.insert(0, str(Path(__file__).parent))

from jokeasy.model import EngineConfig, TickingClock, TopicBrief  # noqa: E402


@pytest.fixture
def clock():
    return TickingClock()


@pytest.fixture
def brief():
    return TopicBrief(
        topic="Troubles of Adult Life",
        supplements=("exaggerated expressions", "workplace burnout"),
    )


@pytest.fixture
def config():
    return EngineConfig()


FIXTURES_DIR = Path(__file__).parent.parent / "src" / "jokeasy" / "fixtures"


@pytest.fixture
def c2_paths():
    return FIXTURES_DIR / "c2.fixture", FIXTURES_DIR / "c2.trace"
