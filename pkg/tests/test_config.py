import pytest

from src.core.utils.config import Settings
from src.core.utils.errors import (
    BoundParameterError,
    ConfigError,
    CoverageError,
    EventBudgetError,
    ExitCode,
    InfeasibleScenarioError,
    OverlapError,
    SimultaneityError,
    exit_code_for,
)

ENV_VARS = ("COLLISION_OUTPUT_DIR", "COLLISION_MAX_EVENTS", "COLLISION_GHOST_MAX_EVENTS",
            "COLLISION_JOBS", "COLLISION_LOG_LEVEL")


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for name in ENV_VARS:
        monkeypatch.delenv(name, raising=False)


def test_defaults():
    settings = Settings()
    assert settings.output_dir == "runs"
    assert (settings.max_events, settings.ghost_max_events, settings.jobs) == (100000, 100000, 1)
    assert settings.log_level == "INFO"
    assert settings.verify() == (True, None)


def test_environment_overrides(monkeypatch):
    monkeypatch.setenv("COLLISION_OUTPUT_DIR", "/tmp/out")
    monkeypatch.setenv("COLLISION_JOBS", "4")
    monkeypatch.setenv("COLLISION_LOG_LEVEL", "debug")
    settings = Settings()
    assert settings.output_dir == "/tmp/out"
    assert settings.jobs == 4
    assert settings.log_level == "DEBUG"


def test_non_integer_rejected(monkeypatch):
    monkeypatch.setenv("COLLISION_MAX_EVENTS", "lots")
    with pytest.raises(ValueError, match="COLLISION_MAX_EVENTS"):
        Settings()


@pytest.mark.parametrize("name,value", [
    ("COLLISION_MAX_EVENTS", "0"),
    ("COLLISION_GHOST_MAX_EVENTS", "-5"),
    ("COLLISION_JOBS", "0"),
    ("COLLISION_LOG_LEVEL", "LOUD"),
])
def test_verify_rejects(monkeypatch, name, value):
    monkeypatch.setenv(name, value)
    valid, error_msg = Settings().verify()
    assert not valid
    assert name in error_msg


@pytest.mark.parametrize("error,code", [
    (ConfigError("bad"), ExitCode.CONFIG),
    (BoundParameterError("bad"), ExitCode.CONFIG),
    (InfeasibleScenarioError("bad"), ExitCode.CONFIG),
    (SimultaneityError(1.0, (0, 1), (2, 3), 0.0), ExitCode.SIMULTANEITY),
    (EventBudgetError("bad"), ExitCode.BUDGET),
    (CoverageError("bad"), ExitCode.COVERAGE),
    (OverlapError("bad"), ExitCode.FAILURE),
    (RuntimeError("bad"), ExitCode.FAILURE),
])
def test_exit_codes(error, code):
    assert exit_code_for(error) == code
