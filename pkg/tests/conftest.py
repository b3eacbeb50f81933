from pathlib import Path

import pytest

from conex.space import ConfigurationSpace, ParameterSpec

SAMPLES = Path(__file__).resolve().parent.parent / "samples"


@pytest.fixture
def samples():
    return SAMPLES


@pytest.fixture
def mixed_space():
    """One parameter of each kind."""
    return ConfigurationSpace(
        "mixed",
        (
            ParameterSpec("flag", "boolean", False, (True, False)),
            ParameterSpec("threads", "integer", 2, (1, 2, 3)),
            ParameterSpec("ratio", "float", 0.5, (0.25, 0.5, 0.75)),
            ParameterSpec("codec", "categorical", "a", ("a", "b", "c", "d")),
            ParameterSpec("opts", "string", "-Xmx1g", ("-Xmx1g", "-Xmx2g")),
            ParameterSpec("log.dir", "string", "/tmp", ("/tmp", "/var"), relevant=False),
        ),
    )


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
