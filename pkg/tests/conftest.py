import pytest

from flexfed_sim.config import AvailabilityConfig, ExperimentConfig


def tiny_config(**kw) -> ExperimentConfig:
    base = dict(
        num_clients=4,
        rounds=5,
        memory=60,
        epochs=2,
        hidden=8,
        tau=0.5,
        beta=0.25,
        round_minutes=240,
        seed=3,
    )
    base.update(kw)
    return ExperimentConfig(**base)


def always_on() -> AvailabilityConfig:
    return AvailabilityConfig(p_connected=1.0, p_idle=1.0, p_powered=1.0, diurnal_amplitude=0.0)


@pytest.fixture
def tiny():
    return tiny_config


# -- acceptance reporting ---------------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_report():
    def report(number: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'}  criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
