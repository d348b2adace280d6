import pytest

from isacsim.config import load_config

TINY = [
    "timing.episodes=2", "timing.long_steps=2", "timing.short_per_long=3", "timing.eval_episodes=1",
    "marl.hidden=[16,16]", "marl.batch_size=8", "marl.learn_start=8", "marl.voi_every=1",
    "marl.voi_samples=200", "marl.voi_min_samples=4",
]


def tiny_config(*extra, seed=0):
    return load_config(None, TINY + list(extra), seed)


@pytest.fixture
def tiny():
    return tiny_config


# acceptance verdicts, echoed at the end of the session so they survive output capture
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
