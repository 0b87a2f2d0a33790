from __future__ import annotations

import os

import pytest
from hypothesis import HealthCheck, settings

from inspecta.syngen import GeneratorConfig, gen_dataset

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# acceptance tests append "CRITERION n: PASS|FAIL ..." lines here
CRITERIA_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def small_data(tmp_path_factory):
    """Tiny uniform and diverse datasets shared by the fast tests."""
    root = tmp_path_factory.mktemp("small")
    u = gen_dataset(GeneratorConfig(family="uniform", n_train_val=24, n_holdout=8, seed=5), root)
    d = gen_dataset(GeneratorConfig(family="diverse", n_train_val=24, n_holdout=8, seed=5), root)
    return {
        "root": root,
        "uniform": u,
        "diverse": d,
        "uniform_path": root / "uniform" / "manifest.json",
        "diverse_path": root / "diverse" / "manifest.json",
    }
