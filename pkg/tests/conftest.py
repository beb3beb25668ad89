from __future__ import annotations

import pytest

from htbsim.cli import load_scenario

from helpers import RunBundle, run_scenario

BUNDLED = ("scenario1", "scenario2", "scenario3")


@pytest.fixture(scope="session")
def bundled_runs(tmp_path_factory) -> dict[str, RunBundle]:
    """One full run of each bundled scenario, shared across the session."""
    runs = {}
    for name in BUNDLED:
        scenario = load_scenario(name)
        out_dir = tmp_path_factory.mktemp(f"run_{name}")
        runs[name] = run_scenario(scenario, out_dir)
    return runs
