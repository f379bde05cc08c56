import dataclasses

import pytest

from specklenav.harness import default_scenario, run_scenario


@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    """One full default-scenario run, shared by harness and acceptance tests."""
    out = tmp_path_factory.mktemp("default_run")
    scenario = default_scenario(out_dir=str(out))
    report = run_scenario(scenario)
    return scenario, report


def reduced_scenario(out_dir: str, **overrides):
    """A cheap variant of the default scenario for negative controls."""
    sc = default_scenario(out_dir=out_dir)
    sc = dataclasses.replace(
        sc,
        calibration=dataclasses.replace(sc.calibration, count=6),
        breathing=dataclasses.replace(sc.breathing, duration_s=8.0,
                                      frame_rate_hz=6.0),
        sweep=dataclasses.replace(sc.sweep, enabled=False),
        scene_frames=2,
    )
    if overrides:
        sc = dataclasses.replace(sc, **overrides)
    return sc


@pytest.fixture(scope="session")
def reduced_double_run(tmp_path_factory):
    """The same reduced scenario run twice into the same directory."""
    out = tmp_path_factory.mktemp("reduced_run")
    sc = reduced_scenario(str(out))
    report_1 = run_scenario(sc)
    bytes_1 = (out / "report.json").read_bytes()
    report_2 = run_scenario(sc)
    bytes_2 = (out / "report.json").read_bytes()
    return sc, report_1, bytes_1, report_2, bytes_2
