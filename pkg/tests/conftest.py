"""Shared fixtures: surrogate series recipes and small helpers."""
from __future__ import annotations

import numpy as np
import pytest
import torch

from geots.series import Harmonic, SyntheticSpec

# daily GNSS-like: ~10 mm annual + 3 mm semi-annual, 1.5 mm AR(1) innovations
GNSS_SPEC = SyntheticSpec(2000, trend=0.01, harmonics=(Harmonic(10, 365.25, 0.3), Harmonic(3, 182.625, 1.0)),
                          sigma=1.5, ar1=0.5, seed=1, station_id="GNSS", channel="up")

# hourly tide-like (epochs in days): M2, K1, S2 constituents, 20 mm noise
TIDE_PERIODS = (12.4206 / 24, 23.9345 / 24, 12 / 24)
TG_SPEC = SyntheticSpec(2000, step=1 / 24, harmonics=(Harmonic(1000, TIDE_PERIODS[0], 0.2),
                                                      Harmonic(400, TIDE_PERIODS[1], 1.3),
                                                      Harmonic(200, TIDE_PERIODS[2], 2.0)),
                        sigma=20, ar1=0.3, seed=3, station_id="TG", channel="sea_level")
MASK_SEED = 7


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)
    yield


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


def pytest_runtest_logreport(report):
    marker = getattr(report, "_criterion", None)
    if marker is None or report.when not in ("setup", "call"):
        return
    if report.when == "setup" and report.passed:
        return
    results = _CRITERIA.setdefault(marker, {"ok": True, "details": []})
    results["ok"] = results["ok"] and report.passed
    results["details"] += [f"{k}={v}" for k, v in report.user_properties]


_CRITERIA: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result()._criterion = marker.args


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for (number, title), res in sorted(_CRITERIA.items()):
        status = "PASS" if res["ok"] else "FAIL"
        detail = ", ".join(res["details"])
        terminalreporter.write_line(f"[{status}] {number}. {title}" + (f" ({detail})" if detail else ""))
