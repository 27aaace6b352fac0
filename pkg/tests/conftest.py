import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from urnclt.blocks import JordanBlockSpec, SpectralSpec
from urnclt.modelio import load_model
from urnclt.spectrum import model_from_matrix, model_from_spectral_spec

MODELS = Path(__file__).resolve().parent.parent / "models"

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


def model_file(name):
    return MODELS / f"{name}.json"


def load(name):
    return load_model(model_file(name)).model


def two_color(a, initial_state=(0.5, 0.5)):
    return model_from_matrix([[a, 1 - a], [1 - a, a]], initial_state=list(initial_state))


HAAR4 = np.array([[1, 1, 0, 1], [1, -1, 0, 1], [1, 0, 1, -1], [1, 0, -1, -1]], float)


def haar4(l1, l2, l3, initial_state=(0.25,) * 4):
    spec = SpectralSpec(HAAR4, (
        JordanBlockSpec("real", l1, 0.0, 1, (1,)),
        JordanBlockSpec("real", l2, 0.0, 1, (2,)),
        JordanBlockSpec("real", l3, 0.0, 1, (3,)),
    ))
    return model_from_spectral_spec(spec, initial_state=list(initial_state))


@pytest.fixture(scope="session")
def four_color():
    return load("four_color")


def random_stochastic(rng, K, low=0.05):
    R = rng.uniform(low, 1.0, size=(K, K))
    return R / R.sum(axis=1, keepdims=True)


# one verdict line per acceptance criterion, printed after the run

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    verdict = "PASS" if report.outcome == "passed" else "FAIL"
    _CRITERIA[props["criterion"]] = (verdict, props.get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        verdict, detail = _CRITERIA[n]
        terminalreporter.write_line(f"{verdict} criterion {n}: {detail}")
