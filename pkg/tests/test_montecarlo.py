import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats as sps

from urnclt.errors import DegenerateVariance, InputError
from urnclt.modelio import dumps
from urnclt.montecarlo import (EnsembleConfig, conditional_moment_agreement, cross_regime_independence,
                               default_workers, ks_gaussian, martingale_convergence_check, random_states,
                               run_ensemble, run_paths, strong_law_check, verify)
from urnclt.spectrum import Regime

from conftest import load, two_color

MODEL_NAMES = ["two_color_sub", "two_color_crit", "two_color_super", "four_color", "two_supercritical",
               "jordan_supercritical", "jordan_critical", "rotation_critical", "rows_equal_pi"]


# configuration

@pytest.mark.parametrize("kwargs", [
    dict(M=1, horizon=100, checkpoints=(10,)),
    dict(M=10, horizon=100, checkpoints=()),
    dict(M=10, horizon=100, checkpoints=(20, 10)),
    dict(M=10, horizon=100, checkpoints=(1, 10)),
    dict(M=10, horizon=100, checkpoints=(10, 200)),
    dict(M=10, horizon=100, checkpoints=(10,), workers=0),
    dict(M=10, horizon=100, checkpoints=(10,), base_seed=-1),
])
def test_config_validation(kwargs):
    with pytest.raises(InputError):
        EnsembleConfig(**kwargs)


def test_default_workers_env(monkeypatch):
    monkeypatch.setenv("URNCLT_WORKERS", "3")
    assert default_workers() == 3
    monkeypatch.setenv("URNCLT_WORKERS", "zero")
    with pytest.raises(InputError):
        default_workers()
    monkeypatch.delenv("URNCLT_WORKERS")
    assert default_workers() >= 1


# ensembles

@pytest.mark.parametrize("M", [2, 150])
def test_ensemble_independent_of_worker_count(M):
    m = load("four_color")
    a = run_paths(m, 2000, [100, 2000], 42, M, workers=1)
    b = run_paths(m, 2000, [100, 2000], 42, M, workers=8)
    np.testing.assert_array_equal(a, b)
    # path i does not depend on M
    c = run_paths(m, 2000, [100, 2000], 42, 1, workers=1)
    np.testing.assert_array_equal(a[:1], c)


def test_rows_equal_pi_has_no_spread():
    m = load("rows_equal_pi")
    ens = run_ensemble(m, EnsembleConfig(50, 1000, (10, 1000), 5))
    assert np.all(np.ptp(ens.stats, axis=0) == 0)
    for lab in ens.labels:
        assert ens.column(lab).shape == (50, 2)


def test_ensemble_csv_layout():
    m = load("four_color")
    ens = run_ensemble(m, EnsembleConfig(7, 500, (100, 500), 1))
    rows = ens.to_csv().splitlines()
    assert rows[0] == "path,n,W_0,W_1,W_2,W_3"
    assert len(rows) == 1 + 2 * 7
    assert ens.to_csv("stats").splitlines()[0] == "path,n,sub0.1,crit0.2,super0.3"
    with pytest.raises(InputError):
        ens.to_csv("other")


# KS

def test_ks_accepts_exact_normals():
    rng = np.random.default_rng(123)
    passes = 0
    for _ in range(100):
        x = sps.norm.ppf(rng.random(10_000), scale=math.sqrt(2.5))
        passes += ks_gaussian(x, 2.5).passed
    assert passes >= 98


def test_ks_matches_scipy_statistic():
    x = np.random.default_rng(7).normal(0.3, 1.5, size=2000)
    res = ks_gaussian(x, 1.5**2, 0.3)
    ref = sps.kstest(x, "norm", args=(0.3, 1.5))
    assert res.statistic == pytest.approx(ref.statistic, abs=1e-12)
    assert res.critical == pytest.approx(1.628 / math.sqrt(2000))


def test_ks_degenerate_samples():
    res = ks_gaussian(np.zeros(1000), 1.0)
    assert res.statistic == pytest.approx(0.5, abs=1e-15)
    assert not res.passed


@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10))
def test_ks_scale_equivariance(seed, c):
    x = np.random.default_rng(seed).normal(size=500)
    assert ks_gaussian(c * x, c * c).statistic == pytest.approx(ks_gaussian(x, 1.0).statistic, abs=1e-12)


def test_ks_preconditions():
    with pytest.raises(InputError):
        ks_gaussian(np.zeros(50), 1.0)
    with pytest.raises(DegenerateVariance):
        ks_gaussian(np.zeros(500), 0.0)


# independence

def test_independence_null_pass_rate():
    rng = np.random.default_rng(11)
    passes = sum(cross_regime_independence({"a": rng.normal(size=10_000), "b": rng.normal(size=10_000)}).passed
                 for _ in range(200))
    assert passes >= 198


def test_independence_duplicate_column_fails():
    x = np.random.default_rng(1).normal(size=1000)
    res = cross_regime_independence({"sub": {"x": x}, "super": {"y": x.copy()}})
    assert not res.passed
    assert res.max_abs == pytest.approx(1.0)
    assert res.pairs == (("x", "y", pytest.approx(1.0)),)


def test_independence_ignores_within_regime_pairs():
    rng = np.random.default_rng(2)
    x = rng.normal(size=1000)
    res = cross_regime_independence({"sub": np.column_stack([x, x]), "crit": rng.normal(size=1000)})
    assert res.passed
    assert len(res.pairs) == 2


def test_independence_preconditions():
    with pytest.raises(InputError):
        cross_regime_independence({"sub": np.zeros((200, 2))})
    with pytest.raises(InputError):
        cross_regime_independence({"a": np.zeros(10), "b": np.zeros(10)})


# martingale convergence

def test_martingale_check_deterministic_drift():
    m = load("rows_equal_pi")
    cps = (100, 1000, 10_000, 100_000)
    ens = run_ensemble(m, EnsembleConfig(20, 100_000, cps, 3))
    res = martingale_convergence_check(ens.stats, cps)
    assert res.passed
    assert np.all(np.diff(res.max_gaps) < 0)


def test_martingale_gap_shrinks_supercritical():
    m = two_color(0.875)
    cps = (1000, 10_000, 100_000)
    ens = run_ensemble(m, EnsembleConfig(1000, 100_000, cps, 8))
    res = martingale_convergence_check(ens.stats, cps)
    assert res.median_gaps[1] < res.median_gaps[0]


def test_martingale_check_needs_two_checkpoints():
    with pytest.raises(InputError):
        martingale_convergence_check(np.zeros((10, 1)), [100])


def test_martingale_identical_paths_pass():
    assert martingale_convergence_check(np.ones((5, 3)), [10, 100, 1000]).passed


# strong law

def test_strong_law_rows_equal_pi():
    m = load("rows_equal_pi")
    n = 1000
    W = run_paths(m, n, [n], 0, 10)[:, 0, :]
    bound = m.w0 * np.max(np.abs(m.initial_state / m.w0 - m.pi)) / (n + m.w0)
    assert strong_law_check(W, n, m.pi, delta=1.001 * bound, w0=m.w0).fraction == 1.0
    assert strong_law_check(W, n, m.pi, delta=0.0, w0=m.w0).fraction == 0.0


def test_strong_law_four_color(four_color):
    n = 100_000
    W = run_paths(four_color, n, [n], 42, 100)[:, 0, :]
    res = strong_law_check(W, n, four_color.pi, 0.05, four_color.w0)
    assert res.passed and res.fraction >= 0.99


# oracles and verify

@pytest.mark.parametrize("name", MODEL_NAMES)
def test_conditional_moment_agreement(name):
    m = load(name)
    assert conditional_moment_agreement(m, random_states(m, 100, np.random.default_rng(0))) <= 1e-12


@pytest.fixture(scope="module")
def small_report():
    return verify(load("four_color"), EnsembleConfig(500, 20_000, (1000, 10_000), 42, 1), limit_horizon=10**5)


def test_verify_small_run_passes(small_report):
    rep = small_report
    assert rep.passed, rep.summary()
    names = {c.name for c in rep.checks}
    assert {"conditional_moments", "ks[sub0.1@20000]", "ks[crit0.2@20000]", "independence@20000",
            "martingale_convergence", "critical_trend[crit0.2]"} <= names
    assert "second_moment[super0.3@20000]" in names
    assert rep.config == {"M": 500, "horizon": 20_000, "checkpoints": [1000, 10_000, 20_000], "base_seed": 42,
                          "variance_scale": 1.0}
    json.loads(dumps(rep.to_dict()))
    assert rep.summary().splitlines()[-1].startswith("overall: PASS")


def test_verify_independent_of_workers(small_report):
    rep = verify(load("four_color"), EnsembleConfig(500, 20_000, (1000, 10_000), 42, 3), limit_horizon=10**5)
    assert dumps(rep.to_dict()) == dumps(small_report.to_dict())


def test_verify_detects_tampered_variance():
    rep = verify(load("four_color"), EnsembleConfig(500, 20_000, (1000, 10_000), 42, 1), variance_scale=2.0,
                 limit_horizon=10**5)
    assert not rep.passed
    failed = {c.name for c in rep.failed()}
    assert "variance[sub0.1@20000]" in failed


def test_verify_zero_eigenvalue_model():
    rep = verify(load("rows_equal_pi"), EnsembleConfig(200, 2000, (100,), 1, 1), limit_horizon=10**4)
    assert rep.passed, rep.summary()


def test_verify_regime_columns(small_report):
    m = load("four_color")
    assert [m.regime_of_column(c) for c in (1, 2, 3)] == [Regime.SUBCRITICAL, Regime.CRITICAL,
                                                          Regime.SUPERCRITICAL]
    assert small_report.labels == ["sub0.1", "crit0.2", "super0.3"]
