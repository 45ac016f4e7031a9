import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lupindp.errors import ConfigError, ContractError, DomainError
from lupindp.metrics import (
    ForecastSet,
    calibration_error,
    default_levels,
    empirical_frequencies,
    mse,
    sharpness,
)


def test_default_levels():
    np.testing.assert_allclose(default_levels(), np.arange(1, 20) / 20)


def test_median_exact_forecaster():
    y = np.random.default_rng(0).normal(size=500)
    f = ForecastSet(y, y, np.ones_like(y))
    assert calibration_error(f) == pytest.approx(1.675, abs=1e-12)


def test_perfectly_calibrated_sampler():
    rng = np.random.default_rng(1)
    mu = rng.normal(size=100_000)
    sd = rng.uniform(0.5, 2.0, size=100_000)
    y = mu + sd * rng.standard_normal(100_000)
    assert calibration_error(ForecastSet(y, mu, sd)) < 0.01


def test_overconfident_forecaster_is_penalised():
    rng = np.random.default_rng(2)
    y = rng.normal(size=20_000)
    good = calibration_error(ForecastSet(y, np.zeros_like(y), np.ones_like(y)))
    narrow = calibration_error(ForecastSet(y, np.zeros_like(y), np.full_like(y, 0.2)))
    assert narrow > 10 * good


def test_sharpness_values():
    y = np.zeros(10)
    assert sharpness(ForecastSet(y, y, np.full(10, 2.0))) == 4.0
    assert sharpness(ForecastSet(np.zeros(2), np.zeros(2), np.array([1.0, 3.0]))) == 5.0


def test_mse():
    assert mse([1.0, 2.0], [1.0, 4.0]) == 2.0
    with pytest.raises(ContractError):
        mse([1.0], [1.0, 2.0])


def test_frequencies_are_monotone_and_written(tmp_path):
    rng = np.random.default_rng(3)
    y = rng.normal(size=300)
    curve = empirical_frequencies(ForecastSet(y, np.zeros(300), np.ones(300)))
    assert (np.diff(curve.frequencies) >= 0).all()
    curve.write_csv(tmp_path / "c.csv")
    rows = (tmp_path / "c.csv").read_text().splitlines()
    assert rows[0] == "level,empirical_frequency" and len(rows) == 20


def test_invalid_inputs():
    with pytest.raises(DomainError):
        ForecastSet([0.0], [0.0], [0.0])
    with pytest.raises(ContractError):
        ForecastSet([], [], [])
    f = ForecastSet([0.0], [0.0], [1.0])
    with pytest.raises(ConfigError):
        calibration_error(f, [0.5, 0.3])
    with pytest.raises(ConfigError):
        calibration_error(f, [0.0, 0.5])


@settings(max_examples=50, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(0.1, 100.0), st.integers(0, 2**31))
def test_shift_and_scale_invariance(shift, scale, seed):
    rng = np.random.default_rng(seed)
    y, mu, sd = rng.normal(size=50), rng.normal(size=50), rng.uniform(0.5, 2, size=50)
    base = calibration_error(ForecastSet(y, mu, sd))
    moved = calibration_error(ForecastSet(scale * y + shift, scale * mu + shift, scale * sd))
    assert moved == pytest.approx(base, abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2**31))
def test_calibration_error_bounded(m, seed):
    rng = np.random.default_rng(seed)
    f = ForecastSet(rng.normal(size=30), rng.normal(size=30), rng.uniform(0.1, 3, size=30))
    err = calibration_error(f, default_levels(m))
    assert 0.0 <= err <= m
