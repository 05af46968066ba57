import math

import numpy as np
import pytest

from asiplab.errors import InvalidInputError
from asiplab.rates import ar_indices, fit_rate_envelope, matrix_rate_power
from asiplab.streams import InnovationStream


def test_ar_indices_identity_observable():
    idx = ar_indices(1.0, 0.0, 1.0)
    assert idx.gamma1 == pytest.approx(1.0)
    assert idx.gamma2 == pytest.approx(1.0)
    assert idx.rate_power == pytest.approx(3.0)


def test_ar_indices_half_half():
    idx = ar_indices(1.0, 0.5, 0.5)
    assert idx.gamma1 == pytest.approx(0.5)
    assert idx.gamma2 == pytest.approx(1.0)
    assert idx.rate_power == pytest.approx(4.0)


def test_ar_indices_bounded_observable():
    idx = ar_indices(0.8, 0.3, 0.0)
    assert idx.gamma2 == math.inf
    assert idx.lam == pytest.approx(1.0 / idx.gamma1)


def test_ar_indices_validation():
    with pytest.raises(InvalidInputError):
        ar_indices(1.0, 0.0, 0.0)  # tau + zeta = 0
    with pytest.raises(InvalidInputError):
        ar_indices(1.5, 0.0, 1.0)
    with pytest.raises(InvalidInputError):
        ar_indices(1.0, 1.0, 1.0)


def test_matrix_rate_power_branches():
    assert matrix_rate_power(1.0) == pytest.approx(3.0)
    assert matrix_rate_power(0.5) == pytest.approx(5.0)
    assert matrix_rate_power(2.0) == pytest.approx(2.5)
    assert matrix_rate_power(math.inf) == pytest.approx(2.0)


def test_matrix_rate_power_flag_consistency():
    assert matrix_rate_power(2.0, super_exponential=True) == pytest.approx(2.5)
    with pytest.raises(InvalidInputError):
        matrix_rate_power(0.5, super_exponential=True)
    with pytest.raises(InvalidInputError):
        matrix_rate_power(0.0)


def test_envelope_fit_exact_squared_log():
    n = np.array([9, 27, 81, 243, 729])
    d = np.log(n.astype(float)) ** 2
    fit = fit_rate_envelope(n, d[None, :], bootstrap=0)
    assert fit.exponent == pytest.approx(2.0, abs=1e-6)
    assert fit.scale == pytest.approx(1.0, rel=1e-9)


def test_envelope_fit_constant_series():
    n = np.array([9, 27, 81, 243])
    fit = fit_rate_envelope(n, np.full((1, 4), 5.0), bootstrap=0)
    assert fit.exponent == pytest.approx(0.0, abs=1e-12)
    assert fit.scale == pytest.approx(5.0)


def test_envelope_fit_zero_series_degenerate():
    n = np.array([9, 27, 81, 243])
    fit = fit_rate_envelope(n, np.zeros((3, 4)), bootstrap=10,
                            stream=InnovationStream(1))
    assert fit.exponent == 0.0
    assert fit.scale == 0.0


def test_envelope_dominates_noisy_data():
    rng = np.random.default_rng(3)
    n = np.array([9, 27, 81, 243, 729, 2187])
    d = 2.0 * np.log(n.astype(float)) ** 1.5 * np.exp(rng.normal(0, 0.1, (16, 6)))
    fit = fit_rate_envelope(n, d, bootstrap=100, stream=InnovationStream(2))
    mean = d.mean(axis=0)
    envelope = fit.scale * np.log(n.astype(float)) ** fit.exponent
    assert np.all(envelope >= mean * (1 - 1e-12))
    assert fit.ci_low <= fit.exponent <= fit.ci_high
    assert fit.ci_high - fit.ci_low < 1.0


def test_envelope_fit_grid_validation():
    with pytest.raises(InvalidInputError):
        fit_rate_envelope([9, 27, 81], np.ones((1, 3)), bootstrap=0)
    with pytest.raises(InvalidInputError):
        fit_rate_envelope([8, 10, 12, 14], np.ones((1, 4)), bootstrap=0)
