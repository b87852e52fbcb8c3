import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adathresh.errors import AdaThreshError
from adathresh.outcomes import OutcomeModel, evaluate, exposure_response, true_ate


def test_linear_example():
    m = OutcomeModel(10, 10, 5)
    assert evaluate(m, np.array([1]), np.array([1.0]))[0] == 25


def test_sine_at_half_is_alpha():
    m = OutcomeModel(10, 10, 3, "sine")
    assert evaluate(m, np.array([0]), np.array([0.5]))[0] == pytest.approx(10.0, abs=1e-12)


def test_sigmoid_as_printed():
    m = OutcomeModel(10, 10, 2, "sigmoid")
    assert evaluate(m, np.array([0]), np.array([0.0]))[0] == 14.0


def test_true_ate():
    assert true_ate(OutcomeModel(10, 10, 10)) == 20
    assert true_ate(OutcomeModel(10, 7, 0)) == 7
    assert true_ate(OutcomeModel(10, 10, 3, "sine")) == pytest.approx(10.0, abs=1e-12)
    assert true_ate(OutcomeModel(0, 1, 1, "sigmoid")) == pytest.approx(1 + math.exp(-1) - 1)


def test_heterogeneous_ate_is_mean():
    beta = np.array([1.0, 2.0, 3.0])
    gamma = np.array([0.5, 0.0, 1.0])
    assert true_ate(OutcomeModel(0, beta, gamma)) == pytest.approx(np.mean(beta + gamma))


def test_unknown_kind():
    with pytest.raises(AdaThreshError):
        OutcomeModel(f_kind="cubic")
    with pytest.raises(AdaThreshError):
        exposure_response("cubic", 1.0, 0.5)


def test_noise_frozen_across_assignments():
    m = OutcomeModel.with_noise(50, 1.0, seed=3, gamma=2.0)
    e = np.linspace(0, 1, 50)
    for z in (np.zeros(50), np.ones(50), np.arange(50) % 2):
        base = 10.0 + 10.0 * z + 2.0 * e
        assert np.array_equal(evaluate(m, z, e), base + m.epsilon)
    assert not m.epsilon.flags.writeable
    with pytest.raises(AdaThreshError):
        evaluate(m, np.zeros(10), np.zeros(10))


@given(st.integers(-50, 50), st.integers(-50, 50), st.integers(-50, 50),
       st.lists(st.tuples(st.integers(0, 1), st.integers(0, 8), st.sampled_from([1, 2, 4, 8])),
                min_size=1, max_size=20))
def test_noise_free_linear_residual_zero(alpha, beta, gamma, rows):
    # dyadic exposures keep every product exact in binary floating point
    z = np.array([r[0] for r in rows])
    e = np.array([min(t, d) / d for _, t, d in rows])
    y = evaluate(OutcomeModel(alpha, beta, gamma), z, e)
    assert np.all(y - alpha - beta * z - gamma * e == 0)


def test_scaled():
    m = OutcomeModel.with_noise(4, 1.0, 1, gamma=3.0)
    s = m.scaled(2.0)
    e = np.array([0.0, 0.5, 1.0, 0.25])
    z = np.array([1, 0, 1, 0])
    assert np.allclose(evaluate(s, z, e), 2 * evaluate(m, z, e))
