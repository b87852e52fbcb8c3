from fractions import Fraction
from math import comb

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adathresh import oracle
from adathresh.design import Design
from adathresh.errors import AdaThreshError
from adathresh.exposure import ThresholdGrid, exact_probabilities
from adathresh.graph import Graph, kth_power_cycle
from adathresh.outcomes import OutcomeModel


def test_prop1_examples():
    assert oracle.prop1_bias(2, 4, 7) == 0
    assert oracle.prop1_bias(2, 0, 10) == -10
    assert oracle.prop1_bias(2, 2, 11) == -8


@pytest.mark.parametrize("l", [1, 3, -2, 6])
def test_prop1_rejects_bad_index(l):
    with pytest.raises(AdaThreshError):
        oracle.prop1_bias(2, l, 1)


@given(st.integers(1, 8), st.fractions(-20, 20))
def test_prop1_fully_exposed_is_unbiased(k, gamma):
    assert oracle.prop1_bias(k, 2 * k, gamma) == 0


@given(st.integers(1, 6))
def test_prop1_matches_direct_sum(k):
    # the h = 0 bias is -gamma since the binomial mean of r/k - 1 vanishes
    assert oracle.prop1_bias(k, 0, Fraction(3)) == -3
    d = 2 * k
    for l in range(0, d + 1, 2):
        tail = [r for r in range(l, d + 1)]
        mean_e = Fraction(sum(Fraction(r, d) * comb(d, r) for r in tail), sum(comb(d, r) for r in tail))
        # the treated-arm tail mean of e, shifted by the control-arm mirror image
        assert oracle.prop1_bias(k, l, 1) == 2 * mean_e - 2


def test_prop2_cases():
    n, p = 100, 0.5
    v = oracle.prop2_var_scale(2, 0.5, 0, 3, 0, n, p)
    assert v.approximate
    assert v.value == pytest.approx(9 * 2 / (n * p ** 2))
    lo = oracle.prop2_var_scale(2, 0, 10, 10, 0, n, p).value
    hi = oracle.prop2_var_scale(2, 1, 10, 10, 0, n, p).value
    assert lo / hi == pytest.approx(p**4)
    vals = [oracle.prop2_var_scale(2, h, 10, 10, 1, n, p).value for h in (0, 0.25, 0.5, 0.75, 1)]
    assert vals[-1] > vals[0]
    with pytest.raises(AdaThreshError):
        oracle.prop2_var_scale(2, 1.5, 0, 1, 0, n, p)


def test_prop3_and_prop4():
    assert oracle.prop3_bias(1, 5).value == 0
    assert oracle.prop3_bias(Fraction(1, 2), 4).value == -4
    assert oracle.prop3_bias(1, 4, variant="proof").value == -8
    with pytest.raises(AdaThreshError):
        oracle.prop3_bias(0.25, 1)
    with pytest.raises(AdaThreshError):
        oracle.prop3_bias(1, 1, variant="other")
    assert oracle.prop4_var_scale(4, 1, 1, 0, 50, 0.5).value == pytest.approx(5 / (50 * 0.25))


@pytest.mark.parametrize("k", [1, 2, 3])
def test_enumeration_matches_closed_form(k):
    n = max(4 * k + 4, 12) if k == 2 else 4 * k + 4
    g = kth_power_cycle(n, k)
    prof = oracle.exact_mse(g, Design("unit", 0.5), OutcomeModel(10, 10, 10))
    for l in range(0, 2 * k + 1, 2):
        h = Fraction(l, 2 * k)
        assert prof.bias[prof.grid.index(h)] == pytest.approx(float(oracle.prop1_bias(k, l, 10)), abs=1e-10)


def test_exact_two_node_unbiased_at_one(edge2):
    prof = oracle.exact_mse(edge2, Design("unit", 0.5), OutcomeModel(1, 1, 5))
    assert prof.bias[-1] == pytest.approx(0.0, abs=1e-12)
    assert np.array_equal(prof.mse, prof.bias**2 + prof.var)
    assert np.all(prof.excluded < 1e-12)


def test_exact_gamma_zero_unbiased_everywhere():
    g = Graph.from_edges(6, [(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3), (0, 3)])
    prof = oracle.exact_mse(g, Design("unit", 0.5), OutcomeModel.with_noise(6, 1, 3, gamma=0.0))
    assert np.allclose(prof.bias, 0.0, atol=1e-10)


def test_exact_dim_reports_excluded_mass(path3):
    prof = oracle.exact_mse(path3, Design("unit", 0.5), OutcomeModel(), family="DiM")
    # all-treated and all-control assignments leave an arm empty at h = 0
    assert prof.excluded[0] == pytest.approx(0.25)
    assert prof.family == "DiM"


def test_exact_vs_monte_carlo(cycle12, cycle12_exact):
    model = OutcomeModel.with_noise(12, 1.0, 2, gamma=10.0)
    ex = oracle.exact_mse(cycle12, Design("unit", 0.5), model, cycle12_exact)
    mc = oracle.mc_mse(cycle12, Design("unit", 0.5), model, cycle12_exact, draws=4000, seed=5)
    assert np.all(np.abs(mc.mean_estimate - ex.mean_estimate) <= 4 * mc.mean_se)
    assert np.all(np.abs(mc.mse - ex.mse) <= 4 * mc.mse_se)


def test_mc_unbiased_case(cycle12, cycle12_exact):
    mc = oracle.mc_mse(cycle12, Design("unit", 0.5), OutcomeModel.with_noise(12, 1, 1, gamma=0.0),
                       cycle12_exact, draws=3000, seed=3)
    assert abs(mc.bias[0]) <= 4 * mc.mean_se[0]


def test_mc_deterministic_and_validated(cycle12, cycle12_exact):
    m = OutcomeModel(10, 10, 3)
    a = oracle.mc_mse(cycle12, Design("unit", 0.5), m, cycle12_exact, draws=50, seed=8)
    b = oracle.mc_mse(cycle12, Design("unit", 0.5), m, cycle12_exact, draws=50, seed=8)
    assert a.to_csv() == b.to_csv()
    assert "R=50" in a.method
    with pytest.raises(AdaThreshError):
        oracle.mc_mse(cycle12, Design("unit", 0.5), m, cycle12_exact, draws=1)
    with pytest.raises(AdaThreshError):
        oracle.mc_mse(cycle12, Design("unit", 0.5), m, None, grid=cycle12_exact.grid, draws=5)


def test_mc_excludes_infeasible_replicates(path3):
    mc = oracle.mc_mse(path3, Design("unit", 0.5), OutcomeModel(), None,
                       grid=ThresholdGrid.uniform(2), draws=400, seed=2, family="DiM")
    assert 0 < mc.excluded[0] < 400


@pytest.mark.parametrize("c", [0.5, 3.0, 40.0])
def test_h_star_invariant_to_scaling(cycle12, cycle12_exact, c):
    m = OutcomeModel(10, 10, 6)
    base = oracle.exact_mse(cycle12, Design("unit", 0.5), m, cycle12_exact)
    scaled = oracle.exact_mse(cycle12, Design("unit", 0.5), m.scaled(c), cycle12_exact)
    assert scaled.h_star == base.h_star
    assert np.allclose(scaled.mse, c**2 * base.mse)


def test_sine_response_is_unbiased(cycle12, cycle12_exact):
    prof = oracle.exact_mse(cycle12, Design("unit", 0.5), OutcomeModel(10, 10, 30, f_kind="sine"), cycle12_exact)
    assert np.allclose(prof.bias, 0.0, atol=1e-9)


def test_profile_csv(cycle12, cycle12_exact):
    prof = oracle.exact_mse(cycle12, Design("unit", 0.5), OutcomeModel(10, 10, 10), cycle12_exact)
    lines = prof.to_csv().splitlines()
    assert lines[0].split(",") == list(oracle.ORACLE_COLUMNS)
    assert len(lines) == 1 + len(prof.grid)
    assert sum(r["h_star"] for r in prof.to_rows()) == 1
    assert prof.rmse_over_ate == pytest.approx(np.sqrt(prof.mse) / 20.0)


def test_cap_enforced():
    g = kth_power_cycle(30, 1)
    with pytest.raises(AdaThreshError, match="Monte Carlo"):
        oracle.exact_mse(g, Design("unit", 0.5), OutcomeModel(), cap=2**10)
