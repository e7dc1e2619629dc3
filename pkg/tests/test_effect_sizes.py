import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from metareg import EffectEstimate, TwoByTwoTable, log_odds_ratio, log_ratio_of_means, logit_proportion
from metareg.effect_sizes import ratio_of_means_moments


def test_symmetric_table():
    e = log_odds_ratio(TwoByTwoTable(10, 20, 10, 20))
    assert e.y == 0.0
    assert e.variance == pytest.approx(0.4)


def test_log_odds_ratio_hand_value():
    e = log_odds_ratio(TwoByTwoTable(10, 100, 20, 100))
    assert round(e.y, 4) == -0.8109
    assert round(e.variance, 4) == 0.1736


def test_zero_cell_correction():
    e = log_odds_ratio(TwoByTwoTable(0, 10, 5, 10))
    assert round(e.y, 4) == -3.0445
    assert round(e.variance, 4) == 2.4589


def test_no_correction_without_zero_cells():
    e = log_odds_ratio(TwoByTwoTable(1, 3, 1, 3))
    assert e.variance == pytest.approx(1 + 1 / 2 + 1 + 1 / 2)


@pytest.mark.parametrize(
    "table",
    [(11, 10, 1, 5), (-1, 10, 1, 5), (1, 0, 1, 5), (1, 5, 1, math.nan)],
)
def test_invalid_tables(table):
    with pytest.raises(ValueError):
        TwoByTwoTable(*table)


@pytest.mark.parametrize(
    "events, n, y, v",
    [
        (50 * 0.46, 50, -0.1603, 0.0805),
        (274 * 0.725, 274, 0.9694, 0.0183),
        (55 * 0.295, 55, -0.8712, 0.0874),
        (20 * 0.8, 20, 1.3863, 0.3125),
        (56 * 0.22, 56, -1.2657, 0.1041),
        (21 * 0.55, 21, 0.2007, 0.1924),
    ],
)
def test_logit_proportion_listing(events, n, y, v):
    e = logit_proportion(events, n)
    assert round(e.y, 4) == y
    assert round(e.variance, 4) == v


def test_logit_half():
    e = logit_proportion(20, 40)
    assert e.y == 0.0
    assert e.variance == pytest.approx(4 / 40)


@pytest.mark.parametrize("events", [0, 10])
def test_logit_boundary_rejected(events):
    with pytest.raises(ValueError):
        logit_proportion(events, 10)


def test_ratio_of_means():
    e = log_ratio_of_means(2, 1, 100, 1, 1, 100)
    assert round(e.y, 4) == 0.6931
    assert round(e.variance, 4) == 0.0125
    assert ratio_of_means_moments(math.e, 0, 10, 1, 0, 10) == pytest.approx((1.0, 0.0))
    assert log_ratio_of_means(3, 1, 10, 3, 2, 10).y == 0.0


def test_ratio_of_means_rejections():
    with pytest.raises(ValueError):
        log_ratio_of_means(-1, 1, 10, 1, 1, 10)
    with pytest.raises(ValueError):
        log_ratio_of_means(math.e, 0, 10, 1, 0, 10)


@pytest.mark.parametrize("var", [0.0, -1.0, math.inf, math.nan])
def test_effect_estimate_variance(var):
    with pytest.raises(ValueError):
        EffectEstimate(0.0, var)


def test_sigma():
    assert EffectEstimate(1.0, 0.25).sigma == 0.5


counts = st.integers(0, 60)
sizes = st.integers(1, 60)


@given(counts, sizes, counts, sizes)
def test_arm_swap_antisymmetry(a, extra1, c, extra2):
    t = TwoByTwoTable(a, a + extra1, c, c + extra2)
    s = TwoByTwoTable(c, c + extra2, a, a + extra1)
    e, f = log_odds_ratio(t), log_odds_ratio(s)
    assert e.y == pytest.approx(-f.y, abs=1e-12)
    assert e.variance == pytest.approx(f.variance)
    assert e.variance > 0


@given(st.floats(0.5, 500), st.floats(0.01, 0.99))
def test_logit_complement(n, frac):
    ev = n * frac
    a, b = logit_proportion(ev, n), logit_proportion(n - ev, n)
    assert a.y + b.y == pytest.approx(0.0, abs=1e-12)
    assert a.variance == pytest.approx(b.variance)
    assert np.isfinite(a.variance) and a.variance > 0
