import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lorenzrt.fitting import fit_exponential


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 10), st.floats(0.01, 2.0))
def test_exact_tail_recovered(c, g):
    ns = np.arange(0, 30)
    fit = fit_exponential(ns, c * np.exp(-g * ns))
    assert fit.c == pytest.approx(c, rel=1e-6)
    assert fit.rate == pytest.approx(g, rel=1e-6, abs=1e-9)
    assert fit.r2 == pytest.approx(1.0)


def test_constant_tail_not_passed():
    fit = fit_exponential(np.arange(10), np.full(10, 0.3))
    assert abs(fit.rate) < 1e-12 and not fit.passed


def test_too_few_points():
    fit = fit_exponential([1, 2, 3], [1.0, 0.5, 0.0])
    assert not fit.ok and not fit.passed and math.isnan(fit.rate)


def test_range_restriction():
    ns = np.arange(50)
    vals = np.where(ns < 10, 1.0, np.exp(-0.3 * ns))
    fit = fit_exponential(ns, vals, (10, 40))
    assert fit.rate == pytest.approx(0.3) and fit.n_points == 31
