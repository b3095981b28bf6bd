import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lorenzrt.cells import CellId, PartitionConfig, interval_of
from lorenzrt.driver import OmegaSequence, check_uniform_expansion, compose
from lorenzrt.errors import ConfigError
from lorenzrt.escape import (EscapeElement, build_escape_partition, distortion, escape_tail,
                             fit_escape_tail, max_itinerary_distortion, sample_escape_times,
                             tail_series, verify_depth_size_bound, verify_escape_depth_relation)
from lorenzrt.pieces import CAP, Fiber, chop_image


@pytest.fixture(scope="module")
def calib_part(pcfg, calib):
    return build_escape_partition(calib, (-pcfg.delta, pcfg.delta), pcfg, n_cap=60)


def _elem(length, R, E, nret=1):
    return EscapeElement(0.0, length, E, R, nret, (0.0, 0.1), b"")


def test_doubling_escape(pcfg, calib):
    d = pcfg.delta
    p = build_escape_partition(calib, (0.1, 0.1 + d), pcfg, n_cap=10)
    # T(J0) = [-0.3, -0.3 + 2 delta] has length 2 delta and misses Delta_0
    assert len(p.elements) == 1
    e = p.elements[0]
    assert e.escape_time == 1 and (e.lo, e.hi) == (0.1, 0.1 + d)
    assert p.residual_mass == 0.0


def test_calibration_partition(pcfg, calib_part):
    p = calib_part
    J = 2 * pcfg.delta
    lo = np.array([e.lo for e in p.elements])
    hi = np.array([e.hi for e in p.elements])
    assert np.all(hi > lo) and np.all(lo[1:] >= hi[:-1])
    assert abs(p.lengths().sum() + p.residual_mass - J) <= 1e-10 * J
    # nothing is still unescaped at the cap; truncated depth and mass-floor pieces are reported
    assert p.capped_mass <= 1e-6 * J
    assert p.residual_mass < 0.05 * J
    assert all(e.escape_time >= 1 for e in p.elements)


def test_elements_escape_when_recorded(pcfg, calib_part):
    p = calib_part
    rng = np.random.default_rng(0)
    for i in rng.choice(len(p.elements), 50, replace=False):
        e = p.elements[i]
        mid = 0.5 * (e.lo + e.hi)
        y = compose(p.omega, mid, e.escape_time)[-1]
        a, b = e.image
        assert a - 1e-9 <= y <= b + 1e-9
        assert b - a >= pcfg.delta * (1 - 1e-12)
        assert b <= -pcfg.delta or a >= pcfg.delta


def test_chop_of_full_level():
    cfg = PartitionConfig(r0=3, r_star=6, alpha=0.45)
    lo, hi = math.exp(-5), math.exp(-4)
    fib = Fiber(np.ones(1), np.full(1, 2.0))
    ch = chop_image(lo, hi, lo, hi, np.zeros(2, np.int8), 0, fib, cfg, r_max=32)
    assert ch.kind.size == 64 and np.all(ch.kind == 1)
    for j in range(64):
        cell = interval_of(CellId(4, j + 1), cfg)
        left = interval_of(CellId(4, max(j, 1)), cfg).lo
        right = interval_of(CellId(4, min(j + 2, 64)), cfg).hi
        assert cell.lo >= ch.img_lo[j] - 1e-18 and ch.img_hi[j] <= cell.hi + 1e-18
        assert left <= ch.img_lo[j] and ch.img_hi[j] <= right
    np.testing.assert_array_equal(ch.lo[1:], ch.hi[:-1])


def test_bad_J0(pcfg, calib):
    with pytest.raises(ConfigError):
        build_escape_partition(calib, (0.0, 0.01), pcfg)
    with pytest.raises(ConfigError):
        build_escape_partition(calib, (0.2, 0.2 + pcfg.delta / 10), pcfg)


def test_escape_tail_bookkeeping(pcfg, calib_part):
    J = 2 * pcfg.delta
    assert escape_tail(calib_part, 0) == pytest.approx(J, rel=1e-12)
    assert escape_tail(calib_part, 61) == pytest.approx(calib_part.residual_mass)
    ns = np.arange(0, 62)
    series = tail_series(calib_part.escape_times(), calib_part.lengths(),
                         calib_part.residual_mass, ns)
    assert series == pytest.approx([escape_tail(calib_part, n) for n in ns])
    assert np.all(np.diff(series) <= 0)


def test_sampled_matches_explicit(pcfg, calib, calib_part):
    run = sample_escape_times(calib, (-pcfg.delta, pcfg.delta), pcfg, 60, 20000, seed=1)
    J = 2 * pcfg.delta
    for n in (1, 3, 6):
        explicit = (escape_tail(calib_part, n) - calib_part.residual_mass) / J
        sampled = escape_tail(run, n) / J
        assert abs(explicit - sampled) < 0.05
    fit = fit_escape_tail(run, (5, 40))
    assert fit.passed and fit.r2 >= 0.9


def test_bound_examples():
    assert verify_depth_size_bound([_elem(0.5, 0, 1)]).n_checked == 0
    rep = verify_depth_size_bound([_elem(math.exp(-4), 4, 5)])
    assert rep.passed and rep.worst == pytest.approx(-2.0)
    ell = math.log(2)
    assert (2 + ell) / ell * 3 + 1 == pytest.approx(12.66, abs=5e-3)
    assert verify_escape_depth_relation([_elem(0.01, 3, 12)], ell).passed
    assert not verify_escape_depth_relation([_elem(0.01, 3, 13)], ell).passed
    assert verify_escape_depth_relation([_elem(0.01, 0, 40, nret=0)], ell).n_checked == 0


def test_bounds_on_calibration(calib_part, calib):
    assert verify_depth_size_bound(calib_part.elements).passed
    ell = check_uniform_expansion(calib, np.linspace(-0.49, 0.49, 77), 30).ell
    rep = verify_escape_depth_relation(calib_part.elements, ell)
    assert rep.passed and rep.n_checked > 1000


def test_distortion_examples(pcfg):
    cal = OmegaSequence.constant(1.0, 20)
    assert distortion(cal, (0.01, 0.02), 5) == pytest.approx(0.0, abs=1e-12)
    om = OmegaSequence.constant(0.75, 20)
    cell = interval_of(CellId(5, 3), pcfg)
    expected = 0.25 * math.log(cell.hi / cell.lo)
    assert distortion(om, cell, 1) == pytest.approx(expected, rel=1e-9)
    sub = (cell.lo + 0.25 * cell.length, cell.lo + 0.5 * cell.length)
    assert distortion(om, sub, 1) <= distortion(om, cell, 1) + 1e-12


def test_itinerary_distortion_zero_at_calibration(calib_part):
    assert max_itinerary_distortion(calib_part) == 0.0


@settings(max_examples=15, deadline=None)
@given(st.floats(0.55, 0.95), st.floats(0.06, 0.3))
def test_partition_conservation(lam, lo):
    cfg = PartitionConfig()
    om = OmegaSequence.constant(lam, 40)
    J0 = (lo, lo + cfg.delta)
    p = build_escape_partition(om, J0, cfg, n_cap=25, keep_itinerary=False)
    total = p.lengths().sum() + p.residual_mass
    assert total == pytest.approx(cfg.delta, rel=1e-10)
    lows = np.array([e.lo for e in p.elements])
    highs = np.array([e.hi for e in p.elements])
    assert np.all(lows[1:] >= highs[:-1])
