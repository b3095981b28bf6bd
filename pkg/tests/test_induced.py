import math

import numpy as np
import pytest

from lorenzrt.driver import OmegaSequence
from lorenzrt.induced import (InducedSystem, check_induced_distortion, cylinder_pair,
                              separation_time)
from lorenzrt.returns import FullReturnConfig
from lorenzrt.tower import _cylinder_point


@pytest.fixture(scope="module")
def calib_system(pcfg, calib, calib_frc):
    return InducedSystem(calib, pcfg, calib_frc, n_cap=18)


@pytest.fixture(scope="module")
def system75(pcfg):
    om = OmegaSequence.constant(0.75, 400, 50)
    frc = FullReturnConfig.default(pcfg, t_star=12)
    return InducedSystem(om, pcfg, frc, n_cap=18)


def test_constant_fiber_shares_one_partition(calib_system):
    p0 = calib_system.partition(0)
    assert calib_system.partition(7) is p0 and calib_system.partition(30) is p0
    assert calib_system.n_builds == 1


def test_separation_trivial_cases(calib_system):
    els = calib_system.partition(0).elements
    x = 0.5 * (els[0].lo + els[0].hi)
    y = 0.5 * (els[-1].lo + els[-1].hi)
    rec = separation_time(calib_system, x, y)
    assert rec.s == 0 and rec.elapsed == 0 and not rec.censored
    same = separation_time(calib_system, x, x, cap=5)
    assert same.censored and same.s == 5


def test_separation_grows_like_log_distance(calib_system):
    rng = np.random.default_rng(3)
    js = np.arange(16, 53, 4)
    medians = []
    for j in js:
        vals = []
        while len(vals) < 40:
            x, _ = _cylinder_point(calib_system, 4, rng)
            if x is None:
                continue
            y = x + rng.choice([-1.0, 1.0]) * 2.0 ** -j
            rec = separation_time(calib_system, x, y, cap=6)
            if not rec.censored:
                vals.append(rec.elapsed)
        medians.append(np.median(vals))
    slope = np.polyfit(js, medians, 1)[0]
    # the doubling map separates points at distance 2^-j after about j steps
    assert 0.8 <= slope <= 1.2


def test_calibration_distortion_vanishes(calib_system):
    rep = check_induced_distortion(calib_system, pairs_per_depth=10, max_depth=3)
    assert rep.D_tilde == 0.0 and rep.passed


def test_power_law_distortion(system75):
    rep = check_induced_distortion(system75, pairs_per_depth=40, max_depth=5, seed=1)
    assert rep.passed and 0 < rep.beta_hat < 1 and rep.decreasing
    assert rep.r2 >= 0.8
    assert math.isfinite(rep.D_tilde)
    # fresh pairs at small separation time stay below the fitted constant
    rng = np.random.default_rng(5)
    for _ in range(20):
        out = cylinder_pair(system75, 1, rng)
        assert out[0] <= rep.D_tilde


def test_cylinder_pair_points_share_first_element(system75):
    rng = np.random.default_rng(11)
    logratio, fx, fy, scale = cylinder_pair(system75, 2, rng)
    assert fx != fy and scale > 0 and logratio >= 0
