import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lorenzrt.cells import PartitionConfig
from lorenzrt.driver import OmegaSequence, compose, sample_omega
from lorenzrt.errors import ConfigError, DomainError
from lorenzrt.maps import FamilyRange
from lorenzrt.pieces import Fiber
from lorenzrt.returns import (FullReturnConfig, ReturnElement, ReturnPartition,
                              UnreturnedError, build_return_partition, check_aperiodicity,
                              check_markov, check_stopping_time, escape_history_tail,
                              find_full_return, fit_return_tail, induced_apply,
                              preimages_of_zero, return_tail, sample_return_times)


@pytest.fixture(scope="module")
def calib_ret(pcfg, calib, calib_frc):
    return build_return_partition(calib, pcfg, calib_frc, n_cap=18)


@pytest.fixture(scope="module")
def calib_run(pcfg, calib, calib_frc):
    return sample_return_times(calib, pcfg, calib_frc, n_cap=200, n_samples=20000, seed=0)


def test_preimages_examples():
    om = OmegaSequence.constant(1.0, 20)
    assert preimages_of_zero(om, 0).points.tolist() == [0.0]
    assert preimages_of_zero(om, 1).points.tolist() == [-0.25, 0.0, 0.25]
    for d in range(1, 9):
        pre = preimages_of_zero(om, d)
        assert pre.points.size == 2 ** (d + 1) - 1
        # dyadic oracle: the multiples of 2^-(d+1) strictly inside I
        k = np.arange(-2 ** d + 1, 2 ** d)
        np.testing.assert_array_equal(pre.points, k / 2.0 ** (d + 1))
        assert pre.max_gap == 2.0 ** -(d + 1)


def test_preimages_solve_zero():
    om = sample_omega(4, 0, 20, FamilyRange(0.55, 0.95))
    pre = preimages_of_zero(om, 6)
    assert pre.points.size == 2 ** 7 - 1
    fib = Fiber.of(om, 6)
    x = pre.points[pre.points != 0]
    closest = np.abs(x)
    for j in range(6):
        x = np.sign(x) * (fib.a[j] * np.abs(x) ** fib.lam[j] - 0.5)
        closest = np.minimum(closest, np.abs(x))
    assert closest.max() < 1e-12


def test_full_return_example(pcfg):
    frc = FullReturnConfig.default(pcfg, t_star=7)
    fib = Fiber(np.ones(10), np.full(10, 2.0))
    ds = pcfg.delta_star
    fr = find_full_return(fib, 0, (0.2, 0.3), pcfg, frc)
    assert fr.ok and fr.t == 1 and fr.x_star == 0.25
    lo, hi = fr.sub
    # slope 2 maps 0.25 -/+ delta*/2 onto -/+ delta*
    assert lo == pytest.approx(0.25 - ds / 2, abs=1e-16)
    assert hi == pytest.approx(0.25 + ds / 2, abs=1e-16)
    assert 2 * lo - 0.5 == pytest.approx(-ds, abs=1e-15)
    assert 2 * hi - 0.5 == pytest.approx(ds, abs=1e-15)
    assert min(fr.margins) > pcfg.delta / 5
    assert fr.beta == pytest.approx(ds / 0.1)


def test_full_return_short_interval(pcfg):
    frc = FullReturnConfig.default(pcfg, t_star=7)
    fib = Fiber(np.ones(10), np.full(10, 2.0))
    with pytest.raises(DomainError):
        find_full_return(fib, 0, (0.2, 0.2 + pcfg.delta / 2), pcfg, frc)


def test_config_validation(pcfg):
    with pytest.raises(ConfigError):
        FullReturnConfig.default(pcfg, bar_delta=pcfg.delta / 4)
    with pytest.raises(ConfigError):
        FullReturnConfig.default(PartitionConfig(r0=3, r_star=5))


def test_partition_structure(pcfg, calib_ret):
    p = calib_ret
    ds = pcfg.delta_star
    lo = np.array([e.lo for e in p.elements])
    hi = np.array([e.hi for e in p.elements])
    assert np.all(hi > lo) and np.all(lo[1:] >= hi[:-1])
    assert p.lengths().sum() + p.residual_mass == pytest.approx(2 * ds, rel=1e-12)
    mk = check_markov(p)
    assert mk.passed and mk.max_endpoint_error <= 1e-9 and mk.monotone
    taus = p.taus()
    assert taus.min() >= 1
    tmin = taus.min()
    assert p.lengths()[taus == tmin].sum() > 0


def test_return_tail_bookkeeping(pcfg, calib_ret):
    assert return_tail(calib_ret, 0) == pytest.approx(2 * pcfg.delta_star, rel=1e-12)
    assert return_tail(calib_ret, 19) == pytest.approx(calib_ret.residual_mass)


def test_sampled_tail_calibration(pcfg, calib_run, calib_ret):
    fit = fit_return_tail(calib_run, (10, 60))
    assert fit.rate > 0 and fit.r2 >= 0.9
    # sampled and explicit tails agree where the explicit partition resolves them
    ds2 = 2 * pcfg.delta_star
    explicit = 1 - calib_ret.lengths()[calib_ret.taus() <= 18].sum() / ds2
    sampled = return_tail(calib_run, 18) / ds2
    assert abs(explicit - sampled) < 0.01


def test_residual_example(pcfg, calib, calib_frc):
    # unreturned mass of Delta* after 80 steps in the calibration run
    run = sample_return_times(calib, pcfg, calib_frc, n_cap=80, n_samples=20000, seed=2)
    assert return_tail(run, 80) < 1e-5 * 2 * pcfg.delta_star


def test_escape_history_tail(pcfg, calib_ret, calib_run):
    big = 1 + max(len(e.escape_times) for e in calib_ret.elements)
    assert escape_history_tail(calib_ret, big, 0) == 0.0
    assert escape_history_tail(calib_run, int(calib_run.escapes.max()) + 1, 0) == 0.0
    total = sum(escape_history_tail(calib_ret, i, 0) for i in range(0, 20))
    assert total == pytest.approx(2 * pcfg.delta_star - calib_ret.residual_mass, rel=1e-12)
    stot = sum(escape_history_tail(calib_run, i, 0) for i in range(0, 400))
    assert stot == pytest.approx(calib_run.weights.sum(), rel=1e-12)


def test_escape_history_decay(calib_run):
    from lorenzrt.escape import fit_escape_tail, sample_escape_times
    from lorenzrt.fitting import fit_exponential
    ns = np.arange(10, 61)
    counts = np.bincount(calib_run.escapes)
    i = int(np.argmax(counts))
    vals = [escape_history_tail(calib_run, i, n) for n in ns]
    fit = fit_exponential(ns, vals)
    cfg = PartitionConfig()
    gamma = fit_escape_tail(sample_escape_times(OmegaSequence.constant(1.0, 80),
                                                (-cfg.delta, cfg.delta), cfg, 60), (5, 40)).rate
    assert -fit.rate <= -gamma + 0.05


def test_induced_apply(pcfg, calib, calib_ret):
    ds = pcfg.delta_star
    e = calib_ret.elements[len(calib_ret.elements) // 2]
    mid = 0.5 * (e.lo + e.hi)
    y, tau = induced_apply(calib, mid, calib_ret)
    assert tau == e.tau and y == compose(calib, mid, tau)[-1]
    assert abs(y) <= ds * (1 + 1e-6)
    with pytest.raises(UnreturnedError):
        induced_apply(calib, 0.0, calib_ret)


def test_induced_apply_linear_example(pcfg):
    ds = pcfg.delta_star
    frc = FullReturnConfig.default(pcfg, t_star=7)
    om = OmegaSequence.constant(1.0, 10)
    fr = find_full_return(Fiber(np.ones(10), np.full(10, 2.0)), 0, (0.2, 0.3), pcfg, frc)
    el = ReturnElement(fr.sub[0], fr.sub[1], 1, (0,), 1, fr.sub, np.ones(1, np.int8).tobytes())
    part = ReturnPartition([el], [], pcfg, frc, 1, om)
    y, tau = induced_apply(om, 0.25 - ds / 8, part)
    assert tau == 1 and y == pytest.approx(-ds / 4, abs=1e-16)


def test_induced_composition(pcfg, calib_frc, random_omegas):
    from lorenzrt.pieces import pullback
    om = random_omegas[0]
    p0 = build_return_partition(om, pcfg, calib_frc, n_cap=16)
    for e in sorted(p0.elements, key=lambda el: -el.length)[:5]:
        p1 = build_return_partition(om.shift(e.tau), pcfg, calib_frc, n_cap=16)
        e1 = max(p1.elements, key=lambda el: el.length)
        # x in e with F(x) the midpoint of e1
        y0 = 0.5 * (e1.lo + e1.hi)
        x = float(pullback(np.array([y0]), e.sign_array(), p0.fiber, e.tau)[0])
        y, tau = induced_apply(om, x, p0)
        assert tau == e.tau and y == pytest.approx(y0, abs=1e-12)
        # F^2_omega = F_{sigma^tau omega} o F_omega
        z, tau2 = induced_apply(om.shift(tau), y, p1)
        assert tau2 == e1.tau
        assert z == pytest.approx(compose(om, x, tau + tau2)[-1], abs=1e-6)


def test_stopping_time(pcfg, random_frc, random_omegas):
    om = random_omegas[1]
    n = 16
    base = build_return_partition(om, pcfg, random_frc, n_cap=n + 2)
    assert check_stopping_time(base, base, n)
    rng = np.random.default_rng(7)
    for trial in range(3):
        changed = om.with_values({j: float(rng.uniform(0.55, 0.95)) for j in range(n, n + 40)})
        assert changed.agrees_with(om, 0, n - 1)
        other = build_return_partition(changed, pcfg, random_frc, n_cap=n + 2)
        assert check_stopping_time(base, other, n)


def test_aperiodicity_examples(pcfg, calib_frc, calib_ret):
    def fake(taus):
        els = [ReturnElement(i * 0.001, i * 0.001 + 0.0005, t, (0,), 1, (0, 0), b"")
               for i, t in enumerate(taus)]
        return ReturnPartition(els, [], pcfg, calib_frc, 40)
    assert check_aperiodicity([fake([5, 6]), fake([6, 5, 9])]).gcd == 1
    rep = check_aperiodicity([fake([4, 4]), fake([4])])
    assert rep.gcd == 4 and not rep.passed
    rep = check_aperiodicity([calib_ret])
    assert rep.passed and rep.gcd == 1 and all(e > 0 for e in rep.eps)


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_random_partitions_are_markov(seed):
    cfg = PartitionConfig()
    om = sample_omega(seed, 0, 80, FamilyRange(0.55, 0.95))
    frc = FullReturnConfig.default(cfg, t_star=14)
    p = build_return_partition(om, cfg, frc, n_cap=15)
    assert p.lengths().sum() + p.residual_mass == pytest.approx(2 * cfg.delta_star, rel=1e-12)
    assert check_markov(p).passed


def test_stopping_time_after_late_return(pcfg, random_frc):
    # escapes at 13..15 whose sibling J~ returns after time 16: the pieces
    # returning at 16 must not depend on where that later J~ was cut
    om = sample_omega(3, 200, 400, FamilyRange(0.55, 0.95))
    base = build_return_partition(om, pcfg, random_frc, n_cap=18)
    for rs in range(6):
        rng = np.random.default_rng(rs)
        changed = om.with_values({j: float(rng.uniform(0.55, 0.95)) for j in range(16, 76)})
        other = build_return_partition(changed, pcfg, random_frc, n_cap=18)
        assert check_stopping_time(base, other, 16)
