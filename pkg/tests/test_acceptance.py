"""Acceptance criteria, one test each; results are echoed in the terminal summary.

The ensemble tests sample ten omegas with lambda in [0.55, 0.95] from seeds
0..9.  Run ``pytest tests/test_acceptance.py -v`` to see the PASS/FAIL lines.
"""
import math

import numpy as np
import pytest

from lorenzrt.cells import PartitionConfig
from lorenzrt.driver import OmegaSequence, check_uniform_expansion, sample_omega
from lorenzrt.escape import (build_escape_partition, fit_escape_tail, max_itinerary_distortion,
                             sample_escape_times, verify_depth_size_bound,
                             verify_escape_depth_relation)
from lorenzrt.induced import InducedSystem, check_induced_distortion
from lorenzrt.maps import FamilyRange
from lorenzrt.measures import equivariance_residuals, estimate_measure_ulam, quenched_correlation
from lorenzrt.returns import (FullReturnConfig, build_return_partition, check_aperiodicity,
                              check_markov, check_stopping_time, default_t_star,
                              fit_return_tail, sample_return_times)

from oracles import doubling_correlation

ENSEMBLE = 10
FAMILY = FamilyRange(0.55, 0.95)
RESULTS = []


def report(name, ok, detail):
    RESULTS.append(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def cfg():
    return PartitionConfig(r0=3, r_star=6, alpha=0.6)


@pytest.fixture(scope="module")
def ensemble():
    return [sample_omega(seed, 200, 400, FAMILY) for seed in range(ENSEMBLE)]


@pytest.fixture(scope="module")
def frc(cfg, ensemble):
    return FullReturnConfig.default(cfg, t_star=default_t_star(ensemble, cfg.delta / 10))


@pytest.fixture(scope="module")
def escape_partitions(cfg, ensemble):
    return [build_escape_partition(om, (-cfg.delta, cfg.delta), cfg, n_cap=60)
            for om in ensemble]


@pytest.fixture(scope="module")
def return_partitions(cfg, frc, ensemble):
    return [build_return_partition(om, cfg, frc, n_cap=18) for om in ensemble]


@pytest.fixture(scope="module")
def ells(ensemble):
    rng = np.random.default_rng(0)
    return [check_uniform_expansion(om, rng.uniform(-0.5, 0.5, 100), 30).ell
            for om in ensemble]


def test_01_calibration_correlations():
    om = OmegaSequence.constant(1.0, 20, 20)
    series = quenched_correlation(om, "x", "x", 10, bins=2 ** 14, burn_in=10)
    errs = [abs(c - float(doubling_correlation(int(n)))) / 2.0 ** -n
            for n, c in zip(series.ns, series.values)]
    report("calibration correlations", max(errs) <= 1e-3,
           f"max |C_n - 2^-n/12| * 2^n = {max(errs):.3g} (n=1..10, B=2^14)")


def test_02_calibration_density():
    om = OmegaSequence.constant(1.0, 5, 60)
    mu = estimate_measure_ulam(om, 4096, 0, 60)[0]
    dist = float(np.abs(mu.density - 1.0).mean())
    report("calibration invariant density", dist <= 1e-3, f"L1 distance {dist:.3g} at B=4096")


@pytest.mark.slow
def test_03_escape_tails(cfg, ensemble):
    fits = []
    for i, om in enumerate(ensemble):
        run = sample_escape_times(om, (-cfg.delta, cfg.delta), cfg, 60, 20000, seed=i)
        fits.append(fit_escape_tail(run, (5, 40)))
    ok = all(f.rate > 0 and f.r2 >= 0.9 for f in fits)
    report("escape tails", ok, f"gamma in [{min(f.rate for f in fits):.3g}, "
           f"{max(f.rate for f in fits):.3g}], min r2 {min(f.r2 for f in fits):.4f}")


@pytest.mark.slow
def test_04_return_tails(cfg, frc, ensemble):
    fits = []
    for i, om in enumerate(ensemble):
        run = sample_return_times(om, cfg, frc, 200, 20000, seed=i)
        fits.append(fit_return_tail(run, (10, 60)))
    bs = np.array([f.rate for f in fits])
    med = float(np.median(bs))
    spread = float(max(bs.max() / med, med / bs.min())) if bs.min() > 0 else math.inf
    ok = all(f.rate > 0 and f.r2 >= 0.9 for f in fits) and spread <= 3
    report("return tails", ok, f"b in [{bs.min():.3g}, {bs.max():.3g}], median {med:.3g}, "
           f"max ratio {spread:.3g}, min r2 {min(f.r2 for f in fits):.4f}")


@pytest.mark.slow
def test_05_depth_size_bound(escape_partitions):
    reps = [verify_depth_size_bound(p.elements) for p in escape_partitions]
    n = sum(r.n_checked for r in reps)
    bad = sum(len(r.offenders) for r in reps)
    report("depth-size bound", n > 0 and bad == 0,
           f"{n - bad}/{n} elements satisfy log|J| + R/2 <= 0, worst {max(r.worst for r in reps):.3g}")


@pytest.mark.slow
def test_06_escape_depth_relation(escape_partitions, ells):
    reps = [verify_escape_depth_relation(p.elements, ell)
            for p, ell in zip(escape_partitions, ells)]
    n = sum(r.n_checked for r in reps)
    bad = sum(len(r.offenders) for r in reps)
    report("escape-depth relation", n > 0 and bad == 0 and min(ells) > 0,
           f"{n - bad}/{n} elements, ell in [{min(ells):.3g}, {max(ells):.3g}]")


@pytest.mark.slow
def test_07_itinerary_distortion(cfg, escape_partitions):
    d1 = max(max_itinerary_distortion(p, n_points=64) for p in escape_partitions)
    d2 = max(max_itinerary_distortion(p, n_points=128) for p in escape_partitions)
    calib = build_escape_partition(OmegaSequence.constant(1.0, 80), (-cfg.delta, cfg.delta),
                                   cfg, n_cap=60)
    d0 = max_itinerary_distortion(calib)
    change = abs(d2 - d1) / d1 if d1 > 0 else math.inf
    ok = math.isfinite(d2) and change <= 0.05 and d0 == 0.0
    report("itinerary distortion", ok,
           f"max {d1:.4g} -> {d2:.4g} on doubling ({change:.2%}), calibration {d0}")


@pytest.mark.slow
def test_08_gibbs_markov(cfg, ensemble, frc, return_partitions):
    reps = [check_markov(p) for p in return_partitions]
    err = max(r.max_endpoint_error for r in reps)
    markov_ok = all(r.passed for r in reps) and err <= 1e-9
    system = InducedSystem(ensemble[0], cfg, frc, n_cap=18)
    dist = check_induced_distortion(system, pairs_per_depth=30, max_depth=5, seed=0)
    ok = markov_ok and dist.decreasing and 0 < dist.beta_hat < 1
    report("Gibbs-Markov", ok, f"endpoint error {err:.2g} over "
           f"{sum(r.n_elements for r in reps)} elements; beta_hat {dist.beta_hat:.3g} "
           f"(decreasing={dist.decreasing}, r2 {dist.r2:.3g})")


@pytest.mark.slow
def test_09_stopping_time(cfg, frc, ensemble, return_partitions):
    rng = np.random.default_rng(2024)
    n = 16
    trials = passed = 0
    for om, base in zip(ensemble, return_partitions):
        for _ in range(2):
            cut = int(rng.integers(1, n + 1))
            changed = om.with_values({j: float(rng.uniform(0.55, 0.95))
                                      for j in range(cut, cut + 60)})
            other = build_return_partition(changed, cfg, frc, n_cap=18)
            trials += 1
            passed += check_stopping_time(base, other, cut)
    report("stopping time", passed == trials, f"{passed}/{trials} randomized tests bit-exact")


def test_10_aperiodicity(cfg):
    om = OmegaSequence.constant(1.0, 400, 200)
    frc = FullReturnConfig.default(cfg, t_star=default_t_star([om], cfg.delta / 10))
    ap = check_aperiodicity([build_return_partition(om, cfg, frc, n_cap=18)])
    ok = ap.gcd == 1 and len(ap.eps) > 0 and all(e > 0 for e in ap.eps)
    report("aperiodicity", ok, f"gcd {ap.gcd} over taus {ap.taus[:6]}, "
           f"min eps {min(ap.eps, default=0):.3g}")


def test_11_equivariance():
    om = sample_omega(0, 80, 60, FAMILY)
    worst = {}
    for B in (2 ** 12, 2 ** 13):
        res = equivariance_residuals(om, estimate_measure_ulam(om, B, 50, 60))
        assert res.size == 50
        worst[B] = float(res.max())
    ratio = worst[2 ** 13] / worst[2 ** 12]
    ok = worst[2 ** 12] <= 2 / 2 ** 12 + 1e-8 and 0.35 <= ratio <= 0.65
    report("equivariance", ok, f"max residual {worst[2 ** 12]:.3g} at B=2^12 "
           f"(bound {2 / 2 ** 12 + 1e-8:.3g}), ratio at 2^13 {ratio:.3g}")


@pytest.mark.slow
def test_12_quenched_decay(ensemble):
    fits = []
    for om in ensemble:
        for mode in ("forward", "pullback"):
            s = quenched_correlation(om, "x", "x", 40, bins=4096, burn_in=60, mode=mode)
            fits.append(s.fit)
    ok = all(f.rate > 0 and f.r2 >= 0.85 and f.ok for f in fits)
    report("quenched correlation decay", ok,
           f"{sum(f.rate > 0 and f.r2 >= 0.85 for f in fits)}/{len(fits)} series, "
           f"b in [{min(f.rate for f in fits):.3g}, {max(f.rate for f in fits):.3g}], "
           f"min r2 {min(f.r2 for f in fits):.3f}")
