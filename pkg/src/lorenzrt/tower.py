"""Random Young towers over the full-return partitions and checks of (C1)-(C6).

A point (x, l) of the tower over the fiber omega' = sigma^fiber omega has
x in Delta* and 0 <= l < tau(x), with tau taken on the base fiber
sigma^(fiber - l) omega.  The tower map climbs one level, or at the top
applies the induced map and lands on level 0 of the next fiber.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .driver import compose
from .errors import ConfigError
from .fitting import fit_exponential
from .induced import check_induced_distortion, separation_time
from .maps import evaluate
from .pieces import pullback, pullback_logder
from .returns import (UnreturnedError, check_aperiodicity, check_markov, fit_return_tail,
                      return_tail)


@dataclass(frozen=True)
class TowerPoint:
    x: float
    level: int
    fiber: int = 0

    @property
    def base(self):
        return self.fiber - self.level


@dataclass(frozen=True)
class TowerLevel:
    ell: int
    mass: float  # |{tau > ell}| on the base fiber sigma^-ell of the tower fiber
    n_elements: int


@dataclass
class Tower:
    levels: list
    height_cap: int
    fiber: int
    domain_length: float
    truncated_mass: float

    @property
    def total_mass(self):
        return float(sum(lv.mass for lv in self.levels))

    def to_csv(self):
        buf = io.StringIO()
        buf.write("level,mass,n_elements\n")
        for lv in self.levels:
            buf.write(f"{lv.ell},{lv.mass!r},{lv.n_elements}\n")
        return buf.getvalue()


def _partition_source(source):
    if hasattr(source, "partition"):
        return source.partition
    if callable(source):
        return source
    return lambda m: source[-m]


def build_tower(source, height_cap, fiber=0):
    """Levels of the tower over sigma^fiber omega up to ``height_cap``.

    ``source`` gives the return partition of sigma^m omega: an
    :class:`~lorenzrt.induced.InducedSystem`, a callable m -> partition, or
    a sequence whose entry l belongs to the fiber sigma^-l omega.  Level l
    has mass |{tau > l}| on sigma^(fiber-l) omega, residual included; the
    first dropped level is reported as ``truncated_mass``.
    """
    if height_cap < 1:
        raise ConfigError("height_cap must be >= 1")
    get = _partition_source(source)
    levels = []
    for ell in range(height_cap):
        part = get(fiber - ell)
        n = sum(1 for e in part.elements if e.tau > ell)
        levels.append(TowerLevel(ell, return_tail(part, ell), n))
    top = get(fiber - height_cap)
    ds = top.frc.delta_star
    return Tower(levels, height_cap, fiber, 2 * ds, return_tail(top, height_cap))


def tower_step(pt, system):
    """F^_omega': one level up, or back to level 0 through the induced map."""
    if pt.level < 0:
        raise ConfigError("level must be >= 0")
    e = system.element(pt.base, pt.x)
    if e is None:
        raise UnreturnedError(f"x={pt.x} has no return on fiber {pt.base}")
    if pt.level >= e.tau:
        raise ConfigError(f"level {pt.level} is not below tau={e.tau}")
    if pt.level + 1 < e.tau:
        return TowerPoint(pt.x, pt.level + 1, pt.fiber + 1)
    y, _ = system.apply(pt.base, pt.x, e)
    return TowerPoint(y, 0, pt.fiber + 1)


def project(pt, system):
    """pi_omega'(x, l) = T^l_{sigma^-l omega'}(x)."""
    if pt.level == 0:
        return float(pt.x)
    system.omega.require(pt.base, pt.fiber - 1)
    e = system.element(pt.base, pt.x)
    if e is None:
        return float(compose(system.omega.shift(pt.base), pt.x, pt.level)[-1])
    fib = system.partition(pt.base).fiber
    y = float(pt.x)
    for j, s in enumerate(e.sign_array()[:pt.level]):
        y = float(s) * (fib.a[j] * abs(y) ** fib.lam[j] - 0.5)
    return y


def random_tower_points(system, n, rng, fiber=0, max_level=None):
    """Points (x, l) with l uniform below ``max_level`` and x uniform in an element with tau > l."""
    max_level = max_level or system.n_cap
    out = []
    tries = 0
    while len(out) < n and tries < 50 * n:
        tries += 1
        ell = int(rng.integers(max_level))
        part = system.partition(fiber - ell)
        cands = [e for e in part.elements if e.tau > ell]
        if not cands:
            continue
        e = cands[int(rng.integers(len(cands)))]
        # draw in the image and pull back, so x is interior even for tiny elements
        y = rng.uniform(-part.frc.delta_star, part.frc.delta_star)
        x = float(pullback(np.array([y]), e.sign_array(), part.fiber, e.tau)[0])
        if e.lo <= x <= e.hi:
            out.append(TowerPoint(x, ell, fiber))
    return out


def projection_errors(system, points):
    """|pi_{sigma omega'}(F^ p) - T_{omega'_0}(pi_omega'(p))| for each point."""
    errs = []
    for p in points:
        lhs = project(tower_step(p, system), system)
        rhs = evaluate(system.omega.params(p.fiber), project(p, system))
        errs.append(abs(lhs - rhs))
    return np.array(errs)


# (C1)-(C6) ------------------------------------------------------------------------

@dataclass
class ConditionResult:
    passed: bool
    measured: dict = field(default_factory=dict)
    note: str = ""


@dataclass
class TowerReport:
    conditions: dict

    @property
    def passed(self):
        return all(c.passed for c in self.conditions.values())

    def summary(self):
        lines = []
        for name, c in self.conditions.items():
            vals = ", ".join(f"{k}={_fmt(v)}" for k, v in c.measured.items())
            note = f" ({c.note})" if c.note else ""
            lines.append(f"{name}: {'pass' if c.passed else 'FAIL'} {vals}{note}")
        return "\n".join(lines)


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def _cylinder_point(system, depth, rng):
    """A point of Delta* whose first ``depth`` induced steps all return, with its chain."""
    m = 0
    chain = []
    for _ in range(depth):
        part = system.partition(m)
        if not part.elements:
            return None, chain
        e = part.elements[int(rng.integers(len(part.elements)))]
        chain.append((part, e))
        m += e.tau
    ds = system.frc.delta_star
    u = np.array([rng.uniform(-ds, ds)])
    for part, e in chain[::-1]:
        u = pullback(u, e.sign_array(), part.fiber, e.tau)
    return float(u[0]), chain


def check_separation_recursion(system, n_pairs=100, depth=3, seed=0):
    """Spot-check s^((x,0),(y,0)) = tau(x) + s^ on the next fiber for nearby pairs."""
    rng = np.random.default_rng(seed)
    checked = bad = 0
    for _ in range(n_pairs):
        x, chain = _cylinder_point(system, depth, rng)
        if x is None:
            continue
        e = chain[0][1]
        y = x + rng.uniform(-1, 1) * (e.hi - e.lo) * 1e-3
        rec = separation_time(system, x, y, cap=depth + 2)
        if rec.censored or rec.s < 1:
            continue
        fx, _ = system.apply(0, x, e)
        fy, _ = system.apply(0, y, e)
        rec2 = separation_time(system, fx, fy, cap=depth + 1, start=e.tau)
        checked += 1
        if rec2.censored or rec.elapsed != e.tau + rec2.elapsed:
            bad += 1
    return checked, bad


def max_cylinder_log_widths(system, max_depth=6, n_chains=200, seed=0):
    """Largest log-width of depth-n cylinders of the induced map on sampled chains.

    The width of a cylinder is 2 delta* / |DF^n(xi)| for some xi in it; the
    largest of the three values at the ends and the middle is taken, which
    needs only log-derivatives and so stays meaningful far below float
    resolution.  The widest-element chain is always included.
    """
    rng = np.random.default_rng(seed)
    ds = system.frc.delta_star
    out = np.full(max_depth, -np.inf)
    for c in range(n_chains + 1):
        m = 0
        chain = []
        for n in range(max_depth):
            part = system.partition(m)
            if not part.elements:
                break
            if c == 0:
                e = max(part.elements, key=lambda el: el.length)
            else:
                e = part.elements[int(rng.integers(len(part.elements)))]
            chain.append((part, e))
            m += e.tau
            pts = np.array([-ds, 0.0, ds])
            logd = np.zeros(3)
            for p, el in chain[::-1]:
                pts, ld = pullback_logder(pts, el.sign_array(), p.fiber, el.tau)
                logd += ld
            out[n] = max(out[n], math.log(2 * ds) - float(logd.min()))
    return out


def check_tower_conditions(system, return_run=None, pairs_per_depth=30, max_depth=5,
                           n_separation=60, seed=0, aperiodicity_partitions=None):
    """Report on (C1)-(C6) for the tower over ``system.omega``.

    ``return_run`` is a sampled return-time run (or partition) used for the
    tail fit of (C5); without it (C5) uses the base partition, whose cap is
    then noted as censoring.  (C6) looks for return times shared by the
    base partitions of ``aperiodicity_partitions`` (the sampled omegas),
    by default this fiber alone.
    """
    base = system.partition(0)
    res = {}

    # (C1) tau is a positive integer, constant on elements, and s^ recurses
    taus = base.taus()
    sep_checked, sep_bad = check_separation_recursion(system, n_separation, 3, seed)
    const_bad = 0
    rng = np.random.default_rng(seed)
    for e in base.elements[:: max(1, len(base.elements) // 200)]:
        ys = rng.uniform(-base.frc.delta_star, base.frc.delta_star, size=3)
        xs = pullback(ys, e.sign_array(), base.fiber, e.tau)
        for x in xs:
            i = base.locate(float(x))
            if i is None or base.elements[i].tau != e.tau:
                const_bad += 1
    c1 = bool(taus.size) and bool((taus >= 1).all()) and const_bad == 0 and sep_bad == 0
    res["C1"] = ConditionResult(c1, {"tau_min": int(taus.min()) if taus.size else 0,
                                     "constancy_failures": const_bad,
                                     "separation_checked": sep_checked,
                                     "separation_failures": sep_bad})

    # (C2) Markov: each element maps onto Delta*
    reports = [check_markov(p) for p in system._cache.values()]
    worst = max((r.max_endpoint_error for r in reports), default=math.nan)
    res["C2"] = ConditionResult(all(r.passed for r in reports),
                                {"max_endpoint_error": worst, "n_partitions": len(reports)})

    # (C3) induced distortion decays geometrically in the separation time
    dist = check_induced_distortion(system, pairs_per_depth, max_depth, seed)
    res["C3"] = ConditionResult(dist.passed, {"D_tilde": dist.D_tilde,
                                              "beta_hat": dist.beta_hat,
                                              "n_pairs": dist.n_pairs}, dist.message)

    # (C4) diameters of the joined partitions shrink
    logw = max_cylinder_log_widths(system, max_depth, seed=seed)
    ok = np.isfinite(logw)
    fit = fit_exponential(np.arange(1, max_depth + 1)[ok], np.exp(logw[ok]), min_points=3)
    dec = bool(ok.all()) and bool(np.all(np.diff(logw) < 0))
    res["C4"] = ConditionResult(dec and fit.passed, {"log_width_1": float(logw[0]),
                                                     "log_width_last": float(logw[-1]),
                                                     "rate": fit.rate})

    # (C5) exponential return-time tail
    src = return_run if return_run is not None else base
    n_range = (10, min(60, src.n_cap)) if src.n_cap >= 20 else (src.n_cap // 2, src.n_cap)
    tfit = fit_return_tail(src, n_range)
    open_w = getattr(src, "open_weight", None)
    cens = open_w if open_w is not None else base.residual_mass
    cens /= 2 * base.frc.delta_star
    note = ""
    if cens > 0:
        note = f"censored: fraction {cens:.3g} of Delta* unreturned at n_cap={src.n_cap}"
    res["C5"] = ConditionResult(tfit.passed, {"b": tfit.rate, "r2": tfit.r2}, note)

    # (C6) aperiodicity over the base fibers of the sampled omegas
    ap = check_aperiodicity(aperiodicity_partitions or [base])
    res["C6"] = ConditionResult(ap.passed, {"gcd": ap.gcd, "n_taus": len(ap.taus),
                                            "eps_min": min(ap.eps) if ap.eps else 0.0})
    return TowerReport(res)
