"""Escape partitions by the chopping algorithm, with tails and distortion checks."""
from __future__ import annotations

import hashlib
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .cells import Interval, PartitionConfig
from .driver import compose
from .errors import ConfigError, SingularOrbitError
from .fitting import TailFit, fit_exponential
from .maps import derivative
from .pieces import (CAP, ESCAPE, ESSENTIAL, INESSENTIAL, KIND_NAMES, ChopRun,
                     pullback_logder)
from .sampling import SampleRun, Sampler


@dataclass(frozen=True)
class ItineraryEvent:
    """A return or the escape of an element.  Free iterates are not stored."""
    time: int
    kind: str
    depth: int
    image: tuple


@dataclass(frozen=True)
class EscapeElement:
    lo: float
    hi: float
    escape_time: int
    total_depth: int
    n_returns: int
    image: tuple  # T^E of the element
    signs: bytes  # side of the time-j image for j < E
    itinerary: tuple = ()
    ancestor_chain: tuple = ()

    @property
    def interval(self):
        return Interval(self.lo, self.hi)

    @property
    def length(self):
        return self.hi - self.lo

    def sign_array(self):
        return np.frombuffer(self.signs, dtype=np.int8)

    def digest(self):
        text = ";".join(f"{e.time}:{e.kind}:{e.depth}" for e in self.itinerary)
        return hashlib.sha1(text.encode()).hexdigest()[:12]


@dataclass(frozen=True)
class EscapeConfig:
    """Engine controls: depth cut-off, relative mass floor and time cap."""
    n_cap: int = 200
    r_max: int = 32
    mass_floor: float = 1e-6  # relative to |J0|

    def __post_init__(self):
        if self.n_cap < 1:
            raise ConfigError("n_cap must be >= 1")
        if self.r_max < 1:
            raise ConfigError("r_max must be >= 1")
        if not 0 <= self.mass_floor < 1:
            raise ConfigError("mass_floor must be in [0, 1)")


@dataclass
class EscapePartition:
    elements: list
    residual: list  # (time, reason, mass, count)
    J0: Interval
    cfg: PartitionConfig
    n_cap: int
    omega: object = None
    stats: dict = field(default_factory=dict)

    @property
    def residual_mass(self):
        return float(sum(m for _, _, m, _ in self.residual))

    @property
    def capped_mass(self):
        return float(sum(m for _, r, m, _ in self.residual if r == CAP))

    def escape_times(self):
        return np.array([e.escape_time for e in self.elements], dtype=np.int64)

    def lengths(self):
        return np.array([e.length for e in self.elements])

    def to_csv(self):
        buf = io.StringIO()
        buf.write("element_id,lo,hi,E,R,ancestor_id,itinerary_digest\n")
        for i, e in enumerate(self.elements):
            anc = e.ancestor_chain[-1] if e.ancestor_chain else 0
            buf.write(f"{i},{e.lo!r},{e.hi!r},{e.escape_time},{e.total_depth},"
                      f"{anc},{e.digest()}\n")
        return buf.getvalue()


def _itinerary(store, node):
    return tuple(ItineraryEvent(store.time[i], KIND_NAMES[store.kind[i]], store.depth[i],
                                (store.lo[i], store.hi[i])) for i in store.chain(node))


def build_escape_partition(omega, J0, cfg, n_cap=200, r_max=32, mass_floor=1e-6,
                           keep_itinerary=True):
    """Escape partition of J0 up to time n_cap.

    J0 is either Delta_0 itself (chopped into cells at time 0, which counts
    as an essential return) or an interval of length >= delta/5 outside
    Delta_0.  Mass deeper than I_{r_max}, below ``mass_floor * |J0|`` or
    still unescaped at n_cap is reported as residual.
    """
    J0 = _check_J0(J0, cfg)
    esc = EscapeConfig(n_cap, r_max, mass_floor)
    run = ChopRun(omega, cfg, esc.n_cap, esc.r_max, esc.mass_floor * J0.length)
    found = []

    def on_escape(run, k, e):
        found.append((k, e))
        return None

    run.run(run.seed(J0.lo, J0.hi), on_escape)
    elements = []
    for k, e in found:
        for i in range(len(e)):
            node = int(e.node[i])
            elements.append(EscapeElement(
                lo=float(e.lo[i]), hi=float(e.hi[i]), escape_time=k,
                total_depth=int(e.R[i]), n_returns=int(e.nret[i]),
                image=(float(e.ia[i]), float(e.ib[i])), signs=e.signs[i, :k].tobytes(),
                itinerary=_itinerary(run.store, node) if keep_itinerary else (),
                ancestor_chain=run.lineage(int(e.lin[i]))))
    elements.sort(key=lambda el: el.lo)
    part = EscapePartition(elements, sorted(run.residual), J0, cfg, esc.n_cap, omega)
    part.stats = {"n_elements": len(elements), "n_chops": run.n_chops,
                  "residual_mass": part.residual_mass, "r_max": esc.r_max,
                  "mass_floor": esc.mass_floor}
    return part


def _check_J0(J0, cfg):
    if not isinstance(J0, Interval):
        J0 = Interval(*J0)
    delta = cfg.delta
    if not (J0.lo == -delta and J0.hi == delta):
        if J0.hi > -delta and J0.lo < delta:
            raise ConfigError("J0 must be Delta_0 or disjoint from Delta_0")
        if J0.length < delta / 5:
            raise ConfigError("J0 shorter than delta/5")
    return J0


def sample_escape_times(omega, J0, cfg, n_cap=60, n_samples=20000, seed=0):
    """Escape times of points uniform in J0 by sampled descent (see :mod:`sampling`).

    Follows the same chopping rules as :func:`build_escape_partition` but
    only along the element of each sample, so tails far below the reach of
    the explicit partition stay resolved.
    """
    J0 = _check_J0(J0, cfg)
    omega.require(0, n_cap - 1)
    return Sampler(omega, cfg, n_cap, n_samples=n_samples, seed=seed).run(J0.lo, J0.hi)


def escape_tail(partition, n):
    """|{E >= n}| plus all residual mass (unescaped weight for a sampled run)."""
    if isinstance(partition, SampleRun):
        return float(partition.tail([n])[0] + partition.censored)
    mass = sum(e.length for e in partition.elements if e.escape_time >= n)
    return float(mass + partition.residual_mass)


def tail_series(times, lengths, residual, ns):
    """Vectorised tail: for each n, sum of lengths with time >= n, plus residual."""
    order = np.argsort(times)
    t = np.asarray(times)[order]
    w = np.asarray(lengths, dtype=float)[order]
    suffix = np.concatenate([np.cumsum(w[::-1])[::-1], [0.0]])
    pos = np.searchsorted(t, np.asarray(ns), side="left")
    return suffix[pos] + residual


def fit_escape_tail(partition, n_range=(5, 40)):
    """Exponential fit of |{E >= n}| from a partition or a sampled run."""
    ns = np.arange(n_range[0], n_range[1] + 1)
    if isinstance(partition, SampleRun):
        tails = partition.tail(ns) + partition.censored
    else:
        tails = tail_series(partition.escape_times(), partition.lengths(),
                            partition.residual_mass, ns)
    return fit_exponential(ns, tails, n_range)


@dataclass
class BoundReport:
    passed: bool
    worst: float
    n_checked: int
    offenders: list


def verify_depth_size_bound(elements):
    """log|J| + R/2 <= 0 for every element with R > 0."""
    worst = -math.inf
    bad = []
    n = 0
    for i, e in enumerate(elements):
        if e.total_depth <= 0:
            continue
        n += 1
        val = math.log(e.length) + 0.5 * e.total_depth
        worst = max(worst, val)
        if val > 0:
            bad.append(i)
    return BoundReport(not bad, worst, n, bad)


def verify_escape_depth_relation(elements, ell):
    """E <= ((2 + ell)/ell) R + 1 for every element with at least one return."""
    if not ell > 0:
        raise ConfigError("ell must be positive")
    c = (2.0 + ell) / ell
    worst = -math.inf
    bad = []
    n = 0
    for i, e in enumerate(elements):
        if e.n_returns == 0:
            continue
        n += 1
        val = e.escape_time - (c * e.total_depth + 1.0)
        worst = max(worst, val)
        if val > 0:
            bad.append(i)
    return BoundReport(not bad, worst, n, bad)


def distortion(omega, J, k, n_points=64, seed=0):
    """max |log DT^k(x) - log DT^k(y)| over sampled x, y in J (endpoints included)."""
    if not isinstance(J, Interval):
        J = Interval(*J)
    if k == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    xs = np.concatenate([[J.lo, J.hi], rng.uniform(J.lo, J.hi, size=max(n_points - 2, 0))])
    logs = []
    for x in xs:
        for _ in range(10):
            try:
                orbit = compose(omega, x, k)
                logs.append(sum(math.log(derivative(omega.params(j), orbit[j]))
                                for j in range(k)))
                break
            except (SingularOrbitError, ValueError):
                x = rng.uniform(J.lo, J.hi)
    if len(logs) < 2:
        return 0.0
    return float(max(logs) - min(logs))


def element_distortion(partition, element, n_points=64, seed=0):
    """Distortion of T^E on an element, sampled through backward orbits.

    Points are drawn in the escape image and pulled back along the recorded
    branches, which stays accurate even for elements far below float
    resolution in original coordinates.
    """
    from .pieces import Fiber
    k = element.escape_time
    if k == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    a, b = element.image
    ys = np.concatenate([[a, b], rng.uniform(a, b, size=max(n_points - 2, 0))])
    fiber = Fiber.of(partition.omega, k)
    _, logd = pullback_logder(ys, element.sign_array(), fiber, k)
    logd = logd[np.isfinite(logd)]
    return float(logd.max() - logd.min()) if logd.size else 0.0


def max_itinerary_distortion(partition, n_points=64, seed=0):
    return max((element_distortion(partition, e, n_points, seed + i)
                for i, e in enumerate(partition.elements)), default=0.0)


__all__ = ["ItineraryEvent", "EscapeElement", "EscapePartition", "TailFit",
           "build_escape_partition", "sample_escape_times", "escape_tail", "fit_escape_tail",
           "verify_depth_size_bound", "verify_escape_depth_relation", "distortion",
           "element_distortion", "max_itinerary_distortion", "INESSENTIAL",
           "ESSENTIAL", "ESCAPE"]
