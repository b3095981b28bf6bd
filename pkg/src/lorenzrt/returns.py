"""Full-return partitions of Delta* and the induced Gibbs-Markov map."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from functools import reduce

import numpy as np

from .cells import Interval, PartitionConfig
from .driver import compose
from .errors import ConfigError, DomainError, SingularOrbitError
from .fitting import fit_exponential
from .pieces import (CAP, ESCAPE, ChopRun, Fiber, Live, pullback, pullback_logder,
                     pullback_rows)
from .sampling import Sampler


@dataclass(frozen=True)
class FullReturnConfig:
    delta_star: float
    t_star: int = 40
    bar_delta: float = None
    beta_min: float = 1e-9

    def validate(self, cfg):
        bar = self.bar(cfg)
        if not self.delta_star < bar < cfg.delta / 5:
            raise ConfigError("need delta* < bar_delta < delta/5")
        if self.t_star < 1:
            raise ConfigError("t_star must be >= 1")
        if not 0 < self.beta_min < 1:
            raise ConfigError("beta_min must be in (0, 1)")
        return self

    def bar(self, cfg):
        return self.bar_delta if self.bar_delta is not None else cfg.delta / 10

    @classmethod
    def default(cls, cfg, t_star=40, bar_delta=None):
        return cls(delta_star=cfg.delta_star, t_star=t_star, bar_delta=bar_delta).validate(cfg)


# preimages of the singularity -------------------------------------------

@dataclass
class PreimageSet:
    points: np.ndarray
    max_gap: float
    depth: int


def preimages_of_zero(omega, depth):
    """Sorted x with T^n_omega(x) = 0 for some n <= depth, and the largest gap in I."""
    if depth < 0:
        raise ConfigError("depth must be >= 0")
    fiber = Fiber.of(omega, depth) if depth else None
    found = [np.zeros(1)]
    for n in range(1, depth + 1):
        y = np.zeros(1)
        for j in range(n - 1, -1, -1):
            lam, a = fiber.lam[j], fiber.a[j]
            top = a * 0.5 ** lam - 0.5
            right = y[(y >= -0.5) & (y <= top)]
            left = y[(y >= -top) & (y <= 0.5)]
            y = np.concatenate([-((0.5 - left) / a) ** (1.0 / lam),
                                ((right + 0.5) / a) ** (1.0 / lam)])
        found.append(y)
    pts = np.unique(np.concatenate(found))
    gaps = np.diff(np.concatenate([[-0.5], pts, [0.5]]))
    return PreimageSet(pts, float(gaps.max()), depth)


def default_t_star(omegas, bar_delta, cap=40):
    """Smallest depth at which the preimages of 0 are bar_delta-dense on every fiber."""
    for t in range(1, cap + 1):
        if all(preimages_of_zero(om, t).max_gap <= bar_delta for om in omegas):
            return t
    return cap


# full returns ---------------------------------------------------------------

@dataclass
class FullReturn:
    """J~ inside an escape interval J (both in the same time coordinates)."""
    ok: bool
    sub: tuple = None
    t: int = 0
    x_star: float = math.nan
    beta: float = 0.0
    margins: tuple = (0.0, 0.0)
    signs: tuple = ()
    message: str = ""


def _step(y, s, lam, a):
    return s * (a * abs(y) ** lam - 0.5)


def _pull(y, signs, lams, avals):
    for s, lam, a in zip(reversed(signs), reversed(lams), reversed(avals)):
        v = s * y + 0.5
        if v < 0:
            return math.nan
        y = s * (v / a) ** (1.0 / lam)
    return y


def find_full_return(fiber, start, J, cfg, frc):
    """Subinterval J~ of J with T^t J~ = Delta* for the smallest t, leftmost.

    ``fiber`` caches the slopes of the fiber and ``start`` is the time of J,
    so step j uses omega_{start+j}.  Candidates are preimages of 0 at
    distance > delta/5 from both ends of J; a candidate whose J~ leaves less
    than delta/5 on either side is split off and the search continues.
    """
    lo, hi = (J.lo, J.hi) if isinstance(J, Interval) else J
    delta = cfg.delta
    if hi - lo < delta * (1 - 1e-12):
        raise DomainError(f"|J|={hi - lo} shorter than delta={delta}")
    ds = frc.delta_star
    margin = delta / 5
    # pieces: (orig lo, orig hi, image lo, image hi, signs so far)
    pieces = [(lo + margin, hi - margin, lo + margin, hi - margin, ())]
    t_max = min(frc.t_star, len(fiber) - start)
    for t in range(1, t_max + 1):
        j = start + t - 1
        lam, a = float(fiber.lam[j]), float(fiber.a[j])
        lams = fiber.lam[start:start + t].tolist()
        avals = fiber.a[start:start + t].tolist()
        nxt = []
        for plo, phi, ylo, yhi, sg in pieces:
            s = 1.0 if ylo + yhi > 0 else -1.0
            sg2 = sg + (s,)
            nlo, nhi = _step(ylo, s, lam, a), _step(yhi, s, lam, a)
            if nlo < 0.0 < nhi:
                x_star = _pull(0.0, sg2, lams, avals)
                jl = _pull(-ds, sg2, lams, avals)
                jh = _pull(ds, sg2, lams, avals)
                if not (math.isnan(jl) or math.isnan(jh)):
                    m1, m2 = jl - lo, hi - jh
                    if m1 > margin and m2 > margin:
                        beta = (jh - jl) / (hi - lo)
                        return FullReturn(True, (jl, jh), t, x_star, beta, (m1, m2), sg2)
                # split at x_star and keep searching on both sides
                nxt.append((plo, x_star, nlo, 0.0, sg2))
                nxt.append((x_star, phi, 0.0, nhi, sg2))
            else:
                nxt.append((plo, phi, nlo, nhi, sg2))
        pieces = nxt
    return FullReturn(False, message=f"no admissible preimage of 0 within t <= {t_max}")


# return partitions ----------------------------------------------------------

@dataclass(frozen=True)
class ReturnElement:
    lo: float
    hi: float
    tau: int
    escape_times: tuple
    t: int
    image: tuple  # J~ at the last escape time
    signs: bytes  # sides of the time-j images, j < tau

    @property
    def interval(self):
        return Interval(self.lo, self.hi)

    @property
    def length(self):
        return self.hi - self.lo

    @property
    def last_escape(self):
        return self.escape_times[-1]

    def sign_array(self):
        return np.frombuffer(self.signs, dtype=np.int8)


@dataclass
class ReturnPartition:
    elements: list
    residual: list  # (time, reason, mass, count)
    cfg: PartitionConfig
    frc: FullReturnConfig
    n_cap: int
    omega: object = None
    fiber: Fiber = None
    stats: dict = field(default_factory=dict)

    @property
    def residual_mass(self):
        return float(sum(m for _, _, m, _ in self.residual))

    @property
    def domain(self):
        ds = self.frc.delta_star
        return (-ds, ds)

    def taus(self):
        return np.array([e.tau for e in self.elements], dtype=np.int64)

    def lengths(self):
        return np.array([e.length for e in self.elements])

    def locate(self, x):
        """Index of the element containing x, or None."""
        los = self._los()
        i = int(np.searchsorted(los, x, side="right")) - 1
        if i >= 0 and self.elements[i].lo <= x <= self.elements[i].hi:
            return i
        return None

    def _los(self):
        if "_lo_cache" not in self.__dict__:
            self.__dict__["_lo_cache"] = np.array([e.lo for e in self.elements])
        return self.__dict__["_lo_cache"]

    def to_csv(self):
        buf = io.StringIO()
        buf.write("element_id,lo,hi,tau,escape_times,t\n")
        for i, e in enumerate(self.elements):
            esc = " ".join(str(v) for v in e.escape_times)
            buf.write(f"{i},{e.lo!r},{e.hi!r},{e.tau},{esc},{e.t}\n")
        return buf.getvalue()


def _escape_chain(store, node):
    return tuple(store.time[i] for i in store.chain(node) if store.kind[i] == ESCAPE)


def build_return_partition(omega, cfg, frc, n_cap=40, r_max=32, mass_floor=1e-6):
    """Full-return partition of Delta* up to time n_cap.

    Delta* is cut into the cells I_{r,m}, |r| >= r*, at time 0; escaping
    pieces are split into the returning part J~ and the non-returning
    components.  These keep being chopped from the escape time k but may not
    escape again before k + t, when J~ returns (k + t* if no J~ was found);
    otherwise J~, which depends on omega up to k + t - 1, would shape
    elements returning earlier and tau would not be a stopping time.
    Elements whose return would happen after n_cap stay residual.
    """
    frc.validate(cfg)
    ds = frc.delta_star
    width = n_cap + frc.t_star
    omega.require(0, width - 1)
    run = ChopRun(omega, cfg, n_cap, r_max, mass_floor * 2 * ds, width=width)
    fiber = run.fiber
    out = []
    failures = [0]
    betas = []

    def on_escape(run, k, e):
        found = [find_full_return(fiber, k, (e.ia[i], e.ib[i]), cfg, frc) for i in range(len(e))]
        ok = np.array([fr.ok for fr in found], bool)
        failures[0] += int((~ok).sum())
        idx = np.flatnonzero(ok)
        # a piece may escape again only after the search that split it is over:
        # at k + t, or k + t* if it failed, so tau stays a stopping time
        failed = e.take(np.flatnonzero(~ok))
        failed.minesc = np.full(len(failed), k + frc.t_star, np.int64)
        cont = [failed]
        if idx.size:
            sub = np.array([found[i].sub for i in idx])
            # pull both ends of every J~ back to time 0 in one pass
            orig = pullback_rows(sub.ravel(), np.repeat(e.signs[idx], 2, axis=0), fiber, k)
            orig = orig.reshape(-1, 2)
            for j, i in enumerate(idx):
                fr = found[i]
                betas.append(fr.beta)
                ol, oh = orig[j]
                esc = _escape_chain(run.store, int(e.node[i]))
                full_signs = np.concatenate([e.signs[i][:k], np.array(fr.signs, np.int8)])
                tau = k + fr.t
                if tau <= n_cap:
                    out.append(ReturnElement(float(ol), float(oh), tau, esc, fr.t,
                                             tuple(fr.sub), full_signs.tobytes()))
                else:
                    run._add_residual(ol, oh, k, CAP)
            # the two components of I \ J~ continue from time k
            pair = np.repeat(idx, 2)
            comp = e.take(pair)
            comp.ia = np.column_stack([e.ia[idx], sub[:, 1]]).ravel()
            comp.ib = np.column_stack([sub[:, 0], e.ib[idx]]).ravel()
            comp.lo = np.column_stack([e.lo[idx], orig[:, 1]]).ravel()
            comp.hi = np.column_stack([orig[:, 0], e.hi[idx]]).ravel()
            comp.lin = run.new_ids(e.lin[pair])
            comp.minesc = k + np.array([found[i].t for i in pair], np.int64)
            cont.append(comp)
        return Live.concat(cont)

    run.run(run.seed(-ds, ds), on_escape)
    out.sort(key=lambda el: el.lo)
    part = ReturnPartition(out, sorted(run.residual), cfg, frc, n_cap, omega, fiber)
    part.stats = {"n_elements": len(out), "search_failures": failures[0],
                  "beta_min": float(min(betas)) if betas else math.nan,
                  "beta_median": float(np.median(betas)) if betas else math.nan,
                  "residual_mass": part.residual_mass, "n_chops": run.n_chops}
    return part


def sample_return_times(omega, cfg, frc, n_cap=200, n_samples=20000, seed=0):
    """Sampled return times tau for points uniform in Delta* (see :mod:`sampling`)."""
    frc.validate(cfg)
    ds = frc.delta_star
    width = n_cap + frc.t_star
    omega.require(0, width - 1)
    sampler = Sampler(omega, cfg, n_cap, n_samples=n_samples, seed=seed, width=width)
    fiber = sampler.fiber
    cache = {}
    failures = [0]

    def on_escape(k, a, b, x):
        n = a.size
        fin = np.zeros(n, bool)
        ftime = np.zeros(n, np.int64)
        na, nb = a.copy(), b.copy()
        nxt = np.full(n, k + frc.t_star, np.int64)
        for i in range(n):
            key = (k, a[i], b[i])
            fr = cache.get(key)
            if fr is None:
                fr = cache[key] = find_full_return(fiber, k, (a[i], b[i]), cfg, frc)
                if not fr.ok:
                    failures[0] += 1
            if not fr.ok:
                continue
            jl, jh = fr.sub
            nxt[i] = k + fr.t
            if jl <= x[i] <= jh:
                fin[i] = True
                ftime[i] = k + fr.t
            elif x[i] < jl:
                nb[i] = jl
            else:
                na[i] = jh
        return fin, ftime, na, nb, nxt

    res = sampler.run(-ds, ds, on_escape=on_escape)
    res.stats["search_failures"] = failures[0]
    res.stats["distinct_escape_images"] = len(cache)
    return res


def return_tail(partition, n):
    """|{tau > n}| plus residual mass (open and censored weight for a sampled run)."""
    if not isinstance(partition, ReturnPartition):
        return float(partition.tail([n], strict=True)[0] + partition.censored)
    return float(sum(e.length for e in partition.elements if e.tau > n) + partition.residual_mass)


def fit_return_tail(source, n_range=(10, 60)):
    """Exponential fit of |{tau > n}| from a partition or a sampled run."""
    ns = np.arange(n_range[0], n_range[1] + 1)
    if isinstance(source, ReturnPartition):
        tails = np.array([return_tail(source, n) for n in ns])
    else:
        tails = source.tail(ns, strict=True) + source.censored
    return fit_exponential(ns, tails, n_range)


def escape_history_tail(source, i, n):
    """Mass of elements with exactly i escapes that have not returned by time n.

    Works on an explicit partition or on a sampled run.  Summed over i at
    n = 0 this is the returned mass; for fixed i it decreases in n.
    """
    if isinstance(source, ReturnPartition):
        return float(sum(e.length for e in source.elements
                         if len(e.escape_times) == i and e.tau > n))
    sel = (source.escapes == i) & (source.times > n)
    return float(source.weights[sel].sum())


# the induced map ----------------------------------------------------------------

class UnreturnedError(ValueError):
    """The point lies in the residual (never-returned) set."""


def induced_apply(omega, x, partition):
    """(F_omega(x), tau(x)) with F = T^tau."""
    i = partition.locate(x)
    if i is None:
        raise UnreturnedError(f"x={x} is not in a returned element")
    tau = partition.elements[i].tau
    return compose(omega, x, tau)[-1], tau


def element_endpoint_errors(partition):
    """For each element, max |T^t(J~ end) -/+ delta*| from the last escape image."""
    ds = partition.frc.delta_star
    fiber = partition.fiber
    errs = np.empty(len(partition.elements))
    for n, e in enumerate(partition.elements):
        y = np.array(e.image, dtype=float)
        signs = e.sign_array()
        k = e.last_escape
        for j in range(k, e.tau):
            s = float(signs[j])
            y = s * (fiber.a[j] * np.abs(y) ** fiber.lam[j] - 0.5)
        errs[n] = max(abs(y[0] + ds), abs(y[1] - ds))
    return errs


@dataclass
class MarkovReport:
    passed: bool
    max_endpoint_error: float
    monotone: bool
    max_direct_error: float
    n_elements: int


def check_markov(partition, tol=1e-9, n_monotone=5):
    """Every element maps onto Delta* (endpoint error <= tol) and F is monotone on it.

    The direct forward error from the original endpoints is also reported;
    it is limited by the condition number DT^tau and is diagnostic only.
    """
    errs = element_endpoint_errors(partition)
    ds = partition.frc.delta_star
    mono = True
    direct = 0.0
    for e in partition.elements:
        ys = np.linspace(-ds, ds, n_monotone)
        xs = pullback(ys, e.sign_array(), partition.fiber, e.tau)
        if not (np.all(np.diff(xs) > 0) or np.all(np.diff(xs) < 0)):
            mono = False
        try:
            f_lo = compose(partition.omega, e.lo, e.tau)[-1]
            f_hi = compose(partition.omega, e.hi, e.tau)[-1]
            direct = max(direct, abs(f_lo + ds), abs(f_hi - ds))
        except (SingularOrbitError, ValueError):
            direct = math.inf
    worst = float(errs.max()) if errs.size else 0.0
    return MarkovReport(worst <= tol and mono, worst, mono, direct, len(partition.elements))


def check_stopping_time(part_a, part_b, n):
    """True iff the elements with tau <= n coincide bit-exactly."""
    def key(p):
        return sorted((e.lo, e.hi, e.tau) for e in p.elements if e.tau <= n)
    return key(part_a) == key(part_b)


@dataclass
class AperiodicityReport:
    taus: list
    eps: list
    gcd: int
    passed: bool


def check_aperiodicity(partitions, max_values=None):
    """Return times realized with positive measure on every sampled fiber, and their gcd."""
    if len(partitions) < 1:
        raise ConfigError("need at least one partition")
    common = None
    masses = []
    for p in partitions:
        m = {}
        for e in p.elements:
            m[e.tau] = m.get(e.tau, 0.0) + e.length
        masses.append(m)
        keys = {t for t, v in m.items() if v > 0}
        common = keys if common is None else common & keys
    taus = sorted(common or [])
    if max_values:
        taus = taus[:max_values]
    eps = [min(m[t] for m in masses) for t in taus]
    g = reduce(math.gcd, taus) if taus else 0
    return AperiodicityReport(taus, eps, g, g == 1)
