"""Exponential partition of Delta_0 = (-delta, delta) into cells I_{r,m}.

I_r = [e^{-(r+1)}, e^{-r}) for r >= r0 is cut into r**theta equal cells,
numbered m = 1..r**theta with m increasing away from 0.  The negative side
mirrors the positive one: I_{-r,m} = -I_{r,m} with the half-open end flipped.
All arithmetic is done on |x| so both sides share identical boundaries.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, DomainError, SingularityError


@dataclass(frozen=True)
class PartitionConfig:
    r0: int = 3
    r_star: int = 6
    alpha: float = 0.6
    theta: int = None

    def __post_init__(self):
        if self.r0 < 2:
            raise ConfigError("r0 must be >= 2")
        if not self.r_star > self.r0:
            raise ConfigError("need r_star > r0")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must be in (0, 1)")
        expected = math.floor(1.0 / self.alpha) + 1
        if self.theta is None:
            object.__setattr__(self, "theta", expected)
        elif self.theta != expected:
            raise ConfigError(f"theta must be floor(1/alpha)+1 = {expected}")

    @property
    def delta(self):
        return math.exp(-self.r0)

    @property
    def delta_star(self):
        return math.exp(-self.r_star)

    def n_cells(self, r):
        return abs(r) ** self.theta

    def boundary(self, r, j):
        """j-th boundary of I_r counted from its inner end (j = 0..r**theta)."""
        return _boundary(abs(r), j, self.theta)

    def cell_width(self, r):
        r = abs(r)
        return (math.exp(-r) - math.exp(-(r + 1))) / self.n_cells(r)


@lru_cache(maxsize=None)
def _level(r, theta):
    lo = math.exp(-(r + 1))
    hi = math.exp(-r)
    n = r ** theta
    return lo, hi, n, (hi - lo) / n


def _boundary(r, j, theta):
    lo, hi, n, w = _level(r, theta)
    if j >= n:
        return hi
    return lo + j * w


@dataclass(frozen=True, order=True)
class CellId:
    r: int
    m: int


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise DomainError(f"empty interval [{self.lo}, {self.hi}]")
        if self.lo < -0.5 or self.hi > 0.5:
            raise DomainError(f"interval [{self.lo}, {self.hi}] not inside I")

    @property
    def length(self):
        return self.hi - self.lo

    @property
    def midpoint(self):
        return 0.5 * (self.lo + self.hi)


def abs_cell(t, cfg):
    """(r, m) of the cell containing t in (0, delta), t = |x|."""
    theta = cfg.theta
    r = max(int(math.floor(-math.log(t))), cfg.r0)
    # guard the floor against rounding in log
    while t < _level(r, theta)[0]:
        r += 1
    while r > cfg.r0 and t >= _level(r, theta)[1]:
        r -= 1
    lo, _, n, w = _level(r, theta)
    m = min(max(int((t - lo) / w) + 1, 1), n)
    while m > 1 and t < _boundary(r, m - 1, theta):
        m -= 1
    while m < n and t >= _boundary(r, m, theta):
        m += 1
    return r, m


def abs_cell_below(t, cfg):
    """(r, m) of the cell containing points just below t (t in (0, delta])."""
    theta = cfg.theta
    if t >= cfg.delta:
        return cfg.r0, cfg.r0 ** theta
    r, m = abs_cell(t, cfg)
    if t == _boundary(r, m - 1, theta):
        # t sits exactly on the inner boundary of its cell
        if m > 1:
            return r, m - 1
        return r + 1, (r + 1) ** theta
    return r, m


def cell_of(x, cfg):
    if x == 0:
        raise SingularityError("x = 0 has no cell")
    t = abs(x)
    if t >= cfg.delta:
        raise DomainError(f"|x|={t} outside Delta_0 (delta={cfg.delta})")
    r, m = abs_cell(t, cfg)
    return CellId(r if x > 0 else -r, m)


def interval_of(cell, cfg):
    r = abs(cell.r)
    if r < cfg.r0:
        raise ConfigError(f"I_{cell.r} is empty for |r| < r0={cfg.r0}")
    if not 1 <= cell.m <= cfg.n_cells(r):
        raise ConfigError(f"m={cell.m} outside 1..{cfg.n_cells(r)}")
    lo = _boundary(r, cell.m - 1, cfg.theta)
    hi = _boundary(r, cell.m, cfg.theta)
    return Interval(lo, hi) if cell.r > 0 else Interval(-hi, -lo)


def count_between(bottom, top, cfg):
    """Number of cells from ``bottom`` to ``top`` inclusive (|x| order, same side).

    ``bottom`` is the cell nearer to 0.  Uses the closed-form level sizes.
    """
    rb, mb = abs(bottom.r), bottom.m
    rt, mt = abs(top.r), top.m
    if rb == rt:
        return mt - mb + 1
    if rb < rt:
        raise ValueError("bottom cell lies above top cell")
    inner = sum(s ** cfg.theta for s in range(rt + 1, rb))
    return (rb ** cfg.theta - mb + 1) + inner + mt


class Straddle(ValueError):
    """Interval contains 0; the caller should split it first."""


def _abs_span(lo, hi):
    if lo >= 0:
        return lo, hi, 1
    if hi <= 0:
        return -hi, -lo, -1
    raise Straddle(f"[{lo}, {hi}] straddles 0")


def spanned_cells(J, cfg):
    """Cells of Delta_0 met by the half-open interval J (ordered by |x|).

    Cells are listed from the one nearest 0 outwards.  Only the part of J
    inside Delta_0 counts.
    """
    u, v, sign = _abs_span(J.lo, J.hi)
    v = min(v, cfg.delta)
    if u >= v:
        return []
    if u == 0:
        raise SingularityError("interval touches 0: it meets infinitely many cells")
    rb, mb = abs_cell(u, cfg)
    rt, mt = abs_cell_below(v, cfg)
    out = []
    r, m = rb, mb
    while True:
        out.append(CellId(sign * r, m))
        if (r, m) == (rt, mt):
            break
        m += 1
        if m > r ** cfg.theta:
            r, m = r - 1, 1
    return out


def span_count(J, cfg):
    """Number of spanned cells without building the list."""
    u, v, _ = _abs_span(J.lo, J.hi)
    v = min(v, cfg.delta)
    if u >= v:
        return 0
    if u == 0:
        return math.inf
    rb, mb = abs_cell(u, cfg)
    rt, mt = abs_cell_below(v, cfg)
    return count_between(CellId(rb, mb), CellId(rt, mt), cfg)


class Kind(enum.Enum):
    FREE = "free"
    INESSENTIAL = "inessential"
    ESSENTIAL = "essential"
    ESCAPE = "escape"


def meets_delta0(lo, hi, delta):
    return hi > -delta and lo < delta


def classify(J, cfg, k=1, min_escape_time=1):
    """Kind of the time-k image J of a partition element.

    Images that meet Delta_0 and touch or contain 0, or whose length
    reaches delta, are essential as well.  Escape requires k >= min_escape_time;
    before that a long image away from Delta_0 counts as free.
    """
    delta = cfg.delta
    length = J.hi - J.lo
    if not meets_delta0(J.lo, J.hi, delta):
        if length >= delta and k >= min_escape_time:
            return Kind.ESCAPE
        return Kind.FREE
    if J.lo <= 0 <= J.hi or length >= delta:
        return Kind.ESSENTIAL
    return Kind.ESSENTIAL if span_count(J, cfg) > 3 else Kind.INESSENTIAL


def return_depth(J, cfg):
    """min |r| over cells met by J (J meets Delta_0 on one side of 0)."""
    u, v, _ = _abs_span(J.lo, J.hi)
    if v >= cfg.delta:
        return cfg.r0
    return abs_cell_below(v, cfg)[0]


# vectorised helpers used by the engines ---------------------------------

def cell_cuts(u, v, cfg):
    """Chop [u, v] (0 < u < v <= delta, |x| coordinates) at cell boundaries.

    Returns (cuts, depths): the interior cut points in increasing order and
    the return depth of each of the len(cuts)+1 children.  Partial cells at
    either end are merged into their neighbour, so every child contains a
    whole cell I_{r,j} and lies inside I_{r,j} plus its two neighbours.
    """
    theta = cfg.theta
    rb, mb = abs_cell(u, cfg)
    rt, mt = abs_cell_below(v, cfg)
    pieces = []
    for r in range(rb, rt - 1, -1):
        lo, hi, n, w = _level(r, theta)
        j0 = mb if r == rb else 1
        j1 = mt if r == rt else n
        js = np.arange(j0, j1 + 1)
        b = lo + js * w
        b[js >= n] = hi
        pieces.append((b, r, js))
    bounds = np.concatenate([p[0] for p in pieces])  # upper boundary of each cell
    depths = np.concatenate([np.full(p[0].size, p[1]) for p in pieces])
    cuts = bounds[:-1]
    cdepth = depths
    bottom_partial = u != _boundary(rb, mb - 1, theta)
    top_partial = v != bounds[-1]
    if bottom_partial and cuts.size:
        cuts = cuts[1:]
        cdepth = cdepth[1:]
    if top_partial and cuts.size:
        cuts = cuts[:-1]
        cdepth = np.concatenate([cdepth[:-2], cdepth[-1:]])
    return cuts, cdepth


@lru_cache(maxsize=None)
def _level_table(theta, r_hi=800):
    r = np.arange(r_hi + 1, dtype=float)
    lo = np.exp(-(r + 1))
    hi = np.exp(-r)
    n = r ** theta
    with np.errstate(divide="ignore", invalid="ignore"):
        w = (hi - lo) / n
    # match the scalar arithmetic of _level exactly
    for i in range(1, r_hi + 1):
        lo[i], hi[i], _, w[i] = _level(i, theta)
    return lo, hi, n, w


def _boundary_vec(r, j, theta):
    lo, hi, n, w = _level_table(theta)
    return np.where(j >= n[r], hi[r], lo[r] + j * w[r])


def abs_cells_vec(t, cfg):
    """Vectorised :func:`abs_cell` for t in (0, delta)."""
    theta = cfg.theta
    lo, hi, n, w = _level_table(theta)
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore"):
        r = np.floor(-np.log(t))
    r = np.clip(r, cfg.r0, lo.size - 2).astype(np.int64)
    r = np.where(t < lo[r], r + 1, r)
    r = np.where((r > cfg.r0) & (t >= hi[r]), r - 1, r)
    m = np.floor((t - lo[r]) / w[r]) + 1.0
    m = np.clip(m, 1.0, n[r])
    m = np.where((m > 1) & (t < _boundary_vec(r, m - 1, theta)), m - 1, m)
    m = np.where((m < n[r]) & (t >= _boundary_vec(r, m, theta)), m + 1, m)
    return r, m


def abs_cells_below_vec(t, cfg):
    """Vectorised :func:`abs_cell_below` for t in (0, delta]."""
    theta = cfg.theta
    _, _, n, _ = _level_table(theta)
    t = np.asarray(t, dtype=float)
    top = t >= cfg.delta
    tt = np.where(top, 0.5 * cfg.delta, t)
    r, m = abs_cells_vec(tt, cfg)
    on_edge = ~top & (tt == _boundary_vec(r, m - 1, theta))
    step_level = on_edge & (m == 1)
    m = np.where(on_edge & ~step_level, m - 1, m)
    r = np.where(step_level, r + 1, r)
    m = np.where(step_level, n[np.minimum(r, n.size - 1)], m)
    r = np.where(top, cfg.r0, r)
    m = np.where(top, float(cfg.r0) ** theta, m)
    return r, m


def small_span_counts(u, v, cfg):
    """(count, depth) for one-sided |x| spans [u, v), u > 0, u < delta.

    Counts above 3 are only guaranteed to be > 3 (levels two or more apart
    are not summed).  ``depth`` is the minimal |r| met.
    """
    _, _, n, _ = _level_table(cfg.theta)
    rb, mb = abs_cells_vec(u, cfg)
    rt, mt = abs_cells_below_vec(np.minimum(v, cfg.delta), cfg)
    same = rb == rt
    adjacent = rb == rt + 1
    count = np.where(same, mt - mb + 1,
                     np.where(adjacent, n[rb] - mb + 1 + mt, np.inf))
    return count, rt
