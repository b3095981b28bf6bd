"""Vectorised chopping engine shared by the escape and return constructions.

A live piece is an original interval [lo, hi] together with its image
[ia, ib] = T^k_omega[lo, hi] at the current time k and the side (sign) of
every earlier image.  All live pieces advance one step at a time with numpy.
Images are the primary data: at a chop, children get exact cell boundaries
as images and their original endpoints are recovered by pulling the cut
values back through the branch inverses along the recorded sides, which is
well conditioned because backward iteration contracts.  Neighbouring
children share the same cut values, so the pieces tile their parent.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .cells import cell_cuts, small_span_counts

log = logging.getLogger(__name__)

# event kinds stored in the itinerary chain (free iterates are implicit)
INESSENTIAL, ESSENTIAL, ESCAPE = 0, 1, 2
KIND_NAMES = {INESSENTIAL: "inessential", ESSENTIAL: "essential", ESCAPE: "escape"}

# residual reasons
DEEP, FLOOR, CAP = 0, 1, 2


@dataclass(frozen=True)
class Fiber:
    """Slopes of omega_0..omega_{n-1} cached as numpy arrays."""
    lam: np.ndarray
    a: np.ndarray

    @classmethod
    def of(cls, omega, n):
        lams = omega.forward_lams(n)
        return cls(np.asarray(lams, dtype=float), np.asarray(omega.a_values(lams), dtype=float))

    def __len__(self):
        return self.lam.size


def forward(y, s, lam, a):
    """T on points y with known sides s (vectorised, no singularity check)."""
    out = s * (a * np.abs(y) ** lam - 0.5)
    return np.clip(out, -0.5, 0.5)


def pullback(y, signs, fiber, k, start=0):
    """Points x on the recorded branches with T^{k-start}_{sigma^start omega} x = y.

    ``signs[j]`` is the side of the time-j image, j = start..k-1.
    """
    x = np.array(y, dtype=float, copy=True)
    for j in range(k - 1, start - 1, -1):
        s = float(signs[j])
        x = s * (np.maximum(s * x + 0.5, 0.0) / fiber.a[j]) ** (1.0 / fiber.lam[j])
    return x


def pullback_rows(y, signs, fiber, k, start=0):
    """Like :func:`pullback`, but point i follows its own sign row ``signs[i]``."""
    x = np.array(y, dtype=float, copy=True)
    if not x.size:
        return x
    for j in range(k - 1, start - 1, -1):
        s = signs[:, j].astype(float)
        x = s * (np.maximum(s * x + 0.5, 0.0) / fiber.a[j]) ** (1.0 / fiber.lam[j])
    return x


def pullback_logder(y, signs, fiber, k, start=0):
    """(x, log DT^{k-start}(x)) for the pullbacks of y along ``signs``."""
    x = np.array(y, dtype=float, copy=True)
    logd = np.zeros_like(x)
    for j in range(k - 1, start - 1, -1):
        s = float(signs[j])
        lam, a = fiber.lam[j], fiber.a[j]
        x = s * (np.maximum(s * x + 0.5, 0.0) / a) ** (1.0 / lam)
        with np.errstate(divide="ignore"):
            logd += math.log(a * lam) + (lam - 1.0) * np.log(np.abs(x))
    return x, logd


class EventStore:
    """Append-only linked store of itinerary events."""

    def __init__(self):
        self.time, self.kind, self.depth = [], [], []
        self.lo, self.hi, self.prev = [], [], []

    def add(self, time, kind, depth, lo, hi, prev):
        self.time.append(int(time))
        self.kind.append(int(kind))
        self.depth.append(int(depth))
        self.lo.append(float(lo))
        self.hi.append(float(hi))
        self.prev.append(int(prev))
        return len(self.time) - 1

    def add_many(self, time, kind, depth, lo, hi, prev):
        start = len(self.time)
        n = len(prev)
        self.time.extend([int(time)] * n)
        self.kind.extend([int(kind)] * n)
        self.depth.extend(np.asarray(depth, dtype=np.int64).tolist())
        self.lo.extend(np.asarray(lo, dtype=float).tolist())
        self.hi.extend(np.asarray(hi, dtype=float).tolist())
        self.prev.extend(np.asarray(prev, dtype=np.int64).tolist())
        return np.arange(start, start + n, dtype=np.int64)

    def chain(self, idx):
        out = []
        while idx >= 0:
            out.append(idx)
            idx = self.prev[idx]
        return out[::-1]


@dataclass
class Children:
    """Result of chopping one image at an essential return."""
    img_lo: np.ndarray
    img_hi: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    kind: np.ndarray  # 0 residual (deep), 1 cell child, 2 outside Delta_0
    depth: np.ndarray


def floor_depth(cfg, r_max, min_width):
    """Deepest level kept: cells of I_r narrower than ``min_width`` are dropped."""
    r = cfg.r0
    while r <= r_max and cfg.cell_width(r) >= min_width:
        r += 1
    return r - 1


def chop_cuts(ia, ib, cfg, r_max, min_width=0.0):
    """Image-space children of [ia, ib]: (img_lo, img_hi, kind, depth).

    The part with |y| >= delta becomes one child (kind 2), the part deeper
    than the last kept level is residual (kind 0), and the rest is cut
    cellwise (kind 1) with partial end cells merged into their neighbours.
    Levels whose cells are narrower than ``min_width`` are not kept.
    """
    delta = cfg.delta
    r_keep = floor_depth(cfg, r_max, min_width) if min_width > 0 else r_max
    eps = math.exp(-(r_keep + 1))
    if ia < 0.0 < ib:
        halves = [(-1.0, 0.0, -ia), (1.0, 0.0, ib)]
    elif ib <= 0.0:
        halves = [(-1.0, -ib, -ia)]
    else:
        halves = [(1.0, ia, ib)]
    segs = []  # (img_lo, img_hi, kind, depth) in increasing signed order
    for s, u, v in halves:
        parts = []  # |y| coordinates, from 0 outwards
        if u < eps:
            parts.append((np.array([u]), np.array([min(v, eps)]), 0, np.array([r_keep + 1])))
        mu, mv = max(u, eps), min(v, delta)
        if mu < mv:
            cuts, depths = cell_cuts(mu, mv, cfg)
            edges = np.concatenate([[mu], cuts, [mv]])
            parts.append((edges[:-1], edges[1:], 1, depths))
        if v > delta:
            parts.append((np.array([max(u, delta)]), np.array([v]), 2, np.array([0])))
        if s > 0:
            segs.extend((plo, phi, np.full(plo.size, kind), dep)
                        for plo, phi, kind, dep in parts)
        else:
            segs.extend((-phi[::-1], -plo[::-1], np.full(plo.size, kind), dep[::-1])
                        for plo, phi, kind, dep in reversed(parts))
    return (np.concatenate([p[0] for p in segs]), np.concatenate([p[1] for p in segs]),
            np.concatenate([p[2] for p in segs]), np.concatenate([p[3] for p in segs]))


def chop_image(ia, ib, lo, hi, signs, k, fiber, cfg, r_max, start=0, min_width=0.0):
    """Chop the time-k image [ia, ib] of [lo, hi] at 0 and at cell boundaries.

    Children are those of :func:`chop_cuts`; neighbours share their cut
    values, whose pullbacks to time ``start`` give the original endpoints.
    """
    img_lo, img_hi, kind, depth = chop_cuts(ia, ib, cfg, r_max, min_width)
    orig = pullback(img_lo[1:], signs, fiber, k, start)
    olo = np.concatenate([[lo], orig])
    ohi = np.concatenate([orig, [hi]])
    return Children(img_lo, img_hi, olo, ohi, kind, depth)


class Live:
    """Struct-of-arrays for live pieces at a common time."""
    FIELDS = ("ia", "ib", "lo", "hi", "node", "lin", "R", "nret", "minesc", "signs")

    def __init__(self, **kw):
        for f in self.FIELDS:
            setattr(self, f, kw[f])

    def __len__(self):
        return self.ia.size

    def take(self, idx):
        return Live(**{f: getattr(self, f)[idx] for f in self.FIELDS})

    @staticmethod
    def concat(parts):
        parts = [p for p in parts if p is not None and len(p)]
        if not parts:
            return None
        if len(parts) == 1:
            return parts[0]
        return Live(**{f: np.concatenate([getattr(p, f) for p in parts])
                       for f in Live.FIELDS})


class ChopRun:
    """One run of the chopping algorithm on a single fiber.

    Escaping pieces are handed to ``on_escape(run, k, pieces)``, which may
    return pieces that continue from time k (or None).
    """

    def __init__(self, omega, cfg, n_cap, r_max, mass_floor, width=None,
                 max_children=2_000_000):
        self.omega = omega
        self.cfg = cfg
        self.n_cap = int(n_cap)
        self.r_max = int(r_max)
        self.mass_floor = float(mass_floor)
        self.width = int(width or n_cap)
        self.fiber = Fiber.of(omega, self.width)
        self.store = EventStore()
        self.parent = [-1]
        self.residual = []  # (time, reason, mass, count)
        self.max_children = max_children
        self.n_chops = 0

    def new_ids(self, parents):
        start = len(self.parent)
        self.parent.extend(np.asarray(parents, dtype=np.int64).tolist())
        return np.arange(start, start + len(parents), dtype=np.int64)

    def lineage(self, lin):
        out = []
        while lin > 0:
            out.append(lin)
            lin = self.parent[lin]
        return tuple(out[::-1])

    def seed(self, lo, hi, minesc=1):
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        n = lo.size
        return Live(ia=lo.copy(), ib=hi.copy(), lo=lo, hi=hi,
                    node=np.full(n, -1, np.int64), lin=np.zeros(n, np.int64),
                    R=np.zeros(n, np.int64), nret=np.zeros(n, np.int64),
                    minesc=np.full(n, minesc, np.int64),
                    signs=np.zeros((n, self.width + 1), np.int8))

    def _add_residual(self, lo, hi, k, reason):
        lo, hi = np.atleast_1d(lo), np.atleast_1d(hi)
        if lo.size:
            self.residual.append((int(k), int(reason), float(np.sum(hi - lo)), int(lo.size)))

    def _chop(self, live, k):
        """Chop every piece of ``live``; return (cell children, outside children)."""
        pieces = []
        for i in range(len(live)):
            ratio = (live.ib[i] - live.ia[i]) / (live.hi[i] - live.lo[i])
            cut = chop_cuts(live.ia[i], live.ib[i], self.cfg, self.r_max,
                            min_width=self.mass_floor * ratio)
            self.n_chops += 1
            if cut[2].size > self.max_children:
                raise MemoryError(f"chop at time {k} would create {cut[2].size} pieces")
            pieces.append(cut)
        if not pieces:
            return None, None
        # all interior cuts pulled back in one pass, each along its parent's signs
        sizes = np.array([p[0].size for p in pieces])
        owner = np.repeat(np.arange(len(live)), sizes - 1)
        interior = np.concatenate([p[0][1:] for p in pieces])
        orig = pullback_rows(interior, live.signs[owner], self.fiber, k)
        first = np.concatenate([[0], np.cumsum(sizes - 1)])
        parent = np.repeat(np.arange(len(live)), sizes)
        img_lo = np.concatenate([p[0] for p in pieces])
        img_hi = np.concatenate([p[1] for p in pieces])
        kind = np.concatenate([p[2] for p in pieces])
        depth = np.concatenate([p[3] for p in pieces])
        lo = np.empty(img_lo.size)
        hi = np.empty(img_lo.size)
        pos = 0
        for i, n in enumerate(sizes):
            seg = orig[first[i]:first[i + 1]]
            lo[pos] = live.lo[i]
            lo[pos + 1:pos + n] = seg
            hi[pos:pos + n - 1] = seg
            hi[pos + n - 1] = live.hi[i]
            pos += n
        length = hi - lo
        deep = kind == 0
        small = ~deep & (length < self.mass_floor)
        if deep.any():
            self._add_residual(lo[deep], hi[deep], k, DEEP)
        if small.any():
            self._add_residual(lo[small], hi[small], k, FLOOR)
        out = []
        for kd in (1, 2):
            sel = np.flatnonzero((kind == kd) & ~small)
            if not sel.size:
                out.append(None)
                continue
            par = parent[sel]
            piece = Live(ia=img_lo[sel], ib=img_hi[sel], lo=lo[sel], hi=hi[sel],
                         node=live.node[par], lin=self.new_ids(live.lin[par]),
                         R=live.R[par], nret=live.nret[par], minesc=live.minesc[par],
                         signs=live.signs[par])
            if kd == 1:
                dep = depth[sel]
                piece.node = self.store.add_many(k, ESSENTIAL, dep, piece.ia, piece.ib, piece.node)
                piece.R = piece.R + dep
                piece.nret = piece.nret + 1
            out.append(piece)
        return out[0], out[1]

    def run(self, live, on_escape, k0=0):
        cfg = self.cfg
        delta = cfg.delta
        k = k0
        while live is not None and len(live):
            if k >= self.n_cap:
                self._add_residual(live.lo, live.hi, k, CAP)
                break
            ia, ib = live.ia, live.ib
            meets = (ib > -delta) & (ia < delta)
            length = ib - ia
            ess = meets & (((ia <= 0) & (ib >= 0)) | (length >= delta))
            cand = np.flatnonzero(meets & ~ess)
            iness = np.zeros(len(live), bool)
            depth = np.zeros(len(live), np.int64)
            if cand.size:
                neg = ib[cand] < 0
                u = np.where(neg, -ib[cand], ia[cand])
                v = np.where(neg, -ia[cand], ib[cand])
                count, dep = small_span_counts(u, v, cfg)
                big = count > 3
                ess[cand[big]] = True
                iness[cand[~big]] = True
                depth[cand[~big]] = dep[~big]
            cells, outside = (None, None)
            log.debug("k=%d live=%d essential=%d inessential=%d residual=%d",
                      k, len(live), int(ess.sum()), int(iness.sum()), len(self.residual))
            if ess.any():
                cells, outside = self._chop(live.take(np.flatnonzero(ess)), k)
            if iness.any():
                idx = np.flatnonzero(iness)
                live.node[idx] = self.store.add_many(k, INESSENTIAL, depth[idx], ia[idx], ib[idx],
                                                     live.node[idx])
                live.R[idx] += depth[idx]
                live.nret[idx] += 1
            rest = Live.concat([live.take(np.flatnonzero(~ess)), outside])
            cont = [cells]
            if rest is not None:
                away = ~((rest.ib > -delta) & (rest.ia < delta))
                esc = away & (rest.ib - rest.ia >= delta) & (k >= rest.minesc)
                if esc.any():
                    e = rest.take(np.flatnonzero(esc))
                    e.node = self.store.add_many(k, ESCAPE, np.zeros(len(e), np.int64),
                                                 e.ia, e.ib, e.node)
                    cont.append(on_escape(self, k, e))
                cont.append(rest.take(np.flatnonzero(~esc)))
            live = Live.concat(cont)
            if live is None:
                break
            # advance one step along omega_k
            s = np.where(live.ia + live.ib > 0, 1, -1).astype(np.int8)
            live.signs[:, k] = s
            lam, a = self.fiber.lam[k], self.fiber.a[k]
            sf = s.astype(float)
            live.ia = forward(live.ia, sf, lam, a)
            live.ib = forward(live.ib, sf, lam, a)
            k += 1
        return k
