"""Sampled descent through the chopping algorithm.

Instead of building every element, each sample follows only the element
containing its own point: it carries the current image [a, b] of that
element and a marker x inside it, iterated by the same maps.  At an
essential return only the child containing x is formed.  Samples move in
lockstep in time, so every step is a handful of numpy operations.

Markers are dithered by a few ulps after every step.  A double is a
dyadic rational, so under the exact doubling map (lam = 1) an undithered
marker runs out of bits after about 53 steps and lands on 0; the dither
supplies the low-order bits a real point would have.

Small tails are reached by splitting: whenever fewer than half of the
samples are still running, the survivors are cloned and their weights
shared, with the clone markers jittered inside the image so that clones
separate under the expanding dynamics.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cells import _boundary_vec, _level_table, abs_cells_below_vec, abs_cells_vec, small_span_counts
from .pieces import Fiber, forward

DEEP_RMAX = 34  # e^-35 ~ 6e-16: deeper markers are censored as singular


def child_containing(a, b, x, cfg, r_max=DEEP_RMAX):
    """Image of the chop child containing x, for images [a, b] meeting Delta_0.

    Returns (lo, hi, kind, depth) with kind 0 = deeper than r_max (censored),
    1 = cell child, 2 = the part outside Delta_0.  Children agree with
    :func:`lorenzrt.pieces.chop_image`.
    """
    theta = cfg.theta
    delta = cfg.delta
    eps = math.exp(-(r_max + 1))
    a, b, x = (np.asarray(v, dtype=float) for v in (a, b, x))
    pos = x >= 0
    # half of the image on the side of x, in |y| coordinates
    u = np.where(pos, np.maximum(a, 0.0), np.maximum(-b, 0.0))
    v = np.where(pos, b, -a)
    t = np.abs(x)
    kind = np.where(t >= delta, 2, np.where(t < eps, 0, 1))
    clo = np.where(kind == 2, np.maximum(u, delta), u)
    chi = np.where(kind == 0, np.minimum(v, eps), v)
    depth = np.zeros(t.shape, np.int64)
    sel = kind == 1
    if sel.any():
        mu = np.maximum(u[sel], eps)
        mv = np.minimum(v[sel], delta)
        tt = t[sel]
        rb, mb = abs_cells_vec(mu, cfg)
        rt, mt = abs_cells_below_vec(mv, cfg)
        rc, mc = abs_cells_vec(tt, cfg)
        lo_c = _boundary_vec(rc, mc - 1, theta)
        hi_c = _boundary_vec(rc, mc, theta)
        bottom_lo = _boundary_vec(rb, mb - 1, theta)
        bottom_hi = _boundary_vec(rb, mb, theta)
        top_lo = _boundary_vec(rt, mt - 1, theta)
        top_hi = _boundary_vec(rt, mt, theta)
        bottom_partial = mu != bottom_lo
        top_partial = mv != top_hi
        is_bottom = (rc == rb) & (mc == mb)
        is_top = (rc == rt) & (mc == mt)
        n_cells = _level_table(theta)[2]
        # outer boundaries of the neighbours that absorb a partial end cell
        next_hi = np.where(mb < n_cells[rb], _boundary_vec(rb, mb + 1, theta),
                           _boundary_vec(rb - 1, np.ones_like(mb), theta))
        prev_lo = np.where(mt > 1, _boundary_vec(rt, mt - 2, theta),
                           _boundary_vec(rt + 1, n_cells[rt + 1] - 1, theta))
        lower = np.where(is_bottom | ((lo_c == bottom_hi) & bottom_partial), mu,
                         np.where(is_top & top_partial, prev_lo, lo_c))
        upper = np.where(is_top | ((hi_c == top_lo) & top_partial), mv,
                         np.where(is_bottom & bottom_partial, next_hi, hi_c))
        # two or three cells whose partial ends absorb everything form one child
        count, _ = small_span_counts(mu, mv, cfg)
        single = ((count == 1) | ((count == 2) & (bottom_partial | top_partial))
                  | ((count == 3) & bottom_partial & top_partial))
        lower = np.where(single, mu, lower)
        upper = np.where(single, mv, upper)
        clo[sel] = lower
        chi[sel] = upper
        ur, _ = abs_cells_below_vec(upper, cfg)
        depth[sel] = ur
    lo = np.where(pos, clo, -chi)
    hi = np.where(pos, chi, -clo)
    return lo, hi, kind, depth


@dataclass
class SampleRun:
    """Outcome of a sampled descent.

    ``times``/``weights`` hold the finishing time (escape or return) and the
    weight of each finished sample; ``open_weight`` is the weight still
    running at the cap and ``censored`` the weight dropped as singular.
    """
    times: np.ndarray
    weights: np.ndarray
    open_weight: float
    censored: float
    total: float
    n_cap: int
    n_samples: int
    escapes: np.ndarray = None  # escape count before finishing (returns only)
    stats: dict = field(default_factory=dict)

    def tail(self, ns, strict=False):
        """Weight with time >= n (or > n if strict) plus the open weight."""
        ns = np.asarray(ns)
        order = np.argsort(self.times)
        t = self.times[order]
        w = self.weights[order]
        suffix = np.concatenate([np.cumsum(w[::-1])[::-1], [0.0]])
        pos = np.searchsorted(t, ns, side="right" if strict else "left")
        return suffix[pos] + self.open_weight


class Sampler:
    """Lockstep sampled descent on one fiber."""

    def __init__(self, omega, cfg, n_cap, n_samples=20000, seed=0, r_max=DEEP_RMAX,
                 jitter=1e-7, width=None, dither=4.0):
        self.omega = omega
        self.cfg = cfg
        self.n_cap = int(n_cap)
        self.n = int(n_samples)
        self.rng = np.random.default_rng(seed)
        self.r_max = r_max
        self.jitter = jitter
        self.dither = float(dither)
        self.fiber = Fiber.of(omega, int(width or n_cap))

    def run(self, lo, hi, on_escape=None, min_escape=1):
        """Run samples started uniformly in [lo, hi].

        ``on_escape(k, a, b, x)`` handles escaping samples; it returns
        (finished, finish_time, new_a, new_b[, next_escape]) arrays; by default
        a piece may escape again from k + 1.  Without a handler an
        escape finishes the sample at time k.
        """
        cfg = self.cfg
        delta = cfg.delta
        n = self.n
        total = hi - lo
        x = self.rng.uniform(lo, hi, size=n)
        a = np.full(n, float(lo))
        b = np.full(n, float(hi))
        w = np.full(n, total / n)
        minesc = np.full(n, min_escape, np.int64)
        nesc = np.zeros(n, np.int64)
        done_t, done_w, done_e = [], [], []
        censored = 0.0
        n_split = 0
        for k in range(self.n_cap):
            if not a.size:
                break
            meets = (b > -delta) & (a < delta)
            length = b - a
            ess = meets & (((a <= 0) & (b >= 0)) | (length >= delta))
            cand = np.flatnonzero(meets & ~ess)
            if cand.size:
                neg = b[cand] < 0
                u = np.where(neg, -b[cand], a[cand])
                v = np.where(neg, -a[cand], b[cand])
                count, _ = small_span_counts(u, v, cfg)
                ess[cand[count > 3]] = True
            if ess.any():
                idx = np.flatnonzero(ess)
                ca, cb, kind, _ = child_containing(a[idx], b[idx], x[idx], cfg, self.r_max)
                a[idx], b[idx] = ca, cb
                deep = idx[kind == 0]
                if deep.size:
                    censored += float(w[deep].sum())
                    keep = np.ones(a.size, bool)
                    keep[deep] = False
                    a, b, x, w, minesc, nesc = (v[keep] for v in (a, b, x, w, minesc, nesc))
            away = ~((b > -delta) & (a < delta))
            esc = away & (b - a >= delta) & (k >= minesc)
            if esc.any():
                idx = np.flatnonzero(esc)
                if on_escape is None:
                    fin = np.ones(idx.size, bool)
                    ftime = np.full(idx.size, k)
                else:
                    out = on_escape(k, a[idx], b[idx], x[idx])
                    fin, ftime, na, nb = out[:4]
                    a[idx], b[idx] = na, nb
                    minesc[idx] = out[4] if len(out) > 4 else k + 1
                    nesc[idx] += 1
                if fin.any():
                    f = idx[fin]
                    done_t.append(np.asarray(ftime)[fin])
                    done_w.append(w[f])
                    done_e.append(nesc[f])
                    keep = np.ones(a.size, bool)
                    keep[f] = False
                    a, b, x, w, minesc, nesc = (v[keep] for v in (a, b, x, w, minesc, nesc))
            if not a.size:
                break
            if a.size < n // 2:
                a, b, x, w, minesc, nesc = self._split(a, b, x, w, minesc, nesc)
                n_split += 1
            s = np.where(a + b > 0, 1.0, -1.0)
            lam, aa = self.fiber.lam[k], self.fiber.a[k]
            a = forward(a, s, lam, aa)
            b = forward(b, s, lam, aa)
            x = forward(x, s, lam, aa)
            if self.dither:
                x = x + self.rng.uniform(-self.dither, self.dither, x.size) * np.spacing(np.abs(x))
            x = np.clip(x, a, b)
        cat = (lambda parts, dt: np.concatenate(parts) if parts else np.zeros(0, dt))
        return SampleRun(times=cat(done_t, np.int64), weights=cat(done_w, float),
                         open_weight=float(w.sum()), censored=censored, total=total,
                         n_cap=self.n_cap, n_samples=n, escapes=cat(done_e, np.int64),
                         stats={"n_split": n_split})

    def _split(self, a, b, x, w, minesc, nesc):
        m = a.size
        c = max(self.n // m, 1)
        a, b, x, w, minesc, nesc = (np.repeat(v, c) for v in (a, b, x, w, minesc, nesc))
        w = w / c
        jit = self.rng.uniform(-self.jitter, self.jitter, size=a.size) * (b - a)
        jit[::c] = 0.0  # the original keeps its marker
        x = np.clip(x + jit, a, b)
        return a, b, x, w, minesc, nesc
