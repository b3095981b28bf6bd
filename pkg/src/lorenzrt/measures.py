"""Equivariant measures by Ulam's method, a Birkhoff oracle, and quenched correlations.

Densities live on a uniform B-bin grid of I.  The Ulam matrix of one map
sends the mass of bin i to the bins met by its image, in proportion to the
length of the preimage pieces, so it is the exact pushforward of a
piecewise-constant density followed by bin averaging.  Fiber measures come
from pushing Lebesgue measure along omega from a burn-in time in the past.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import sparse

from .errors import ConfigError
from .fitting import TailFit, fit_exponential
from .maps import SINGULAR_EPS

# transfer matrices ------------------------------------------------------------


def _grid_index(x, n):
    return np.clip(np.floor((x + 0.5) * n).astype(np.int64), 0, n - 1)


@lru_cache(maxsize=256)
def transfer_matrix(lam, a, n_src, n_dst=None):
    """Sparse (n_src, n_dst) matrix: share of source bin i landing in target bin j."""
    n_dst = n_src if n_dst is None else n_dst
    src_edges = np.linspace(-0.5, 0.5, n_src + 1)
    dst_edges = np.linspace(-0.5, 0.5, n_dst + 1)
    top = a * 0.5 ** lam - 0.5
    rows, cols, vals = [], [], []
    for side in (1.0, -1.0):
        # work with t = |x| in (0, 1/2]; on both branches y rises with x
        ys = dst_edges[(dst_edges > -0.5) & (dst_edges < top)] if side > 0 else \
            dst_edges[(dst_edges > -top) & (dst_edges < 0.5)]
        t_cut = ((side * ys + 0.5) / a) ** (1.0 / lam)
        t_src = np.abs(src_edges[(src_edges * side > 0)])
        t = np.unique(np.concatenate([[0.0, 0.5], t_cut, t_src]))
        t = t[(t >= 0.0) & (t <= 0.5)]
        lengths = np.diff(t)
        mid = 0.5 * (t[:-1] + t[1:])
        keep = lengths > 0
        mid, lengths = mid[keep], lengths[keep]
        x = side * mid
        y = side * (a * mid ** lam - 0.5)
        rows.append(_grid_index(x, n_src))
        cols.append(_grid_index(y, n_dst))
        vals.append(lengths * n_src)
    m = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n_src, n_dst)).tocsr()
    m.sum_duplicates()
    return m


def _push_matrix(lam, a, bins, fine=1):
    # transposed, so that masses are pushed by a plain matvec
    return transfer_matrix(float(lam), float(a), int(bins), int(bins * fine)).T.tocsr()


# fiber measures ---------------------------------------------------------------

@dataclass
class FiberMeasure:
    """Bin densities on the uniform grid of I for the fiber sigma^fiber omega."""
    bins: int
    density: np.ndarray
    fiber: int
    n_discarded: int = 0

    def __post_init__(self):
        self.density = np.asarray(self.density, dtype=float)
        if self.density.shape != (self.bins,):
            raise ConfigError("density must have one value per bin")

    @property
    def masses(self):
        return self.density / self.bins

    @property
    def total(self):
        return float(self.density.sum() / self.bins)

    @property
    def degenerate(self):
        return self.bins < 2

    def centers(self):
        return -0.5 + (np.arange(self.bins) + 0.5) / self.bins

    def l1_distance(self, other):
        if isinstance(other, FiberMeasure):
            other = other.density
        other = np.broadcast_to(np.asarray(other, dtype=float), self.density.shape)
        return float(np.abs(self.density - other).sum() / self.bins)


class UlamPusher:
    """Pushes bin masses along omega with cached per-map Ulam matrices."""

    def __init__(self, omega, bins):
        if bins < 1:
            raise ConfigError("bins must be >= 1")
        self.omega = omega
        self.bins = int(bins)

    def matrix(self, i, fine=1):
        lam = self.omega[i]
        return _push_matrix(lam, self.omega.range.a_of(lam), self.bins, fine)

    def step(self, masses, i):
        """Masses at fiber i+1 from masses at fiber i."""
        return self.matrix(i) @ masses

    def push(self, masses, start, n):
        for i in range(start, start + n):
            masses = self.step(masses, i)
        return masses


def estimate_measure_ulam(omega, bins, n_push, burn_in):
    """Fiber measures mu_{sigma^i omega}, i = 0..n_push.

    Lebesgue measure at fiber -burn_in is pushed forward; the window must
    cover -burn_in..n_push-1.
    """
    if n_push < 0 or burn_in < 0:
        raise ConfigError("n_push and burn_in must be >= 0")
    omega.require(-burn_in, max(n_push - 1, -burn_in))
    pusher = UlamPusher(omega, bins)
    m = np.full(bins, 1.0 / bins)
    m = pusher.push(m, -burn_in, burn_in)
    out = [FiberMeasure(bins, m * bins, 0)]
    for i in range(n_push):
        m = pusher.step(m, i)
        out.append(FiberMeasure(bins, m * bins, i + 1))
    return out


def equivariance_residuals(omega, measures, refine=32):
    """||(T_{omega_n})_* mu_n - mu_{n+1}||_1 for consecutive fiber measures.

    The exact pushforward of the step density mu_n is resolved on a grid
    ``refine`` times finer and compared with mu_{n+1} spread uniformly over
    each bin.
    """
    out = []
    for m0, m1 in zip(measures[:-1], measures[1:]):
        if m1.fiber != m0.fiber + 1 or m1.bins != m0.bins:
            raise ConfigError("measures must be consecutive fibers on one grid")
        B = m0.bins
        lam = omega[m0.fiber]
        fine = _push_matrix(lam, omega.range.a_of(lam), B, refine) @ m0.masses
        coarse = np.repeat(m1.masses / refine, refine)
        out.append(float(np.abs(fine - coarse).sum()))
    return np.array(out)


def estimate_measure_birkhoff(omega, n, n_samples, burn_in, bins=64, seed=0, dither=4.0):
    """Histogram of uniform samples pushed from fiber n - burn_in to fiber n.

    Orbits that come within 1e-15 of the singularity are discarded and
    counted in ``n_discarded``.  Points are dithered by ``dither`` ulps per
    step so that exact dyadic arithmetic at lam = 1 cannot drive them onto 0.
    """
    if n_samples < 1:
        raise ConfigError("n_samples must be >= 1")
    if bins < 1:
        raise ConfigError("bins must be >= 1")
    omega.require(n - burn_in, n - 1 if burn_in else n)
    rng = np.random.default_rng(seed)
    x = rng.uniform(-0.5, 0.5, size=n_samples)
    ok = np.ones(n_samples, bool)
    for i in range(n - burn_in, n):
        lam = omega[i]
        a = omega.range.a_of(lam)
        ok &= np.abs(x) >= SINGULAR_EPS
        x = np.where(ok, np.sign(x) * (a * np.abs(x) ** lam - 0.5), 0.0)
        if dither:
            x = np.clip(x + rng.uniform(-dither, dither, x.size) * np.spacing(np.abs(x)), -0.5, 0.5)
    kept = x[ok]
    counts = np.bincount(_grid_index(kept, bins), minlength=bins)
    density = counts * bins / max(kept.size, 1)
    return FiberMeasure(bins, density, n, int(n_samples - kept.size))


def chi_square_uniform(measure, n_samples):
    """Pearson statistic and p-value of a Birkhoff histogram against the uniform law."""
    from scipy import stats
    counts = measure.density * (n_samples - measure.n_discarded) / measure.bins
    expected = counts.sum() / measure.bins
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    return chi2, float(stats.chi2.sf(chi2, measure.bins - 1))


# observables and correlations ---------------------------------------------------

@dataclass(frozen=True)
class Observable:
    name: str
    f: object

    def __call__(self, x):
        return self.f(np.asarray(x, dtype=float))

    def bin_averages(self, bins, order=4):
        """Average of f over each grid bin by Gauss-Legendre quadrature."""
        nodes, weights = np.polynomial.legendre.leggauss(order)
        edges = np.linspace(-0.5, 0.5, bins + 1)
        lo, hi = edges[:-1], edges[1:]
        pts = 0.5 * (hi - lo)[:, None] * nodes[None, :] + 0.5 * (hi + lo)[:, None]
        return (self(pts) * weights[None, :]).sum(axis=1) / 2.0

    def sup(self, n=20001):
        return float(np.max(np.abs(self(np.linspace(-0.5, 0.5, n)))))


OBSERVABLES = {
    "x": Observable("x", lambda x: x),
    "x2": Observable("x2", lambda x: x * x),
    "abs": Observable("abs", np.abs),
    "sqrt_abs": Observable("sqrt_abs", lambda x: np.sqrt(np.abs(x))),
    "cos": Observable("cos", lambda x: np.cos(2 * np.pi * x)),
    "one": Observable("one", lambda x: np.ones_like(x)),
}


def observable(spec):
    """An :class:`Observable` by name, or ``x+c`` / ``c*name`` style variants."""
    if isinstance(spec, Observable):
        return spec
    if spec in OBSERVABLES:
        return OBSERVABLES[spec]
    if "+" in spec:
        name, c = spec.split("+", 1)
        base, shift = observable(name), float(c)
        return Observable(spec, lambda x: base(x) + shift)
    if "*" in spec:
        c, name = spec.split("*", 1)
        base, scale = observable(name), float(c)
        return Observable(spec, lambda x: scale * base(x))
    raise ConfigError(f"unknown observable {spec!r}")


@dataclass
class CorrelationSeries:
    """C_n for n = 1..n_max with an exponential fit down to the noise floor."""
    ns: np.ndarray
    values: np.ndarray
    mode: str
    observables: tuple
    fit: TailFit
    noise_floor: float
    bins: int
    extras: dict = field(default_factory=dict)

    def to_csv(self):
        buf = io.StringIO()
        buf.write("n,C_n\n")
        for n, v in zip(self.ns, self.values):
            buf.write(f"{int(n)},{v!r}\n")
        return buf.getvalue()


def noise_floor(phi, psi, bins):
    """2/B times the sup norms: the bin-averaging error scale of C_n."""
    return 2.0 / bins * phi.sup() * psi.sup()


def fit_to_floor(ns, values, floor, min_points=5):
    """Exponential fit of C_n from the start up to the first value below the floor."""
    ns = np.asarray(ns)
    values = np.asarray(values)
    below = np.flatnonzero(values <= floor)
    stop = below[0] if below.size else values.size
    if stop < min_points:
        return TailFit(math.nan, math.nan, math.nan, (int(ns[0]), int(ns[max(stop - 1, 0)])),
                       int(stop), False, f"only {stop} values above the noise floor {floor:.3g}")
    return fit_exponential(ns[:stop], values[:stop], (int(ns[0]), int(ns[stop - 1])),
                           min_points=min_points)


def quenched_correlation(omega, phi, psi, n_max, bins=4096, burn_in=60, mode="forward"):
    """|int (phi o T^n) psi dmu - int phi dmu' int psi dmu| on Ulam fiber measures.

    ``forward``: mu = mu_omega, T^n = T^n_omega, mu' = mu_{sigma^n omega}.
    ``pullback``: mu = mu_{sigma^-n omega}, T^n = T^n_{sigma^-n omega}, mu' = mu_omega.
    """
    phi, psi = observable(phi), observable(psi)
    if mode not in ("forward", "pullback"):
        raise ConfigError(f"mode must be forward or pullback, got {mode!r}")
    if n_max < 1:
        raise ConfigError("n_max must be >= 1")
    pusher = UlamPusher(omega, bins)
    Phi = phi.bin_averages(bins)
    Psi = psi.bin_averages(bins)
    ns = np.arange(1, n_max + 1)
    vals = np.empty(n_max)
    if mode == "forward":
        omega.require(-burn_in, n_max - 1)
        m = pusher.push(np.full(bins, 1.0 / bins), -burn_in, burn_in)
        v = (Psi - Psi @ m) * m
        for n in ns:
            v = pusher.step(v, n - 1)
            vals[n - 1] = abs(Phi @ v)
    else:
        omega.require(-n_max - burn_in, -1)
        m = pusher.push(np.full(bins, 1.0 / bins), -n_max - burn_in, burn_in)
        start_measures = {}
        for i in range(-n_max, 0):
            start_measures[i] = m
            m = pusher.step(m, i)
        for n in ns:
            mu = start_measures[-n]
            v = pusher.push((Psi - Psi @ mu) * mu, -n, n)
            vals[n - 1] = abs(Phi @ v)
    floor = noise_floor(phi, psi, bins)
    fit = fit_to_floor(ns, vals, floor)
    return CorrelationSeries(ns, vals, mode, (phi.name, psi.name), fit, floor, bins)


# Hoelder seminorm --------------------------------------------------------------

def log_grid(n, lo=1e-8):
    """n points on I, log-spaced towards 0 on both sides, with 0 included."""
    half = max((n - 1) // 2, 1)
    pos = np.geomspace(lo, 0.5, half)
    return np.concatenate([-pos[::-1], [0.0], pos])


def holder_seminorm(f, eta, grid, chunk=2048):
    """max over grid pairs of |f(x) - f(y)| / |x - y|^eta."""
    f = observable(f) if isinstance(f, str) else f
    xs = log_grid(grid) if np.isscalar(grid) else np.unique(np.asarray(grid, dtype=float))
    if xs.size < 2:
        raise ConfigError("need at least two grid points")
    fx = np.asarray(f(xs), dtype=float)
    best = 0.0
    for s in range(0, xs.size, chunk):
        dx = np.abs(xs[s:s + chunk, None] - xs[None, :])
        df = np.abs(fx[s:s + chunk, None] - fx[None, :])
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(dx > 0, df / dx ** eta, 0.0)
        best = max(best, float(r.max()))
    return best
