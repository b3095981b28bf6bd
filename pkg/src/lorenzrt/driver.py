"""Finite windows of the parameter shift and random compositions T^n_omega."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SingularOrbitError, WindowError
from .maps import SINGULAR_EPS, FamilyRange, MapParams, derivative, evaluate


@dataclass(frozen=True, eq=False)
class OmegaSequence:
    """Parameter values omega_i for i = -L..R.

    ``values[i + L]`` holds omega_i.  ``shift(m)`` realises sigma^m on the
    window without copying.  A sequence built by :func:`sample_omega` can be
    regenerated from (seed, L, R, range); sequences built from explicit
    values carry ``seed=None``.
    """
    values: np.ndarray
    L: int
    R: int
    range: FamilyRange
    seed: int | None = None
    origin: int = 0  # absolute index of omega_0 relative to the sampled sequence

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if v.shape != (self.L + self.R + 1,):
            raise ConfigError(f"values must have length L+R+1={self.L + self.R + 1}")

    @classmethod
    def constant(cls, lam, n_forward, n_back=0, a_rule="full", alpha=0.6):
        rng = FamilyRange(lam, lam, a_rule=a_rule, alpha=alpha)
        return cls(np.full(n_back + n_forward + 1, float(lam)), n_back, n_forward, rng)

    @classmethod
    def from_values(cls, forward, backward=(), family=None):
        """omega_0.. from ``forward`` and omega_-1, omega_-2, .. from ``backward``."""
        forward = [float(v) for v in forward]
        backward = [float(v) for v in backward]
        vals = backward[::-1] + forward
        if family is None:
            family = FamilyRange(min(vals), max(vals))
        return cls(np.array(vals), len(backward), len(forward) - 1, family)

    def __len__(self):
        return self.L + self.R + 1

    def __getitem__(self, i):
        if not -self.L <= i <= self.R:
            raise WindowError((i, i), (-self.L, self.R))
        return float(self.values[i + self.L])

    def require(self, lo, hi):
        if lo < -self.L or hi > self.R:
            raise WindowError((lo, hi), (-self.L, self.R))

    def params(self, i):
        lam = self[i]
        return MapParams(lam=lam, a=self.range.a_of(lam), alpha=self.range.alpha)

    def shift(self, m):
        """sigma^m omega restricted to the same stored values."""
        if not -self.L <= m <= self.R:
            raise WindowError((m, m), (-self.L, self.R))
        return OmegaSequence(self.values, self.L + m, self.R - m, self.range,
                             self.seed, self.origin + m)

    def forward_lams(self, n, start=0):
        """omega_start .. omega_{start+n-1} as a list of floats."""
        self.require(start, start + n - 1)
        return self.values[start + self.L:start + self.L + n].tolist()

    def a_values(self, lams):
        rule = self.range.a_rule
        if rule == "full":
            return [2.0 ** lam for lam in lams]
        return [self.range.a_of(lam) for lam in lams]

    def agrees_with(self, other, lo, hi):
        """True if both sequences carry identical values on indices lo..hi."""
        self.require(lo, hi)
        other.require(lo, hi)
        a = self.values[lo + self.L:hi + self.L + 1]
        b = other.values[lo + other.L:hi + other.L + 1]
        return bool(np.array_equal(a, b))

    def with_values(self, changes):
        """Copy with omega_i replaced by changes[i]."""
        v = self.values.copy()
        for i, val in changes.items():
            self.require(i, i)
            v[i + self.L] = val
        return OmegaSequence(v, self.L, self.R, self.range, None, self.origin)

    # serialisation -------------------------------------------------------
    def to_csv(self):
        r = self.range
        buf = io.StringIO()
        buf.write(f"# seed={self.seed} L={self.L} R={self.R} origin={self.origin} "
                  f"lambda_lo={r.lambda_lo!r} lambda_hi={r.lambda_hi!r} "
                  f"a_rule={r.a_rule} alpha={r.alpha!r}\n")
        buf.write("index,lambda\n")
        for i in range(-self.L, self.R + 1):
            buf.write(f"{i},{self[i]!r}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        lines = text.splitlines()
        if not lines or not lines[0].startswith("#"):
            raise ConfigError("omega CSV must start with a '# seed=...' header")
        meta = dict(tok.split("=", 1) for tok in lines[0][1:].split())
        family = FamilyRange(float(meta["lambda_lo"]), float(meta["lambda_hi"]),
                             a_rule=meta["a_rule"], alpha=float(meta["alpha"]))
        rows = [ln.split(",") for ln in lines[2:] if ln.strip()]
        vals = np.array([float(v) for _, v in rows])
        seed = None if meta["seed"] == "None" else int(meta["seed"])
        return cls(vals, int(meta["L"]), int(meta["R"]), family, seed,
                   int(meta.get("origin", 0)))


def sample_omega(seed, L, R, family):
    """i.i.d. uniform draws on [lambda_lo, lambda_hi] for indices -L..R.

    Forward (i >= 0) and backward (i < 0) coordinates come from independent
    child streams, so enlarging the window never changes existing values.
    """
    if L < 0 or R < 0:
        raise ConfigError("L and R must be non-negative")
    if not family.lambda_lo <= family.lambda_hi:
        raise ConfigError("empty parameter range")
    fwd_ss, back_ss = np.random.SeedSequence(int(seed)).spawn(2)
    lo, hi = family.lambda_lo, family.lambda_hi
    if lo == hi:
        fwd = np.full(R + 1, lo)
        back = np.full(L, lo)
    else:
        fwd = np.random.default_rng(fwd_ss).uniform(lo, hi, size=R + 1)
        back = np.random.default_rng(back_ss).uniform(lo, hi, size=L)
    vals = np.concatenate([back[::-1], fwd])
    return OmegaSequence(vals, L, R, family, int(seed))


def compose(omega, x, n):
    """Orbit [x, T_{omega_0} x, ..., T^n_omega x]."""
    if n < 0:
        raise ConfigError("n must be non-negative")
    if n:
        omega.require(0, n - 1)
    orbit = [float(x)]
    for k in range(n):
        if abs(x) < SINGULAR_EPS:
            raise SingularOrbitError(k, x)
        x = evaluate(omega.params(k), x)
        orbit.append(x)
    return orbit


def orbit_derivative(omega, x, n):
    """DT^n_omega(x) as the product of one-step slopes along the orbit."""
    orbit = compose(omega, x, n)
    d = 1.0
    for k in range(n):
        d *= derivative(omega.params(k), orbit[k])
    return d


def log_orbit_derivatives(omega, x, n):
    """log DT^k_omega(x) for k = 1..n (numpy array)."""
    orbit = compose(omega, x, n)
    logs = [math.log(derivative(omega.params(k), orbit[k])) for k in range(n)]
    return np.cumsum(logs)


@dataclass
class ExpansionEstimate:
    c_tilde: float
    ell: float
    n_max: int
    passed: bool
    n_samples: int = 0
    n_discarded: int = 0


def check_uniform_expansion(omega, x_samples, n_max, grid_step=1e-3, c_min=1.0):
    """Largest grid value ell (and matching C~) with DT^n > C~ e^{n ell} on samples.

    ell is the largest multiple of ``grid_step`` for which the constant
    C~ = min_n exp(m_n - n ell) stays >= c_min, where m_n is the smallest
    sampled log DT^n.  Samples whose orbit meets the singularity before
    n_max are discarded and counted.
    """
    rows = []
    dropped = 0
    for x in x_samples:
        try:
            rows.append(log_orbit_derivatives(omega, float(x), n_max))
        except (SingularOrbitError, ValueError):
            dropped += 1
    if not rows:
        return ExpansionEstimate(0.0, 0.0, n_max, False, 0, dropped)
    m = np.min(np.vstack(rows), axis=0)
    n = np.arange(1, n_max + 1)
    ell_star = float(np.min((m - math.log(c_min)) / n))
    ell = math.floor(ell_star / grid_step) * grid_step
    c_tilde = float(np.exp(np.min(m - n * ell)))
    return ExpansionEstimate(c_tilde=c_tilde, ell=ell, n_max=n_max, passed=ell > 0,
                             n_samples=len(rows), n_discarded=dropped)
