"""Lorenz-like interval maps with a power-law singularity at 0.

The default family on I = [-1/2, 1/2] is

    T(x) = sign(x) * (a * |x|**lam - 1/2),

so T(0+) = -1/2, T(0-) = +1/2 and |DT(x)| = a*lam*|x|**(lam-1).  With
lam = 1, a = 2 it is the doubling map (shifted by 1/2), whose invariant
measure is Lebesgue; this is the calibration case used throughout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, NoPreimageError, SingularityError

HALF = 0.5
# |x| below this is treated as a hit on the singularity
SINGULAR_EPS = 1e-15


def full_branch_scale(lam):
    return 2.0 ** lam


def default_c_order(lam, a):
    s = a * lam
    return max(s, 1.0 / s)


def default_k_holder(lam, a, alpha, c_order):
    # |DT(x)-DT(y)| |x|^alpha |y|^alpha / |x-y|^alpha <= 2 a lam 2^(1-lam-alpha)
    # on one side of 0 whenever alpha >= 1 - lam; K' = C^2 K.
    return 2.0 * a * lam * 2.0 ** max(1.0 - lam - alpha, 0.0) / c_order ** 2


@dataclass(frozen=True)
class MapParams:
    lam: float
    a: float
    alpha: float = 0.6
    c_order: float = None
    k_holder: float = None

    def __post_init__(self):
        if not 0.0 < self.lam <= 1.0:
            raise ConfigError(f"lam must be in (0, 1], got {self.lam}")
        if not self.a > 0.0:
            raise ConfigError(f"a must be positive, got {self.a}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.c_order is None:
            object.__setattr__(self, "c_order", default_c_order(self.lam, self.a))
        if self.k_holder is None:
            object.__setattr__(self, "k_holder", default_k_holder(
                self.lam, self.a, self.alpha, self.c_order))

    @classmethod
    def full(cls, lam, alpha=0.6, **kw):
        """Full-branch member a = 2**lam."""
        return cls(lam=lam, a=full_branch_scale(lam), alpha=alpha, **kw)

    def violations(self):
        """Standing-assumption violations, as human-readable strings."""
        out = []
        if self.a > full_branch_scale(self.lam) * (1 + 1e-12):
            out.append(f"a={self.a} > 2**lam: T does not map I into I")
        if self.a <= 1.0:
            out.append(f"a={self.a} <= 1")
        if self.alpha < 1.0 - self.lam - 1e-12:
            out.append(f"alpha={self.alpha} < 1 - lam")
        if self.c_order < default_c_order(self.lam, self.a) * (1 - 1e-12):
            out.append(f"c_order={self.c_order} below max(a lam, 1/(a lam))")
        return out

    @property
    def branch_top(self):
        """T(1/2) for the right branch (= 1/2 for full branches)."""
        return self.a * HALF ** self.lam - HALF

    def to_text(self):
        return "".join(f"{k}={v!r}\n" for k, v in self._items())

    def _items(self):
        return [("lambda", self.lam), ("a", self.a), ("alpha", self.alpha),
                ("c_order", self.c_order), ("k_holder", self.k_holder)]

    @classmethod
    def from_text(cls, text):
        kv = parse_key_values(text)
        try:
            return cls(lam=float(kv["lambda"]), a=float(kv["a"]),
                       alpha=float(kv.get("alpha", 0.6)),
                       c_order=float(kv["c_order"]) if "c_order" in kv else None,
                       k_holder=float(kv["k_holder"]) if "k_holder" in kv else None)
        except KeyError as exc:
            raise ConfigError(f"missing key {exc} in map parameters") from None


def parse_key_values(text):
    kv = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        kv[k.strip()] = v.strip()
    return kv


@dataclass(frozen=True)
class FamilyRange:
    """Parameter interval [lambda_lo, lambda_hi] plus the rule lam -> a.

    a_rule is "full" (a = 2**lam), "scale:s" (a = s * 2**lam) or "const:a".
    """
    lambda_lo: float
    lambda_hi: float
    a_rule: str = "full"
    alpha: float = 0.6

    def __post_init__(self):
        if not 0.0 < self.lambda_lo <= self.lambda_hi <= 1.0:
            raise ConfigError(
                f"need 0 < lambda_lo <= lambda_hi <= 1, got "
                f"[{self.lambda_lo}, {self.lambda_hi}]")
        self.a_of(self.lambda_lo)

    def a_of(self, lam):
        rule = self.a_rule
        if rule == "full":
            return full_branch_scale(lam)
        kind, _, val = rule.partition(":")
        if kind == "scale":
            return float(val) * full_branch_scale(lam)
        if kind == "const":
            return float(val)
        raise ConfigError(f"unknown a_rule {rule!r}")

    def params(self, lam):
        return MapParams(lam=lam, a=self.a_of(lam), alpha=self.alpha)

    @property
    def width(self):
        return self.lambda_hi - self.lambda_lo

    def violations(self, n=11):
        out = []
        for lam in np.linspace(self.lambda_lo, self.lambda_hi, n):
            out.extend(f"lam={lam:.4g}: {v}" for v in self.params(float(lam)).violations())
        return out


def _check_point(x):
    if abs(x) > HALF:
        raise DomainError(f"x={x} outside [-1/2, 1/2]")
    if abs(x) < SINGULAR_EPS:
        raise SingularityError(f"x={x} is on the singularity")


def evaluate(p, x):
    _check_point(x)
    if x > 0:
        return p.a * x ** p.lam - HALF
    return HALF - p.a * (-x) ** p.lam


def derivative(p, x):
    _check_point(x)
    return p.a * p.lam * abs(x) ** (p.lam - 1.0)


def branch_image(p, branch):
    """Closed hull of the image of the given branch ('left' or 'right')."""
    top = p.branch_top
    if branch in ("right", 1, True):
        return (-HALF, top)
    return (-top, HALF)


def branch_inverse(p, branch, y):
    """Preimage of y on the chosen branch (branch: 'right'/'left' or +1/-1)."""
    right = branch in ("right", 1, True)
    lo, hi = branch_image(p, branch)
    if not lo <= y <= hi:
        raise NoPreimageError(f"y={y} not in the {'right' if right else 'left'} "
                              f"branch image [{lo}, {hi}]")
    if right:
        return ((y + HALF) / p.a) ** (1.0 / p.lam)
    return -(((HALF - y) / p.a) ** (1.0 / p.lam))


def evaluate_array(p, x):
    """Vectorised T on an array (no singularity checks)."""
    x = np.asarray(x, dtype=float)
    return np.sign(x) * (p.a * np.abs(x) ** p.lam - HALF)


def derivative_array(p, x):
    x = np.asarray(x, dtype=float)
    return p.a * p.lam * np.abs(x) ** (p.lam - 1.0)


@dataclass
class SingularityReport:
    c_est: float
    passed: bool


@dataclass
class HolderReport:
    k_est: float
    bound: float
    passed: bool
    n_used: int = 0


def log_samples(n, lo=1e-12):
    """n log-spaced points in [lo, 1/2] on each side of 0."""
    pos = np.logspace(math.log10(lo), math.log10(HALF), max(int(n), 2))
    return np.concatenate([-pos[::-1], pos])


def validate_singularity_order(p, n_samples=1000):
    """Estimate the order-of-singularity constant C and compare with p.c_order."""
    if n_samples < 2:
        raise ConfigError("n_samples must be >= 2")
    x = log_samples(n_samples)
    ratio = derivative_array(p, x) * np.abs(x) ** (1.0 - p.lam)
    c_est = float(max(ratio.max(), (1.0 / ratio).max()))
    return SingularityReport(c_est=c_est, passed=c_est <= p.c_order * (1 + 1e-12))


def holder_ratio(p, x, y):
    """|DT(x)-DT(y)| |x|^alpha |y|^alpha / |x-y|^alpha for same-side x != y."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = np.abs(x - y)
    num = np.abs(derivative_array(p, x) - derivative_array(p, y))
    with np.errstate(divide="ignore", invalid="ignore"):
        r = num * np.abs(x) ** p.alpha * np.abs(y) ** p.alpha / d ** p.alpha
    return np.where(d > 0, r, np.nan)


def validate_local_holder(p, n_pairs=2000, seed=0, pairs=None):
    """Largest sampled locally-Hoelder ratio of DT against C^2 K."""
    if pairs is None:
        if n_pairs < 1:
            raise ConfigError("n_pairs must be >= 1")
        rng = np.random.default_rng(seed)
        mag = 10.0 ** rng.uniform(-12, math.log10(HALF), size=(n_pairs, 2))
        side = rng.choice([-1.0, 1.0], size=n_pairs)
        x, y = mag[:, 0] * side, mag[:, 1] * side
    else:
        x, y = (np.asarray(v, dtype=float) for v in zip(*pairs))
    r = holder_ratio(p, x, y)
    used = r[np.isfinite(r)]
    k_est = float(used.max()) if used.size else 0.0
    bound = p.c_order ** 2 * p.k_holder
    return HolderReport(k_est=k_est, bound=bound, passed=k_est <= bound * (1 + 1e-12),
                        n_used=int(used.size))


@dataclass
class FamilyDistance:
    sup_diff: float
    holder_diff: float


def family_distance(p1, p2, grid=1001, holder_points=400):
    """Sup distance of the maps and an alpha-Hoelder seminorm of 1/DT1 - 1/DT2."""
    if grid < 2:
        raise ConfigError("grid must be >= 2")
    xs = np.linspace(-HALF, HALF, int(grid))
    xs = xs[np.abs(xs) > SINGULAR_EPS]
    sup = float(np.max(np.abs(evaluate_array(p1, xs) - evaluate_array(p2, xs))))

    alpha = p1.alpha
    hol = 0.0
    pos = np.linspace(HALF / holder_points, HALF, holder_points)
    for side in (-1.0, 1.0):
        x = side * pos
        g = 1.0 / derivative_array(p1, x) - 1.0 / derivative_array(p2, x)
        dg = np.abs(g[:, None] - g[None, :])
        dx = np.abs(x[:, None] - x[None, :])
        mask = dx > 0
        if mask.any():
            hol = max(hol, float((dg[mask] / dx[mask] ** alpha).max()))
    return FamilyDistance(sup_diff=sup, holder_diff=hol)


__all__ = [
    "MapParams", "FamilyRange", "evaluate", "derivative", "branch_inverse",
    "branch_image", "evaluate_array", "derivative_array",
    "validate_singularity_order", "validate_local_holder", "family_distance",
]
