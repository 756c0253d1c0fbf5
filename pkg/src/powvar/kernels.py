"""Closed-form Volterra kernels, univariate metric functions and martingale drivers.

Every process family handled by powvar is identified by a :class:`KernelSpec`.
Kernels are evaluated pointwise (vectorised over numpy arrays); the standard
fBm is the exception and is only available through its covariance.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, InfiniteMomentError

FAMILIES = ("fbm", "rl_fbm", "volterra_concave", "scaled_martingale")
CAUSAL_FAMILIES = ("rl_fbm", "volterra_concave", "scaled_martingale")

# t - s below this fraction of T is treated as the kernel singularity.
SINGULARITY_GUARD = 1e-12


@dataclass(frozen=True)
class Gamma2:
    """Increasing concave univariate function gamma^2(r) with gamma^2(0+) = 0.

    ``kind="power"``: ``r**exponent``.
    ``kind="power_log"``: ``r**exponent / log(1/r)``, defined for ``0 < r < 1``.
    """

    kind: str
    exponent: float

    def __post_init__(self):
        if self.kind not in ("power", "power_log"):
            raise DomainError(f"unknown gamma2 kind {self.kind!r}")
        if not 0.0 < self.exponent <= 1.0:
            raise DomainError("gamma2 exponent must lie in (0, 1]")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.kind == "power":
            return r ** self.exponent
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(r > 0, r ** self.exponent / -np.log(np.where(r > 0, r, 0.5)), 0.0)
        return out

    def derivative(self, r):
        r = np.asarray(r, dtype=float)
        p = self.exponent
        if self.kind == "power":
            return p * r ** (p - 1.0)
        L = -np.log(r)
        return r ** (p - 1.0) * (p / L + 1.0 / L**2)

    @property
    def leading_exponent(self):
        """Power of r in the kernel sqrt(d gamma^2/dr) as r -> 0."""
        return 0.5 * (self.exponent - 1.0)

    @property
    def domain_max(self):
        return math.inf if self.kind == "power" else 1.0


@dataclass(frozen=True)
class KernelSpec:
    """Tagged description of a Volterra kernel G(t, s) or a closed-form covariance.

    ``gamma`` (only for ``scaled_martingale``) is the univariate bound Gamma(s)
    multiplying the base kernel, typically produced by :func:`gamma_bound`.
    """

    family: str
    hurst: Optional[float] = None
    T: float = 1.0
    gamma2: Optional[Gamma2] = None
    base: Optional["KernelSpec"] = None
    gamma: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown kernel family {self.family!r}")
        if not self.T > 0:
            raise DomainError("horizon T must be positive")
        if self.family in ("fbm", "rl_fbm"):
            if self.hurst is None or not 0.0 < self.hurst < 1.0:
                raise DomainError("Hurst parameter must lie strictly in (0, 1)")
        elif self.family == "volterra_concave":
            if self.gamma2 is None:
                raise DomainError("volterra_concave needs a gamma2 function")
            if self.T >= self.gamma2.domain_max:
                raise DomainError("horizon exceeds the domain of gamma2")
            _require_increasing_concave(self.gamma2, self.T)
        else:
            if self.base is None or self.gamma is None:
                raise DomainError("scaled_martingale needs a base kernel and gamma")
            if self.base.family not in CAUSAL_FAMILIES:
                raise DomainError("scaled_martingale base must be a causal kernel family")

    @classmethod
    def fbm(cls, hurst, T=1.0):
        return cls("fbm", hurst=hurst, T=T)

    @classmethod
    def rl_fbm(cls, hurst, T=1.0):
        return cls("rl_fbm", hurst=hurst, T=T)

    @classmethod
    def volterra_concave(cls, gamma2, T=1.0):
        return cls("volterra_concave", T=T, gamma2=gamma2)

    @classmethod
    def scaled_martingale(cls, base, gamma):
        return cls("scaled_martingale", T=base.T, base=base, gamma=gamma)

    @property
    def causal(self):
        return self.family in CAUSAL_FAMILIES

    @property
    def stationary_increments(self):
        return self.family == "fbm"

    @property
    def leading_exponent(self):
        """Exponent a with G(t, s) ~ (t - s)**a as s -> t (causal families only)."""
        if self.family == "rl_fbm":
            return self.hurst - 0.5
        if self.family == "volterra_concave":
            return self.gamma2.leading_exponent
        if self.family == "scaled_martingale":
            return self.base.leading_exponent
        raise DomainError("fBm is specified by its covariance and has no kernel exponent")

    def convolution(self, r):
        """Convolution profile k with G(t, s) = k(t - s) for 0 < r = t - s."""
        r = np.asarray(r, dtype=float)
        if self.family == "rl_fbm":
            return r ** (self.hurst - 0.5)
        if self.family == "volterra_concave":
            return np.sqrt(self.gamma2.derivative(r))
        if self.family == "scaled_martingale":
            return self.base.convolution(r)
        raise DomainError("fBm kernel is not available; use its closed-form covariance")

    def square_integral(self, t):
        """Closed form of int_0^t k(r)^2 dr for the convolution families."""
        t = np.asarray(t, dtype=float)
        if self.family == "rl_fbm":
            return t ** (2 * self.hurst) / (2 * self.hurst)
        if self.family == "volterra_concave":
            return self.gamma2(t)
        raise DomainError(f"no closed-form square integral for {self.family}")

    def digest(self):
        """Short stable identifier of the model (used in ensemble headers)."""
        text = self.describe()
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def describe(self):
        if self.family in ("fbm", "rl_fbm"):
            return f"{self.family}(H={self.hurst!r},T={self.T!r})"
        if self.family == "volterra_concave":
            g = self.gamma2
            return f"volterra_concave({g.kind},{g.exponent!r},T={self.T!r})"
        return f"scaled_martingale({self.base.describe()},{self.gamma!r})"


def eval_kernel(spec: KernelSpec, t, s):
    """Evaluate G(t, s) (or Gamma(s) G(t, s) for scaled martingale kernels).

    Causal kernels vanish for ``s >= t``. Points with ``0 < t - s`` below
    ``1e-12 * T`` are rejected as the kernel singularity.
    """
    if spec.family == "fbm":
        raise DomainError("standard fBm is represented by its closed-form covariance")
    t, s = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(s, dtype=float))
    if np.any((t < 0) | (s < 0)):
        raise DomainError("kernel arguments must be non-negative")
    r = t - s
    live = r > 0
    if spec.leading_exponent < 0 and np.any(live & (r < SINGULARITY_GUARD * spec.T)):
        raise DomainError("kernel evaluated at its singularity s = t")
    out = np.zeros(r.shape)
    out[live] = spec.convolution(r[live])
    if spec.family == "scaled_martingale":
        out[live] *= np.asarray(spec.gamma(s[live]), dtype=float)
    return out if out.ndim else float(out)


def _require_increasing_concave(gamma2, T, probe_n=257):
    r = T * np.geomspace(1e-6, 1.0, probe_n)
    f = gamma2(r)
    slopes = np.diff(f) / np.diff(r)
    tol = 1e-12 * np.max(np.abs(slopes))
    if np.any(slopes <= 0) or np.any(np.diff(slopes) > tol):
        raise DomainError(f"gamma2 {gamma2} is not increasing and concave on (0, {T}]")
    if gamma2(T * 1e-12) > 1e-2 * gamma2(T):
        raise DomainError("gamma2 does not vanish at 0+")


# --------------------------------------------------------------------------
# martingale drivers
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Integrand:
    """Integrand h(t, w) of M(t) = int_0^t h(s, W(s)) dW(s).

    ``even_moment(t, n)`` gives E[h(t, W_t)^n] exactly for even n when known.
    """

    name: str
    fn: Callable
    even_moment: Optional[Callable] = None

    def __call__(self, t, w):
        return self.fn(t, w)


def constant(c):
    c = float(c)
    return Integrand(
        f"constant({c!r})",
        lambda t, w: np.full(np.broadcast(t, w).shape, c),
        lambda t, n: np.full(np.shape(t), c**n, dtype=float),
    )


def identity():
    return Integrand("identity", lambda t, w: np.asarray(w, dtype=float) + 0 * t, _identity_moment)


def sine():
    return Integrand("sin", lambda t, w: np.sin(w) + 0 * t, _sine_moment)


def _double_factorial(k):
    return math.prod(range(k, 0, -2)) if k > 0 else 1


def _identity_moment(t, n):
    # E[W_t^n] = (n-1)!! t^(n/2)
    return _double_factorial(n - 1) * np.asarray(t, dtype=float) ** (n / 2)


def _sine_moment(t, n):
    # sin^n x = 4^-q [C(n,q) + 2 sum_k (-1)^k C(n,q-k) cos(2kx)], n = 2q, and
    # E[cos(2k W_t)] = exp(-2 k^2 t).
    q = n // 2
    t = np.asarray(t, dtype=float)
    total = math.comb(n, q) * np.ones_like(t)
    for k in range(1, q + 1):
        total = total + 2 * (-1) ** k * math.comb(n, q - k) * np.exp(-2.0 * k * k * t)
    return total / 4.0**q


INTEGRANDS = {"constant": constant, "identity": identity, "sin": sine}


@dataclass(frozen=True)
class DriverSpec:
    kind: str = "wiener"
    integrand: Optional[Integrand] = None
    moment_order: int = 6

    def __post_init__(self):
        if self.kind not in ("wiener", "integrand"):
            raise DomainError(f"unknown driver kind {self.kind!r}")
        if self.kind == "integrand" and self.integrand is None:
            raise DomainError("integrand driver requires an Integrand")
        if self.moment_order < 2 or self.moment_order % 2:
            raise DomainError("moment_order must be an even integer >= 2")

    @property
    def h(self):
        return constant(1.0) if self.kind == "wiener" else self.integrand


@dataclass
class GammaBound:
    """Gamma(t) = E[h(t, W_t)^(2m)]^(1/(2m)) for a driver; callable in t."""

    driver: DriverSpec
    m: int
    n_samples: int = 0
    seed: int = 0
    _z: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def exact(self):
        return self.driver.h.even_moment is not None

    def moment(self, t):
        t = np.asarray(t, dtype=float)
        n = 2 * self.m
        h = self.driver.h
        if self.exact:
            return np.asarray(h.even_moment(t, n), dtype=float)
        vals = h(t[..., None], np.sqrt(t)[..., None] * self._z) ** n
        return vals.mean(axis=-1)

    def stderr(self, t):
        """Standard error of the MC moment estimate (zero when exact)."""
        t = np.asarray(t, dtype=float)
        if self.exact:
            return np.zeros_like(t)
        vals = self.driver.h(t[..., None], np.sqrt(t)[..., None] * self._z) ** (2 * self.m)
        return vals.std(axis=-1, ddof=1) / math.sqrt(vals.shape[-1])

    def __call__(self, t):
        return self.moment(t) ** (1.0 / (2 * self.m))

    def __repr__(self):
        return f"GammaBound({self.driver.h.name},m={self.m},n={self.n_samples},seed={self.seed})"


def gamma_bound(driver: DriverSpec, m: int, n_samples=200_000, seed=0, probe_times=None):
    """Return the Condition (A) bound Gamma(t) = (E[h^{2m}(t)])^{1/(2m)}.

    Closed-form integrands use exact Gaussian moment identities. Others are
    estimated by Monte Carlo over W_t ~ N(0, t); the estimate is checked for
    finiteness and stability between ``n_samples/4`` and ``n_samples`` draws.
    """
    if m < 3 or m % 2 == 0:
        raise DomainError("m must be an odd integer >= 3")
    if driver.moment_order < 2 * m:
        raise DomainError(f"driver asserts moments up to {driver.moment_order} only, need {2 * m}")
    if driver.h.even_moment is not None:
        return GammaBound(driver, m)
    gen = np.random.Generator(np.random.Philox(key=seed))
    z = gen.standard_normal(n_samples)
    bound = GammaBound(driver, m, n_samples, seed, z)
    probe = np.linspace(0.1, 1.0, 10) if probe_times is None else np.asarray(probe_times, float)
    small = GammaBound(driver, m, n_samples // 4, seed, z[: n_samples // 4])
    with np.errstate(over="ignore", invalid="ignore"):
        full_m, full_se = bound.moment(probe), bound.stderr(probe)
        part_m, part_se = small.moment(probe), small.stderr(probe)
    if not (np.all(np.isfinite(full_m)) and np.all(np.isfinite(full_se))):
        raise InfiniteMomentError(f"E[h^{2 * m}] is not finite for {driver.h.name}")
    gap = np.abs(full_m - part_m)
    if np.any(gap > 5.0 * np.hypot(full_se, part_se) + 1e-12 * np.abs(full_m)):
        raise InfiniteMomentError(
            f"E[h^{2 * m}] estimate for {driver.h.name} drifts with sample size (heavy tail)"
        )
    # sample standard errors that are a large fraction of the mean indicate divergence
    if np.any(full_se > 0.25 * np.abs(full_m)):
        raise InfiniteMomentError(f"E[h^{2 * m}] estimate for {driver.h.name} is dominated by outliers")
    return bound
