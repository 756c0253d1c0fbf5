"""Second-order structure of the modelled processes and structural condition checks.

A :class:`CovarianceModel` evaluates Q(s, t), the canonical metric
delta^2(s, t) = Q(s,s) + Q(t,t) - 2 Q(s,t), the univariate metric delta^2(r)
and the planar increment Theta^eps(s, t). Closed forms are used for the
standard fBm; kernel families go through singularity-aware quadrature.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError
from .kernels import KernelSpec
from .quadrature import QuadratureConfig, kernel_product_integral, refine_until_stable


def _two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


def compensated_sum(*terms):
    """Elementwise sum of arrays with Neumaier/TwoSum error compensation."""
    total = np.zeros(np.broadcast(*terms).shape)
    comp = np.zeros_like(total)
    for t in terms:
        total, err = _two_sum(total, t)
        comp = comp + err
    return total + comp


class CovarianceModel:
    """Evaluators for Q, delta^2 (bivariate and univariate) and Theta^eps."""

    def __init__(self, spec: KernelSpec, quadrature: QuadratureConfig | None = None,
                 sup_probe: int = 33):
        self.spec = spec
        self.quadrature = quadrature or QuadratureConfig()
        self.sup_probe = sup_probe
        self.stationary_increments = spec.stationary_increments

    # --- primitive evaluators -------------------------------------------------

    def Q(self, s, t):
        s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
        if self.spec.family == "fbm":
            h2 = 2 * self.spec.hurst
            return 0.5 * (np.abs(s) ** h2 + np.abs(t) ** h2 - np.abs(t - s) ** h2)
        lo, hi = np.minimum(s, t), np.maximum(s, t)
        return self._kernel_cov(lo, hi - lo).reshape(s.shape)

    def _kernel_cov(self, lo, d, cfg=None):
        """int_0^lo G(lo + d, u) G(lo, u) du for a causal kernel family."""
        cfg = cfg or self.quadrature
        spec = self.spec
        lo, d = np.asarray(lo, float).ravel(), np.asarray(d, float).ravel()
        # separations this small underflow the quadrature nodes; treat as diagonal
        d = np.where(d < 1e-300, 0.0, d)
        out = np.zeros(lo.shape)
        a = spec.leading_exponent
        if spec.family == "scaled_martingale":
            gam = spec.gamma
            k = spec.convolution

            def f(w, s, dd):
                u = np.maximum(s - w, 0.0)
                return np.asarray(gam(u), float) ** 2 * k(w) * k(dd + w)

            diag = d == 0
            if np.any(diag):
                out[diag] = kernel_product_integral(f, lo[diag], 0.0, 2 * a, cfg)
            off = ~diag
            if np.any(off):
                out[off] = kernel_product_integral(f, lo[off], d[off], a, cfg)
            return out
        diag = d == 0
        out[diag] = spec.square_integral(lo[diag])
        off = ~diag
        if np.any(off):
            k = spec.convolution
            out[off] = kernel_product_integral(lambda w, s, dd: k(w) * k(dd + w),
                                               lo[off], d[off], a, cfg)
        return out

    def delta2(self, s, t):
        s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
        if self.spec.family == "fbm":
            return np.abs(t - s) ** (2 * self.spec.hurst)
        return compensated_sum(self.Q(s, s), self.Q(t, t), -2.0 * self.Q(s, t))

    def delta2_univ(self, r):
        """Univariate metric: exact for stationary models, else sup_s delta^2(s, s+r)."""
        r = np.asarray(r, float)
        if self.stationary_increments:
            return np.abs(r) ** (2 * self.spec.hurst)
        T = self.spec.T
        frac = np.linspace(0.0, 1.0, self.sup_probe)
        rr = np.abs(r)[..., None]
        s = np.maximum(T - rr, 0.0) * frac
        return self.delta2(s, s + rr).max(axis=-1)

    def var_increment(self, t, eps):
        t = np.asarray(t, float)
        if self.stationary_increments:
            return np.full(t.shape, abs(eps) ** (2 * self.spec.hurst))
        return self.delta2(t, t + eps)

    def theta(self, s, t, eps):
        """Theta^eps(s, t) = E[(X(t+eps) - X(t)) (X(s+eps) - X(s))]."""
        s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
        if self.stationary_increments:
            u = np.abs(t - s)
            d2 = self.delta2_univ
            return 0.5 * compensated_sum(d2(u + eps), d2(np.abs(u - eps)), -2.0 * d2(u))
        return 0.5 * compensated_sum(
            -self.delta2(t + eps, s + eps), self.delta2(t, s + eps),
            self.delta2(s, t + eps), -self.delta2(s, t),
        )

    def theta_direct(self, s, t, eps):
        """Theta^eps through the covariance expansion (independent of delta^2)."""
        Q = self.Q
        return compensated_sum(Q(t + eps, s + eps), -Q(t, s + eps), -Q(t + eps, s), Q(t, s))

    def matrix(self, times):
        """Covariance matrix Q(t_i, t_j) on a 1-D grid (symmetric by construction)."""
        times = np.asarray(times, float)
        n = times.size
        iu = np.triu_indices(n)
        out = np.empty((n, n))
        chunk = 200_000
        vals = np.empty(iu[0].size)
        for start in range(0, vals.size, chunk):
            sl = slice(start, start + chunk)
            vals[sl] = self.Q(times[iu[0][sl]], times[iu[1][sl]])
        out[iu] = vals
        out[(iu[1], iu[0])] = vals
        return out


def build_model(spec: KernelSpec, quadrature: QuadratureConfig | None = None) -> CovarianceModel:
    """Build the covariance model of ``spec``.

    For kernel families the quadrature order is fixed here: probe covariances
    are refined by doubling the node counts until their relative change drops
    below ``quadrature.rtol``; the converged order is used for all later
    evaluations. Non-convergence raises QuadratureError.
    """
    cfg = quadrature or QuadratureConfig()
    model = CovarianceModel(spec, cfg)
    if spec.family == "fbm":
        return model
    T = spec.T
    grid = T * np.array([0.25, 0.5, 1.0])
    lo, hi = np.meshgrid(grid, np.concatenate([grid, T * np.array([0.2501, 0.5001, 1e-3])]))
    lo, hi = np.minimum(lo, hi).ravel(), np.maximum(lo, hi).ravel()
    _, used = refine_until_stable(lambda c: model._kernel_cov(lo, hi - lo, c), cfg,
                                  what=f"covariance of {spec.describe()}")
    model.quadrature = used
    return model


# --------------------------------------------------------------------------
# structural conditions
# --------------------------------------------------------------------------


@dataclass
class ConditionReport:
    condition: str
    worst_margin: float
    holds: bool
    probe_count: int
    params: dict = field(default_factory=dict)
    worst_point: tuple | None = None

    def to_json(self):
        return json.dumps({
            "condition": self.condition,
            "params": self.params,
            "worst_margin": self.worst_margin,
            "holds": self.holds,
            "probe_count": self.probe_count,
        })

    def as_dict(self):
        d = asdict(self)
        d.pop("worst_point")
        return d


def _report(condition, margin, points, params):
    margin = np.asarray(margin, float).ravel()
    i = int(np.argmin(margin))
    worst = float(margin[i])
    pt = tuple(float(p.ravel()[i]) for p in points) if points else None
    return ConditionReport(condition, worst, bool(worst > 0), margin.size, params, pt)


def check_conditions(model: CovarianceModel, a, b, c, cprime, probe_n=40, u_min=1e-3):
    """Evaluate conditions (i)-(iii) under which the symmetric integral obeys the Ito formula.

    (i)   c delta^2(u) <= Q_u
    (ii)  c' delta^2(u) delta^2(v-u) <= Q_u Q_v - Q(u,v)^2
    (iii) (delta(a u) - delta(u)) / ((a-1) u) < b delta(u) / u

    Probes are log-spaced with ``u_min <= u < v <= T``; for (iii) ``a u <= T``
    unless the univariate metric is closed-form. For the non-strict
    inequalities (i) and (ii) the margin includes a round-off allowance of
    1e-10 times the largest magnitude involved, so equality passes.
    """
    if not a > 1:
        raise DomainError("a must exceed 1")
    if not 0 < b < 0.5:
        raise DomainError("b must lie in (0, 1/2)")
    if not c > 0.25:
        raise DomainError("c must exceed 1/4")
    if not cprime > 0:
        raise DomainError("c' must be positive")
    T = model.spec.T
    params = {"a": a, "b": b, "c": c, "cprime": cprime}
    u = T * np.geomspace(u_min, 1.0, probe_n)
    d2u = model.delta2_univ(u)
    Qu = model.Q(u, u)
    tol = 1e-10 * max(np.max(np.abs(Qu)), np.max(np.abs(d2u)))
    rep_i = _report("i", Qu - c * d2u + tol, (u,), params)

    # (u, v) pairs with v - u log-spaced so near-diagonal pairs are resolved
    uu, frac = np.meshgrid(u[:-1], np.geomspace(1e-3, 1.0, probe_n), indexing="ij")
    vv = uu + frac * (T - uu)
    keep = vv > uu
    uu, vv = uu[keep], vv[keep]
    lhs = model.Q(uu, uu) * model.Q(vv, vv) - model.Q(uu, vv) ** 2
    rhs = cprime * model.delta2_univ(uu) * model.delta2_univ(vv - uu)
    tol2 = 1e-10 * max(np.max(np.abs(lhs)), np.max(np.abs(rhs)))
    rep_ii = _report("ii", lhs - rhs + tol2, (uu, vv), params)

    u3 = u if model.stationary_increments else u[a * u <= T]
    du = np.sqrt(model.delta2_univ(u3))
    dau = np.sqrt(model.delta2_univ(a * u3))
    rep_iii = _report("iii", b * du / u3 - (dau - du) / ((a - 1) * u3), (u3,), params)
    return [rep_i, rep_ii, rep_iii]


def check_concavity(delta2_univ: Callable, probe_n=200, T=1.0, r_min=1e-6):
    """Check that a univariate metric is increasing and concave on (0, T].

    Uses first divided differences (must be > 0) and slope differences on a
    log-spaced probe grid (must be <= a tolerance of 1e-12 x max slope). The
    reported margin is the smaller of the two normalised margins.
    """
    r = T * np.geomspace(r_min, 1.0, probe_n)
    f = np.asarray(delta2_univ(r), float)
    slopes = np.diff(f) / np.diff(r)
    scale = np.max(np.abs(slopes))
    inc_margin = np.min(slopes) / scale
    curv = np.diff(slopes) / scale
    conc_margin = np.min(1e-12 - curv)
    margin = min(inc_margin, conc_margin)
    return ConditionReport("concavity", float(margin), bool(margin > 0), probe_n,
                           {"T": T, "r_min": r_min})


def mu_offdiagonal_mass(model: CovarianceModel, eps, grid_n=64, rtol=0.02, max_grid=2048):
    """Total variation |mu|(OD_eps) of the mixed derivative of delta^2.

    OD_eps = {0 <= s <= t - eps <= T}. On a uniform grid the mass of a cell
    is |rectangular increment of delta^2| (exact when mu keeps its sign on the
    cell). Cells inside OD_eps count fully; cells that the line t - s = eps
    cuts along their diagonal count one half. The grid starts at ``grid_n``
    cells per side (raised until the cell size is at most eps/2) and is
    doubled until successive values agree within ``rtol``.

    Returns (mass, info); ``info["converged"]`` is False (and a warning is
    issued) when the refinement did not stabilise, with the last two values in
    ``info["values"]``.
    """
    if eps <= 0:
        raise DomainError("eps must be positive")
    if grid_n < 64:
        raise DomainError("grid_n must be at least 64")
    T = model.spec.T
    n = int(grid_n)
    while T / n > eps / 2:
        n *= 2
    values, sizes = [], []
    converged = False
    while True:
        values.append(_staircase_mass(model, eps, T, n))
        sizes.append(n)
        if len(values) >= 2 and abs(values[-1] - values[-2]) <= rtol * abs(values[-1]):
            converged = True
            break
        if 2 * n > max_grid:
            break
        n *= 2
    if not converged:
        warnings.warn(f"|mu|(OD) did not stabilise for eps={eps}: {values[-2:]}", RuntimeWarning)
    return float(values[-1]), {"values": values, "grid_n": sizes, "converged": converged}


def _staircase_mass(model, eps, T, n):
    h = T / n
    t = np.linspace(0.0, T, n + 1)
    if model.stationary_increments:
        d2 = model.delta2_univ(np.abs(t[None, :] - t[:, None]))
        inc = d2[1:, 1:] - d2[:-1, 1:] - d2[1:, :-1] + d2[:-1, :-1]
    else:
        # the diagonal terms of delta^2 have no mixed increment
        q = model.matrix(t)
        inc = -2.0 * (q[1:, 1:] - q[:-1, 1:] - q[1:, :-1] + q[:-1, :-1])
    # cell (i, j) = [s_i, s_i + h] x [t_j, t_j + h]; its t - s range is (k-1, k+1) h
    k = np.arange(n)[None, :] - np.arange(n)[:, None]
    ratio = eps / h
    kb = int(round(ratio))
    if abs(ratio - kb) < 1e-9:
        weight = np.where(k >= kb + 1, 1.0, np.where(k == kb, 0.5, 0.0))
    else:
        weight = (k - 1 >= ratio - 1e-12).astype(float)
    return float((np.abs(inc) * weight).sum())
