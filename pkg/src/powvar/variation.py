"""Regularised path functionals: odd/strong/weighted variations, symmetric integrals.

All functionals are left-endpoint Riemann sums of (1/eps) int_0^T (...) ds on
the ensemble grid, with s running over grid points 0 <= s_i <= T - step.
Paths may be 1-D (one path) or 2-D (paths x grid points).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError
from .simulate import PathEnsemble, TimeGrid


def _window(path, grid: TimeGrid, eps, upto=None):
    path = np.asarray(path, dtype=float)
    k = grid.lag(eps)
    n = grid.n_T if upto is None else grid.lag(upto)
    if n + k > path.shape[-1]:
        raise AlignmentError(f"path does not extend to t + eps for eps={eps!r}")
    return path[..., :n], path[..., k:n + k], grid.step / eps


def _riemann(terms, factor):
    return np.sum(terms, axis=-1) * factor


def _signed_power(d, m):
    # numpy's power is not exactly odd in its base; copysign makes it so
    return np.copysign(np.abs(d) ** m, d)


def odd_variation(path, grid: TimeGrid, m, eps):
    """[X,m]_eps(T) with the signed odd power."""
    left, right, factor = _window(path, grid, eps)
    return _riemann(_signed_power(right - left, m), factor)


def strong_variation(path, grid: TimeGrid, m, eps):
    left, right, factor = _window(path, grid, eps)
    return _riemann(np.abs(right - left) ** m, factor)


def weighted_variation(path, grid: TimeGrid, m, eps, g):
    """(1/eps) int (X(s+eps) - X(s))^m g((X(s+eps) + X(s))/2) ds."""
    left, right, factor = _window(path, grid, eps)
    return _riemann(_signed_power(right - left, m) * g(0.5 * (right + left)), factor)


# --- error-free transformations --------------------------------------------


def _two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


_SPLITTER = 2.0**27 + 1.0


def _split(a):
    c = _SPLITTER * a
    hi = c - (c - a)
    return hi, a - hi


def _two_product(a, b):
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


def symmetric_integral(path, grid: TimeGrid, fprime, eps, t=None):
    """(1/eps) int_0^t (X(u+eps) - X(u)) (f'(X(u+eps)) + f'(X(u)))/2 du.

    Each summand is expanded exactly into floating-point pieces and the
    pieces are summed with math.fsum, so the discrete sum is the correctly
    rounded value of the exact one (telescoping sums stay exact).
    """
    left, right, factor = _window(path, grid, eps, upto=t)
    d_hi, d_lo = _two_sum(right, -left)
    s_hi, s_lo = _two_sum(np.asarray(fprime(right), float), np.asarray(fprime(left), float))
    s_hi, s_lo = 0.5 * s_hi, 0.5 * s_lo
    pieces = []
    for a in (d_hi, d_lo):
        for b in (s_hi, s_lo):
            pieces.extend(_two_product(a, b))
    stacked = np.concatenate(pieces, axis=-1)
    if stacked.ndim == 1:
        return math.fsum(stacked) * factor
    return np.array([math.fsum(row) for row in stacked]) * factor


def ito_residual(path, grid: TimeGrid, f, fprime, eps, t=None):
    """f(X(t)) - f(X(0)) - symmetric_integral(path, f', eps) (t defaults to T)."""
    path = np.asarray(path, dtype=float)
    n = grid.n_T if t is None else grid.lag(t)
    end = np.asarray(f(path[..., n]), float) - np.asarray(f(path[..., 0]), float)
    return end - symmetric_integral(path, grid, fprime, eps, t=t)


# --- ensemble statistics ----------------------------------------------------


@dataclass
class VariationResult:
    m: int
    eps: float
    per_path: np.ndarray
    mc_mean: float
    mc_second_moment: float
    stderr_of_second_moment: float

    @property
    def n_paths(self):
        return self.per_path.size

    CSV_HEADER = ("m", "eps", "n_paths", "mc_mean", "mc_second_moment", "se_second_moment")

    def csv_row(self):
        return (self.m, repr(self.eps), self.n_paths, repr(self.mc_mean),
                repr(self.mc_second_moment), repr(self.stderr_of_second_moment))


def jackknife_mean_se(x):
    """Leave-one-out jackknife standard error of the sample mean of x."""
    x = np.asarray(x, float)
    n = x.size
    if n < 2:
        return float("nan")
    loo = (np.sum(x) - x) / (n - 1)
    return float(np.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)))


def ensemble_variation(ensemble: PathEnsemble, m, eps_ladder):
    """Per-eps odd variations of every path, with MC mean and second moment."""
    out = []
    for eps in eps_ladder:
        v = odd_variation(ensemble.values, ensemble.grid, m, eps)
        sq = v * v
        out.append(VariationResult(m, float(eps), v, float(np.mean(v)), float(np.mean(sq)),
                                   jackknife_mean_se(sq)))
    return out


def noncauchy_probe(ensemble: PathEnsemble, m, eps, eps_other):
    """MC estimate of E[([X,m]_eps - [X,m]_eps')^2] on coupled paths, with its SE."""
    a = odd_variation(ensemble.values, ensemble.grid, m, eps)
    b = odd_variation(ensemble.values, ensemble.grid, m, eps_other)
    sq = (a - b) ** 2
    return float(np.mean(sq)), jackknife_mean_se(sq)
