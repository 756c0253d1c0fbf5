"""Quadrature rules for integrands with algebraic endpoint singularities."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

from .errors import QuadratureError


@dataclass(frozen=True)
class QuadratureConfig:
    """Node counts and tolerances.

    ``nodes`` is the Gauss-Legendre order per panel, ``jacobi_nodes`` the
    order of the Gauss-Jacobi rule on the innermost panel, ``levels`` the
    number of geometrically graded panels towards each singular endpoint.
    Refinement doubles ``nodes`` until the relative change is below ``rtol``;
    after ``max_doublings`` a change above ``fail_rtol`` is an error.
    """

    nodes: int = 24
    jacobi_nodes: int = 12
    levels: int = 10
    grading: float = 0.2
    rtol: float = 1e-7
    fail_rtol: float = 1e-5
    max_doublings: int = 3
    # span of the log-substituted panel below the kernel break, in e-folds
    log_span: float = 30.0

    def doubled(self):
        return QuadratureConfig(
            2 * self.nodes, 2 * self.jacobi_nodes, self.levels + 2, self.grading,
            self.rtol, self.fail_rtol, self.max_doublings, self.log_span,
        )


@lru_cache(maxsize=64)
def gauss_legendre(n):
    """Nodes and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=64)
def gauss_jacobi_left(n, alpha):
    """Rule for int_0^1 x**alpha f(x) dx (weight folded out)."""
    x, w = roots_jacobi(n, 0.0, alpha)
    return 0.5 * (x + 1.0), w / 2.0 ** (alpha + 1.0)


def graded_rule(a, b, cfg: QuadratureConfig, left=True, right=True):
    """Composite Gauss-Legendre on [a, b] graded geometrically towards singular ends.

    Returns (nodes, weights) as 1-D arrays.
    """
    if b <= a:
        return np.empty(0), np.empty(0)
    x, w = gauss_legendre(cfg.nodes)
    breaks = _graded_breaks(cfg.levels, cfg.grading, left, right)
    lo, hi = breaks[:-1], breaks[1:]
    u = lo[:, None] + (hi - lo)[:, None] * x[None, :]
    wt = (hi - lo)[:, None] * w[None, :]
    return a + (b - a) * u.ravel(), (b - a) * wt.ravel()


@lru_cache(maxsize=64)
def _graded_breaks(levels, sigma, left, right):
    inner = [0.25, 0.5, 0.75]
    pts = {0.0, 1.0, *inner}
    if left:
        pts.update(0.25 * sigma**k for k in range(1, levels + 1))
    if right:
        pts.update(1.0 - 0.25 * sigma**k for k in range(1, levels + 1))
    return np.array(sorted(pts))


def kernel_product_integral(fn, s, d, alpha, cfg: QuadratureConfig):
    """Vectorised int_0^s fn(w, s, d) dw for integrands ~ w**alpha as w -> 0.

    ``fn(w, s, d)`` is evaluated on broadcast arrays of shape (P, n). The
    second singularity of the kernel product sits at w = -d (d >= 0), so the
    range is split at min(d, s): the outer piece [min(d, s), s] and the piece
    [w0, min(d, s)] use Gauss-Legendre after the substitution w = exp(y),
    and the innermost piece [0, w0] uses Gauss-Jacobi with weight w**alpha.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    d = np.atleast_1d(np.asarray(d, dtype=float))
    s, d = np.broadcast_arrays(s, d)
    out = np.zeros(s.shape)
    # ranges below 1e-300 contribute ~ s**(alpha + 1) and would underflow the nodes
    live = s > 1e-300
    if not np.any(live):
        return out
    ss, dd = s[live][:, None], d[live][:, None]
    brk = np.where(dd > 0, np.minimum(dd, ss), ss)
    w0 = brk * np.exp(-cfg.log_span)
    # near-underflow breaks: Gauss-Jacobi on the whole of [0, brk]
    w0 = np.where(w0 < 1e-280, brk, w0)

    xg, wg = gauss_legendre(cfg.nodes)
    # piece [w0, brk] in log coordinates
    y0, y1 = np.log(w0), np.log(brk)
    y = y0 + (y1 - y0) * xg[None, :]
    w = np.exp(y)
    total = ((y1 - y0) * wg[None, :] * w * fn(w, ss, dd)).sum(axis=1)
    # piece [brk, s]
    outer = (dd > 0) & (dd < ss)
    if np.any(outer):
        yb = np.log(np.where(outer, ss, brk))
        y = y1 + (yb - y1) * xg[None, :]
        w = np.exp(y)
        part = ((yb - y1) * wg[None, :] * w * fn(w, ss, dd)).sum(axis=1)
        total = total + np.where(outer[:, 0], part, 0.0)
    # piece [0, w0] with the singular power folded into the weight
    xj, wj = gauss_jacobi_left(cfg.jacobi_nodes, float(alpha))
    w = w0 * xj[None, :]
    smooth = fn(w, ss, dd) / w**alpha
    total = total + (w0 ** (alpha + 1.0) * wj[None, :] * smooth).sum(axis=1)
    out[live] = total
    return out


def refine_until_stable(evaluate, cfg: QuadratureConfig, what="integral"):
    """Call ``evaluate(cfg)`` with doubling node counts until the values settle.

    Returns (values, cfg_used). Raises QuadratureError when the relative change
    still exceeds ``cfg.fail_rtol`` after ``cfg.max_doublings`` doublings.
    """
    prev = np.asarray(evaluate(cfg), dtype=float)
    cur_cfg = cfg
    change = np.inf
    for _ in range(cfg.max_doublings):
        nxt_cfg = cur_cfg.doubled()
        nxt = np.asarray(evaluate(nxt_cfg), dtype=float)
        scale = np.maximum(np.abs(nxt), 1e-6 * np.max(np.abs(nxt), initial=1e-300))
        change = float(np.max(np.abs(nxt - prev) / scale)) if nxt.size else 0.0
        prev, cur_cfg = nxt, nxt_cfg
        if change < cfg.rtol:
            return prev, cur_cfg
    if change > cfg.fail_rtol:
        raise QuadratureError(
            f"{what} did not converge: relative change {change:.3g} after refinement",
            last_values=prev,
        )
    return prev, cur_cfg
