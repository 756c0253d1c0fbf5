import math
from fractions import Fraction

import numpy as np
import pytest

from powvar import (DomainError, KernelSpec, build_model, chaos_variances_fbm, exact_msq_discrete,
                    exact_msq_variation, hermite_expand, isserlis_joint_moment, rate_fit)
from powvar.moments import critical_band_constant, hermite_poly, pairing_counts


def test_hermite_examples():
    assert hermite_expand(1).hermite_coeffs == {1: 1}
    assert hermite_expand(3).hermite_coeffs == {3: 1, 1: 3}
    assert hermite_expand(5).hermite_coeffs == {5: 1, 3: 10, 1: 15}


@pytest.mark.parametrize("m", [1, 3, 5, 7, 9, 11])
def test_hermite_polynomial_identity(m):
    exp = hermite_expand(m)
    total = [Fraction(0)] * (m + 1)
    for n, a in exp.hermite_coeffs.items():
        for k, c in enumerate(hermite_poly(n)):
            total[k] += a * c
    assert total == [Fraction(0)] * m + [Fraction(1)]


def test_moment_coefficients_are_factorial_weighted():
    exp = hermite_expand(5)
    for j, cj in enumerate(exp.moment_coeffs):
        n = 5 - 2 * j
        assert cj == math.factorial(n) * exp.hermite_coeffs[n] ** 2


@pytest.mark.parametrize("m", [2, 4, 0, 17])
def test_hermite_rejects_bad_order(m):
    with pytest.raises(DomainError):
        hermite_expand(m)


def test_pairing_counts_total():
    for m in (1, 3, 5, 7):
        counts = pairing_counts(m)
        assert sum(counts.values()) == math.prod(range(1, 2 * m, 2))
    assert pairing_counts(3) == {1: 9, 3: 6}


def test_isserlis_examples():
    rho = Fraction(1, 3)
    assert isserlis_joint_moment(3, rho, 1, 1) == 6 * rho**3 + 9 * rho
    assert isserlis_joint_moment(3, 1, 1, 1) == 15
    for m in (1, 3, 5, 7):
        assert isserlis_joint_moment(m, 0, Fraction(2), Fraction(3)) == 0


def test_isserlis_monte_carlo():
    rng = np.random.default_rng(5)
    cov = np.array([[1.3, 0.6], [0.6, 0.8]])
    yz = rng.multivariate_normal([0, 0], cov, size=400_000)
    prod = (yz[:, 0] * yz[:, 1]) ** 3
    want = isserlis_joint_moment(3, 0.6, 1.3, 0.8)
    assert abs(prod.mean() - want) < 4 * prod.std() / math.sqrt(prod.size)


def test_isserlis_correlation_bound():
    with pytest.raises(DomainError):
        isserlis_joint_moment(3, Fraction(2), 1, 1)


def test_brownian_exact_second_moment():
    # Theta = (eps - r)_+ gives 12 T eps^2 - 3.6 eps^3 in closed form
    m = build_model(KernelSpec.fbm(0.5))
    for eps in (2**-4, 2**-7):
        got = exact_msq_variation(m, 3, eps).total
        assert math.isclose(got, 12 * eps**2 - 3.6 * eps**3, rel_tol=1e-7)


def test_breakdown_signs_and_rows():
    m = build_model(KernelSpec.fbm(0.3))
    res = exact_msq_variation(m, 3, 2**-6)
    assert all(t.diagonal > 0 for t in res.terms)
    assert all(t.off_diagonal <= 1e-15 for t in res.terms)
    assert all(t.total >= -1e-10 for t in res.terms)
    rows = res.rows()
    assert [r[2] for r in rows] == [0, 1] and [r[3] for r in rows] == [6, 9]
    assert math.isclose(sum(r[4] for r in rows), res.total, rel_tol=1e-14)


def test_critical_ladder_within_factor_two():
    m = build_model(KernelSpec.fbm(1 / 6))
    vals = [exact_msq_variation(m, 3, 2.0**-j).total for j in range(5, 11)]
    assert 0.5 <= min(vals) / max(vals) <= 2


def test_rl_two_dimensional_route_agrees_with_discrete_limit():
    m = build_model(KernelSpec.rl_fbm(0.3))
    eps = 2**-4
    cont = exact_msq_variation(m, 3, eps).total
    disc = exact_msq_discrete(m, 3, eps, 2**-9)
    assert math.isclose(cont, disc, rel_tol=0.05)


def test_1d_and_2d_routes_agree_for_fbm():
    m = build_model(KernelSpec.fbm(0.3))
    a = exact_msq_variation(m, 3, 2**-4, method="1d").total
    b = exact_msq_variation(m, 3, 2**-4, method="2d").total
    assert math.isclose(a, b, rel_tol=1e-5)


@pytest.mark.parametrize("H", [1 / 6, 0.25, 0.4])
def test_chaos_orthogonality(H):
    m = build_model(KernelSpec.fbm(H))
    eps = 2**-6
    v1, v3 = chaos_variances_fbm(H, eps)
    assert math.isclose(v1 + v3, exact_msq_variation(m, 3, eps).total, rel_tol=1e-4)


def test_third_chaos_band_constant():
    # the |t - s| < 2 eps band of varI3 tends to (3/2) T int_0^2 g^3 at H = 1/6
    H, T = 1 / 6, 1.0
    m = build_model(KernelSpec.fbm(H))
    eps = 2**-14
    r = np.linspace(0, 2 * eps, 200_001)
    th = m.theta(np.zeros_like(r), r, eps)
    band = 12 / eps**2 * np.trapezoid((T - r) * th**3, r)
    assert math.isclose(band, 1.5 * T * critical_band_constant(H), rel_tol=1e-3)


def test_rate_fit_exact_power():
    eps = [2.0**-k for k in range(3, 9)]
    f = rate_fit(eps, [e**2 for e in eps])
    assert math.isclose(f.slope, 2.0, rel_tol=1e-12) and math.isclose(f.r2, 1.0, rel_tol=1e-12)


def test_rate_fit_errors():
    with pytest.raises(DomainError):
        rate_fit([1, 2, 3], [1, 2, 3])
    with pytest.raises(DomainError):
        rate_fit([1, 2, 3, 4], [1, 0, 3, 4])
