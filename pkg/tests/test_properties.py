import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from powvar import KernelSpec, TimeGrid, build_model, odd_variation, strong_variation, weighted_variation

GRID = TimeGrid.from_step(1.0, 2**-3, 2**-7)
LAGS = st.sampled_from([2**-7, 2**-5, 2**-3])
M = st.sampled_from([1, 3, 5, 7])
PATHS = st.integers(0, 2**32 - 1).map(
    lambda s: np.concatenate([[0.0], np.random.default_rng(s).standard_normal(GRID.n - 1).cumsum() * 0.1]))


@settings(max_examples=60, deadline=None)
@given(PATHS, M, LAGS)
def test_odd_symmetry(path, m, eps):
    assert odd_variation(-path, GRID, m, eps) == -odd_variation(path, GRID, m, eps)


@settings(max_examples=60, deadline=None)
@given(PATHS, M, LAGS, st.floats(0.1, 10.0))
def test_homogeneity(path, m, eps, lam):
    a = odd_variation(lam * path, GRID, m, eps)
    b = lam**m * odd_variation(path, GRID, m, eps)
    # relative 1e-12 against the sum of |terms|, the natural scale of the roundoff
    scale = lam**m * strong_variation(path, GRID, m, eps)
    assert abs(a - b) <= 1e-12 * scale


@settings(max_examples=40, deadline=None)
@given(PATHS, M, LAGS)
def test_unit_weight_is_bitwise_odd_variation(path, m, eps):
    assert weighted_variation(path, GRID, m, eps, np.ones_like) == odd_variation(path, GRID, m, eps)


MODELS = {H: build_model(KernelSpec.fbm(H)) for H in (1 / 6, 0.3, 0.45)}
RL = build_model(KernelSpec.rl_fbm(0.25))


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(sorted(MODELS)), st.floats(0.0, 0.9), st.floats(0.0, 0.9), st.floats(1e-3, 0.1))
def test_theta_bilinear_and_cauchy_schwarz(H, s, t, eps):
    m = MODELS[H]
    th = float(m.theta(s, t, eps))
    direct = float(m.theta_direct(s, t, eps))
    assert abs(th - direct) <= 1e-9 * max(eps ** (2 * H), abs(direct))
    assert abs(th) <= eps ** (2 * H) + 1e-10


@settings(max_examples=60, deadline=None)
@given(st.floats(0.0, 0.8), st.floats(0.0, 0.8), st.floats(1e-3, 0.1))
def test_rl_theta_bilinear_and_cauchy_schwarz(s, t, eps):
    th = float(RL.theta(s, t, eps))
    direct = float(RL.theta_direct(s, t, eps))
    assert abs(th - direct) <= 1e-9 * max(abs(direct), 1e-300) + 1e-12
    bound = np.sqrt(RL.var_increment(np.array(s), eps) * RL.var_increment(np.array(t), eps))
    assert abs(th) <= bound + 1e-10


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(sorted(MODELS)), st.floats(0.0, 0.5), st.floats(1e-3, 0.1), st.floats(1.0001, 5.0))
def test_offdiagonal_theta_negative(H, s, eps, k):
    assert float(MODELS[H].theta(s, s + k * eps, eps)) <= 1e-12
