import math

import numpy as np
import pytest

from powvar import (AlignmentError, KernelSpec, PathEnsemble, TimeGrid, build_model, ensemble_variation,
                    ito_residual, noncauchy_probe, odd_variation, simulate_gaussian, strong_variation,
                    symmetric_integral, weighted_variation)
from powvar.variation import jackknife_mean_se

GRID = TimeGrid.from_step(1.0, 0.25, 2**-10)


def test_line_path():
    x = GRID.times
    eps = 2**-4
    want = (GRID.n_T * GRID.step) * eps**2
    assert math.isclose(odd_variation(x, GRID, 3, eps), want, rel_tol=1e-12)
    assert math.isclose(strong_variation(x, GRID, 3, eps), want, rel_tol=1e-12)
    assert abs(want - eps**2) <= eps**3


def test_zero_path():
    z = np.zeros(GRID.n)
    assert odd_variation(z, GRID, 3, 2**-4) == 0
    assert strong_variation(z, GRID, 5, 2**-4) == 0
    assert weighted_variation(np.sin(GRID.times), GRID, 3, 2**-4, lambda x: 0 * x) == 0


def test_alignment_error():
    with pytest.raises(AlignmentError):
        odd_variation(GRID.times, GRID, 3, 0.01)
    short = TimeGrid.from_step(1.0, 2**-4, 2**-10)
    with pytest.raises(AlignmentError):
        odd_variation(short.times, short, 3, 2**-3)


def test_telescoping_cases():
    rng = np.random.default_rng(0)
    paths = np.cumsum(rng.standard_normal((20, GRID.n)), axis=1) * 0.03
    paths[:, 0] = 0.0
    for f, fp in [(lambda x: x, np.ones_like), (lambda x: x * x, lambda x: 2 * x)]:
        assert np.all(ito_residual(paths, GRID, f, fp, GRID.step) == 0.0)
        assert np.all(ito_residual(paths, GRID, f, fp, GRID.step, t=0.5) == 0.0)
    s = symmetric_integral(paths, GRID, np.ones_like, GRID.step)
    assert np.all(s == paths[:, GRID.n_T])


def test_jackknife_matches_plain_se_for_means():
    x = np.random.default_rng(1).standard_normal(500)
    assert math.isclose(jackknife_mean_se(x), x.std(ddof=1) / math.sqrt(x.size), rel_tol=1e-10)


def test_zero_ensemble():
    ens = PathEnsemble(GRID, np.zeros((5, GRID.n)), 0, "zero")
    for r in ensemble_variation(ens, 3, [2**-3, 2**-5]):
        assert r.mc_mean == 0 and r.mc_second_moment == 0 and r.stderr_of_second_moment == 0
        assert r.per_path.size == ens.n_paths
    assert noncauchy_probe(ens, 3, 2**-3, 2**-5) == (0.0, 0.0)


def test_noncauchy_same_eps_is_zero():
    paths = np.random.default_rng(2).standard_normal((4, GRID.n)).cumsum(axis=1)
    ens = PathEnsemble(GRID, paths, 0, "rw")
    assert noncauchy_probe(ens, 3, 2**-4, 2**-4)[0] == 0.0


def test_csv_row_layout():
    ens = PathEnsemble(GRID, np.random.default_rng(3).standard_normal((4, GRID.n)), 0, "x")
    r = ensemble_variation(ens, 3, [2**-4])[0]
    assert len(r.csv_row()) == len(r.CSV_HEADER)


def test_strong_variation_mean_oracle(fbm_ensembles):
    # E|N(0, eps^{2H})|^3 = eps^{3H} 2 sqrt(2/pi), summed over the grid
    H = 0.25
    ens = fbm_ensembles(H)
    abs3 = 2 * math.sqrt(2 / math.pi)
    means = []
    for eps in (2**-4, 2**-6, 2**-8):
        v = strong_variation(ens.values, ens.grid, 3, eps)
        want = ens.grid.n_T * ens.grid.step / eps * eps ** (3 * H) * abs3
        assert abs(v.mean() - want) < 4 * v.std() / math.sqrt(v.size)
        means.append(v.mean())
    assert means[0] < means[1] < means[2]


def test_weighted_variation_decreasing(fbm_ensembles):
    ens = fbm_ensembles(0.25)
    sec = [np.mean(weighted_variation(ens.values, ens.grid, 3, e, np.cos) ** 2) for e in (2**-4, 2**-6, 2**-8)]
    assert sec[0] > sec[1] > sec[2]


def test_ensemble_variation_fbm_ladder(fbm_ensembles):
    ens = fbm_ensembles(0.25)
    res = ensemble_variation(ens, 3, [2.0**-k for k in range(4, 10)])
    sm = [r.mc_second_moment for r in res]
    assert all(b < a for a, b in zip(sm, sm[1:]))


def test_ensemble_variation_critical_boundedness(fbm_ensembles):
    ens = fbm_ensembles(1 / 6)
    res = ensemble_variation(ens, 3, [2**-4, 2**-9])
    assert 0.5 <= res[1].mc_second_moment / res[0].mc_second_moment <= 2


def test_noncauchy_supercritical_below_both_moments(fbm_ensembles):
    ens = fbm_ensembles(0.3)
    probe, _ = noncauchy_probe(ens, 3, 2**-7, 2**-9)
    a, b = (r.mc_second_moment for r in ensemble_variation(ens, 3, [2**-7, 2**-9]))
    assert probe <= a and probe <= b, f"probe {probe:.4f}, second moments {a:.4f}, {b:.4f}"


def test_noncauchy_supercritical_vanishes(fbm_ensembles):
    ens = fbm_ensembles(0.3)
    ladder = [noncauchy_probe(ens, 3, 2.0**-k, 2.0**-(k + 2))[0] for k in (4, 5, 6, 7)]
    assert all(y < x for x, y in zip(ladder, ladder[1:]))
