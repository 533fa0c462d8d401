import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from elwe import noise
from elwe.errors import DomainError
from elwe.lwe import LweParams, keygen

floats = st.floats(-1e3, 1e3, allow_nan=False)


@settings(max_examples=150, deadline=None)
@given(st.lists(floats, min_size=1, max_size=60), st.lists(floats, min_size=1, max_size=60))
def test_wasserstein_matches_scipy(xs, ys):
    ours = noise.wasserstein_1d(xs, ys)
    assert ours == pytest.approx(stats.wasserstein_distance(xs, ys), rel=1e-9, abs=1e-9)


@given(st.lists(floats, min_size=1, max_size=40))
def test_wasserstein_metric_properties(xs):
    assert noise.wasserstein_1d(xs, xs) == 0
    shifted = [x + 2.5 for x in xs]
    assert noise.wasserstein_1d(xs, shifted) == pytest.approx(2.5)


def test_kl_matches_scipy_entropy():
    rng = np.random.default_rng(1)
    x, y = rng.normal(0, 1, 500), rng.normal(0.5, 1.3, 700)
    lo, hi = min(x.min(), y.min()), max(x.max(), y.max())
    cx, _ = np.histogram(x, 64, (lo, hi))
    cy, _ = np.histogram(y, 64, (lo, hi))
    expected = stats.entropy((cx + 1) / (500 + 64), (cy + 1) / (700 + 64))
    assert noise.kl_divergence(x, y) == pytest.approx(expected, rel=1e-12)
    assert noise.kl_divergence(x, x) == 0.0


def test_kl_masses():
    assert noise.kl_from_masses([0.5, 0.5, 0], [0.25, 0.5, 0.25]) == pytest.approx(math.log(2) / 2)
    assert noise.kl_from_masses([1, 0], [0, 1]) == math.inf
    with pytest.raises(DomainError):
        noise.kl_from_masses([1], [0.5, 0.5])


def test_golden_fractions_against_mpmath():
    mpmath.mp.prec = 300
    phi = (1 + mpmath.sqrt(5)) / 2
    ours = noise.golden_fractions(50, start=1)
    for i, u in enumerate(ours, start=1):
        assert u == pytest.approx(float(mpmath.frac(i * phi)), abs=1e-15)
    big = noise.golden_fractions(1, start=10**12)[0]
    assert big == pytest.approx(float(mpmath.frac(10**12 * phi)), abs=1e-12)


@pytest.mark.parametrize("u", [1e-10, 0.001, 0.1, 0.5, 0.8, 0.975, 1 - 1e-9])
def test_normal_quantile_against_mpmath(u):
    mpmath.mp.dps = 40
    expected = float(-mpmath.sqrt(2) * mpmath.erfinv(1 - 2 * mpmath.mpf(u)))
    assert noise.normal_quantile(u) == pytest.approx(expected, rel=1e-9, abs=1e-12)


def test_normal_quantile_domain():
    for bad in (0, 1, -0.1):
        with pytest.raises(DomainError):
            noise.normal_quantile(bad)


def test_engel_phi_ks_matches_scipy():
    batch = noise.sample_engel_phi(3.2, 10_000)
    ours = noise.ks_statistic(batch.samples, 3.2)
    assert ours == pytest.approx(stats.kstest(batch.samples, "norm", args=(0, 3.2)).statistic,
                                 abs=1e-12)
    assert ours < 0.02
    assert np.array_equal(batch.samples, noise.sample_engel_phi(3.2, 10_000).samples)


def test_gaussian_sampler_seeded():
    a = noise.sample_gaussian(2.0, 1000, 7)
    assert np.array_equal(a.samples, noise.sample_gaussian(2.0, 1000, 7).samples)
    assert abs(a.samples.std() - 2.0) < 0.2
    with pytest.raises(DomainError):
        noise.sample_gaussian(0, 10, 1)
    with pytest.raises(DomainError):
        noise.sample_gaussian(1, 0, 1)


def test_engel_diff_starts_with_key_errors():
    params = LweParams(16, 4096, 13, 3.2)
    kp = keygen(params, "0.4")
    batch = noise.sample_engel_diff(params, "0.4", 48)
    assert batch.samples[:16].tolist() == kp.e.tolist()
    assert np.abs(batch.samples).max() <= params.noise_bound


def test_spearman_matches_scipy():
    rng = np.random.default_rng(3)
    x, y = rng.normal(size=30), rng.normal(size=30)
    assert noise.spearman(x, y) == pytest.approx(stats.spearmanr(x, y).statistic)
    assert noise.spearman([1, 2, 3], [3, 2, 1]) == pytest.approx(-1)


def test_compare_unequal_lengths_flagged():
    r = noise.compare([0, 1, 2], [0, 1])
    assert r.truncated and r.sample_count == 2


def test_sweep_shape_and_csv():
    reports = noise.divergence_sweep([16], [1024], [2, 4], encryptions_per_cell=40)
    assert [r.params for r in reports] == [(16, 1024, 2.0), (16, 1024, 4.0)]
    assert all(r.error is None and r.sample_count == 40 for r in reports)
    csv = noise.sweep_csv(reports)
    assert csv.splitlines()[0] == "n,q,sigma,wasserstein,kl,sample_count"
    assert len(csv.splitlines()) == 3
    assert csv == noise.sweep_csv(noise.divergence_sweep([16], [1024], [2, 4],
                                                          encryptions_per_cell=40))


def test_sweep_records_bad_cells():
    reports = noise.divergence_sweep([1], [1024], [2], encryptions_per_cell=5)
    assert reports[0].error and math.isnan(reports[0].wasserstein)


def test_paired_populations_agree_without_noise_difference():
    # identical generators on both sides would give W1 = 0; here Gaussian vs Gaussian
    # uses independent draws but the same A, s and r, so divergence stays small
    cell = noise.SweepCell(16, 1024, 2.0)
    g, e = noise.cell_populations(cell, 200, "0.3", engel=noise.Generator.GAUSSIAN)
    assert g.shape == e.shape == (200,)
    assert noise.wasserstein_1d(g, e) < noise.wasserstein_1d(g, np.random.default_rng(0)
                                                             .integers(0, 1024, 200))


def test_hand_examples():
    assert noise.wasserstein_1d([0], [1]) == 1
    assert noise.wasserstein_1d([0, 2], [1, 3]) == 1
    assert noise.kl_from_masses([0.5, 0.5], [0.25, 0.75]) == pytest.approx(
        0.5 * math.log(2) + 0.5 * math.log(2 / 3))
    with pytest.raises(DomainError):
        noise.wasserstein_1d([], [1])


@settings(max_examples=100, deadline=None)
@given(*[st.lists(floats, min_size=1, max_size=30)] * 3)
def test_wasserstein_symmetry_and_triangle(a, b, c):
    ab, ba = noise.wasserstein_1d(a, b), noise.wasserstein_1d(b, a)
    assert ab == pytest.approx(ba, abs=1e-9)
    assert ab <= noise.wasserstein_1d(a, c) + noise.wasserstein_1d(c, b) + 1e-7


def test_engel_phi_ks_shrinks_with_count():
    ks = [noise.ks_statistic(noise.sample_engel_phi(1.0, m).samples) for m in (100, 1000, 10_000)]
    assert ks[0] > ks[1] > ks[2]
