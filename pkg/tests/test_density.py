import math
import types

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings, strategies as st

from mace import density
from mace.core import DataError, ValidationError


def test_clopper_pearson_boundaries():
  assert density.clopper_pearson(0, 50).lower == 0.0
  assert density.clopper_pearson(50, 50).upper == 1.0


def test_clopper_pearson_reference_value():
  ci = density.clopper_pearson(5, 50, 0.95)
  assert ci.lower == pytest.approx(0.033275, abs=1e-5)
  assert ci.upper == pytest.approx(0.218135, abs=1e-5)
  assert ci.contains(0.1)


@given(n=st.integers(1, 400), data=st.data(),
       level=st.sampled_from([0.8, 0.9, 0.95, 0.975, 0.99]))
def test_clopper_pearson_matches_scipy_beta(n, data, level):
  k = data.draw(st.integers(0, n))
  ci = density.clopper_pearson(k, n, level)
  alpha = 1 - level
  lo = 0.0 if k == 0 else scipy.stats.beta.ppf(alpha / 2, k, n - k + 1)
  hi = 1.0 if k == n else scipy.stats.beta.ppf(1 - alpha / 2, k + 1, n - k)
  assert ci.lower == pytest.approx(lo, abs=1e-8)
  assert ci.upper == pytest.approx(hi, abs=1e-8)


@settings(max_examples=15)
@given(n=st.integers(1, 150))
def test_clopper_pearson_monotone(n):
  cis = [density.clopper_pearson(k, n) for k in range(n + 1)]
  lowers = [c.lower for c in cis]
  uppers = [c.upper for c in cis]
  assert all(a <= b for a, b in zip(lowers, lowers[1:]))
  assert all(a <= b for a, b in zip(uppers, uppers[1:]))


def test_clopper_pearson_rejects_bad_input():
  for args in [(3, 2), (-1, 5), (1, 0), (1.5, 4)]:
    with pytest.raises(ValidationError):
      density.clopper_pearson(*args)
  with pytest.raises(ValidationError):
    density.clopper_pearson(1, 5, level=1.0)


@given(a=st.floats(0.5, 50), b=st.floats(0.5, 50), x=st.floats(0, 1))
def test_betainc_matches_scipy(a, b, x):
  assert density.betainc(a, b, x) == pytest.approx(
      scipy.special.betainc(a, b, x), abs=1e-10)


def test_discrete_masses():
  d = density.fit_discrete(np.full((7, 1), 3.0))
  np.testing.assert_allclose(d.masses, [1.0])
  d = density.fit_discrete(np.array([0] * 4 + [1] * 6, dtype=float)[:, None])
  assert d.density([[0.0], [1.0], [2.0]]).tolist() == [0.4, 0.6, 0.0]
  assert d.masses.sum() == pytest.approx(1.0)


def test_discrete_masses_track_categorical():
  rng = np.random.default_rng(0)
  draws = rng.choice(2, size=1000, p=[0.9, 0.1]).astype(float)[:, None]
  d = density.fit_discrete(draws)
  np.testing.assert_allclose(d.density([[0.0], [1.0]]), [0.9, 0.1], atol=0.03)


def test_discrete_interval_is_clopper_pearson():
  d = density.fit_discrete(np.array([0] * 5 + [1] * 45, dtype=float)[:, None])
  ci = d.interval([0.0], 0.95)
  assert (ci.lower, ci.upper) == pytest.approx((0.033275, 0.218135), abs=1e-5)


def test_binning_examples():
  scheme = density.BinningScheme((100,), (0.0,), (1.0,))
  assert density.discretize([[0.005]], scheme).tolist() == [[0]]
  assert density.discretize([[1.7]], scheme).tolist() == [[99]]
  assert density.discretize([[-3.0]], scheme).tolist() == [[0]]
  two = density.BinningScheme((100, 100), (0.0, 0.0), (1.0, 1.0))
  assert density.discretize([[0.005, 0.995]], two).tolist() == [[0, 99]]


def test_binning_fit_shares_range_and_handles_constant_axis():
  scheme = density.BinningScheme.fit(np.array([[0.0, 2.0], [1.0, 2.0]]), 10)
  assert scheme.lo == (0.0, 1.5) and scheme.hi == (1.0, 2.5)
  with pytest.raises(ValidationError):
    density.BinningScheme((1,), (0.0,), (1.0,))


def test_kde_single_point():
  kde = density.fit_kde(np.zeros((1, 1)), bandwidth=1.0)
  assert kde.density([[0.0]])[0] == pytest.approx(1 / math.sqrt(2 * math.pi))


@pytest.mark.parametrize('kernel', density.KERNELS)
def test_kde_integrates_to_one(kernel):
  rng = np.random.default_rng(1)
  kde = density.fit_kde(rng.normal(size=(500, 1)), kernel=kernel)
  grid = np.linspace(-8, 8, 8001)
  mass = np.trapezoid(kde.density(grid[:, None]), grid)
  assert mass == pytest.approx(1.0, abs=0.01)


def test_kde_2d_integrates_to_one():
  rng = np.random.default_rng(2)
  kde = density.fit_kde(rng.normal(size=(200, 2)))
  g = np.linspace(-7, 7, 281)
  xx, yy = np.meshgrid(g, g)
  vals = kde.density(np.column_stack([xx.ravel(), yy.ravel()])).reshape(xx.shape)
  assert np.trapezoid(np.trapezoid(vals, g), g) == pytest.approx(1.0, abs=0.01)


def test_kde_recovers_normal_density_at_zero():
  rng = np.random.default_rng(3)
  kde = density.fit_kde(rng.normal(size=(10_000, 1)))
  assert kde.density([[0.0]])[0] == pytest.approx(1 / math.sqrt(2 * math.pi),
                                                  abs=0.03)


def test_kde_l1_error_shrinks_with_n():
  grid = np.linspace(-6, 6, 1201)
  truth = scipy.stats.norm.pdf(grid)
  means = []
  for n in (100, 1000, 10_000):
    errs = []
    for seed in range(20):
      x = np.random.default_rng(seed).normal(size=(n, 1))
      est = density.fit_kde(x).density(grid[:, None])
      errs.append(np.trapezoid(np.abs(est - truth), grid))
    means.append(np.mean(errs))
  assert means[0] > means[1] > means[2]


def test_kde_threads_do_not_change_values():
  rng = np.random.default_rng(4)
  kde = density.fit_kde(rng.normal(size=(3000, 2)))
  pts = rng.normal(size=(2500, 2))
  np.testing.assert_array_equal(kde.density(pts), kde.density(pts, workers=4))


def test_kde_mu_k():
  g = density.fit_kde(np.zeros((2, 1)) + [[0.0], [1.0]], bandwidth=1.0)
  assert g.mu_k == pytest.approx(1 / (2 * math.sqrt(math.pi)))
  e = density.fit_kde(np.array([[0.0, 0.0], [1.0, 1.0]]), bandwidth=1.0,
                      kernel='epanechnikov')
  assert e.mu_k == pytest.approx(0.6 ** 2)
  # Numeric check of the Epanechnikov constant.
  u = np.linspace(-1, 1, 200_001)
  assert np.trapezoid((0.75 * (1 - u * u)) ** 2, u) == pytest.approx(0.6)


def test_kde_ci_half_width_formula():
  stub = types.SimpleNamespace(
      density=lambda x: np.array([0.4]), mu_k=1 / (2 * math.sqrt(math.pi)),
      n=10_000, bandwidth_volume=0.1)
  ci = density.kde_pointwise_ci(stub, [0.0], 0.975)
  half = 2.2414 * math.sqrt(0.28209 * 0.4 / 1000)
  assert ci.upper - 0.4 == pytest.approx(half, abs=2e-4)
  assert ci.upper - 0.4 == pytest.approx(0.0238, abs=1e-4)


def test_kde_ci_zero_density_is_degenerate():
  kde = density.fit_kde(np.zeros((5, 1)) + np.arange(5.0)[:, None],
                        bandwidth=0.1, kernel='epanechnikov')
  ci = kde.interval([100.0], 0.95)
  assert (ci.lower, ci.upper) == (0.0, 0.0)


def test_kde_sampling_matches_kernel_spread():
  kde = density.fit_kde(np.zeros((1, 1)), bandwidth=2.0,
                        kernel='epanechnikov')
  draws = kde.sample(200_000, np.random.default_rng(0)).ravel()
  assert np.abs(draws).max() <= 2.0
  # Epanechnikov variance is h^2 / 5.
  assert draws.var() == pytest.approx(4 / 5, rel=0.02)


def test_fit_kde_errors():
  with pytest.raises(DataError, match='discrete'):
    density.fit_kde(np.ones((10, 1)))
  with pytest.raises(ValidationError):
    density.fit_kde(np.zeros((3, 1)) + [[0.0], [1.0], [2.0]], kernel='tophat')
  with pytest.raises(ValidationError):
    density.fit_kde(np.arange(3.0)[:, None], bandwidth=-1.0)


def test_scott_bandwidth():
  x = np.random.default_rng(5).normal(size=(1000, 2))
  h = density.scott_bandwidth(x)
  np.testing.assert_allclose(h, x.std(axis=0, ddof=1) * 1000 ** (-1 / 6))
