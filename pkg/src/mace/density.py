"""Conditional density estimates of query outputs with pointwise intervals.

Two families are provided:

* `DiscreteDensity`: plug-in cell frequencies, either on natively discrete
  outputs or after binning continuous outputs with a `BinningScheme`.
  Pointwise intervals are exact Clopper-Pearson intervals.
* `KdeDensity`: product-kernel density estimates (gaussian or Epanechnikov)
  with the normal-approximation plug-in interval
  ``p_hat +- z * sqrt(mu_K * p_hat / (n * prod(h)))``.
"""

from __future__ import annotations

import dataclasses
import functools
import math
from concurrent import futures
from statistics import NormalDist
from typing import Optional, Union

import numpy as np

from mace.core import DataError, ValidationError, as_outputs

DEFAULT_BINS = 100
KERNELS = ('gaussian', 'epanechnikov')

# Kernel evaluations per chunk; chunking is fixed so results do not depend on
# the number of worker threads.
_CHUNK_ELEMENTS = 1 << 22


@dataclasses.dataclass(frozen=True)
class ConfidenceInterval:
  lower: float
  upper: float
  level: float

  def __post_init__(self):
    if not self.lower <= self.upper:
      raise ValueError(f'interval lower {self.lower} > upper {self.upper}')

  def contains(self, value: float) -> bool:
    return self.lower <= value <= self.upper

  def to_dict(self) -> dict:
    return {'lower': self.lower, 'upper': self.upper, 'level': self.level}


# --- Clopper-Pearson -------------------------------------------------------


def _beta_cf(a: float, b: float, x: float) -> float:
  """Continued fraction for the incomplete beta function (modified Lentz)."""
  tiny = 1e-300
  qab, qap, qam = a + b, a + 1.0, a - 1.0
  c = 1.0
  d = 1.0 - qab * x / qap
  if abs(d) < tiny:
    d = tiny
  d = 1.0 / d
  h = d
  for m in range(1, 100_000):
    m2 = 2 * m
    aa = m * (b - m) * x / ((qam + m2) * (a + m2))
    d = 1.0 + aa * d
    d = tiny if abs(d) < tiny else d
    c = 1.0 + aa / c
    c = tiny if abs(c) < tiny else c
    d = 1.0 / d
    h *= d * c
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
    d = 1.0 + aa * d
    d = tiny if abs(d) < tiny else d
    c = 1.0 + aa / c
    c = tiny if abs(c) < tiny else c
    d = 1.0 / d
    delta = d * c
    h *= delta
    if abs(delta - 1.0) < 1e-15:
      return h
  raise ArithmeticError(f'incomplete beta did not converge (a={a}, b={b})')


def betainc(a: float, b: float, x: float) -> float:
  """Regularized incomplete beta function I_x(a, b) for a, b > 0."""
  if x <= 0.0:
    return 0.0
  if x >= 1.0:
    return 1.0
  log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
               + a * math.log(x) + b * math.log1p(-x))
  front = math.exp(log_front)
  if x < (a + 1.0) / (a + b + 2.0):
    return front * _beta_cf(a, b, x) / a
  return 1.0 - front * _beta_cf(b, a, 1.0 - x) / b


def beta_quantile(q: float, a: float, b: float, xtol: float = 1e-10) -> float:
  """Inverse of `betainc` in x by bisection."""
  lo, hi = 0.0, 1.0
  while hi - lo > xtol:
    mid = 0.5 * (lo + hi)
    if betainc(a, b, mid) < q:
      lo = mid
    else:
      hi = mid
  return 0.5 * (lo + hi)


@functools.lru_cache(maxsize=65536)
def _clopper_pearson(k: int, n: int, level: float) -> tuple[float, float]:
  alpha = 1.0 - level
  lower = 0.0 if k == 0 else beta_quantile(alpha / 2, k, n - k + 1)
  upper = 1.0 if k == n else beta_quantile(1 - alpha / 2, k + 1, n - k)
  # Bisection error must never push the interval off the point estimate.
  lower = min(lower, k / n)
  upper = max(upper, k / n)
  return lower, upper


def clopper_pearson(successes: int, trials: int,
                    level: float = 0.95) -> ConfidenceInterval:
  """Exact two-sided binomial interval for k successes out of n trials."""
  k, n = int(successes), int(trials)
  if k != successes or n != trials or n < 1 or not 0 <= k <= n:
    raise ValidationError(
        f'need integers 0 <= k <= n, n >= 1; got k={successes}, n={trials}')
  if not 0.0 < level < 1.0:
    raise ValidationError(f'level must be in (0, 1), got {level}')
  lower, upper = _clopper_pearson(k, n, float(level))
  return ConfidenceInterval(lower, upper, level)


# --- Binning and discrete densities ----------------------------------------


@dataclasses.dataclass(frozen=True)
class BinningScheme:
  """Equal-width grid over a box; out-of-range values clamp to edge cells."""

  bins: tuple[int, ...]
  lo: tuple[float, ...]
  hi: tuple[float, ...]

  def __post_init__(self):
    if not len(self.bins) == len(self.lo) == len(self.hi) >= 1:
      raise ValidationError('bins, lo and hi must share one dimension')
    if min(self.bins) < 2:
      raise ValidationError(f'bin count must be >= 2, got {self.bins}')
    if any(not lo < hi for lo, hi in zip(self.lo, self.hi)):
      raise ValidationError(f'need lo < hi per dimension: {self.lo}, {self.hi}')

  @property
  def dim(self) -> int:
    return len(self.bins)

  @property
  def n_cells(self) -> int:
    return math.prod(self.bins)

  @classmethod
  def fit(cls, outputs, bins: int = DEFAULT_BINS) -> BinningScheme:
    """Fits per-dimension ranges to the data; constant axes get width 1."""
    arr = as_outputs(outputs)
    lo = arr.min(axis=0)
    hi = arr.max(axis=0)
    flat = lo == hi
    lo = np.where(flat, lo - 0.5, lo)
    hi = np.where(flat, hi + 0.5, hi)
    d = arr.shape[1]
    return cls(tuple([int(bins)] * d), tuple(map(float, lo)),
               tuple(map(float, hi)))

  def to_dict(self) -> dict:
    return {'bins': list(self.bins), 'lo': list(self.lo), 'hi': list(self.hi)}


def discretize(outputs, scheme: BinningScheme) -> np.ndarray:
  """Per-axis cell indices, shape (n, d), for each output."""
  arr = as_outputs(outputs)
  if arr.shape[1] != scheme.dim:
    raise DataError(
        f'dimension mismatch: outputs {arr.shape[1]}, scheme {scheme.dim}')
  lo = np.asarray(scheme.lo)
  hi = np.asarray(scheme.hi)
  bins = np.asarray(scheme.bins)
  idx = np.floor((arr - lo) / (hi - lo) * bins).astype(np.int64)
  return np.clip(idx, 0, bins - 1)


def cell_keys(outputs, scheme: Optional[BinningScheme]) -> np.ndarray:
  """Cell identifiers for outputs: binned indices, or the raw values."""
  if scheme is None:
    return as_outputs(outputs)
  return discretize(outputs, scheme)


@dataclasses.dataclass(frozen=True, eq=False)
class DiscreteDensity:
  """Empirical cell frequencies.

  Attributes:
    cells: array (k, d) of observed cell identifiers.
    counts: array (k,) of observation counts per cell.
    n: total number of observations.
    scheme: the binning used, or None for natively discrete outputs.
  """

  cells: np.ndarray
  counts: np.ndarray
  n: int
  scheme: Optional[BinningScheme] = None
  _lookup: dict = dataclasses.field(default_factory=dict, repr=False)

  def __post_init__(self):
    self._lookup.update(
        (tuple(c.tolist()), int(k)) for c, k in zip(self.cells, self.counts))

  @property
  def dim(self) -> int:
    return self.cells.shape[1]

  @property
  def masses(self) -> np.ndarray:
    return self.counts / self.n

  def count(self, points) -> np.ndarray:
    keys = cell_keys(points, self.scheme)
    if keys.shape[1] != self.dim:
      raise DataError(
          f'dimension mismatch: points {keys.shape[1]}, density {self.dim}')
    return np.array([self._lookup.get(tuple(k), 0) for k in keys.tolist()],
                    dtype=np.int64)

  def density(self, points, workers: int = 1) -> np.ndarray:
    """Estimated probability mass of the cell containing each point."""
    del workers  # Lookups are cheap; accepted for interface parity.
    return self.count(points) / self.n

  def interval(self, point, level: float) -> ConfidenceInterval:
    k = int(self.count(np.atleast_2d(np.asarray(point, dtype=float)))[0])
    return clopper_pearson(k, self.n, level)

  def to_dict(self) -> dict:
    return {
        'kind': 'discrete',
        'n': self.n,
        'scheme': None if self.scheme is None else self.scheme.to_dict(),
        'cells': self.cells.tolist(),
        'counts': self.counts.tolist(),
    }


def fit_discrete(outputs,
                 scheme: Optional[BinningScheme] = None) -> DiscreteDensity:
  """Plug-in cell frequencies of ``outputs``.

  Unobserved cells are not stored; they evaluate to mass zero.
  """
  arr = as_outputs(outputs)
  if arr.shape[0] == 0:
    raise DataError('cannot fit a density to zero outputs')
  keys = cell_keys(arr, scheme)
  cells, counts = np.unique(keys, axis=0, return_counts=True)
  return DiscreteDensity(cells, counts, arr.shape[0], scheme)


# --- Kernel density estimates ----------------------------------------------


def _kernel_sq_integral(kernel: str) -> float:
  """Integral of K^2 for the one-dimensional kernel."""
  if kernel == 'gaussian':
    return 1.0 / (2.0 * math.sqrt(math.pi))
  return 0.6  # Epanechnikov: int (3/4 (1 - u^2))^2 du over [-1, 1].


def scott_bandwidth(outputs) -> np.ndarray:
  arr = as_outputs(outputs)
  n, d = arr.shape
  if n < 2:
    raise DataError('automatic bandwidth needs at least two outputs')
  sigma = arr.std(axis=0, ddof=1)
  return sigma * n ** (-1.0 / (d + 4))


@dataclasses.dataclass(frozen=True, eq=False)
class KdeDensity:
  """Product-kernel density estimate.

  Attributes:
    support: array (n, d) of sample points.
    bandwidth: array (d,) of per-axis bandwidths.
    kernel: 'gaussian' or 'epanechnikov'.
  """

  support: np.ndarray
  bandwidth: np.ndarray
  kernel: str = 'gaussian'

  @property
  def n(self) -> int:
    return self.support.shape[0]

  @property
  def dim(self) -> int:
    return self.support.shape[1]

  @property
  def bandwidth_volume(self) -> float:
    return float(np.prod(self.bandwidth))

  @property
  def mu_k(self) -> float:
    return _kernel_sq_integral(self.kernel) ** self.dim

  def _chunk(self, x: np.ndarray) -> np.ndarray:
    scaled = self.support / self.bandwidth
    xs = x / self.bandwidth
    if self.kernel == 'gaussian':
      sq = np.zeros((x.shape[0], self.n))
      for j in range(self.dim):
        diff = np.subtract.outer(xs[:, j], scaled[:, j])
        diff *= diff
        sq += diff
      sq *= -0.5
      np.exp(sq, out=sq)
      norm = (2.0 * math.pi) ** (-self.dim / 2)
      return sq.sum(axis=1) * norm
    prod = np.ones((x.shape[0], self.n))
    for j in range(self.dim):
      diff = np.subtract.outer(xs[:, j], scaled[:, j])
      prod *= np.clip(1.0 - diff * diff, 0.0, None) * 0.75
    return prod.sum(axis=1)

  def density(self, points, workers: int = 1) -> np.ndarray:
    """Evaluates the estimate at each row of ``points``."""
    x = as_outputs(points, 'points')
    if x.shape[1] != self.dim:
      raise DataError(
          f'dimension mismatch: points {x.shape[1]}, density {self.dim}')
    rows = max(1, _CHUNK_ELEMENTS // max(1, self.n))
    chunks = [x[i:i + rows] for i in range(0, x.shape[0], rows)]
    if workers > 1 and len(chunks) > 1:
      with futures.ThreadPoolExecutor(workers) as pool:
        sums = list(pool.map(self._chunk, chunks))
    else:
      sums = [self._chunk(c) for c in chunks]
    total = np.concatenate(sums) if sums else np.zeros(0)
    return total / (self.n * self.bandwidth_volume)

  def interval(self, point, level: float) -> ConfidenceInterval:
    return kde_pointwise_ci(self, point, level)

  def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
    """Draws from the estimate: a random support point plus kernel noise."""
    centers = self.support[rng.integers(0, self.n, size=size)]
    if self.kernel == 'gaussian':
      noise = rng.standard_normal((size, self.dim))
    else:
      noise = _epanechnikov_noise(rng, (size, self.dim))
    return centers + noise * self.bandwidth

  def to_dict(self) -> dict:
    return {
        'kind': 'kde',
        'kernel': self.kernel,
        'bandwidth': self.bandwidth.tolist(),
        'support': self.support.tolist(),
    }


def _epanechnikov_noise(rng: np.random.Generator, shape) -> np.ndarray:
  # Median of three uniforms on [-1, 1] has the Epanechnikov density.
  u = rng.uniform(-1.0, 1.0, size=(3,) + tuple(shape))
  return np.median(u, axis=0)


def fit_kde(outputs, bandwidth: Union[float, str, np.ndarray] = 'auto',
            kernel: str = 'gaussian') -> KdeDensity:
  """Fits a KDE; ``bandwidth='auto'`` applies Scott's rule per axis.

  Raises:
    DataError: empty input, or zero spread under the automatic bandwidth.
    ValidationError: unknown kernel or nonpositive bandwidth.
  """
  arr = as_outputs(outputs)
  if arr.shape[0] == 0:
    raise DataError('cannot fit a density to zero outputs')
  if kernel not in KERNELS:
    raise ValidationError(f'unknown kernel {kernel!r}; choose from {KERNELS}')
  if isinstance(bandwidth, str):
    if bandwidth != 'auto':
      raise ValidationError('bandwidth must be a number or "auto"')
    h = scott_bandwidth(arr)
    if np.any(h <= 0):
      raise DataError('outputs have zero spread so the automatic bandwidth is '
                      '0; use the discrete estimator instead')
  else:
    h = np.broadcast_to(np.asarray(bandwidth, dtype=float),
                        (arr.shape[1],)).copy()
    if np.any(~np.isfinite(h)) or np.any(h <= 0):
      raise ValidationError(f'bandwidth must be positive, got {bandwidth}')
  support = arr.copy()
  support.setflags(write=False)
  h.setflags(write=False)
  return KdeDensity(support, h, kernel)


def normal_quantile(q: float) -> float:
  return NormalDist().inv_cdf(q)


def kde_pointwise_ci(kde: KdeDensity, x, level: float) -> ConfidenceInterval:
  """Plug-in pointwise interval for the density at ``x``.

  ``level`` is the target coverage; the normal quantile is taken at
  ``1 - (1 - level) / 2``. The lower end is clamped at zero.
  """
  if not 0.0 < level < 1.0:
    raise ValidationError(f'level must be in (0, 1), got {level}')
  p_hat = float(kde.density(np.atleast_2d(np.asarray(x, dtype=float)))[0])
  z = normal_quantile(1.0 - (1.0 - level) / 2.0)
  half = z * math.sqrt(kde.mu_k * p_hat / (kde.n * kde.bandwidth_volume))
  return ConfidenceInterval(max(0.0, p_hat - half), p_hat + half, level)


DensityModel = Union[DiscreteDensity, KdeDensity]
