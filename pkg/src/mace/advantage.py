"""Population-level optimal membership advantage estimators.

* `advantage_discrete`: the plug-in total-variation sum W_N over cells.
* `advantage_continuous`: the KDE analogue U_N, integrated by Monte Carlo.
* `advantage_from_individual`: the prior-weighted mean of |f_p| over the
  labeled sample.
* `advantage_generalized`: the three-partition empirical procedure for an
  arbitrary linear-fractional metric.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Optional

import numpy as np

from mace.core import (MEMBER, NONMEMBER, ConditionError, DataError,
                       LabeledQuerySet, ValidationError, check_delta,
                       split_three_ways)
from mace.density import (BinningScheme, DensityModel, cell_keys,
                          fit_discrete, fit_kde)
from mace.metrics import GeneralizedMetric

MAX_DENSITY_DIM = 3
DEFAULT_GRID = 512
# Monte Carlo draws per labeled sample, and the cap on the total.
MC_PER_SAMPLE = 20
MC_CAP = 20_000


@dataclasses.dataclass(frozen=True)
class AdvantageEstimate:
  """An advantage estimate with the settings that produced it.

  ``concentration_radius`` bounds the deviation of the estimator from its
  own expectation at level delta; it is not an interval around the true
  advantage.
  """

  point: float
  estimator_kind: str
  n_used: int
  concentration_radius: Optional[float] = None
  mc_stderr: Optional[float] = None
  threshold: Optional[float] = None
  orientation: Optional[int] = None
  config: dict = dataclasses.field(default_factory=dict)

  def to_dict(self) -> dict:
    return dataclasses.asdict(self)


def mcdiarmid_radius(n: int, delta: float) -> float:
  return math.sqrt(2.0 / n * math.log(2.0 / delta))


def _check_density_dim(labeled: LabeledQuerySet) -> None:
  if labeled.dim > MAX_DENSITY_DIM:
    raise DataError(
        f'query dimension {labeled.dim} exceeds {MAX_DENSITY_DIM}; density '
        'estimates are not meaningful there')


def _check_native(outputs: np.ndarray) -> None:
  if not np.all(outputs == np.round(outputs)):
    raise DataError('outputs are not integer-valued; pass a BinningScheme '
                    'to discretize continuous query outputs')


def _cell_counts(labeled: LabeledQuerySet,
                 scheme: Optional[BinningScheme]) -> tuple[np.ndarray, np.ndarray]:
  keys = cell_keys(labeled.outputs, scheme)
  _, inverse = np.unique(keys, axis=0, return_inverse=True)
  inverse = inverse.ravel()
  n_cells = int(inverse.max()) + 1
  k1 = np.bincount(inverse[labeled.labels == MEMBER], minlength=n_cells)
  k2 = np.bincount(inverse[labeled.labels == NONMEMBER], minlength=n_cells)
  return k1, k2


def advantage_discrete(labeled: LabeledQuerySet,
                       scheme: Optional[BinningScheme] = None,
                       delta: float = 0.05) -> AdvantageEstimate:
  """W_N = sum_j |p p_hat_j - (1 - p) q_hat_j| over observed cells.

  Without a scheme the outputs must be integer-valued and each distinct
  vector is its own cell.
  """
  delta = check_delta(delta)
  if scheme is None:
    _check_native(labeled.outputs)
  else:
    _check_density_dim(labeled)
  k1, k2 = _cell_counts(labeled, scheme)
  p = labeled.prior_p
  w = float(np.abs(p * k1 / labeled.n_members
                   - (1 - p) * k2 / labeled.n_nonmembers).sum())
  n = len(labeled)
  return AdvantageEstimate(
      point=w,
      estimator_kind='W_N',
      n_used=n,
      concentration_radius=mcdiarmid_radius(n, delta),
      config={'scheme': None if scheme is None else scheme.to_dict(),
              'delta': delta, 'prior_p': p},
  )


def _abs_contrast(pv: np.ndarray, qv: np.ndarray, p: float) -> np.ndarray:
  num = np.abs(p * pv - (1 - p) * qv)
  den = p * pv + (1 - p) * qv
  return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def advantage_continuous(labeled: LabeledQuerySet, bandwidth='auto',
                         kernel: str = 'gaussian', delta: float = 0.05,
                         mc_samples: Optional[int] = None, seed: int = 0,
                         workers: int = 1) -> AdvantageEstimate:
  """U_N, the L1 distance between prior-weighted KDEs, by Monte Carlo.

  Uses the identity  int |p P - (1-p) Q| = E_{x ~ pP + (1-p)Q} |f_p(x)|
  with draws from the fitted mixture, stratified by class: round(M p) draws
  from the member KDE and the rest from the non-member KDE.
  """
  delta = check_delta(delta)
  _check_density_dim(labeled)
  n = len(labeled)
  m = mc_samples if mc_samples is not None else min(MC_PER_SAMPLE * n, MC_CAP)
  if m < 1000:
    raise ValidationError(f'mc_samples must be >= 1000, got {m}')
  p = labeled.prior_p
  pk = fit_kde(labeled.members, bandwidth, kernel)
  qk = fit_kde(labeled.nonmembers, bandwidth, kernel)
  m1 = min(max(int(math.floor(m * p + 0.5)), 1), m - 1)
  m2 = m - m1
  rng = np.random.default_rng(seed)
  means, variances = [], []
  for kde, size in ((pk, m1), (qk, m2)):
    x = kde.sample(size, rng)
    vals = _abs_contrast(pk.density(x, workers), qk.density(x, workers), p)
    means.append(vals.mean())
    variances.append(vals.var(ddof=1) if size > 1 else 0.0)
  u = p * means[0] + (1 - p) * means[1]
  stderr = math.sqrt(p * p * variances[0] / m1
                     + (1 - p) ** 2 * variances[1] / m2)
  return AdvantageEstimate(
      point=float(u),
      estimator_kind='U_N',
      n_used=n,
      concentration_radius=mcdiarmid_radius(n, delta),
      mc_stderr=stderr,
      config={'bandwidth_members': pk.bandwidth.tolist(),
              'bandwidth_nonmembers': qk.bandwidth.tolist(),
              'kernel': kernel, 'mc_samples': m, 'seed': seed,
              'delta': delta, 'prior_p': p},
  )


def advantage_from_individual(labeled: LabeledQuerySet, pdens: DensityModel,
                              qdens: DensityModel) -> AdvantageEstimate:
  """Mean of the estimated |f_p| over the mixture sample.

  Members are weighted p / N1 and non-members (1 - p) / N2, which makes the
  result equal W_N exactly when the densities are the sample's own
  histograms.
  """
  p = labeled.prior_p
  means = []
  for pts in (labeled.members, labeled.nonmembers):
    vals = _abs_contrast(pdens.density(pts), qdens.density(pts), p)
    means.append(vals.mean())
  return AdvantageEstimate(
      point=float(p * means[0] + (1 - p) * means[1]),
      estimator_kind='mean-individual',
      n_used=len(labeled),
      config={'prior_p': p},
  )


@dataclasses.dataclass(frozen=True)
class PosteriorEstimator:
  """eta_hat(x) = p P(x) / (p P(x) + (1-p) Q(x)); the prior where both vanish."""

  pdens: DensityModel
  qdens: DensityModel
  prior_p: float

  def __call__(self, points, workers: int = 1) -> np.ndarray:
    p = self.prior_p
    pv = self.pdens.density(points, workers)
    qv = self.qdens.density(points, workers)
    num = p * pv
    den = num + (1 - p) * qv
    return np.divide(num, den, out=np.full_like(num, p), where=den > 0)


def _metric_values(metric: GeneralizedMetric, tp, fp, n1, n2):
  n = n1 + n2
  tp_r, fp_r = tp / n, fp / n
  fn_r, tn_r = (n1 - tp) / n, (n2 - fp) / n
  num = metric.numerator(tp_r, fp_r, fn_r, tn_r)
  den = metric.denominator(tp_r, fp_r, fn_r, tn_r)
  valid = den != 0
  vals = np.full(np.shape(tp), -np.inf)
  np.divide(num, den, out=vals, where=valid)
  return vals, valid


def _positives(eta_sorted: np.ndarray, t: np.ndarray, orientation: int):
  # Ties eta == t always predict non-member.
  if orientation > 0:
    return eta_sorted.shape[0] - np.searchsorted(eta_sorted, t, side='right')
  return np.searchsorted(eta_sorted, t, side='left')


def _select_threshold(metric, eta_m, eta_n, grid: int):
  thresholds = np.arange(1, grid + 1) / (grid + 1)
  em, en = np.sort(eta_m), np.sort(eta_n)
  best = None
  for orientation in (1, -1):
    tp = _positives(em, thresholds, orientation)
    fp = _positives(en, thresholds, orientation)
    vals, valid = _metric_values(metric, tp, fp, em.shape[0], en.shape[0])
    if not valid.any():
      continue
    top = vals[valid].max()
    tied = np.flatnonzero(valid & (vals >= top - 1e-12))
    pick = tied[np.argmin(np.abs(thresholds[tied] - 0.5))]
    # Canonical orientation wins ties between orientations.
    if best is None or top > best[0] + 1e-12:
      best = (top, float(thresholds[pick]), orientation)
  if best is None:
    raise ConditionError(
        f'metric {metric.name} is undefined at every threshold on the '
        'selection partition')
  return best


def advantage_generalized(labeled: LabeledQuerySet, metric: GeneralizedMetric,
                          density_kind: str = 'discrete',
                          scheme: Optional[BinningScheme] = None,
                          bandwidth='auto', kernel: str = 'gaussian',
                          grid: int = DEFAULT_GRID, seed: int = 0,
                          workers: int = 1) -> AdvantageEstimate:
  """Empirical optimal advantage under ``metric`` via a three-way split.

  Partition 1 fits the posterior estimate, partition 2 selects the threshold
  and orientation maximising the metric over ``grid`` equally spaced values
  in (0, 1), and partition 3 reports the metric of the resulting classifier
  computed from its aggregate confusion counts.
  """
  if grid < 1:
    raise ValidationError(f'grid must be >= 1, got {grid}')
  part1, part2, part3 = split_three_ways(labeled, seed)
  p = labeled.prior_p
  if density_kind == 'discrete':
    if scheme is None:
      _check_native(labeled.outputs)
    else:
      _check_density_dim(labeled)
    pdens = fit_discrete(part1.members, scheme)
    qdens = fit_discrete(part1.nonmembers, scheme)
  elif density_kind == 'continuous':
    _check_density_dim(labeled)
    pdens = fit_kde(part1.members, bandwidth, kernel)
    qdens = fit_kde(part1.nonmembers, bandwidth, kernel)
  else:
    raise ValidationError(f'unknown density kind {density_kind!r}')
  posterior = PosteriorEstimator(pdens, qdens, p)

  _, t, orientation = _select_threshold(
      metric, posterior(part2.members, workers),
      posterior(part2.nonmembers, workers), grid)

  em = np.sort(posterior(part3.members, workers))
  en = np.sort(posterior(part3.nonmembers, workers))
  tp = _positives(em, np.array([t]), orientation)
  fp = _positives(en, np.array([t]), orientation)
  vals, valid = _metric_values(metric, tp, fp, em.shape[0], en.shape[0])
  if not valid[0]:
    raise ConditionError(
        f'metric {metric.name} is undefined on the evaluation partition at '
        f'threshold {t}')
  return AdvantageEstimate(
      point=float(vals[0]),
      estimator_kind='generalized-empirical',
      n_used=len(labeled),
      threshold=t,
      orientation=orientation,
      config={'metric': metric.to_dict(), 'density_kind': density_kind,
              'scheme': None if scheme is None else scheme.to_dict(),
              'bandwidth': bandwidth if isinstance(bandwidth, str)
              else np.ravel(bandwidth).tolist(),
              'kernel': kernel, 'grid': grid, 'seed': seed, 'prior_p': p,
              'partition_sizes': [len(part1), len(part2), len(part3)]},
  )
