"""Per-sample membership risk and the differential-privacy cap.

For a query point z0 with member density P and non-member density Q at
Q_S(z0), the signed contrast is

    f_p = (P p - Q (1 - p)) / (P p + Q (1 - p)),

and the individual risk under accuracy is |f_p|. Under a generalized metric
with a closed-form Bayes threshold the risk is the metric evaluated on the
conditional confusion masses at z0.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from collections.abc import Iterable
from typing import TYPE_CHECKING, Optional, Union

import numpy as np

from mace.core import ConditionError, ValidationError, check_delta, check_prior
from mace.density import ConfidenceInterval, DensityModel
from mace.metrics import GeneralizedMetric, bayes_threshold

if TYPE_CHECKING:
  from mace.advantage import AdvantageEstimate

TIE_TOL = 1e-9


@dataclasses.dataclass(frozen=True)
class IndividualRiskEstimate:
  """Estimated risk at one query point.

  ``point`` is |f_p| for the accuracy metric, or the conditional metric value
  for a generalized metric. ``f_p_signed`` is always the signed contrast.
  """

  point: float
  ci: ConfidenceInterval
  f_p_signed: float
  query_point: tuple[float, ...]
  metric: Optional[GeneralizedMetric] = None
  flags: tuple[str, ...] = ()

  def to_dict(self) -> dict:
    return {
        'query_point': list(self.query_point),
        'point': self.point,
        'lower': self.ci.lower,
        'upper': self.ci.upper,
        'level': self.ci.level,
        'f_p_signed': self.f_p_signed,
        'metric': 'accuracy' if self.metric is None else self.metric.name,
        'flags': list(self.flags),
    }


def _at(dens: DensityModel, z0) -> float:
  return float(dens.density(np.atleast_2d(np.asarray(z0, dtype=float)))[0])


def _signed(pv: float, qv: float, p: float) -> float:
  num = pv * p - qv * (1 - p)
  den = pv * p + qv * (1 - p)
  if den <= 0.0:
    raise ConditionError('zero mixture mass at the query point: both '
                         'density estimates vanish there')
  return num / den


def f_p_hat(z0, pdens: DensityModel, qdens: DensityModel, p: float) -> float:
  """Plug-in estimate of the signed contrast f_p at ``z0``."""
  p = check_prior(p)
  return _signed(_at(pdens, z0), _at(qdens, z0), p)


def _ratio_range(x_lo, x_hi, y_lo, y_hi) -> tuple[float, float]:
  """Range of x / y over a rectangle of nonnegative values, in [0, inf]."""
  if x_hi <= 0.0:
    return 0.0, 0.0
  if y_hi <= 0.0:
    return math.inf, math.inf
  r_lo = x_lo / y_hi
  r_hi = math.inf if y_lo <= 0.0 else x_hi / y_lo
  return r_lo, r_hi


def _signed_of_ratio(r: float, p: float) -> float:
  if math.isinf(r):
    return 1.0
  return (r * p - (1 - p)) / (r * p + (1 - p))


def _abs_interval(lo: float, hi: float) -> tuple[float, float]:
  if lo >= 0.0:
    return lo, hi
  if hi <= 0.0:
    return -hi, -lo
  return 0.0, max(-lo, hi)


def _intervals(z0, pdens, qdens, delta):
  # Each density gets half of the error budget so the pair holds jointly.
  level = 1.0 - delta / 2.0
  return pdens.interval(z0, level), qdens.interval(z0, level)


def individual_risk_accuracy(z0, pdens: DensityModel, qdens: DensityModel,
                             p: float, delta: float = 0.05
                             ) -> IndividualRiskEstimate:
  """|f_p| at ``z0`` with a (1 - delta) interval.

  The interval plugs the (1 - delta/2) bounds of both densities into f_p,
  which is increasing in P/Q, and maps the signed interval through |.|.
  """
  p = check_prior(p)
  delta = check_delta(delta)
  signed = f_p_hat(z0, pdens, qdens, p)
  pci, qci = _intervals(z0, pdens, qdens, delta)
  r_lo, r_hi = _ratio_range(pci.lower, pci.upper, qci.lower, qci.upper)
  lo, hi = _abs_interval(_signed_of_ratio(r_lo, p), _signed_of_ratio(r_hi, p))
  point = abs(signed)
  ci = ConfidenceInterval(min(lo, point), max(hi, point), 1.0 - delta)
  return IndividualRiskEstimate(point, ci, signed, _as_tuple(z0))


def _as_tuple(z0) -> tuple[float, ...]:
  return tuple(float(v) for v in np.ravel(np.asarray(z0, dtype=float)))


class _ConditionalMetric:
  """The generalized conditional-risk expression as a function of (P, Q)."""

  def __init__(self, metric: GeneralizedMetric, p: float, t: float):
    self.k = metric.constants
    self.p = p
    self.t = t

  def indicator(self, x: float, y: float) -> bool:
    return (1 - self.t) * self.p * x > self.t * (1 - self.p) * y

  def parts(self, x: float, y: float, ind: bool) -> tuple[float, float]:
    k, p = self.k, self.p
    xp, yq = x * p, y * (1 - p)
    num = k.c1 * xp + k.c2 * yq
    den = k.d1 * xp + k.d2 * yq
    if ind:
      num += k.c3 * xp + k.c4 * yq
      den += k.d3 * xp + k.d4 * yq
    return num, den

  def of_ratio(self, r: float, ind: Optional[bool] = None) -> Optional[float]:
    x, y = (1.0, 0.0) if math.isinf(r) else (r, 1.0)
    if ind is None:
      ind = self.indicator(x, y)
    num, den = self.parts(x, y, ind)
    if den == 0.0:
      return None
    return num / den

  def breakpoint(self) -> float:
    if self.t >= 1.0:
      return math.inf
    return self.t * (1 - self.p) / ((1 - self.t) * self.p)

  def ratio_extremes(self, r_lo: float, r_hi: float) -> tuple[float, float]:
    # The expression depends on P/Q only and is a Moebius map on each side of
    # the indicator switch, so its extremes sit at range ends or the switch.
    candidates = [self.of_ratio(r_lo), self.of_ratio(r_hi)]
    rs = self.breakpoint()
    if r_lo <= rs < r_hi:
      candidates.append(self.of_ratio(rs, True))
    if r_lo < rs <= r_hi:
      candidates.append(self.of_ratio(rs, False))
    vals = [v for v in candidates if v is not None]
    if not vals:
      raise ConditionError('metric denominator vanishes over the whole '
                           'confidence rectangle')
    return min(vals), max(vals)


def individual_risk_generalized(z0, pdens: DensityModel, qdens: DensityModel,
                                p: float, metric: GeneralizedMetric,
                                delta: float = 0.05) -> IndividualRiskEstimate:
  """Conditional generalized-metric risk at ``z0`` with a (1 - delta) interval.

  Raises:
    ConditionError: the metric has no closed-form threshold, the estimated
      posterior ties the threshold, or the expression's denominator is zero.
  """
  p = check_prior(p)
  delta = check_delta(delta)
  t = bayes_threshold(metric)
  if t is None:
    raise ConditionError(
        f'metric {metric.name} has no closed-form Bayes threshold; estimate '
        'it empirically with advantage_generalized')
  pv, qv = _at(pdens, z0), _at(qdens, z0)
  signed = _signed(pv, qv, p)
  expr = _ConditionalMetric(metric, p, t)
  k = metric.constants
  if (k.c3, k.c4, k.d3, k.d4) != (0.0, 0.0, 0.0, 0.0):
    posterior = pv * p / (pv * p + qv * (1 - p))
    if abs(posterior - t) <= TIE_TOL:
      raise ConditionError(
          f'estimated posterior {posterior:.12g} ties the threshold {t:.12g}')
  num, den = expr.parts(pv, qv, expr.indicator(pv, qv))
  if den == 0.0:
    raise ConditionError(f'metric {metric.name}: zero denominator at z0')
  point = num / den
  pci, qci = _intervals(z0, pdens, qdens, delta)
  lo, hi = expr.ratio_extremes(
      *_ratio_range(pci.lower, pci.upper, qci.lower, qci.upper))
  ci = ConfidenceInterval(min(lo, point), max(hi, point), 1.0 - delta)
  return IndividualRiskEstimate(point, ci, signed, _as_tuple(z0), metric)


def _uninformative(z0, p: float, delta: float,
                   metric: Optional[GeneralizedMetric]) -> IndividualRiskEstimate:
  # Neither density saw this point: fall back to the prior (P = Q) and the
  # widest possible interval.
  level = 1.0 - delta
  flags = ('uninformative',)
  if metric is None:
    return IndividualRiskEstimate(abs(2 * p - 1), ConfidenceInterval(0, 1, level),
                                  2 * p - 1, _as_tuple(z0), None, flags)
  t = bayes_threshold(metric)
  if t is None:
    raise ConditionError(
        f'metric {metric.name} has no closed-form Bayes threshold')
  expr = _ConditionalMetric(metric, p, t)
  point = expr.of_ratio(1.0)
  lo, hi = expr.ratio_extremes(0.0, math.inf)
  if point is None:
    point = math.nan
  else:
    lo, hi = min(lo, point), max(hi, point)
  return IndividualRiskEstimate(point, ConfidenceInterval(lo, hi, level),
                                2 * p - 1, _as_tuple(z0), metric, flags)


def individual_risks(points: Iterable, pdens: DensityModel,
                     qdens: DensityModel, p: float, delta: float = 0.05,
                     metric: Optional[GeneralizedMetric] = None
                     ) -> list[IndividualRiskEstimate]:
  """Batch risk estimates that do not abort on unseen cells.

  Points where both density estimates vanish get an 'uninformative' result
  and a warning instead of an error.
  """
  out = []
  unseen = 0
  # Repeated query points (common with discrete outputs) are scored once.
  seen: dict = {}
  for z0 in points:
    key = _as_tuple(z0)
    if key not in seen:
      if _at(pdens, z0) == 0.0 and _at(qdens, z0) == 0.0:
        seen[key] = _uninformative(z0, p, delta, metric)
      elif metric is None:
        seen[key] = individual_risk_accuracy(z0, pdens, qdens, p, delta)
      else:
        seen[key] = individual_risk_generalized(z0, pdens, qdens, p, metric,
                                                delta)
    est = seen[key]
    unseen += 'uninformative' in est.flags
    out.append(est)
  if unseen:
    warnings.warn(f'{unseen} query point(s) have zero estimated density under '
                  'both classes; reported as uninformative', RuntimeWarning)
  return out


@dataclasses.dataclass(frozen=True)
class DpBound:
  """Largest advantage or individual risk allowed by epsilon-DP at prior p."""

  epsilon: float
  prior_p: float
  lam: float
  bound: float

  def violated_by(self, estimate: Union[float, IndividualRiskEstimate,
                                        'AdvantageEstimate']) -> bool:
    """True when the estimate's conservative low end exceeds the bound.

    Individual risks use their interval's lower end; advantages use
    ``point - concentration_radius`` when a radius is available.
    """
    if isinstance(estimate, IndividualRiskEstimate):
      value = estimate.ci.lower
    elif hasattr(estimate, 'point'):
      radius = getattr(estimate, 'concentration_radius', None) or 0.0
      value = estimate.point - radius
    else:
      value = float(estimate)
    return value > self.bound

  def to_dict(self) -> dict:
    return dataclasses.asdict(self)


def dp_bound(epsilon: float, p: float) -> DpBound:
  if epsilon < 0:
    raise ValidationError(f'epsilon must be >= 0, got {epsilon}')
  p = check_prior(p)
  lam = math.log(p / (1 - p))
  bound = max(abs(math.tanh((epsilon + lam) / 2)),
              abs(math.tanh((-epsilon + lam) / 2)))
  return DpBound(float(epsilon), p, lam, bound)
