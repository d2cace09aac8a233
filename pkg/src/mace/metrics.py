"""Linear-fractional performance metrics over confusion masses.

A metric is the ratio

    (a0 + a11 TP + a10 FP + a01 FN + a00 TN) / (b0 + b11 TP + b10 FP + b01 FN + b00 TN)

where TP, FP, FN, TN are joint probabilities (they sum to one). Accuracy,
precision, recall, specificity, weighted accuracy and the arithmetic mean of
TPR and TNR are all instances.
"""

from __future__ import annotations

import dataclasses
from typing import Optional

import numpy as np

from mace.core import ConditionError, ValidationError, check_prior

_COEFFS = ('a0', 'a11', 'a10', 'a01', 'a00', 'b0', 'b11', 'b10', 'b01', 'b00')

# Relative tolerance for the Bayes-threshold closed form preconditions.
_EQ_TOL = 1e-12


@dataclasses.dataclass(frozen=True)
class ConfusionRates:
  tp: float
  fp: float
  fn: float
  tn: float

  def __post_init__(self):
    vals = (self.tp, self.fp, self.fn, self.tn)
    if min(vals) < 0.0:
      raise ValidationError(f'confusion rates must be nonnegative: {vals}')
    if abs(sum(vals) - 1.0) > 1e-12:
      raise ValidationError(f'confusion rates must sum to 1: {vals}')

  @classmethod
  def from_counts(cls, tp: int, fp: int, fn: int, tn: int) -> ConfusionRates:
    n = tp + fp + fn + tn
    if n <= 0:
      raise ValidationError('no samples to form confusion rates')
    rates = [tp / n, fp / n, fn / n]
    # Remainder keeps the sum exactly 1 in floating point.
    return cls(*rates, max(0.0, 1.0 - sum(rates)))


@dataclasses.dataclass(frozen=True)
class DerivedConstants:
  c1: float
  c2: float
  c3: float
  c4: float
  d1: float
  d2: float
  d3: float
  d4: float


@dataclasses.dataclass(frozen=True)
class GeneralizedMetric:
  """Coefficients of a linear-fractional metric."""

  a0: float = 0.0
  a11: float = 0.0
  a10: float = 0.0
  a01: float = 0.0
  a00: float = 0.0
  b0: float = 0.0
  b11: float = 0.0
  b10: float = 0.0
  b01: float = 0.0
  b00: float = 0.0
  name: str = 'custom'

  def __post_init__(self):
    coeffs = np.array(self.coefficients(), dtype=float)
    if not np.all(np.isfinite(coeffs)):
      raise ValidationError(f'metric {self.name}: non-finite coefficient')
    if self.name == 'custom':
      _check_denominator_on_simplex(self)

  def coefficients(self) -> tuple[float, ...]:
    return tuple(getattr(self, c) for c in _COEFFS)

  @property
  def constants(self) -> DerivedConstants:
    return DerivedConstants(
        c1=self.a0 + self.a01,
        c2=self.a0 + self.a00,
        c3=self.a11 - self.a01,
        c4=self.a10 - self.a00,
        d1=self.b0 + self.b01,
        d2=self.b0 + self.b00,
        d3=self.b11 - self.b01,
        d4=self.b10 - self.b00,
    )

  def numerator(self, tp, fp, fn, tn):
    return self.a0 + self.a11 * tp + self.a10 * fp + self.a01 * fn + self.a00 * tn

  def denominator(self, tp, fp, fn, tn):
    return self.b0 + self.b11 * tp + self.b10 * fp + self.b01 * fn + self.b00 * tn

  def scaled(self, factor: float) -> GeneralizedMetric:
    kwargs = {c: getattr(self, c) * factor for c in _COEFFS}
    return GeneralizedMetric(**kwargs, name=self.name)

  def to_dict(self) -> dict:
    out = {c: float(getattr(self, c)) for c in _COEFFS}
    out['name'] = self.name
    return out

  @classmethod
  def from_dict(cls, record: dict) -> GeneralizedMetric:
    unknown = set(record) - set(_COEFFS) - {'name'}
    if unknown:
      raise ValidationError(f'unknown metric fields: {sorted(unknown)}')
    kwargs = {c: float(record.get(c, 0.0)) for c in _COEFFS}
    return cls(**kwargs, name=str(record.get('name', 'custom')))


def _check_denominator_on_simplex(metric: GeneralizedMetric) -> None:
  # The denominator is affine in the rates, so on the simplex it is zero
  # somewhere iff its values at the four vertices do not share one strict sign.
  vertices = np.array([metric.b0 + b for b in
                       (metric.b11, metric.b10, metric.b01, metric.b00)])
  if not (np.all(vertices > 0) or np.all(vertices < 0)):
    raise ValidationError(
        f'metric denominator vanishes on the probability simplex '
        f'(vertex values {vertices.tolist()})')


def evaluate(metric: GeneralizedMetric, rates: ConfusionRates) -> float:
  """Value of ``metric`` at the given confusion rates.

  Raises:
    ConditionError: if the denominator is zero at these rates.
  """
  args = (rates.tp, rates.fp, rates.fn, rates.tn)
  den = metric.denominator(*args)
  if den == 0.0:
    raise ConditionError(
        f'metric {metric.name} undefined at rates {args}: zero denominator')
  return metric.numerator(*args) / den


def bayes_threshold(metric: GeneralizedMetric) -> Optional[float]:
  """Closed-form posterior threshold of the Bayes optimal classifier.

  The optimal classifier predicts member iff the posterior exceeds the
  returned threshold. A closed form exists when ``b11 == b01`` and
  ``b10 == b00`` (the denominator is then constant over classifiers) and
  ``a11 - a10 - a01 + a00 > 0``.

  Returns:
    The threshold in [0, 1], or None when no closed form applies; callers
    then fall back to the empirical search in `advantage_generalized`.
  """
  scale = max(abs(c) for c in metric.coefficients()) or 1.0
  if (abs(metric.b11 - metric.b01) > _EQ_TOL * scale
      or abs(metric.b10 - metric.b00) > _EQ_TOL * scale):
    return None
  slope = metric.a11 - metric.a10 - metric.a01 + metric.a00
  if slope <= _EQ_TOL * scale:
    return None
  t = (metric.a00 - metric.a10) / slope
  if t < 0.0 or t > 1.0:
    return None
  return t


def named_metric(name: str, prior_p: float = 0.5,
                 weights: tuple[float, float, float, float] = (1, 1, 1, 1)
                 ) -> GeneralizedMetric:
  """Builds one of ACC, PPV, TPR, TNR, WA or AM.

  ``prior_p`` matters only for AM, whose per-class normalisers are the
  class priors. ``weights`` are (w1, w2, w3, w4) of WA, i.e.
  (w1 TP + w2 TN) / (w1 TP + w2 TN + w3 FP + w4 FN).
  """
  key = name.upper()
  if key == 'ACC':
    return GeneralizedMetric(a11=1, a00=1, b11=1, b10=1, b01=1, b00=1,
                             name='ACC')
  if key == 'PPV':
    return GeneralizedMetric(a11=1, b11=1, b10=1, name='PPV')
  if key == 'TPR':
    return GeneralizedMetric(a11=1, b11=1, b01=1, name='TPR')
  if key == 'TNR':
    return GeneralizedMetric(a00=1, b10=1, b00=1, name='TNR')
  if key == 'WA':
    w1, w2, w3, w4 = (float(w) for w in weights)
    if min(w1, w2, w3, w4) <= 0:
      raise ValidationError(f'WA weights must be positive, got {weights}')
    return GeneralizedMetric(a11=w1, a00=w2, b11=w1, b00=w2, b10=w3, b01=w4,
                             name='WA')
  if key == 'AM':
    p = check_prior(prior_p)
    return GeneralizedMetric(a11=1 / (2 * p), a00=1 / (2 * (1 - p)),
                             b11=1, b10=1, b01=1, b00=1, name='AM')
  raise ValidationError(f'unknown metric {name!r}')


def parse_metric(spec: str, prior_p: float) -> GeneralizedMetric:
  """Parses a CLI metric spec: a name, ``WA:w1,w2,w3,w4``, or a JSON record."""
  spec = spec.strip()
  if spec.startswith('{'):
    import json
    try:
      return GeneralizedMetric.from_dict(json.loads(spec))
    except json.JSONDecodeError as e:
      raise ValidationError(f'bad metric JSON: {e}') from None
  if ':' in spec:
    name, _, rest = spec.partition(':')
    try:
      weights = tuple(float(w) for w in rest.split(','))
    except ValueError:
      raise ValidationError(f'bad metric weights in {spec!r}') from None
    if len(weights) != 4:
      raise ValidationError(f'WA needs four weights, got {spec!r}')
    return named_metric(name, prior_p, weights)
  return named_metric(spec, prior_p)
