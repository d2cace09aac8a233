"""Exact ground truth for finite and normal toy problems.

Everything here is computed from the population distributions directly and
deliberately shares no code with the estimators, so that comparing the two
is a real check.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Optional, Union

import numpy as np
from scipy import integrate

from mace.core import ConditionError, ValidationError
from mace.metrics import GeneralizedMetric


@dataclasses.dataclass(frozen=True)
class Categorical:
  """A pmf over outcomes ``labels`` (defaults to 0..k-1)."""

  pmf: tuple[float, ...]
  labels: Optional[tuple[float, ...]] = None

  def outcome_labels(self) -> np.ndarray:
    if self.labels is None:
      return np.arange(len(self.pmf), dtype=float)
    return np.asarray(self.labels, dtype=float)


@dataclasses.dataclass(frozen=True)
class NormalSpec:
  """Product normal with the given per-axis means and a common sigma."""

  mean: tuple[float, ...]
  sigma: float = 1.0


@dataclasses.dataclass(frozen=True)
class FiniteToyDistribution:
  """Member pmf p_j, non-member pmf q_j and prior p over shared outcomes."""

  member_pmf: tuple[float, ...]
  nonmember_pmf: tuple[float, ...]
  prior_p: float
  labels: Optional[tuple[float, ...]] = None

  def __post_init__(self):
    pm = np.asarray(self.member_pmf, dtype=float)
    qm = np.asarray(self.nonmember_pmf, dtype=float)
    if pm.shape != qm.shape or pm.ndim != 1:
      raise ValidationError('member and non-member pmfs must share outcomes')
    for name, pmf in (('member', pm), ('non-member', qm)):
      if np.any(pmf < 0) or abs(pmf.sum() - 1.0) > 1e-12:
        raise ValidationError(f'{name} pmf must be nonnegative and sum to 1')
    if not 0 < self.prior_p < 1:
      raise ValidationError(f'prior must be in (0, 1), got {self.prior_p}')

  @property
  def n_outcomes(self) -> int:
    return len(self.member_pmf)

  @property
  def member_source(self) -> Categorical:
    return Categorical(tuple(self.member_pmf), self.labels)

  @property
  def nonmember_source(self) -> Categorical:
    return Categorical(tuple(self.nonmember_pmf), self.labels)

  def joint(self, j: int) -> tuple[float, float]:
    """P(outcome j, member) and P(outcome j, non-member)."""
    return (self.prior_p * self.member_pmf[j],
            (1 - self.prior_p) * self.nonmember_pmf[j])


def exact_advantage(toy: FiniteToyDistribution) -> float:
  """sum_j |p p_j - (1 - p) q_j|."""
  return float(sum(abs(a - b) for a, b in
                   (toy.joint(j) for j in range(toy.n_outcomes))))


def exact_individual_risk(toy: FiniteToyDistribution, j: int) -> float:
  """|P(member | j) - P(non-member | j)| at outcome j."""
  a, b = toy.joint(j)
  if a + b <= 0:
    raise ConditionError(f'outcome {j} has zero probability')
  return abs(a - b) / (a + b)


def _ratio(metric: GeneralizedMetric, tp, fp, fn, tn) -> Optional[float]:
  m = metric
  num = m.a0 + m.a11 * tp + m.a10 * fp + m.a01 * fn + m.a00 * tn
  den = m.b0 + m.b11 * tp + m.b10 * fp + m.b01 * fn + m.b00 * tn
  if den == 0:
    return None
  return num / den


def _closed_form_threshold(metric: GeneralizedMetric) -> float:
  m = metric
  if not (math.isclose(m.b11, m.b01) and math.isclose(m.b10, m.b00)):
    raise ConditionError(f'metric {m.name} has no closed-form threshold')
  return (m.a00 - m.a10) / (m.a11 - m.a10 - m.a01 + m.a00)


def exact_generalized_conditional(toy: FiniteToyDistribution,
                                  metric: GeneralizedMetric, j: int) -> float:
  """The metric of the Bayes classifier on the distribution given outcome j.

  Given outcome j the classifier's prediction is fixed, so the conditional
  confusion probabilities are (posterior, 0, 0, 1 - posterior) when it
  predicts member and (0, 0, posterior, 1 - posterior) otherwise.
  """
  a, b = toy.joint(j)
  if a + b <= 0:
    raise ConditionError(f'outcome {j} has zero probability')
  eta = a / (a + b)
  t = _closed_form_threshold(metric)
  if math.isclose(eta, t, abs_tol=1e-12):
    raise ConditionError(f'posterior at outcome {j} ties the threshold {t}')
  if eta > t:
    value = _ratio(metric, eta, 1 - eta, 0.0, 0.0)
  else:
    value = _ratio(metric, 0.0, 0.0, eta, 1 - eta)
  if value is None:
    raise ConditionError(f'metric undefined at outcome {j}')
  return value


def population_metric(toy: FiniteToyDistribution, metric: GeneralizedMetric,
                      predict_member) -> Optional[float]:
  """Metric of a deterministic classifier given as a per-outcome boolean mask."""
  tp = fp = fn = tn = 0.0
  for j, positive in enumerate(predict_member):
    a, b = toy.joint(j)
    if positive:
      tp += a
      fp += b
    else:
      fn += a
      tn += b
  return _ratio(metric, tp, fp, fn, tn)


def exact_best_threshold_value(toy: FiniteToyDistribution,
                               metric: GeneralizedMetric
                               ) -> tuple[float, tuple[float, float], int]:
  """Best metric value over all posterior-threshold classifiers.

  Enumerates every distinct cut of the outcomes by posterior, in both
  orientations.

  Returns:
    (best value, open interval of optimal thresholds, orientation), where
    orientation +1 predicts member above the threshold and -1 below.
  """
  etas = []
  for j in range(toy.n_outcomes):
    a, b = toy.joint(j)
    etas.append(a / (a + b) if a + b > 0 else toy.prior_p)
  cuts = sorted(set([0.0, 1.0] + etas))
  best = None
  for lo, hi in zip(cuts[:-1], cuts[1:]):
    t = 0.5 * (lo + hi)
    for orientation in (1, -1):
      mask = [(e > t) if orientation > 0 else (e < t) for e in etas]
      value = population_metric(toy, metric, mask)
      if value is not None and (best is None or value > best[0] + 1e-15):
        best = (value, (lo, hi), orientation)
  if best is None:
    raise ConditionError('metric undefined for every threshold classifier')
  return best


def normal_cdf(x: float) -> float:
  return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def _normal_pdf(x, mu, sigma):
  return math.exp(-0.5 * ((x - mu) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))


def continuous_truth_tv(mu1: float, mu2: float, sigma: float,
                        p: float = 0.5) -> float:
  """Optimal advantage between N(mu1, sigma^2) members and N(mu2, sigma^2).

  Computes int |p phi_1 - (1 - p) phi_2| by adaptive quadrature; at p = 0.5
  the result is checked against 2 Phi(|mu1 - mu2| / (2 sigma)) - 1.
  """
  if not sigma > 0:
    raise ValidationError(f'sigma must be > 0, got {sigma}')
  lo = min(mu1, mu2) - 40 * sigma
  hi = max(mu1, mu2) + 40 * sigma
  # Split where the two weighted densities cross.
  breaks = [mu1, mu2, 0.5 * (mu1 + mu2)]
  if mu1 != mu2 and p != 0.5:
    shift = sigma ** 2 * math.log(p / (1 - p)) / (mu1 - mu2)
    breaks.append(0.5 * (mu1 + mu2) - shift)
  breaks = sorted(b for b in set(breaks) if lo < b < hi)
  value, _ = integrate.quad(
      lambda x: abs(p * _normal_pdf(x, mu1, sigma)
                    - (1 - p) * _normal_pdf(x, mu2, sigma)),
      lo, hi, points=breaks or None, limit=200, epsabs=1e-13, epsrel=1e-12)
  if p == 0.5:
    closed = 2 * normal_cdf(abs(mu1 - mu2) / (2 * sigma)) - 1
    if abs(closed - value) > 1e-8:
      raise ArithmeticError(
          f'quadrature {value} disagrees with closed form {closed}')
    return closed
  return value


def sample_toy(source: Union[Categorical, NormalSpec], n: int,
               seed: int) -> np.ndarray:
  """Deterministic i.i.d. draws as an (n, d) array of query outputs."""
  if n < 1:
    raise ValidationError(f'n must be >= 1, got {n}')
  rng = np.random.default_rng(seed)
  if isinstance(source, Categorical):
    idx = rng.choice(len(source.pmf), size=n, p=np.asarray(source.pmf))
    return source.outcome_labels()[idx].reshape(-1, 1)
  mean = np.asarray(source.mean, dtype=float)
  return mean + source.sigma * rng.standard_normal((n, mean.shape[0]))


def random_toy(rng: np.random.Generator, n_outcomes: int,
               prior_p: Optional[float] = None,
               min_mass: float = 0.0) -> FiniteToyDistribution:
  """A random toy with Dirichlet(1) pmfs, each mass at least ``min_mass``."""
  def pmf():
    while True:
      v = rng.dirichlet(np.ones(n_outcomes))
      if v.min() >= min_mass:
        v = v / v.sum()
        return tuple(float(x) for x in v)
  p = float(rng.uniform(0.05, 0.95)) if prior_p is None else prior_p
  return FiniteToyDistribution(pmf(), pmf(), p)
