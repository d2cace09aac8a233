"""Domain types, error classes and the sampling semantics of the audit experiment.

A `LabeledQuerySet` is the empirical realisation of the membership experiment:
``N1`` query outputs drawn from the training set (label +1) and ``N2`` drawn
from the hold-out population (label -1), together with the prior ``p``.
"""

from __future__ import annotations

import dataclasses
import math
from collections.abc import Sequence

import numpy as np

MEMBER = 1
NONMEMBER = -1

DEFAULT_DELTA = 0.05


class MaceError(Exception):
  """Base class for every error raised by this package."""

  exit_code = 1


class ValidationError(MaceError, ValueError):
  """Bad arguments or configuration, detected before touching data."""

  exit_code = 2


class DataError(MaceError, ValueError):
  """Malformed or insufficient input data."""

  exit_code = 3


class ConditionError(MaceError, ArithmeticError):
  """A numerical precondition of an estimator does not hold."""

  exit_code = 4


def as_outputs(values, name: str = 'outputs') -> np.ndarray:
  """Coerces query outputs to a finite float array of shape (n, q)."""
  arr = np.asarray(values, dtype=float)
  if arr.ndim == 1:
    arr = arr[:, None]
  if arr.ndim != 2:
    raise DataError(f'{name} must be a list of vectors, got shape {arr.shape}')
  if arr.shape[1] < 1:
    raise DataError(f'{name} have dimension 0')
  if not np.all(np.isfinite(arr)):
    raise DataError(f'{name} contain NaN or Inf')
  return arr


def check_prior(p: float) -> float:
  p = float(p)
  if not 0.0 < p < 1.0:
    raise ValidationError(f'prior p must be in (0, 1), got {p}')
  return p


def check_delta(delta: float) -> float:
  delta = float(delta)
  if not 0.0 < delta < 1.0:
    raise ValidationError(f'delta must be in (0, 1), got {delta}')
  return delta


def _frozen(arr: np.ndarray) -> np.ndarray:
  arr = np.array(arr, copy=True)
  arr.setflags(write=False)
  return arr


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
  """Parameters of one run of the sampling experiment."""

  prior_p: float
  n_samples: int
  confidence_delta: float = DEFAULT_DELTA
  rng_seed: int = 0

  def __post_init__(self):
    check_prior(self.prior_p)
    check_delta(self.confidence_delta)
    if int(self.n_samples) != self.n_samples or self.n_samples < 2:
      raise ValidationError(
          f'n_samples must be an integer >= 2, got {self.n_samples}')

  @property
  def n_members(self) -> int:
    return member_count(self.n_samples, self.prior_p)


def member_count(n: int, p: float) -> int:
  """Number of member draws for ``n`` samples at prior ``p`` (round half up)."""
  return int(math.floor(n * p + 0.5))


@dataclasses.dataclass(frozen=True, eq=False)
class LabeledQuerySet:
  """Query outputs with membership labels in {+1, -1} and the prior p.

  Attributes:
    outputs: float array of shape (N, q).
    labels: int array of shape (N,), +1 for members and -1 for non-members.
    prior_p: prior probability of presenting a member.
  """

  outputs: np.ndarray
  labels: np.ndarray
  prior_p: float

  def __post_init__(self):
    outputs = as_outputs(self.outputs)
    labels = np.asarray(self.labels).astype(int).ravel()
    if labels.shape[0] != outputs.shape[0]:
      raise DataError(
          f'{outputs.shape[0]} outputs but {labels.shape[0]} labels')
    if not np.all((labels == MEMBER) | (labels == NONMEMBER)):
      raise DataError('labels must be +1 (member) or -1 (non-member)')
    check_prior(self.prior_p)
    object.__setattr__(self, 'outputs', _frozen(outputs))
    object.__setattr__(self, 'labels', _frozen(labels))
    object.__setattr__(self, 'prior_p', float(self.prior_p))
    if self.n_members < 1 or self.n_nonmembers < 1:
      raise DataError('a labeled set needs at least one member and one '
                      f'non-member (got {self.n_members}/{self.n_nonmembers})')

  def __len__(self) -> int:
    return self.outputs.shape[0]

  @property
  def dim(self) -> int:
    return self.outputs.shape[1]

  @property
  def n_members(self) -> int:
    return int(np.count_nonzero(self.labels == MEMBER))

  @property
  def n_nonmembers(self) -> int:
    return int(np.count_nonzero(self.labels == NONMEMBER))

  @property
  def members(self) -> np.ndarray:
    return self.outputs[self.labels == MEMBER]

  @property
  def nonmembers(self) -> np.ndarray:
    return self.outputs[self.labels == NONMEMBER]

  def subset(self, index) -> LabeledQuerySet:
    return LabeledQuerySet(self.outputs[index], self.labels[index],
                           self.prior_p)


def build_labeled_set(
    members: Sequence, nonmembers: Sequence, cfg: ExperimentConfig
) -> LabeledQuerySet:
  """Runs the sampling experiment against two pools of query outputs.

  Draws ``N1 = round(N p)`` outputs uniformly with replacement from the
  member pool and ``N2 = N - N1`` from the non-member pool. Members come
  first in the returned set.

  Raises:
    DataError: if a pool is empty or the pools disagree on dimension.
    ValidationError: if the config is invalid or N1 or N2 would be zero.
  """
  if len(members) == 0 or len(nonmembers) == 0:
    raise DataError('member and non-member pools must be non-empty')
  mem = as_outputs(members, 'members')
  non = as_outputs(nonmembers, 'nonmembers')
  if mem.shape[1] != non.shape[1]:
    raise DataError(
        f'dimension mismatch: members {mem.shape[1]}, '
        f'non-members {non.shape[1]}')
  n1 = cfg.n_members
  n2 = cfg.n_samples - n1
  if n1 < 1 or n2 < 1:
    raise ValidationError(
        f'N={cfg.n_samples}, p={cfg.prior_p} gives N1={n1}, N2={n2}; '
        'both must be >= 1')
  rng = np.random.default_rng(cfg.rng_seed)
  idx1 = rng.integers(0, mem.shape[0], size=n1)
  idx2 = rng.integers(0, non.shape[0], size=n2)
  outputs = np.concatenate([mem[idx1], non[idx2]])
  labels = np.concatenate([np.full(n1, MEMBER), np.full(n2, NONMEMBER)])
  return LabeledQuerySet(outputs, labels, cfg.prior_p)


def split_three_ways(
    labeled: LabeledQuerySet, seed: int = 0
) -> tuple[LabeledQuerySet, LabeledQuerySet, LabeledQuerySet]:
  """Splits a set into three disjoint label-stratified partitions.

  Within each label class the indices are shuffled and cut into three parts
  whose sizes differ by at most one, so every partition holds at least one
  member and one non-member.
  """
  if labeled.n_members < 3 or labeled.n_nonmembers < 3:
    raise DataError(
        'set too small to split three ways: need >= 3 members and >= 3 '
        f'non-members, got {labeled.n_members}/{labeled.n_nonmembers}')
  rng = np.random.default_rng(seed)
  parts = [[], [], []]
  for label in (MEMBER, NONMEMBER):
    idx = np.flatnonzero(labeled.labels == label)
    idx = idx[rng.permutation(idx.shape[0])]
    for part, chunk in zip(parts, np.array_split(idx, 3)):
      part.append(chunk)
  return tuple(labeled.subset(np.sort(np.concatenate(p))) for p in parts)
