"""Query functions for the synthetic-data-release setting.

These turn raw sample vectors plus a released synthetic set into query
outputs: the nearest-neighbour distance to the synthetic set, and the
epsilon-ball log-distance score. Multi-part queries are assembled with
`combine_queries`.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from scipy.spatial import cKDTree

from mace.core import DataError, ValidationError

DISTANCES = {'l2': 2.0, 'l1': 1.0}
DISTANCE_FLOOR = 1e-12


def _minkowski_p(distance: str) -> float:
  try:
    return DISTANCES[distance.lower()]
  except KeyError:
    raise ValidationError(
        f'unknown distance {distance!r}; choose from {sorted(DISTANCES)}'
    ) from None


@dataclasses.dataclass(frozen=True, eq=False)
class SyntheticDataset:
  """A released synthetic sample g_1..g_n with a search index."""

  vectors: np.ndarray

  def __post_init__(self):
    arr = np.asarray(self.vectors, dtype=float)
    if arr.ndim == 1:
      arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
      raise DataError('synthetic dataset must be a non-empty list of vectors')
    if not np.all(np.isfinite(arr)):
      raise DataError('synthetic dataset contains NaN or Inf')
    arr.setflags(write=False)
    object.__setattr__(self, 'vectors', arr)
    object.__setattr__(self, '_tree', cKDTree(arr))

  def __len__(self) -> int:
    return self.vectors.shape[0]

  @property
  def dim(self) -> int:
    return self.vectors.shape[1]


def _samples(z, syn: SyntheticDataset) -> np.ndarray:
  arr = np.asarray(z, dtype=float)
  if arr.ndim == 1:
    arr = arr[None, :]
  if arr.shape[1] != syn.dim:
    raise DataError(
        f'dimension mismatch: sample {arr.shape[1]}, synthetic {syn.dim}')
  return arr


def nn_distance_query(z, syn: SyntheticDataset,
                      distance: str = 'l2') -> np.ndarray:
  """min_j d(z, g_j) for each sample row of ``z``; returns shape (n, 1).

  The kd-tree search is exact.
  """
  arr = _samples(z, syn)
  dist, _ = syn._tree.query(arr, k=1, p=_minkowski_p(distance))
  return np.asarray(dist, dtype=float).reshape(-1, 1)


def mc_epsilon_ball_query(z, syn: SyntheticDataset, epsilon_ball: float,
                          distance: str = 'l2') -> np.ndarray:
  """-(1/n) sum_i 1(d(g_i, z) <= eps) log d(g_i, z); returns shape (n, 1).

  Distances are floored at 1e-12 before the logarithm so exact duplicates
  contribute a large finite term.
  """
  if not epsilon_ball > 0:
    raise ValidationError(f'epsilon_ball must be > 0, got {epsilon_ball}')
  arr = _samples(z, syn)
  p = _minkowski_p(distance)
  n = len(syn)
  out = np.zeros((arr.shape[0], 1))
  neighbours = syn._tree.query_ball_point(arr, r=epsilon_ball, p=p)
  for i, idx in enumerate(neighbours):
    if not idx:
      continue
    diff = np.abs(syn.vectors[idx] - arr[i])
    d = diff.sum(axis=1) if p == 1.0 else np.sqrt((diff * diff).sum(axis=1))
    d = d[d <= epsilon_ball]
    out[i, 0] = -np.log(np.maximum(d, DISTANCE_FLOOR)).sum() / n
  return out


def combine_queries(parts) -> np.ndarray:
  """Concatenates query outputs of the same sample(s).

  One-dimensional parts are single query vectors and give one vector back;
  two-dimensional parts are (n, q_i) batches and are joined column-wise.
  """
  arrays = [np.asarray(part, dtype=float) for part in parts]
  if not arrays:
    raise ValidationError('combine_queries needs at least one part')
  if all(a.ndim <= 1 for a in arrays):
    return np.concatenate([np.atleast_1d(a) for a in arrays])
  cols = [a.reshape(-1, 1) if a.ndim == 1 else a for a in arrays]
  rows = {c.shape[0] for c in cols}
  if len(rows) != 1:
    raise DataError(f'query parts disagree on sample count: {sorted(rows)}')
  return np.concatenate(cols, axis=1)


def max_over_columns(multi) -> np.ndarray:
  """Row-wise maximum, e.g. over per-discriminator scores; shape (n, 1)."""
  arr = np.asarray(multi, dtype=float)
  if arr.ndim == 1:
    arr = arr[None, :]
  if arr.shape[-1] < 1:
    raise DataError('max_over_columns needs dimension >= 1')
  return arr.max(axis=1, keepdims=True)
