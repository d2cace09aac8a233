"""Reading and writing query-output CSVs and raw vector files.

Query CSV: header ``m,q1[,q2,...]``; ``m`` is 1 (member) or -1 (non-member).

Vector files are either numeric CSV rows or the little-endian binary layout
``MACEVEC1`` | u32 count | u32 dim | count*dim float64.
"""

from __future__ import annotations

import csv
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from mace.core import DataError

VEC_MAGIC = b'MACEVEC1'
_VEC_HEADER = struct.Struct('<8sII')


def _parse_float(cell: str, row: int, col: int, path) -> float:
  try:
    value = float(cell)
  except ValueError:
    raise DataError(
        f'{path}: row {row}, column {col}: non-numeric value {cell!r}') from None
  if not np.isfinite(value):
    raise DataError(f'{path}: row {row}, column {col}: non-finite value')
  return value


def ingest_query_csv(path) -> tuple[np.ndarray, np.ndarray]:
  """Reads labeled query outputs and splits them into (members, nonmembers).

  Row order is preserved within each pool. Row numbers in errors count the
  header as row 1.
  """
  path = Path(path)
  if not path.exists():
    raise DataError(f'{path}: no such file')
  with path.open(newline='') as f:
    reader = csv.reader(f)
    header = next(reader, None)
    if header is None:
      raise DataError(f'{path}: empty file')
    header = [h.strip() for h in header]
    if len(header) < 2 or header[0] != 'm' or any(
        h != f'q{i}' for i, h in enumerate(header[1:], start=1)):
      raise DataError(f'{path}: header must be m,q1[,q2,...], got '
                      f'{",".join(header)}')
    width = len(header)
    members, nonmembers = [], []
    for row_no, row in enumerate(reader, start=2):
      if not row or all(not c.strip() for c in row):
        continue
      if len(row) != width:
        raise DataError(f'{path}: row {row_no} has {len(row)} fields, '
                        f'expected {width}')
      label = _parse_float(row[0], row_no, 1, path)
      if label not in (1.0, -1.0):
        raise DataError(f'{path}: row {row_no}: label must be 1 or -1, '
                        f'got {row[0]!r}')
      values = [_parse_float(c, row_no, j, path)
                for j, c in enumerate(row[1:], start=2)]
      (members if label == 1.0 else nonmembers).append(values)
  q = width - 1
  return (np.asarray(members, dtype=float).reshape(-1, q),
          np.asarray(nonmembers, dtype=float).reshape(-1, q))


def write_query_csv(path, outputs, labels) -> None:
  outputs = np.asarray(outputs, dtype=float)
  if outputs.ndim == 1:
    outputs = outputs[:, None]
  labels = np.asarray(labels).astype(int).ravel()
  header = ['m'] + [f'q{i}' for i in range(1, outputs.shape[1] + 1)]
  with atomic_write(path, newline='') as f:
    writer = csv.writer(f)
    writer.writerow(header)
    for m, row in zip(labels, outputs):
      writer.writerow([int(m)] + [repr(float(v)) for v in row])


def ingest_vectors(path) -> np.ndarray:
  """Reads raw vectors from CSV or MACEVEC1 binary; returns shape (n, d)."""
  path = Path(path)
  if not path.exists():
    raise DataError(f'{path}: no such file')
  raw = path.read_bytes()
  if not raw.strip():
    raise DataError(f'{path}: empty file')
  if raw.startswith(VEC_MAGIC[:4]):
    return _decode_binary(raw, path)
  try:
    text = raw.decode('utf-8')
  except UnicodeDecodeError:
    return _decode_binary(raw, path)
  rows = list(csv.reader(text.splitlines()))
  rows = [r for r in rows if r and any(c.strip() for c in r)]
  try:
    [float(c) for c in rows[0]]
  except ValueError:
    rows = rows[1:]  # header row
  if not rows:
    raise DataError(f'{path}: no data rows')
  width = len(rows[0])
  out = []
  for row_no, row in enumerate(rows, start=1):
    if len(row) != width:
      raise DataError(f'{path}: row {row_no} has {len(row)} fields, '
                      f'expected {width}')
    out.append([_parse_float(c, row_no, j, path)
                for j, c in enumerate(row, start=1)])
  return np.asarray(out, dtype=float)


def _decode_binary(raw: bytes, path) -> np.ndarray:
  if len(raw) < _VEC_HEADER.size:
    raise DataError(f'{path}: truncated header')
  magic, count, dim = _VEC_HEADER.unpack_from(raw)
  if magic != VEC_MAGIC:
    raise DataError(f'{path}: bad magic {magic!r}')
  if dim == 0:
    raise DataError(f'{path}: dimension 0')
  expected = _VEC_HEADER.size + 8 * count * dim
  if len(raw) != expected:
    raise DataError(f'{path}: truncated payload: {len(raw)} bytes, expected '
                    f'{expected}')
  data = np.frombuffer(raw, dtype='<f8', offset=_VEC_HEADER.size)
  data = data.reshape(count, dim).astype(float)
  if not np.all(np.isfinite(data)):
    raise DataError(f'{path}: non-finite values')
  return data


def write_vectors(path, vectors, binary: bool = True) -> None:
  arr = np.asarray(vectors, dtype=float)
  if arr.ndim == 1:
    arr = arr[:, None]
  if binary:
    payload = (_VEC_HEADER.pack(VEC_MAGIC, arr.shape[0], arr.shape[1])
               + arr.astype('<f8').tobytes())
    with atomic_write(path, mode='wb') as f:
      f.write(payload)
    return
  with atomic_write(path, newline='') as f:
    writer = csv.writer(f)
    for row in arr:
      writer.writerow([repr(float(v)) for v in row])


class atomic_write:
  """Context manager writing to a temp file renamed over ``path`` on success."""

  def __init__(self, path, mode: str = 'w', newline=None):
    self.path = Path(path)
    self.mode = mode
    self.newline = newline

  def __enter__(self):
    self.path.parent.mkdir(parents=True, exist_ok=True)
    fd, self.tmp = tempfile.mkstemp(dir=self.path.parent,
                                    prefix=f'.{self.path.name}.')
    kwargs = {} if 'b' in self.mode else {'newline': self.newline,
                                          'encoding': 'utf-8'}
    self.f = os.fdopen(fd, self.mode, **kwargs)
    return self.f

  def __exit__(self, exc_type, exc, tb):
    self.f.close()
    if exc_type is None:
      os.replace(self.tmp, self.path)
    else:
      os.unlink(self.tmp)
    return False
