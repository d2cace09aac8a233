"""End-to-end audit pipeline and its JSON report.

`run_audit` goes ingest -> sample -> densities -> advantage estimates ->
optional per-sample risks -> optional DP-bound check. Every number in the
report can be regenerated from the echoed config; wall-clock data lives only
under the report's ``timing`` field.
"""

from __future__ import annotations

import contextlib
import csv
import dataclasses
import datetime
import json
import time
import warnings
from pathlib import Path
from typing import Optional, Union

import numpy as np

from mace import __version__
from mace.advantage import (AdvantageEstimate, advantage_continuous,
                            advantage_discrete, advantage_generalized)
from mace.core import (ExperimentConfig, MaceError, ValidationError,
                       build_labeled_set, check_delta, check_prior)
from mace.density import KERNELS, BinningScheme, fit_discrete, fit_kde
from mace.individual import dp_bound, individual_risks
from mace.io import atomic_write, ingest_query_csv, ingest_vectors
from mace.metrics import bayes_threshold, parse_metric

SCHEMA = 'mace-report/1'
# Settings that never change results; reported under ``timing``.
_EXECUTION_FIELDS = ('threads', 'out')


@dataclasses.dataclass(frozen=True)
class AuditConfig:
  """Everything needed to reproduce one audit run."""

  data: str
  prior_p: float = 0.5
  delta: float = 0.05
  density: str = 'discrete'
  bins: Optional[int] = 100
  bandwidth: Union[str, float] = 'auto'
  kernel: str = 'gaussian'
  metrics: tuple[str, ...] = ()
  n_samples: Optional[int] = None
  seed: int = 0
  mc_samples: Optional[int] = None
  grid: int = 512
  advantage: bool = True
  per_sample: bool = False
  risk_points: Optional[str] = None
  dp_epsilon: Optional[float] = None
  threads: int = 1
  out: Optional[str] = None

  def validate(self) -> None:
    """Checks every field; touches no data files."""
    check_prior(self.prior_p)
    check_delta(self.delta)
    if self.density not in ('discrete', 'continuous'):
      raise ValidationError(f'density must be discrete or continuous, got '
                            f'{self.density!r}')
    if self.bins is not None and (int(self.bins) != self.bins
                                  or self.bins < 2):
      raise ValidationError(f'bins must be an integer >= 2, got {self.bins}')
    if isinstance(self.bandwidth, str):
      if self.bandwidth != 'auto':
        raise ValidationError('bandwidth must be "auto" or a positive number')
    elif not self.bandwidth > 0:
      raise ValidationError(f'bandwidth must be positive, got {self.bandwidth}')
    if self.kernel not in KERNELS:
      raise ValidationError(f'unknown kernel {self.kernel!r}')
    for spec in self.metrics:
      parse_metric(spec, self.prior_p)
    if self.n_samples is not None and self.n_samples < 2:
      raise ValidationError(f'n_samples must be >= 2, got {self.n_samples}')
    if self.mc_samples is not None and self.mc_samples < 1000:
      raise ValidationError('mc_samples must be >= 1000')
    if self.grid < 1:
      raise ValidationError(f'grid must be >= 1, got {self.grid}')
    if self.threads < 1:
      raise ValidationError(f'threads must be >= 1, got {self.threads}')
    if self.dp_epsilon is not None and self.dp_epsilon < 0:
      raise ValidationError(f'dp_epsilon must be >= 0, got {self.dp_epsilon}')
    if not (self.advantage or self.per_sample):
      raise ValidationError('nothing to do: enable advantage or per_sample')

  def to_dict(self) -> dict:
    """Every field that can change a number; see `execution`."""
    out = dataclasses.asdict(self)
    out['metrics'] = list(self.metrics)
    for name in _EXECUTION_FIELDS:
      out.pop(name)
    return out

  def execution(self) -> dict:
    return {name: getattr(self, name) for name in _EXECUTION_FIELDS}

  @classmethod
  def from_dict(cls, record: dict) -> AuditConfig:
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(record) - fields
    if unknown:
      raise ValidationError(f'unknown config fields: {sorted(unknown)}')
    record = dict(record)
    record['metrics'] = tuple(record.get('metrics', ()))
    return cls(**record)


@dataclasses.dataclass
class AuditReport:
  config: dict
  pools: dict
  sample: dict
  results: list
  individual: Optional[list]
  dp: Optional[dict]
  warnings: list
  timing: dict
  schema: str = SCHEMA
  tool_version: str = __version__

  def to_dict(self) -> dict:
    return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

  def to_json(self) -> str:
    """Compact, key-sorted JSON (one line; per-sample lists get large)."""
    return _dumps(_jsonable(self.to_dict()))

  def deterministic_json(self) -> str:
    """The report without its ``timing`` field."""
    record = _jsonable(self.to_dict())
    record.pop('timing')
    return _dumps(record)


def _dumps(record: dict) -> str:
  return json.dumps(record, sort_keys=True, separators=(',', ':')) + '\n'


def _jsonable(obj):
  if isinstance(obj, dict):
    return {str(k): _jsonable(v) for k, v in obj.items()}
  if isinstance(obj, (list, tuple)):
    return [_jsonable(v) for v in obj]
  if isinstance(obj, np.ndarray):
    return _jsonable(obj.tolist())
  if isinstance(obj, np.generic):
    return obj.item()
  return obj


@contextlib.contextmanager
def _stage(name: str, runtimes: dict):
  start = time.perf_counter()
  try:
    yield
  except MaceError as e:
    raise type(e)(f'[{name}] {e}') from e
  finally:
    runtimes[name] = round(time.perf_counter() - start, 6)


def _result_record(est: AdvantageEstimate, metric: str) -> dict:
  record = est.to_dict()
  record['metric'] = metric
  if est.concentration_radius is not None:
    record['stability_interval'] = [est.point - est.concentration_radius,
                                    est.point + est.concentration_radius]
  return record


def run_audit(config: AuditConfig) -> AuditReport:
  """Runs the configured pipeline and, if ``config.out`` is set, writes
  the JSON report plus ``<out>.samples.csv`` and ``<out>.plot.csv``."""
  config.validate()
  runtimes: dict = {}
  caught: list = []
  with warnings.catch_warnings(record=True) as wlist:
    warnings.simplefilter('always')
    with _stage('ingest', runtimes):
      members, nonmembers = ingest_query_csv(config.data)
    pools = {'members': int(members.shape[0]),
             'nonmembers': int(nonmembers.shape[0])}

    with _stage('sample', runtimes):
      n = config.n_samples or (pools['members'] + pools['nonmembers'])
      exp = ExperimentConfig(config.prior_p, n, config.delta, config.seed)
      labeled = build_labeled_set(members, nonmembers, exp)
    sample = {'N': len(labeled), 'N1': labeled.n_members,
              'N2': labeled.n_nonmembers, 'dim': labeled.dim}

    with _stage('density', runtimes):
      scheme = None
      if config.density == 'discrete':
        if config.bins is not None:
          scheme = BinningScheme.fit(labeled.outputs, config.bins)
        pdens = fit_discrete(labeled.members, scheme)
        qdens = fit_discrete(labeled.nonmembers, scheme)
      else:
        pdens = fit_kde(labeled.members, config.bandwidth, config.kernel)
        qdens = fit_kde(labeled.nonmembers, config.bandwidth, config.kernel)

    results = []
    metrics = [parse_metric(s, config.prior_p) for s in config.metrics]
    if config.advantage:
      with _stage('advantage', runtimes):
        if config.density == 'discrete':
          est = advantage_discrete(labeled, scheme, config.delta)
        else:
          est = advantage_continuous(
              labeled, config.bandwidth, config.kernel, config.delta,
              config.mc_samples, config.seed, config.threads)
        results.append(_result_record(est, 'accuracy'))
      with _stage('generalized', runtimes):
        for metric in metrics:
          est = advantage_generalized(
              labeled, metric, config.density, scheme, config.bandwidth,
              config.kernel, config.grid, config.seed, config.threads)
          record = _result_record(est, metric.name)
          record['closed_form_threshold'] = bayes_threshold(metric)
          results.append(record)

    individual = None
    if config.per_sample:
      with _stage('individual', runtimes):
        if config.risk_points:
          points = ingest_vectors(config.risk_points)
          point_labels = [None] * points.shape[0]
        else:
          points = np.concatenate([members, nonmembers])
          point_labels = [1] * pools['members'] + [-1] * pools['nonmembers']
        individual = []
        per_metric = [None] + [m for m in metrics
                               if bayes_threshold(m) is not None]
        for metric in per_metric:
          risks = individual_risks(points, pdens, qdens, config.prior_p,
                                   config.delta, metric)
          for i, (risk, label) in enumerate(zip(risks, point_labels)):
            record = risk.to_dict()
            record['index'] = i
            record['label'] = label
            individual.append(record)

    dp = None
    if config.dp_epsilon is not None:
      with _stage('dp', runtimes):
        bound = dp_bound(config.dp_epsilon, config.prior_p)
        dp = bound.to_dict()
        dp['violations'] = []
        for record in results:
          if record['metric'] != 'accuracy':
            continue
          low = record['point'] - (record['concentration_radius'] or 0.0)
          if low > bound.bound:
            dp['violations'].append({'estimator': record['estimator_kind'],
                                     'low_end': low})
        if individual:
          for record in individual:
            if record['metric'] == 'accuracy' and record['lower'] > bound.bound:
              dp['violations'].append({'sample': record['index'],
                                       'low_end': record['lower']})
    caught = [str(w.message) for w in wlist]

  timing = {
      'generated_at': datetime.datetime.now(datetime.timezone.utc).isoformat(),
      'runtimes_s': runtimes,
      'execution': config.execution(),
  }
  report = AuditReport(
      config=config.to_dict(), pools=pools, sample=sample, results=results,
      individual=individual, dp=dp, warnings=sorted(set(caught)),
      timing=timing)
  if config.out:
    write_report(report, config.out)
  return report


def write_report(report: AuditReport, out) -> None:
  out = Path(out)
  with atomic_write(out) as f:
    f.write(report.to_json())
  with atomic_write(out.with_suffix('.plot.csv'), newline='') as f:
    writer = csv.writer(f)
    writer.writerow(['estimator', 'metric', 'point', 'lower', 'upper',
                     'prior_p', 'N', 'density', 'bins', 'bandwidth', 'seed'])
    cfg = report.config
    for r in report.results:
      radius = r['concentration_radius'] or 0.0
      writer.writerow([r['estimator_kind'], r['metric'], repr(r['point']),
                       repr(r['point'] - radius), repr(r['point'] + radius),
                       cfg['prior_p'], report.sample['N'], cfg['density'],
                       cfg['bins'], cfg['bandwidth'], cfg['seed']])
  if report.individual is not None:
    with atomic_write(out.with_suffix('.samples.csv'), newline='') as f:
      writer = csv.writer(f)
      writer.writerow(['index', 'label', 'metric', 'point', 'lower', 'upper',
                       'f_p_signed', 'flags', 'query_point'])
      for r in report.individual:
        writer.writerow([r['index'], '' if r['label'] is None else r['label'],
                         r['metric'], repr(r['point']), repr(r['lower']),
                         repr(r['upper']), repr(r['f_p_signed']),
                         ';'.join(r['flags']),
                         ' '.join(repr(v) for v in r['query_point'])])
