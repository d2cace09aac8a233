"""Command-line interface: ``mace audit|risk|dp-bound|query|simulate``.

Exit codes: 0 success, 2 invalid arguments or config, 3 bad input data,
4 numerical-condition failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

import numpy as np

from mace import __version__
from mace.advantage import advantage_continuous, advantage_discrete
from mace.audit import AuditConfig, _jsonable, run_audit
from mace.core import (MEMBER, NONMEMBER, LabeledQuerySet, MaceError,
                       ValidationError, member_count)
from mace.density import KERNELS
from mace.individual import dp_bound
from mace.io import atomic_write, ingest_vectors, write_query_csv
from mace.oracle import (FiniteToyDistribution, NormalSpec,
                         continuous_truth_tv, exact_advantage,
                         exact_individual_risk, sample_toy)
from mace.queries import (SyntheticDataset, combine_queries,
                          mc_epsilon_ball_query, nn_distance_query)


def _bins(value: str) -> Optional[int]:
  if value == 'native':
    return None
  try:
    bins = int(value)
  except ValueError:
    raise argparse.ArgumentTypeError(
        f'--bins takes an integer or "native", got {value!r}') from None
  return bins


def _bandwidth(value: str):
  if value == 'auto':
    return value
  try:
    return float(value)
  except ValueError:
    raise argparse.ArgumentTypeError(
        f'--bandwidth takes a number or "auto", got {value!r}') from None


def _floats(value: str) -> tuple[float, ...]:
  try:
    return tuple(float(v) for v in value.split(','))
  except ValueError:
    raise argparse.ArgumentTypeError(
        f'expected comma-separated numbers, got {value!r}') from None


def _common(p: argparse.ArgumentParser) -> None:
  p.add_argument('--prior', type=float, default=0.5,
                 help='prior probability p of presenting a member')
  p.add_argument('--delta', type=float, default=0.05,
                 help='confidence parameter (intervals at level 1 - delta)')
  p.add_argument('--seed', type=int, default=0)
  p.add_argument('--out', help='output path (default: stdout)')


def _density_flags(p: argparse.ArgumentParser) -> None:
  p.add_argument('--density', choices=('discrete', 'continuous'),
                 default='discrete')
  p.add_argument('--bins', type=_bins, default=100,
                 help='histogram bins per axis, or "native" to use the raw '
                      'integer-valued outputs as cells')
  p.add_argument('--bandwidth', type=_bandwidth, default='auto')
  p.add_argument('--kernel', choices=KERNELS, default='gaussian')
  p.add_argument('--threads', type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
  parser = argparse.ArgumentParser(
      prog='mace',
      description='Estimate optimal membership advantage and individual '
                  'privacy risk from labeled query outputs.')
  parser.add_argument('--version', action='version',
                      version=f'%(prog)s {__version__}')
  sub = parser.add_subparsers(dest='command', required=True)

  audit = sub.add_parser('audit', help='population-level advantage audit')
  audit.add_argument('data', help='query CSV with header m,q1[,q2,...]')
  _common(audit)
  _density_flags(audit)
  audit.add_argument('--metric', action='append', default=[],
                     help='extra metric: ACC, PPV, TPR, TNR, AM, '
                          'WA:w1,w2,w3,w4 or a JSON coefficient record; '
                          'repeatable')
  audit.add_argument('--n-samples', type=int,
                     help='experiment size N (default: total pool size)')
  audit.add_argument('--mc-samples', type=int)
  audit.add_argument('--grid', type=int, default=512,
                     help='threshold grid size for empirical metrics')
  audit.add_argument('--per-sample', action='store_true',
                     help='also estimate individual risk of every row')
  audit.add_argument('--dp-epsilon', type=float,
                     help='compare estimates with the epsilon-DP bound')

  risk = sub.add_parser('risk', help='per-sample individual privacy risk')
  risk.add_argument('data', help='query CSV used to fit the densities')
  _common(risk)
  _density_flags(risk)
  risk.add_argument('--metric', action='append', default=[])
  risk.add_argument('--n-samples', type=int)
  risk.add_argument('--points',
                    help='query outputs to score (CSV or MACEVEC1); default: '
                         'every row of the data file')
  risk.add_argument('--dp-epsilon', type=float)

  dp = sub.add_parser('dp-bound', help='advantage cap implied by epsilon-DP')
  dp.add_argument('--epsilon', type=float, required=True)
  dp.add_argument('--prior', type=float, default=0.5)

  query = sub.add_parser(
      'query', help='build a query CSV from raw vectors and a synthetic set')
  query.add_argument('kind', choices=('nn', 'ball', 'both'))
  query.add_argument('--members', required=True)
  query.add_argument('--nonmembers', required=True)
  query.add_argument('--synthetic', required=True)
  query.add_argument('--distance', choices=('l2', 'l1'), default='l2')
  query.add_argument('--epsilon-ball', type=float,
                     help='radius for the ball query')
  query.add_argument('--out', help='output CSV (default: stdout)')

  sim = sub.add_parser(
      'simulate', help='sample a toy with known truth and estimate it')
  sim.add_argument('kind', choices=('toy', 'normal'))
  sim.add_argument('--member-pmf', type=_floats, default=(0.9, 0.1))
  sim.add_argument('--nonmember-pmf', type=_floats, default=(0.1, 0.9))
  sim.add_argument('--mu1', type=float, default=0.0)
  sim.add_argument('--mu2', type=float, default=1.0)
  sim.add_argument('--sigma', type=float, default=1.0)
  sim.add_argument('--n', type=int, default=10_000, help='experiment size N')
  sim.add_argument('--bandwidth', type=_bandwidth, default='auto')
  sim.add_argument('--kernel', choices=KERNELS, default='gaussian')
  sim.add_argument('--mc-samples', type=int)
  sim.add_argument('--csv', help='also write the drawn sample as a query CSV')
  _common(sim)
  return parser


def _emit(text: str, out: Optional[str]) -> None:
  if out:
    with atomic_write(out) as f:
      f.write(text)
  else:
    sys.stdout.write(text)


def _audit_config(args, per_sample: bool, advantage: bool) -> AuditConfig:
  return AuditConfig(
      data=args.data, prior_p=args.prior, delta=args.delta,
      density=args.density, bins=args.bins, bandwidth=args.bandwidth,
      kernel=args.kernel, metrics=tuple(args.metric),
      n_samples=args.n_samples, seed=args.seed,
      mc_samples=getattr(args, 'mc_samples', None),
      grid=getattr(args, 'grid', 512), advantage=advantage,
      per_sample=per_sample, risk_points=getattr(args, 'points', None),
      dp_epsilon=args.dp_epsilon, threads=args.threads, out=args.out)


def _cmd_audit(args) -> int:
  report = run_audit(_audit_config(args, args.per_sample, True))
  if not args.out:
    sys.stdout.write(report.to_json())
  return 0


def _cmd_risk(args) -> int:
  report = run_audit(_audit_config(args, True, False))
  if not args.out:
    sys.stdout.write(report.to_json())
  return 0


def _cmd_dp_bound(args) -> int:
  sys.stdout.write(json.dumps(dp_bound(args.epsilon, args.prior).to_dict(),
                              indent=2) + '\n')
  return 0


def _cmd_query(args) -> int:
  syn = SyntheticDataset(ingest_vectors(args.synthetic))
  if args.kind in ('ball', 'both') and args.epsilon_ball is None:
    raise ValidationError('the ball query needs --epsilon-ball')
  pools = []
  for path in (args.members, args.nonmembers):
    z = ingest_vectors(path)
    parts = []
    if args.kind in ('nn', 'both'):
      parts.append(nn_distance_query(z, syn, args.distance))
    if args.kind in ('ball', 'both'):
      parts.append(mc_epsilon_ball_query(z, syn, args.epsilon_ball,
                                         args.distance))
    pools.append(combine_queries(parts))
  outputs = np.concatenate(pools)
  labels = np.concatenate([np.full(pools[0].shape[0], MEMBER),
                           np.full(pools[1].shape[0], NONMEMBER)])
  if args.out:
    write_query_csv(args.out, outputs, labels)
  else:
    header = ['m'] + [f'q{i}' for i in range(1, outputs.shape[1] + 1)]
    sys.stdout.write(','.join(header) + '\n')
    for m, row in zip(labels, outputs):
      sys.stdout.write(','.join([str(int(m))] + [repr(float(v)) for v in row])
                       + '\n')
  return 0


def _cmd_simulate(args) -> int:
  n1 = member_count(args.n, args.prior)
  n2 = args.n - n1
  if n1 < 1 or n2 < 1:
    raise ValidationError(f'N={args.n} at p={args.prior} leaves a class empty')
  if args.kind == 'toy':
    toy = FiniteToyDistribution(args.member_pmf, args.nonmember_pmf,
                                args.prior)
    members = sample_toy(toy.member_source, n1, args.seed)
    nonmembers = sample_toy(toy.nonmember_source, n2, args.seed + 1)
    truth = exact_advantage(toy)
    extra = {'individual_risk': [exact_individual_risk(toy, j)
                                 for j in range(toy.n_outcomes)]}
  else:
    members = sample_toy(NormalSpec((args.mu1,), args.sigma), n1, args.seed)
    nonmembers = sample_toy(NormalSpec((args.mu2,), args.sigma), n2,
                            args.seed + 1)
    truth = continuous_truth_tv(args.mu1, args.mu2, args.sigma, args.prior)
    extra = {}
  labeled = LabeledQuerySet(
      np.concatenate([members, nonmembers]),
      np.concatenate([np.full(n1, MEMBER), np.full(n2, NONMEMBER)]),
      args.prior)
  if args.csv:
    write_query_csv(args.csv, labeled.outputs, labeled.labels)
  if args.kind == 'toy':
    est = advantage_discrete(labeled, None, args.delta)
  else:
    est = advantage_continuous(labeled, args.bandwidth, args.kernel,
                               args.delta, args.mc_samples, args.seed)
  record = {'kind': args.kind, 'truth': truth, 'estimate': est.to_dict(),
            'abs_error': abs(est.point - truth), **extra}
  _emit(json.dumps(_jsonable(record), indent=2, sort_keys=True) + '\n',
        args.out)
  return 0


_COMMANDS = {
    'audit': _cmd_audit,
    'risk': _cmd_risk,
    'dp-bound': _cmd_dp_bound,
    'query': _cmd_query,
    'simulate': _cmd_simulate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
  parser = build_parser()
  try:
    args = parser.parse_args(argv)
  except SystemExit as e:
    # argparse exits 2 on bad usage, matching the validation exit code.
    return int(e.code or 0)
  try:
    return _COMMANDS[args.command](args)
  except MaceError as e:
    print(f'mace: {type(e).__name__}: {e}', file=sys.stderr)
    return e.exit_code


if __name__ == '__main__':
  sys.exit(main())
