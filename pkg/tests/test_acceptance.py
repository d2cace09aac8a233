"""Acceptance criteria, one check per criterion.

Each check returns ``(passed, detail)``; the pytest wrapper prints a single
``[PASS]``/``[FAIL]`` line per criterion with its runtime. Run the file
directly (``python3 tests/test_acceptance.py``) for just the summary lines.
"""

import sys
import time

import numpy as np
import pytest
import scipy.stats

from mace import advantage, audit, io
from mace.core import (MEMBER, NONMEMBER, ExperimentConfig, LabeledQuerySet,
                       build_labeled_set, member_count)
from mace.density import BinningScheme, clopper_pearson, fit_discrete
from mace.individual import (dp_bound, f_p_hat, individual_risk_accuracy,
                             individual_risk_generalized)
from mace.metrics import bayes_threshold, named_metric
from mace.oracle import (FiniteToyDistribution, NormalSpec,
                         continuous_truth_tv, exact_advantage,
                         exact_best_threshold_value,
                         exact_generalized_conditional, exact_individual_risk,
                         sample_toy)
from mace.queries import SyntheticDataset, nn_distance_query

CANONICAL = FiniteToyDistribution((0.9, 0.1), (0.1, 0.9), 0.5)


def _draw(toy, n, seed):
  """Experiment sample of size n drawn straight from a finite toy."""
  n1 = member_count(n, toy.prior_p)
  members = sample_toy(toy.member_source, n1, seed)
  nonmembers = sample_toy(toy.nonmember_source, n - n1, seed + 1_000_003)
  return LabeledQuerySet(
      np.concatenate([members, nonmembers]),
      np.r_[np.full(n1, MEMBER), np.full(n - n1, NONMEMBER)], toy.prior_p)


def check_dp_bound():
  value = dp_bound(1.0, 0.5).bound
  return abs(value - 0.46212) <= 5e-4, f'bound={value:.6f}'


def check_threshold_closed_forms():
  got = {
      'ACC': bayes_threshold(named_metric('ACC')),
      'TPR': bayes_threshold(named_metric('TPR')),
      **{f'AM@{p}': bayes_threshold(named_metric('AM', prior_p=p))
         for p in (0.1, 0.3, 0.5)},
  }
  want = {'ACC': 0.5, 'TPR': 0.0, 'AM@0.1': 0.1, 'AM@0.3': 0.3, 'AM@0.5': 0.5}
  return got == want, ' '.join(f'{k}={v}' for k, v in got.items())


def check_discrete_consistency():
  truth = exact_advantage(CANONICAL)
  medians = []
  for n in (100, 1000, 10_000, 100_000):
    errors = [abs(advantage.advantage_discrete(_draw(CANONICAL, n, s)).point
                  - truth) for s in range(20)]
    medians.append(float(np.median(errors)))
  big = advantage.advantage_discrete(_draw(CANONICAL, 100_000, 99)).point
  monotone = all(a > b for a, b in zip(medians, medians[1:]))
  ok = abs(truth - 0.8) < 1e-12 and abs(big - truth) <= 0.01 and monotone
  return ok, (f'truth={truth:.4f} W_N(1e5)={big:.4f} median errors='
              + ','.join(f'{m:.4f}' for m in medians))


def check_mcdiarmid_stability():
  members = sample_toy(CANONICAL.member_source, 5000, 1)
  nonmembers = sample_toy(CANONICAL.nonmember_source, 5000, 2)
  n, delta = 2000, 0.05
  w = np.array([advantage.advantage_discrete(build_labeled_set(
      members, nonmembers, ExperimentConfig(0.5, n, delta, seed))).point
                for seed in range(200)])
  radius = advantage.mcdiarmid_radius(n, delta)
  frac = float(np.mean(np.abs(w - w.mean()) >= radius))
  return frac <= 0.05, f'radius={radius:.4f} exceed fraction={frac:.3f}'


def check_continuous_advantage():
  truth = continuous_truth_tv(0.0, 1.0, 1.0, 0.5)
  n = 50_000

  def estimate(mu2, seed):
    members = sample_toy(NormalSpec((0.0,)), n // 2, seed)
    nonmembers = sample_toy(NormalSpec((mu2,)), n // 2, seed + 1)
    labeled = LabeledQuerySet(
        np.concatenate([members, nonmembers]),
        np.r_[np.full(n // 2, MEMBER), np.full(n // 2, NONMEMBER)], 0.5)
    return advantage.advantage_continuous(labeled, seed=seed)

  apart = estimate(1.0, 10)
  same = estimate(0.0, 20)
  ok = abs(apart.point - truth) <= 0.05 and same.point <= 0.1
  return ok, (f'truth={truth:.5f} U_N={apart.point:.4f} '
              f'(mc se {apart.mc_stderr:.4f}) same-population U_N='
              f'{same.point:.4f}')


def check_plug_in_identity():
  rng = np.random.default_rng(6)
  worst = 0.0
  for _ in range(50):
    k = int(rng.integers(2, 9))
    toy = FiniteToyDistribution(tuple(rng.dirichlet(np.ones(k))),
                                tuple(rng.dirichlet(np.ones(k))),
                                float(rng.uniform(0.05, 0.95)))
    labeled = _draw(toy, int(rng.integers(50, 5000)),
                    int(rng.integers(1 << 30)))
    w = advantage.advantage_discrete(labeled).point
    via = advantage.advantage_from_individual(
        labeled, fit_discrete(labeled.members),
        fit_discrete(labeled.nonmembers)).point
    worst = max(worst, abs(w - via))
  return worst <= 1e-9, f'max |difference|={worst:.2e} over 50 toys'


def check_individual_risk_ci():
  truth = exact_individual_risk(CANONICAL, 0)
  errors, covered = [], 0
  for seed in range(100):
    pdens = fit_discrete(sample_toy(CANONICAL.member_source, 5000, seed))
    qdens = fit_discrete(sample_toy(CANONICAL.nonmember_source, 5000,
                                    seed + 500))
    est = individual_risk_accuracy([0.0], pdens, qdens, 0.5, 0.05)
    errors.append(abs(est.point - truth))
    covered += est.ci.contains(truth)
  med = float(np.median(errors))
  return (med <= 0.02 and covered >= 93,
          f'truth={truth:.3f} median error={med:.4f} coverage={covered}/100')


def check_clopper_pearson_coverage():
  rng = np.random.default_rng(8)
  rates = {}
  for q in (0.05, 0.5, 0.9):
    ks = rng.binomial(100, q, size=10_000)
    hits = {k: clopper_pearson(int(k), 100, 0.95).contains(q)
            for k in np.unique(ks)}
    rates[q] = float(np.mean([hits[k] for k in ks]))
  return (all(r >= 0.94 for r in rates.values()),
          ' '.join(f'q={q}: {r:.4f}' for q, r in rates.items()))


def _two_cell_toys(rng, count, margin=0.05):
  toys = []
  while len(toys) < count:
    a, b = rng.uniform(0.2, 0.8, size=2)
    p = float(rng.uniform(0.3, 0.7))
    toy = FiniteToyDistribution((a, 1 - a), (b, 1 - b), p)
    etas = [toy.joint(j)[0] / sum(toy.joint(j)) for j in (0, 1)]
    # Keep posteriors clear of both thresholds so N = 5e4 settles the side.
    if all(abs(e - 0.5) >= margin and abs(e - p) >= margin for e in etas):
      toys.append(toy)
  return toys


def check_generalized_individual_risk():
  rng = np.random.default_rng(9)
  worst, worst_identity = 0.0, 0.0
  for i, toy in enumerate(_two_cell_toys(rng, 20)):
    labeled = _draw(toy, 50_000, 100 + i)
    pdens = fit_discrete(labeled.members)
    qdens = fit_discrete(labeled.nonmembers)
    for name in ('ACC', 'AM'):
      metric = named_metric(name, prior_p=toy.prior_p)
      for j in (0, 1):
        est = individual_risk_generalized([float(j)], pdens, qdens,
                                          toy.prior_p, metric)
        exact = exact_generalized_conditional(toy, metric, j)
        worst = max(worst, abs(est.point - exact))
        if name == 'ACC':
          fp = abs(f_p_hat([float(j)], pdens, qdens, toy.prior_p))
          worst_identity = max(worst_identity, abs(2 * est.point - 1 - fp))
  return (worst <= 0.03 and worst_identity <= 1e-12,
          f'max error={worst:.4f} ACC identity gap={worst_identity:.1e}')


# Posteriors 0.1198 and 0.0802 bracket p = 0.1, so the AM optimum pins the
# threshold to a narrow band around p.
BRACKET = FiniteToyDistribution((0.6, 0.4), (0.49, 0.51), 0.1)


def check_algorithm_two():
  am = named_metric('AM', prior_p=0.1)
  labeled = _draw(BRACKET, 150_000, 10)
  est = advantage.advantage_generalized(labeled, am, seed=10)
  best, (lo, hi), _ = exact_best_threshold_value(BRACKET, am)
  acc_labeled = _draw(CANONICAL, 30_000, 11)
  acc = advantage.advantage_generalized(acc_labeled, named_metric('ACC'),
                                        seed=11)
  w = advantage.advantage_discrete(acc_labeled).point
  ok = (abs(est.threshold - 0.1) <= 0.05 and abs(est.point - best) <= 0.03
        and abs(2 * acc.point - 1 - w) <= 0.03)
  return ok, (f'AM threshold={est.threshold:.4f} (optimal band '
              f'{lo:.4f}..{hi:.4f}) value={est.point:.4f} oracle={best:.4f}; '
              f'ACC 2*est-1={2 * acc.point - 1:.4f} W_N={w:.4f}')


def check_synthetic_size_trend():
  sizes = (10, 100, 1000, 10_000)
  table = np.zeros((10, len(sizes)))
  for seed in range(10):
    rng = np.random.default_rng(seed)
    train = rng.normal(size=(100, 2))
    fresh = rng.normal(size=(1000, 2))
    for i, n in enumerate(sizes):
      # An overfit generator: noisy copies of its training points.
      syn = SyntheticDataset(train[rng.integers(0, 100, n)]
                             + 0.05 * rng.normal(size=(n, 2)))
      labeled = build_labeled_set(nn_distance_query(train, syn),
                                  nn_distance_query(fresh, syn),
                                  ExperimentConfig(0.5, 2000, rng_seed=seed))
      table[seed, i] = advantage.advantage_discrete(
          labeled, BinningScheme.fit(labeled.outputs, 100)).point
  means = table.mean(axis=0)
  rho = scipy.stats.spearmanr(sizes, means)[0]
  pooled = scipy.stats.spearmanr(np.tile(sizes, 10), table.ravel())[0]
  return rho > 0.9, ('mean W_N by size=' + ','.join(f'{m:.3f}' for m in means)
                     + f' spearman={rho:.3f} (pooled runs {pooled:.3f})')


def check_determinism(tmp_dir):
  rng = np.random.default_rng(12)
  path = tmp_dir / 'det.csv'
  io.write_query_csv(path, np.r_[rng.normal(size=300), rng.normal(1, size=300)],
                     [1] * 300 + [-1] * 300)
  base = dict(data=str(path), density='continuous', metrics=('AM', 'ACC'),
              per_sample=True, dp_epsilon=1.0, n_samples=1200, seed=3,
              mc_samples=4000)
  reports = [audit.run_audit(audit.AuditConfig(threads=t, **base))
             for t in (1, 4, 1)]
  texts = [r.deterministic_json() for r in reports]
  ok = len(set(texts)) == 1
  return ok, f'{len(texts)} runs (threads 1,4,1), {len(texts[0])} bytes each'


CRITERIA = [
    (1, 'DP bound at epsilon=1, p=0.5', check_dp_bound),
    (2, 'Bayes threshold closed forms', check_threshold_closed_forms),
    (3, 'discrete advantage consistency', check_discrete_consistency),
    (4, 'McDiarmid stability', check_mcdiarmid_stability),
    (5, 'continuous advantage', check_continuous_advantage),
    (6, 'plug-in identity', check_plug_in_identity),
    (7, 'individual-risk intervals', check_individual_risk_ci),
    (8, 'Clopper-Pearson coverage', check_clopper_pearson_coverage),
    (9, 'generalized individual risk', check_generalized_individual_risk),
    (10, 'three-partition empirical estimator', check_algorithm_two),
    (11, 'synthetic-dataset-size trend', check_synthetic_size_trend),
    (12, 'determinism across thread counts', check_determinism),
]


def _run(number, title, check, tmp_dir):
  start = time.perf_counter()
  ok, detail = check(tmp_dir) if check is check_determinism else check()
  elapsed = time.perf_counter() - start
  line = (f'[{"PASS" if ok else "FAIL"}] criterion {number:>2} {title}: '
          f'{detail} ({elapsed:.2f}s)')
  return ok, line


@pytest.mark.parametrize('number, title, check', CRITERIA,
                         ids=[f'criterion_{c[0]:02d}' for c in CRITERIA])
def test_acceptance(number, title, check, tmp_path, capsys):
  ok, line = _run(number, title, check, tmp_path)
  with capsys.disabled():
    print('\n' + line)
  assert ok, line


if __name__ == '__main__':
  import pathlib
  import tempfile
  with tempfile.TemporaryDirectory() as tmp:
    results = [_run(n, t, c, pathlib.Path(tmp)) for n, t, c in CRITERIA]
  for _, line in results:
    print(line)
  sys.exit(0 if all(ok for ok, _ in results) else 1)
