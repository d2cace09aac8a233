"""Estimating the optimal membership advantage of a released model or dataset.

Typical use::

  from mace import core, advantage
  labeled = core.build_labeled_set(members, nonmembers,
                                   core.ExperimentConfig(prior_p=0.5,
                                                         n_samples=2000))
  est = advantage.advantage_discrete(labeled)
"""

__version__ = '0.1.0'
