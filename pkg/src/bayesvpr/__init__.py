"""Probabilistic visual place recognition: a topological Bayes filter and
a 6DoF Monte Carlo localizer over (pose, embedding) maps, with baselines
and a precision-recall evaluation harness."""

__version__ = "0.1.0"
