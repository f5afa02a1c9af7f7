"""Compare all four localizers on one aliased world.

Every method is swept over candidate acceptance thresholds on the same
trials.  A trial counts as a true positive at a threshold when its first
accepted step lands within 3 m / 15 degrees; trials that never accept
are misses, not mistakes.  The headline number is recall at the highest
threshold that still keeps precision at or above 99 percent.

Evaluation pools two query traverses of the same map: a benign pass and
a much noisier one, the way a benchmark mixes daytime and nighttime
passes over one route.  The benign half keeps everyone honest; the noisy
half is where the methods separate.

Runs in about a minute; shrink trials for a quicker look.
"""

import numpy as np

from bayesvpr.baselines import SequenceMatchParams
from bayesvpr.dataset import SyntheticWorldConfig, generate_world, sample_trials
from bayesvpr.evaluation import (
    ErrorTolerance,
    build_threshold_grid,
    evaluate_trials,
    make_localizer,
    observed_scores,
    precision_recall_sweep,
    summary_metrics,
    trace_outcomes_fn,
)
from bayesvpr.mcl import MclParams

TOLERANCE = ErrorTolerance(3.0, np.deg2rad(15.0))

# Three aliased pairs on a short route.  Same map both times: the route
# geometry and reference content depend only on the seed, so the two
# configs below differ only in how noisy the query frames are.
def build(appearance_sigma):
    cfg = SyntheticWorldConfig(
        route_length=500.0,
        embed_dim=48,
        aliasing_segments=(((10.0, 34.0), (58.0, 82.0)),
                           ((150.0, 174.0), (198.0, 222.0)),
                           ((300.0, 324.0), (348.0, 372.0))),
        feature_length_scale=4.0,
        appearance_noise_sigma=appearance_sigma,
        odom_noise_sigma=(0.8, 0.3, 0.3, 0.01, 0.01, 0.02),
        rng_seed=13,
    )
    return generate_world(cfg)


lmap, [benign] = build(0.05)
_, [severe] = build(0.7)
trials = (sample_trials(benign, 80, 16, seed=25)
          + sample_trials(severe, 80, 16, seed=26))

print(f"{len(lmap)} references, {len(trials)} trials "
      f"(80 benign + 80 severe)\n")
print("method        recall@99%   AUC    mean steps")

# Queries fall every 3 m but references every 0.5 m, so a query sequence
# advances about six reference indices per frame; the sequence matcher's
# velocity sweep has to bracket that slope or it can never align.
seq_params = SequenceMatchParams(seq_length=10, velocity_range=(4.8, 9.0))

for method, kwargs in (
        ("single", {}),
        ("seqmatch", {"seq_params": seq_params}),
        ("topological", {"delta": 10.0}),
        ("mcl", {"delta": 10.0,
                 "mcl_params": MclParams(num_particles=1500)})):
    localizer = make_localizer(method, lmap, **kwargs)
    traces = evaluate_trials(localizer, trials)
    outcomes_fn = trace_outcomes_fn(traces, localizer.higher_is_better)
    grid = build_threshold_grid(observed_scores(traces))
    curve = precision_recall_sweep(outcomes_fn, TOLERANCE, grid)
    m = summary_metrics(curve, outcomes_fn)
    print(f"{method:12s}  {m.recall_at_99:10.3f}  {m.auc:5.3f}  "
          f"{m.mean_steps:8.2f}")

print("\nSingle-image matching cannot tell the twins apart even on the")
print("benign pass, so confident mistakes cap its usable recall near zero.")
print("The fixed sequence window survives the benign pass but starts")
print("flipping matches on the noisy one.  The two filters keep")
print("integrating until the ambiguity resolves, and when they cannot")
print("resolve it in time they abstain instead of guessing, which is what")
print("keeps their precision intact at high recall.")
