"""Run the 6DoF Monte Carlo localizer and see what odometry buys it.

Particles are full rigid-body poses.  Each step composes the reported
odometry increment onto every particle with proposal noise, reweights
against the K nearest references in pose space, and resamples when the
effective sample size sags.  Convergence is the weight mass within a
pose-metric window of the heaviest particle.
"""

import numpy as np

from bayesvpr.dataset import SyntheticWorldConfig, generate_world, sample_trials
from bayesvpr.evaluation import error_against_truth, make_localizer
from bayesvpr.mcl import MclParams

ALIAS = (((30.0, 54.0), (110.0, 134.0)),)


def build(odom_sigma):
    cfg = SyntheticWorldConfig(
        route_length=500.0,
        embed_dim=64,
        aliasing_segments=ALIAS,
        appearance_noise_sigma=0.3,
        odom_noise_sigma=odom_sigma,
        rng_seed=11,
    )
    return generate_world(cfg)


def episode_table(lmap, traverse, label):
    trial = sample_trials(traverse, 1, 14, seed=5)[0]
    loc = make_localizer("mcl", lmap, delta=10.0,
                         mcl_params=MclParams(num_particles=1500))
    print(f"--- {label}, trial starts at "
          f"{trial.start * 3.0:.0f} m ---")
    print("step  tau    estimate error")
    for rec in loc.episode(trial.observations, seed=1):
        truth = trial.ground_truth[rec.truth_index]
        if rec.estimate is None:
            print(f"{rec.step:3d}   {rec.score:.3f}  (no estimate yet)")
            continue
        trans, rot = error_against_truth(rec.estimate, truth)
        flag = "converged" if rec.score > 0.9 else ""
        print(f"{rec.step:3d}   {rec.score:.3f}  {trans:6.2f} m  "
              f"{np.degrees(rot):5.2f} deg  {flag}")
    print()


# Step 1: noisy wheel/visual odometry.  The particle cloud has to carry
# real pose uncertainty, so concentration takes several steps.
lmap, [noisy] = build((0.8, 0.3, 0.3, 0.01, 0.01, 0.02))
episode_table(lmap, noisy, "noisy odometry")

# Step 2: the same route with perfect odometry increments (think RTK
# ground truth).  The cloud rigidly tracks the motion, so the surviving
# particles hug the true pose instead of rattling around it.
lmap_rtk, [clean] = build((0.0,) * 6)
episode_table(lmap_rtk, clean, "noiseless odometry")

print("Same map, same appearance noise: with clean odometry the converged")
print("estimate sits a few decimetres from the truth, against roughly a")
print("metre under noisy odometry.  The occasional single-step tau dip is")
print("the read right after a resample, when all weights are equal and the")
print("window briefly centres on an arbitrary particle; it recovers at the")
print("next measurement, and acceptance keys off the first crossing anyway.")
