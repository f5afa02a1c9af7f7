"""Discrete Bayes localizer over reference indices.

The state is which reference image the robot currently sees.  Prediction is
a banded transition (uniform over index offsets w_lower..w_upper), the
measurement is an exponential appearance likelihood, and the posterior is
renormalized every step in linear space.  Convergence is declared when the
probability mass inside a window around the MAP index exceeds a threshold.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import NotConverged, ZeroPosterior
from .geometry import Pose
from .map_store import LocalizationMap, MeasurementParams, embedding_distances


@dataclass(frozen=True)
class TopoParams:
    w_lower: int = -2
    w_upper: int = 10
    window: int = 6
    tau_threshold: float = 0.9
    loop: bool = False

    def __post_init__(self):
        if self.w_lower > self.w_upper:
            raise ValueError("w_lower must not exceed w_upper")
        if self.window < 0:
            raise ValueError("window must be nonnegative")
        if not 0.0 < self.tau_threshold <= 1.0:
            raise ValueError("tau_threshold must be in (0, 1]")


@dataclass(frozen=True)
class BeliefVector:
    probs: np.ndarray
    t: int = 1

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "probs", probs)
        if probs.ndim != 1 or probs.size < 1:
            raise ValueError("belief must be a nonempty vector")
        if np.any(probs < 0) or abs(float(probs.sum()) - 1.0) > 1e-9:
            raise ValueError("belief must be a normalized probability vector")


def _appearance_likelihood(query: np.ndarray, lmap: LocalizationMap,
                           mp: MeasurementParams) -> np.ndarray:
    # shift by the minimum distance so the largest likelihood is exactly 1;
    # the constant factor cancels in normalization
    d = embedding_distances(query, lmap)
    return np.exp(-mp.lambda1 * (d - d.min()))


def _banded_predict(p: np.ndarray, tp: TopoParams) -> np.ndarray:
    """Apply E' to the belief without materializing the N x N matrix."""
    n = p.size
    offsets = range(tp.w_lower, tp.w_upper + 1)
    if tp.loop:
        out = np.zeros(n)
        for o in offsets:
            out += np.roll(p, o)
        return out / (tp.w_upper - tp.w_lower + 1)
    s = np.arange(n)
    counts = np.minimum(tp.w_upper, n - 1 - s) - np.maximum(tp.w_lower, -s) + 1
    empty = counts <= 0
    q = np.where(empty, 0.0, p / np.where(empty, 1, counts))
    out = np.zeros(n)
    for o in offsets:
        if abs(o) >= n:
            continue
        if o >= 0:
            out[o:] += q[:n - o] if o else q
        else:
            out[:o] += q[-o:]
    # a source whose whole band falls off the map keeps its mass
    out[empty] += p[empty]
    return out


def topo_init(first_query: np.ndarray, lmap: LocalizationMap,
              mp: MeasurementParams) -> BeliefVector:
    """Prior proportional to the first frame's appearance likelihood."""
    lik = _appearance_likelihood(first_query, lmap, mp)
    return BeliefVector(lik / lik.sum(), t=1)


def topo_update(belief: BeliefVector, query: np.ndarray, lmap: LocalizationMap,
                tp: TopoParams, mp: MeasurementParams) -> BeliefVector:
    """One forward step: banded prediction, reweight, renormalize."""
    predicted = _banded_predict(belief.probs, tp)
    posterior = predicted * _appearance_likelihood(query, lmap, mp)
    total = float(posterior.sum())
    if not math.isfinite(total) or total <= 0.0:
        raise ZeroPosterior("posterior mass vanished during update")
    return BeliefVector(posterior / total, t=belief.t + 1)


def _window_indices(center: int, n: int, tp: TopoParams) -> np.ndarray:
    raw = np.arange(center - tp.window, center + tp.window + 1)
    if tp.loop:
        if raw.size >= n:
            raw = np.arange(center - (n - 1) // 2, center - (n - 1) // 2 + n)
        return raw
    return raw[(raw >= 0) & (raw < n)]


def topo_check_convergence(belief: BeliefVector,
                           tp: TopoParams) -> tuple[float, bool, int]:
    """Mass within the MAP window; ties in the argmax go to the lowest index."""
    n = belief.probs.size
    map_index = int(np.argmax(belief.probs))
    idx = _window_indices(map_index, n, tp)
    tau = float(belief.probs[idx % n].sum())
    return tau, tau > tp.tau_threshold, map_index


def topo_pose_estimate(belief: BeliefVector, lmap: LocalizationMap,
                       tp: TopoParams) -> Pose:
    """Pose of the floor of the window-renormalized mean index."""
    tau, converged, map_index = topo_check_convergence(belief, tp)
    if not converged:
        raise NotConverged(f"tau={tau:.4f} <= {tp.tau_threshold}")
    n = belief.probs.size
    idx = _window_indices(map_index, n, tp)
    w_probs = belief.probs[idx % n] / tau
    s_hat = int(math.floor(float(np.dot(idx, w_probs))))
    s_hat = min(max(s_hat, 0), n - 1) if not tp.loop else s_hat % n
    return lmap.pose(s_hat)
