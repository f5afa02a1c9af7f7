"""6DoF Monte Carlo localizer over an embedding map.

Particles are rigid-body poses stored batched: rotations (M,3,3),
translations (M,3), weights (M,).  Randomness is drawn from counter-style
generator keys (seed, step, stream) so that the noise applied to particle i
at step t is a pure function of (seed, t, i) and runs are bitwise
reproducible regardless of chunking.

Step order per query frame: motion update, measurement update, resample if
the effective sample size drops below a fraction of M, then the
convergence check.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import NotConverged, ZeroPosterior
from .geometry import (
    Pose,
    PoseMetricParams,
    compose_batch,
    exp_map_batch,
    rotation_chordal_mean,
)
from .map_store import (
    LocalizationMap,
    MeasurementParams,
    embedding_distances,
    knn_by_pose_batch,
)

_INIT_STREAM = 0
_MOTION_STREAM = 1
_RESAMPLE_STREAM = 2


@dataclass(frozen=True)
class MclParams:
    num_particles: int = 6000
    sigma_init: tuple = (2.0, 0.5, 0.5, 0.05, 0.05, 0.1)
    sigma_odom: tuple = (0.8, 0.3, 0.3, 0.04, 0.04, 0.08)
    lambda2: float = 0.2
    k_neighbors: int = 3
    alpha: float = 15.0
    radius: float = 10.0
    ess_threshold: float = 0.3
    tau_threshold: float = 0.9

    def __post_init__(self):
        if self.num_particles < 1:
            raise ValueError("num_particles must be at least 1")
        for name in ("sigma_init", "sigma_odom"):
            sig = np.asarray(getattr(self, name), dtype=float)
            if sig.shape != (6,) or np.any(sig < 0):
                raise ValueError(f"{name} must be 6 nonnegative std devs")
            object.__setattr__(self, name, tuple(sig))
        if self.lambda2 < 0:
            raise ValueError("lambda2 must be nonnegative")
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be at least 1")
        if self.alpha <= 0 or self.radius <= 0:
            raise ValueError("alpha and radius must be positive")
        if not 0.0 < self.ess_threshold < 1.0:
            raise ValueError("ess_threshold must be in (0, 1)")
        if not 0.0 < self.tau_threshold <= 1.0:
            raise ValueError("tau_threshold must be in (0, 1]")

    @property
    def metric(self) -> PoseMetricParams:
        return PoseMetricParams(alpha=self.alpha)


@dataclass(frozen=True, eq=False)
class ParticleSet:
    rotations: np.ndarray   # (M, 3, 3)
    translations: np.ndarray  # (M, 3)
    weights: np.ndarray     # (M,), normalized
    t: int
    seed: int

    def __post_init__(self):
        if self.weights.size < 1:
            raise ValueError("particle set must not be empty")
        if np.any(self.weights < 0) or abs(float(self.weights.sum()) - 1.0) > 1e-9:
            raise ValueError("weights must be a normalized distribution")

    @property
    def num_particles(self) -> int:
        return self.weights.size

    def pose(self, i: int) -> Pose:
        return Pose(self.rotations[i], self.translations[i])

    @property
    def poses(self) -> list[Pose]:
        return [self.pose(i) for i in range(self.num_particles)]


def _twist_noise(sigma: tuple, m: int, rng: np.random.Generator) -> np.ndarray:
    return rng.normal(size=(m, 6)) * np.asarray(sigma)


def mcl_init(first_query: np.ndarray, lmap: LocalizationMap,
             mp: MeasurementParams, params: MclParams, seed: int) -> ParticleSet:
    """Seed particles at references drawn by visual similarity.

    Index n is drawn from a categorical with p proportional to
    exp(-lambda1 * ||z1 - z_n||), then each particle is the reference pose
    perturbed by a Gaussian twist with sigma_init stds.
    """
    m = params.num_particles
    d = embedding_distances(first_query, lmap)
    logits = -mp.lambda1 * (d - d.min())
    probs = np.exp(logits)
    probs /= probs.sum()
    rng = np.random.default_rng([seed, 0, _INIT_STREAM])
    idx = rng.choice(len(lmap), size=m, p=probs)
    Rn, tn = exp_map_batch(_twist_noise(params.sigma_init, m, rng))
    R, t = compose_batch(lmap.rotations[idx], lmap.translations[idx], Rn, tn)
    return ParticleSet(R, t, np.full(m, 1.0 / m), t=1, seed=seed)


def mcl_motion_update(ps: ParticleSet, odom: Pose, params: MclParams) -> ParticleSet:
    """Advance every particle by the world-frame increment plus twist noise.

    T <- U * T * exp(eps), the left-composition convention: U acts in the
    world frame, the noise in the body frame.
    """
    t_new = ps.t + 1
    rng = np.random.default_rng([ps.seed, t_new, _MOTION_STREAM])
    Rn, tn = exp_map_batch(_twist_noise(params.sigma_odom, ps.num_particles, rng))
    R, t = compose_batch(ps.rotations, ps.translations, Rn, tn)
    R, t = compose_batch(odom.rotation[None], odom.translation[None], R, t)
    return ParticleSet(R, t, ps.weights, t=t_new, seed=ps.seed)


def mcl_measurement_update(ps: ParticleSet, query: np.ndarray,
                           lmap: LocalizationMap, mp: MeasurementParams,
                           params: MclParams) -> ParticleSet:
    """Reweight each particle by its K nearest references.

    h_i = sum_k exp(-lambda1 ||z - z_{n_k}|| - lambda2 d(T_i, T_{n_k}))
    over the K references nearest to the particle pose.  Exponents are
    shifted by their global max before exponentiation; the common factor
    cancels in normalization.
    """
    k = min(params.k_neighbors, len(lmap))
    d_emb = embedding_distances(query, lmap)
    idx, d_pose = knn_by_pose_batch(ps.rotations, ps.translations, lmap, k,
                                    params.metric)
    expo = -(mp.lambda1 * d_emb[idx] + params.lambda2 * d_pose)
    h = np.exp(expo - expo.max()).sum(axis=1)
    weights = ps.weights * h
    total = float(weights.sum())
    if not math.isfinite(total) or total <= 0.0:
        raise ZeroPosterior("all particle weights vanished")
    return ParticleSet(ps.rotations, ps.translations, weights / total,
                       t=ps.t, seed=ps.seed)


def effective_sample_size(ps: ParticleSet) -> float:
    """Self-normalized ESS = (sum w)^2 / sum w^2; exactly M when uniform."""
    w = ps.weights
    if np.all(w == w[0]):
        return float(w.size)
    s = float(np.sum(w))
    return s * s / float(np.dot(w, w))


def systematic_resample(ps: ParticleSet) -> ParticleSet:
    """Low-variance resampling with one uniform offset.

    Strata u + i/M are matched against the cumulative weights, so every
    particle is copied between floor(M w_i) and ceil(M w_i) times.
    """
    m = ps.num_particles
    rng = np.random.default_rng([ps.seed, ps.t, _RESAMPLE_STREAM])
    positions = (rng.uniform(0.0, 1.0 / m) + np.arange(m) / m)
    cum = np.cumsum(ps.weights)
    cum[-1] = 1.0  # guard against rounding in the last stratum
    idx = np.searchsorted(cum, positions, side="right")
    return ParticleSet(ps.rotations[idx], ps.translations[idx],
                       np.full(m, 1.0 / m), t=ps.t, seed=ps.seed)


def _window_mask(ps: ParticleSet, params: MclParams) -> tuple[np.ndarray, int]:
    i_star = int(np.argmax(ps.weights))
    dt = np.linalg.norm(ps.translations - ps.translations[i_star], axis=1)
    tr = np.einsum("ij,nij->n", ps.rotations[i_star], ps.rotations)
    ang = np.arccos(np.clip(0.5 * (tr - 1.0), -1.0, 1.0))
    return dt + params.alpha * ang < params.radius, i_star


def mcl_check_convergence(ps: ParticleSet,
                          params: MclParams) -> tuple[float, bool, int]:
    """Weight mass within pose-metric radius of the heaviest particle."""
    mask, i_star = _window_mask(ps, params)
    tau = float(ps.weights[mask].sum())
    return tau, tau > params.tau_threshold, i_star


def mcl_pose_estimate(ps: ParticleSet, params: MclParams) -> Pose:
    """Weighted mean translation and chordal mean rotation over the window."""
    mask, _ = _window_mask(ps, params)
    tau = float(ps.weights[mask].sum())
    if tau <= params.tau_threshold:
        raise NotConverged(f"tau={tau:.4f} <= {params.tau_threshold}")
    w = ps.weights[mask] / tau
    translation = w @ ps.translations[mask]
    rotation = rotation_chordal_mean(ps.rotations[mask], w)
    return Pose(rotation, translation)
