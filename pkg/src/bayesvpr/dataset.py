"""Synthetic traverse generation and dataset file ingestion.

The synthetic world is a smooth 2.5D route parameterized by arc length:
piecewise-constant-curvature yaw segments plus a gentle pitch wave.
Appearance is modeled with random Fourier features of arc length, so
embedding distance grows smoothly with travel distance, which is the
property both measurement models rely on.  Perceptual aliasing remaps the
arc-length argument of the embedding function over destination segments,
making references and queries there genuinely ambiguous with the source
segment.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigInvalid, CountMismatch, ParseError, TraverseTooShort
from .geometry import (
    Pose,
    Twist,
    exp_map,
    pose_from_row,
    pose_to_row,
    yaw_pitch_rotation,
)
from .map_store import (
    LocalizationMap,
    read_embeddings,
    read_poses,
    write_embeddings,
    write_poses,
)


@dataclass(frozen=True)
class SyntheticWorldConfig:
    route_length: float = 1000.0
    ref_spacing: float = 0.5
    query_spacing: float = 3.0
    query_len: int = 30
    embed_dim: int = 128
    appearance_noise_sigma: float = 0.0
    aliasing_segments: tuple = ()
    odom_noise_sigma: tuple = (0.0,) * 6
    feature_length_scale: float = 2.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.route_length <= 0:
            raise ConfigInvalid("route_length must be positive")
        if self.ref_spacing <= 0 or self.query_spacing <= 0:
            raise ConfigInvalid("spacings must be positive")
        if self.query_len < 1:
            raise ConfigInvalid("query_len must be at least 1")
        if self.embed_dim < 2:
            raise ConfigInvalid("embed_dim must be at least 2")
        if self.appearance_noise_sigma < 0:
            raise ConfigInvalid("appearance_noise_sigma must be nonnegative")
        if self.feature_length_scale <= 0:
            raise ConfigInvalid("feature_length_scale must be positive")
        sig = np.asarray(self.odom_noise_sigma, dtype=float)
        if sig.shape != (6,) or np.any(sig < 0):
            raise ConfigInvalid("odom_noise_sigma must be 6 nonnegative stds")
        object.__setattr__(self, "odom_noise_sigma", tuple(sig))
        segments = []
        for pair in self.aliasing_segments:
            try:
                (s0, s1), (d0, d1) = pair
            except (TypeError, ValueError) as exc:
                raise ConfigInvalid(
                    "aliasing segment must be ((src0, src1), (dst0, dst1))"
                ) from exc
            if not (0 <= s0 < s1 <= self.route_length
                    and 0 <= d0 < d1 <= self.route_length):
                raise ConfigInvalid(
                    f"aliasing segment {pair} outside route [0, {self.route_length}]")
            segments.append(((float(s0), float(s1)), (float(d0), float(d1))))
        object.__setattr__(self, "aliasing_segments", tuple(segments))


@dataclass(frozen=True)
class Observations:
    """What a localizer is allowed to see: embeddings and odometry only."""

    embeddings: np.ndarray
    odometry: tuple

    def __post_init__(self):
        if len(self.odometry) != self.embeddings.shape[0] - 1:
            raise CountMismatch(
                f"{self.embeddings.shape[0]} queries need "
                f"{self.embeddings.shape[0] - 1} odometry rows, "
                f"got {len(self.odometry)}")

    def __len__(self) -> int:
        return self.embeddings.shape[0]


@dataclass(frozen=True)
class QueryTraverse:
    embeddings: np.ndarray   # (T, D)
    odometry: tuple          # T-1 world-frame Pose increments
    ground_truth: tuple      # T Pose, for evaluation only

    def __post_init__(self):
        t = self.embeddings.shape[0]
        if len(self.ground_truth) != t:
            raise CountMismatch(
                f"{t} queries vs {len(self.ground_truth)} ground-truth poses")
        if len(self.odometry) != t - 1:
            raise CountMismatch(
                f"{t} queries need {t - 1} odometry rows, got {len(self.odometry)}")

    def __len__(self) -> int:
        return self.embeddings.shape[0]

    def observations(self) -> Observations:
        return Observations(self.embeddings, self.odometry)


@dataclass(frozen=True)
class Trial:
    """One localization episode: a contiguous slice of a query traverse."""

    start: int
    observations: Observations
    ground_truth: tuple = field(repr=False)


class _RouteModel:
    """Poses and appearance as functions of arc length."""

    def __init__(self, cfg: SyntheticWorldConfig, rng: np.random.Generator):
        self.cfg = cfg
        length = cfg.route_length
        # piecewise-constant curvature: yaw is piecewise linear in arc length
        knots = [0.0]
        yaws = [0.0]
        while knots[-1] < length:
            seg = float(rng.uniform(20.0, 50.0))
            curvature = float(rng.uniform(-0.04, 0.04))
            # straight blocks dominate, with occasional arcs between them
            if rng.random() < 0.75:
                curvature = 0.0
            knots.append(knots[-1] + seg)
            yaws.append(yaws[-1] + curvature * seg)
        self._knots = np.asarray(knots)
        self._yaws = np.asarray(yaws)
        self._pitch_amp = 0.05
        self._pitch_period = 80.0
        self._freqs = rng.normal(scale=1.0 / cfg.feature_length_scale,
                                 size=cfg.embed_dim)
        self._phases = rng.uniform(0.0, 2.0 * math.pi, size=cfg.embed_dim)
        # integrate the forward direction on a fine grid once
        h = 0.05
        grid = np.arange(0.0, length + h, h)
        yaw = self.yaw(grid)
        pitch = self.pitch(grid)
        forward = np.stack([np.cos(yaw) * np.cos(pitch),
                            np.sin(yaw) * np.cos(pitch),
                            -np.sin(pitch)], axis=1)
        steps = np.diff(grid)[:, None] * forward[:-1]
        positions = np.vstack([np.zeros(3), np.cumsum(steps, axis=0)])
        self._grid = grid
        self._positions = positions

    def yaw(self, s):
        return np.interp(s, self._knots, self._yaws)

    def pitch(self, s):
        return self._pitch_amp * np.sin(2.0 * math.pi * s / self._pitch_period)

    def pose(self, s: float) -> Pose:
        translation = np.array([np.interp(s, self._grid, self._positions[:, i])
                                for i in range(3)])
        return Pose(yaw_pitch_rotation(float(self.yaw(s)), float(self.pitch(s))),
                    translation)

    def _remap(self, s: np.ndarray) -> np.ndarray:
        out = np.array(s, dtype=float)
        for (s0, s1), (d0, d1) in self.cfg.aliasing_segments:
            inside = (out >= d0) & (out < d1)
            out[inside] = s0 + (out[inside] - d0) * ((s1 - s0) / (d1 - d0))
        return out

    def embeddings(self, s: np.ndarray) -> np.ndarray:
        s_eff = self._remap(np.asarray(s, dtype=float))
        feats = np.cos(np.outer(s_eff, self._freqs) + self._phases)
        return (feats * math.sqrt(2.0 / self.cfg.embed_dim)).astype(np.float32)


def generate_world(cfg: SyntheticWorldConfig) -> tuple[LocalizationMap, list]:
    """Build the reference map and one query traverse over the same route."""
    rng = np.random.default_rng(cfg.rng_seed)
    route = _RouteModel(cfg, rng)

    ref_s = np.arange(0.0, cfg.route_length, cfg.ref_spacing)
    ref_poses = [route.pose(float(s)) for s in ref_s]
    lmap = LocalizationMap(ref_poses, route.embeddings(ref_s))

    query_s = np.arange(0.0, cfg.route_length, cfg.query_spacing)
    ground_truth = tuple(route.pose(float(s)) for s in query_s)
    emb = route.embeddings(query_s)
    if cfg.appearance_noise_sigma > 0:
        noise = rng.normal(0.0, cfg.appearance_noise_sigma, size=emb.shape)
        emb = (emb.astype(float) + noise).astype(np.float32)

    sigma = np.asarray(cfg.odom_noise_sigma)
    odometry = []
    for prev, cur in zip(ground_truth[:-1], ground_truth[1:]):
        if np.any(sigma > 0):
            # perturb in the body frame of the arrival pose: composing the
            # noisy increments telescopes to cur * exp(e_n) * ... * exp(e_1),
            # a local random walk.  Right-multiplying the world-frame
            # increment instead would lever rotation noise about the world
            # origin and throw the increment off by sigma_rot * |t|.
            cur = cur @ exp_map(Twist.from_vector(rng.normal(size=6) * sigma))
        odometry.append(cur @ prev.inverse())

    traverse = QueryTraverse(emb, tuple(odometry), ground_truth)
    return lmap, [traverse]


def sample_trials(traverse: QueryTraverse, num_trials: int, query_len: int,
                  seed: int) -> list[Trial]:
    """Uniform random start offsets, drawn with replacement."""
    t = len(traverse)
    if t < query_len:
        raise TraverseTooShort(f"traverse has {t} queries, need {query_len}")
    rng = np.random.default_rng(seed)
    starts = rng.integers(0, t - query_len + 1, size=num_trials)
    trials = []
    for start in starts:
        start = int(start)
        stop = start + query_len
        obs = Observations(traverse.embeddings[start:stop],
                           traverse.odometry[start:stop - 1])
        trials.append(Trial(start, obs, traverse.ground_truth[start:stop]))
    return trials


# ---------------------------------------------------------------------------
# files: .odom (frame header + pose rows), .trials (one start per line)


def write_odometry(path, odometry, frame: str = "world") -> None:
    if frame not in ("world", "body"):
        raise ValueError("frame must be 'world' or 'body'")
    with open(path, "w") as f:
        f.write(f"frame={frame}\n")
        for u in odometry:
            f.write(pose_to_row(u) + "\n")


def read_odometry(path) -> tuple[list[Pose], str]:
    with open(path) as f:
        header = f.readline().strip()
        if not header.startswith("frame=") or header[6:] not in ("world", "body"):
            raise ParseError(f"{path}:1: expected 'frame=world|body', got {header!r}")
        frame = header[6:]
        rows = []
        for lineno, line in enumerate(f, start=2):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(pose_from_row(line))
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return rows, frame


def write_trials(path, starts) -> None:
    with open(path, "w") as f:
        for s in starts:
            f.write(f"{int(s)}\n")


def read_trials(path) -> list[int]:
    starts = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                starts.append(int(line))
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: not an integer: {line!r}") from exc
    return starts


def _body_to_world(increments, origin: Pose) -> tuple:
    """Re-express body-frame increments as world-frame left increments.

    With body-frame increments the pose chain is T_t = T_{t-1} * U_b.  The
    equivalent left increment is the conjugation U_w = C * U_b * C^{-1}
    where C accumulates the body increments from the first query pose,
    taken as the odometry origin.
    """
    chain = origin
    converted = []
    for u in increments:
        converted.append(chain @ u @ chain.inverse())
        chain = chain @ u
    return tuple(converted)


def save_dataset(lmap: LocalizationMap, traverse: QueryTraverse, outdir) -> dict:
    """Write the map pair plus query embeddings, ground truth, and odometry."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {
        "map_poses": outdir / "map.poses",
        "map_emb": outdir / "map.emb",
        "query_emb": outdir / "queries.emb",
        "query_poses": outdir / "queries.poses",
        "odom": outdir / "queries.odom",
    }
    write_poses(paths["map_poses"], lmap.poses)
    write_embeddings(paths["map_emb"], lmap.embeddings)
    write_embeddings(paths["query_emb"], traverse.embeddings)
    write_poses(paths["query_poses"], traverse.ground_truth)
    write_odometry(paths["odom"], traverse.odometry, frame="world")
    return paths


def load_real_dataset(map_stem, query_stem, odom_path) -> tuple[LocalizationMap,
                                                                QueryTraverse]:
    """Load a map pair and a query traverse from files.

    Odometry files must hold T-1 increments for T queries; body-frame
    increments are converted to the world-frame left-composition form.
    """
    map_stem, query_stem = Path(map_stem), Path(query_stem)
    map_poses = read_poses(map_stem.with_suffix(".poses"))
    map_emb = read_embeddings(map_stem.with_suffix(".emb"))
    if len(map_poses) != map_emb.shape[0]:
        raise CountMismatch(
            f"{len(map_poses)} map poses vs {map_emb.shape[0]} embeddings")
    lmap = LocalizationMap(map_poses, map_emb)

    query_emb = read_embeddings(query_stem.with_suffix(".emb"))
    gt = read_poses(query_stem.with_suffix(".poses"))
    odometry, frame = read_odometry(odom_path)
    if len(odometry) != query_emb.shape[0] - 1:
        raise CountMismatch(
            f"{query_emb.shape[0]} queries need {query_emb.shape[0] - 1} "
            f"odometry rows, got {len(odometry)}")
    if frame == "body":
        odometry = _body_to_world(odometry, gt[0])
    traverse = QueryTraverse(query_emb, tuple(odometry), tuple(gt))
    return lmap, traverse
