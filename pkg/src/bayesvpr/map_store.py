"""Reference map storage, appearance likelihood scaling, and pose-space k-NN.

The map holds the reference traverse: one pose and one embedding per
reference image, in capture order.  Embeddings are kept as float32 and all
distance arithmetic is accumulated in float64.
"""

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .errors import CountMismatch, DegenerateSpread, DimensionMismatch, ParseError
from .geometry import (
    Pose,
    PoseMetricParams,
    pose_from_row,
    pose_to_row,
    rotation_angles_cross,
    rotation_angles_paired,
)

EMB_MAGIC = b"VPRE"

# neighbor-table width for the pivot-pruned k-NN; 48 columns certify almost
# every query on route-shaped maps while keeping the per-query gather small
PIVOT_COLS = 48


@dataclass(frozen=True)
class MeasurementParams:
    """Appearance likelihood scale: p(z | s) ~ exp(-lambda1 * ||z - z_s||)."""

    lambda1: float
    delta: float = 5.0

    def __post_init__(self):
        if not math.isfinite(self.lambda1) or self.lambda1 < 0:
            raise ValueError("lambda1 must be finite and nonnegative")
        if self.delta <= 0:
            raise ValueError("delta must be positive")


class LocalizationMap:
    """Immutable reference traverse: N poses with matching embeddings.

    Poses are stored batched (rotations (N,3,3), translations (N,3)) so
    vectorized queries never have to unpack Pose objects.
    """

    def __init__(self, poses, embeddings, metric_params: PoseMetricParams | None = None):
        poses = list(poses)
        embeddings = np.asarray(embeddings, dtype=np.float32)
        if len(poses) < 1:
            raise ValueError("map needs at least one reference")
        if embeddings.ndim != 2:
            raise DimensionMismatch("embeddings must be an N x D matrix")
        if embeddings.shape[0] != len(poses):
            raise CountMismatch(
                f"{len(poses)} poses vs {embeddings.shape[0]} embeddings")
        self.rotations = np.stack([p.rotation for p in poses])
        self.translations = np.stack([p.translation for p in poses])
        self.embeddings = embeddings
        self.metric_params = metric_params or PoseMetricParams()
        self._tree = None
        self._pose_tables = {}

    @classmethod
    def from_arrays(cls, rotations, translations, embeddings,
                    metric_params: PoseMetricParams | None = None):
        rotations = np.asarray(rotations, dtype=float)
        translations = np.asarray(translations, dtype=float)
        poses = [Pose(R, t) for R, t in zip(rotations, translations)]
        return cls(poses, embeddings, metric_params)

    def __len__(self) -> int:
        return self.rotations.shape[0]

    @property
    def num_references(self) -> int:
        return len(self)

    @property
    def embed_dim(self) -> int:
        return self.embeddings.shape[1]

    def pose(self, index: int) -> Pose:
        return Pose(self.rotations[index], self.translations[index])

    @property
    def poses(self) -> list[Pose]:
        return [self.pose(i) for i in range(len(self))]

    def translation_tree(self) -> cKDTree:
        """KD-tree over reference translations, built once on first use."""
        if self._tree is None:
            self._tree = cKDTree(self.translations)
        return self._tree

    def pose_neighbor_table(self, alpha: float) -> tuple[np.ndarray, np.ndarray]:
        """Per-reference neighbor lists under the weighted pose metric.

        Returns (indices, radius): indices is (N, m) with each row the m
        references nearest to reference i (itself included), sorted by
        (distance, index); radius[i] is the distance to the last kept
        neighbor, so every reference absent from row i sits at least
        radius[i] away from reference i.  Built lazily, cached per alpha.
        """
        cached = self._pose_tables.get(alpha)
        if cached is not None:
            return cached
        n = len(self)
        m = min(n, PIVOT_COLS)
        idx = np.empty((n, m), dtype=np.int64)
        dist = np.empty((n, m))
        step = max(1, 2_000_000 // n)
        for lo in range(0, n, step):
            hi = min(lo + step, n)
            dt = cdist(self.translations[lo:hi], self.translations)
            ang = rotation_angles_cross(self.rotations[lo:hi], self.rotations)
            full = dt + alpha * ang
            rows = np.arange(hi - lo)[:, None]
            if m < n:
                part = np.argpartition(full, m - 1, axis=1)[:, :m]
            else:
                part = np.broadcast_to(np.arange(n), full.shape)
            pd = full[rows, part]
            order = np.lexsort((part, pd), axis=-1)
            idx[lo:hi] = np.take_along_axis(np.asarray(part), order, axis=1)
            dist[lo:hi] = np.take_along_axis(pd, order, axis=1)
        radius = dist[:, -1] if m < n else np.full(n, np.inf)
        self._pose_tables[alpha] = (idx, radius)
        return idx, radius


def embedding_distances(query: np.ndarray, lmap: LocalizationMap) -> np.ndarray:
    """Euclidean distance from a query embedding to every reference embedding."""
    query = np.asarray(query, dtype=float).ravel()
    if query.shape[0] != lmap.embed_dim:
        raise DimensionMismatch(
            f"query has dim {query.shape[0]}, map has dim {lmap.embed_dim}")
    diff = lmap.embeddings.astype(float) - query
    return np.sqrt(np.einsum("nd,nd->n", diff, diff))


def calibrate_lambda1(first_query: np.ndarray, lmap: LocalizationMap,
                      delta: float = 5.0) -> MeasurementParams:
    """Set lambda1 = log(delta) / (q97.5 - q2.5) of first-frame distances.

    The spread of embedding distances at the first query frame fixes the
    likelihood scale so it stays consistent across embedding types.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    d = embedding_distances(first_query, lmap)
    lo, hi = np.quantile(d, [0.025, 0.975])
    spread = float(hi - lo)
    if spread < 1e-12:
        raise DegenerateSpread(
            "embedding distances have no spread; lambda1 undefined")
    return MeasurementParams(lambda1=math.log(delta) / spread, delta=delta)


def pose_distances_to_map(rotation: np.ndarray, translation: np.ndarray,
                          lmap: LocalizationMap,
                          params: PoseMetricParams) -> np.ndarray:
    """Weighted pose metric from one pose to every reference (linear scan)."""
    dt = np.linalg.norm(lmap.translations - translation, axis=1)
    tr = lmap.rotations.reshape(-1, 9) @ rotation.ravel()
    ang = np.arccos(np.clip(0.5 * (tr - 1.0), -1.0, 1.0))
    return dt + params.alpha * ang


def knn_by_pose(query_pose: Pose, lmap: LocalizationMap, k: int,
                params: PoseMetricParams | None = None) -> list[tuple[int, float]]:
    """k nearest references by the weighted pose metric, ties to lower index."""
    n = len(lmap)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}]")
    params = params or lmap.metric_params
    d = pose_distances_to_map(query_pose.rotation, query_pose.translation,
                              lmap, params)
    order = np.lexsort((np.arange(n), d))[:k]
    return [(int(i), float(d[i])) for i in order]


def _knn_dense_rows(rotations: np.ndarray, translations: np.ndarray,
                    lmap: LocalizationMap, k: int,
                    params: PoseMetricParams) -> tuple[np.ndarray, np.ndarray]:
    """Exhaustive k-NN for a batch of query poses, chunked to bound memory."""
    b = rotations.shape[0]
    n = len(lmap)
    out_idx = np.empty((b, k), dtype=np.int64)
    out_dist = np.empty((b, k))
    step = max(1, 4_000_000 // n)
    for lo in range(0, b, step):
        hi = min(lo + step, b)
        dt = cdist(translations[lo:hi], lmap.translations)
        ang = rotation_angles_cross(rotations[lo:hi], lmap.rotations)
        full = dt + params.alpha * ang
        rows = np.arange(hi - lo)[:, None]
        if k < n:
            part = np.argpartition(full, k - 1, axis=1)[:, :k]
        else:
            part = np.broadcast_to(np.arange(n), full.shape)
        pd = full[rows, part]
        order = np.lexsort((part, pd), axis=-1)
        out_idx[lo:hi] = np.take_along_axis(np.asarray(part), order, axis=1)
        out_dist[lo:hi] = np.take_along_axis(pd, order, axis=1)
    return out_idx, out_dist


def knn_by_pose_batch(rotations: np.ndarray, translations: np.ndarray,
                      lmap: LocalizationMap, k: int,
                      params: PoseMetricParams) -> tuple[np.ndarray, np.ndarray]:
    """Exact batched k-NN under the weighted pose metric.

    Each query is anchored to its Euclidean-nearest reference (the pivot)
    and ranked against that pivot's precomputed metric neighborhood.  The
    triangle inequality certifies the answer: any reference outside the
    neighborhood is at least radius[pivot] - d(query, pivot) away, so once
    the k-th best candidate beats that bound the row is exact.  Uncertified
    rows fall back to an exhaustive scan.

    Returns (indices, distances), each (M, k), rows sorted ascending with
    ties broken toward the lower index.
    """
    m = rotations.shape[0]
    n = len(lmap)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}]")
    tbl_idx, tbl_radius = lmap.pose_neighbor_table(params.alpha)
    mcols = tbl_idx.shape[1]
    if mcols == n or k >= mcols:
        return _knn_dense_rows(rotations, translations, lmap, k, params)
    dt1, pivot = lmap.translation_tree().query(translations, k=1)
    to_pivot = dt1 + params.alpha * rotation_angles_paired(
        rotations, lmap.rotations[pivot])
    cand = tbl_idx[pivot]
    dt = np.linalg.norm(lmap.translations[cand] - translations[:, None], axis=-1)
    ang = rotation_angles_paired(rotations[:, None], lmap.rotations[cand])
    full = dt + params.alpha * ang
    rows = np.arange(m)[:, None]
    part = np.argpartition(full, k - 1, axis=1)[:, :k]
    pi = np.take_along_axis(cand, part, axis=1)
    pd = np.take_along_axis(full, part, axis=1)
    order = np.lexsort((pi, pd), axis=-1)
    out_idx = np.take_along_axis(pi, order, axis=1)
    out_dist = np.take_along_axis(pd, order, axis=1)
    # 1e-9 slack absorbs float error in the triangle-inequality bound
    uncertified = np.flatnonzero(
        out_dist[:, -1] > tbl_radius[pivot] - to_pivot - 1e-9)
    if uncertified.size:
        di, dd = _knn_dense_rows(rotations[uncertified],
                                 translations[uncertified], lmap, k, params)
        out_idx[uncertified] = di
        out_dist[uncertified] = dd
    return out_idx, out_dist


# ---------------------------------------------------------------------------
# file pair: <stem>.poses (text rows) + <stem>.emb (binary, VPRE magic)


def write_poses(path, poses) -> None:
    with open(path, "w") as f:
        for T in poses:
            f.write(pose_to_row(T) + "\n")


def read_poses(path) -> list[Pose]:
    poses = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                poses.append(pose_from_row(line))
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    if not poses:
        raise ParseError(f"{path}: no pose rows")
    return poses


def write_embeddings(path, embeddings: np.ndarray) -> None:
    embeddings = np.ascontiguousarray(embeddings, dtype="<f4")
    n, d = embeddings.shape
    with open(path, "wb") as f:
        f.write(EMB_MAGIC)
        f.write(np.array([n, d], dtype="<u4").tobytes())
        f.write(embeddings.tobytes())


def read_embeddings(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != EMB_MAGIC:
            raise ParseError(f"{path}: bad magic {magic!r}, expected {EMB_MAGIC!r}")
        header = f.read(8)
        if len(header) != 8:
            raise ParseError(f"{path}: truncated header")
        n, d = np.frombuffer(header, dtype="<u4")
        payload = f.read()
    expected = int(n) * int(d) * 4
    if len(payload) != expected:
        raise ParseError(
            f"{path}: expected {expected} payload bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype="<f4").reshape(int(n), int(d)).copy()


def save_map(lmap: LocalizationMap, stem) -> tuple[Path, Path]:
    stem = Path(stem)
    pose_path = stem.with_suffix(".poses")
    emb_path = stem.with_suffix(".emb")
    write_poses(pose_path, lmap.poses)
    write_embeddings(emb_path, lmap.embeddings)
    return pose_path, emb_path


def load_map(stem, metric_params: PoseMetricParams | None = None) -> LocalizationMap:
    stem = Path(stem)
    poses = read_poses(stem.with_suffix(".poses"))
    embeddings = read_embeddings(stem.with_suffix(".emb"))
    if len(poses) != embeddings.shape[0]:
        raise CountMismatch(
            f"{len(poses)} poses vs {embeddings.shape[0]} embeddings for {stem}")
    return LocalizationMap(poses, embeddings, metric_params)
