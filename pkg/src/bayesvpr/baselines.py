"""Single-image retrieval and linear sequence matching baselines.

Both return (reference index, score) where a lower score means a more
confident match, so the evaluation sweep can threshold on it directly.
"""

from dataclasses import dataclass

import numpy as np

from .map_store import LocalizationMap, embedding_distances


@dataclass(frozen=True)
class SequenceMatchParams:
    seq_length: int = 10
    velocity_range: tuple = (0.8, 1.5)
    num_slopes: int = 8

    def __post_init__(self):
        if self.seq_length < 1:
            raise ValueError("seq_length must be at least 1")
        v_min, v_max = self.velocity_range
        if not 0 < v_min <= v_max:
            raise ValueError("velocity_range must satisfy 0 < v_min <= v_max")
        if self.num_slopes < 1:
            raise ValueError("num_slopes must be at least 1")


def single_image_match(query: np.ndarray,
                       lmap: LocalizationMap) -> tuple[int, float]:
    """Best appearance match: argmin embedding distance, ties to lowest index."""
    d = embedding_distances(query, lmap)
    best = int(np.argmin(d))
    return best, float(d[best])


def _slope_grid(params: SequenceMatchParams) -> np.ndarray:
    v_min, v_max = params.velocity_range
    return np.linspace(v_min, v_max, params.num_slopes)


def _sequence_scores(dist: np.ndarray,
                     params: SequenceMatchParams) -> np.ndarray:
    """Mean along-path distance for every (start, slope) pair.

    The path through the L x N distance matrix starts at column s and
    advances v columns per row, rounded half-up; columns past the end
    clamp to N - 1.  No contrast normalization is applied: raw distances
    accumulate as-is.
    """
    seq_len, n = dist.shape
    starts = np.arange(n)[:, None, None]
    slopes = _slope_grid(params)[None, :, None]
    rows = np.arange(seq_len)
    cols = np.floor(starts + slopes * rows + 0.5).astype(int)
    np.clip(cols, 0, n - 1, out=cols)
    return dist[rows, cols].mean(axis=2)


def sequence_match(queries: np.ndarray, lmap: LocalizationMap,
                   params: SequenceMatchParams) -> tuple[int, float]:
    """Best linear path through the query-vs-reference distance matrix.

    Returns the start index of the minimizing (start, slope) pair and its
    mean along-path distance; ties go to the lower start, then lower slope.
    """
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    dist = np.stack([embedding_distances(q, lmap) for q in queries])
    scores = _sequence_scores(dist, params)
    flat = int(np.argmin(scores))
    start = flat // params.num_slopes
    return start, float(scores.flat[flat])
