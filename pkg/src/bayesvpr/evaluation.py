"""Trial runners, precision/recall sweeps, and per-iteration benchmarks.

A localizer exposes one episode per trial: a lazy sequence of per-step
records (score, candidate estimate, index of the query the estimate refers
to).  Filter scores are the window mass tau and a trial accepts at the
first step with tau above the threshold; baseline scores are match
distances and accept at or below the threshold.  Episodes do not depend on
the threshold, so a single trace per trial supports the whole sweep.
"""

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .baselines import SequenceMatchParams, sequence_match, single_image_match
from .dataset import Observations, Trial
from .errors import (
    ConfigInvalid,
    DegenerateMean,
    DegenerateSpread,
    ZeroPosterior,
)
from .geometry import Pose, so3_log
from .map_store import LocalizationMap, MeasurementParams, calibrate_lambda1
from .mcl import (
    MclParams,
    effective_sample_size,
    mcl_check_convergence,
    mcl_init,
    mcl_measurement_update,
    mcl_motion_update,
    mcl_pose_estimate,
    systematic_resample,
)
from .topo import (
    TopoParams,
    topo_check_convergence,
    topo_init,
    topo_pose_estimate,
    topo_update,
)

METHOD_NAMES = ("topological", "mcl", "single", "seqmatch")


@dataclass(frozen=True)
class ErrorTolerance:
    max_translation: float
    max_rotation: float

    def __post_init__(self):
        if self.max_translation <= 0 or self.max_rotation <= 0:
            raise ConfigInvalid("tolerances must be positive")

    def accepts(self, trans_err: float, rot_err: float) -> bool:
        return trans_err <= self.max_translation and rot_err <= self.max_rotation


TOLERANCES = {
    "3m15deg": ErrorTolerance(3.0, math.radians(15.0)),
    "5m30deg": ErrorTolerance(5.0, math.radians(30.0)),
}


@dataclass(frozen=True)
class TrialOutcome:
    localized: bool
    steps_used: int
    estimate: Pose | None
    score: float
    trans_err: float | None = None
    rot_err: float | None = None

    def __post_init__(self):
        have_errors = self.trans_err is not None and self.rot_err is not None
        if self.localized != have_errors or self.localized != (
                self.estimate is not None):
            raise ValueError("estimate and errors must be present iff localized")


def error_against_truth(estimate: Pose, truth: Pose) -> tuple[float, float]:
    trans = float(np.linalg.norm(estimate.translation - truth.translation))
    rot = float(np.linalg.norm(so3_log(estimate.rotation.T @ truth.rotation)))
    return trans, rot


# ---------------------------------------------------------------------------
# localizers


@dataclass(frozen=True)
class StepRecord:
    step: int
    score: float
    estimate: Pose | None
    truth_index: int
    map_index: int = -1
    map_pose: Pose | None = None


class TopologicalLocalizer:
    """Banded discrete Bayes filter over the reference graph."""

    method_name = "topological"
    higher_is_better = True

    def __init__(self, lmap: LocalizationMap, params: TopoParams | None = None,
                 meas: MeasurementParams | None = None, delta: float = 5.0):
        self.lmap = lmap
        self.params = params or TopoParams()
        self.meas = meas
        self.delta = delta
        # estimates are computed at every step; the sweep owns acceptance
        self._loose = replace(self.params, tau_threshold=1e-12)

    def episode(self, obs: Observations, seed: int = 0):
        mp = self.meas or calibrate_lambda1(obs.embeddings[0], self.lmap,
                                            self.delta)
        belief = topo_init(obs.embeddings[0], self.lmap, mp)
        for step in range(1, len(obs) + 1):
            if step > 1:
                belief = topo_update(belief, obs.embeddings[step - 1],
                                     self.lmap, self.params, mp)
            tau, _, map_index = topo_check_convergence(belief, self.params)
            yield StepRecord(step, tau,
                             topo_pose_estimate(belief, self.lmap, self._loose),
                             step - 1, map_index, self.lmap.pose(map_index))


class MonteCarloLocalizer:
    """Particle filter over SE(3) seeded from visual similarity."""

    method_name = "mcl"
    higher_is_better = True

    def __init__(self, lmap: LocalizationMap, params: MclParams | None = None,
                 meas: MeasurementParams | None = None, delta: float = 5.0):
        self.lmap = lmap
        self.params = params or MclParams()
        self.meas = meas
        self.delta = delta
        self._loose = replace(self.params, tau_threshold=1e-12)

    def episode(self, obs: Observations, seed: int = 0):
        mp = self.meas or calibrate_lambda1(obs.embeddings[0], self.lmap,
                                            self.delta)
        ps = mcl_init(obs.embeddings[0], self.lmap, mp, self.params, seed)
        low_ess = self.params.ess_threshold * self.params.num_particles
        for step in range(1, len(obs) + 1):
            if step > 1:
                ps = mcl_motion_update(ps, obs.odometry[step - 2], self.params)
                ps = mcl_measurement_update(ps, obs.embeddings[step - 1],
                                            self.lmap, mp, self.params)
                if effective_sample_size(ps) < low_ess:
                    ps = systematic_resample(ps)
            tau, _, i_star = mcl_check_convergence(ps, self.params)
            try:
                estimate = mcl_pose_estimate(ps, self._loose)
            except DegenerateMean:
                estimate = None
            yield StepRecord(step, tau, estimate, step - 1, i_star,
                             ps.pose(i_star))


class SingleImageLocalizer:
    """Nearest reference by embedding distance on the first frame."""

    method_name = "single"
    higher_is_better = False

    def __init__(self, lmap: LocalizationMap):
        self.lmap = lmap

    def episode(self, obs: Observations, seed: int = 0):
        index, score = single_image_match(obs.embeddings[0], self.lmap)
        yield StepRecord(1, score, self.lmap.pose(index), 0, index,
                         self.lmap.pose(index))


class SequenceMatchLocalizer:
    """Constant-velocity sequence alignment over a fixed-length window.

    The match is attributed to the first query frame of the window, so the
    reported error compares the path-start reference with that frame's
    ground truth.
    """

    method_name = "seqmatch"
    higher_is_better = False

    def __init__(self, lmap: LocalizationMap,
                 params: SequenceMatchParams | None = None):
        self.lmap = lmap
        self.params = params or SequenceMatchParams()

    def episode(self, obs: Observations, seed: int = 0):
        length = min(self.params.seq_length, len(obs))
        start, score = sequence_match(obs.embeddings[:length], self.lmap,
                                      self.params)
        yield StepRecord(length, score, self.lmap.pose(start), 0, start,
                         self.lmap.pose(start))


def make_localizer(method: str, lmap: LocalizationMap, *,
                   topo_params: TopoParams | None = None,
                   mcl_params: MclParams | None = None,
                   seq_params: SequenceMatchParams | None = None,
                   meas: MeasurementParams | None = None,
                   delta: float = 5.0):
    if method == "topological":
        return TopologicalLocalizer(lmap, topo_params, meas, delta)
    if method == "mcl":
        return MonteCarloLocalizer(lmap, mcl_params, meas, delta)
    if method == "single":
        return SingleImageLocalizer(lmap)
    if method == "seqmatch":
        return SequenceMatchLocalizer(lmap, seq_params)
    raise ConfigInvalid(f"method must be one of {METHOD_NAMES}, got {method!r}")


# ---------------------------------------------------------------------------
# traces and outcomes


@dataclass(frozen=True)
class TrialTrace:
    """Threshold-independent record of one episode."""

    trial_id: int
    records: tuple  # StepRecord, ascending step
    errors: tuple   # per record: (trans_err, rot_err) or None


def _accepts(score: float, threshold: float, higher_is_better: bool) -> bool:
    return score > threshold if higher_is_better else score <= threshold


def build_trace(localizer, trial: Trial, trial_id: int,
                base_seed: int = 0) -> TrialTrace:
    records, errors = [], []
    try:
        for rec in localizer.episode(trial.observations,
                                     seed=base_seed + trial_id):
            records.append(rec)
            if rec.estimate is None:
                errors.append(None)
            else:
                errors.append(error_against_truth(
                    rec.estimate, trial.ground_truth[rec.truth_index]))
    except (ZeroPosterior, DegenerateSpread):
        pass  # numeric degeneracy: remaining steps count as a failed trial
    return TrialTrace(trial_id, tuple(records), tuple(errors))


def outcome_at(trace: TrialTrace, threshold: float,
               higher_is_better: bool) -> TrialOutcome:
    for rec, err in zip(trace.records, trace.errors):
        if _accepts(rec.score, threshold, higher_is_better):
            if err is None:
                break  # accepted but no usable estimate: failed trial
            return TrialOutcome(True, rec.step, rec.estimate, rec.score,
                                err[0], err[1])
    last = trace.records[-1] if trace.records else None
    return TrialOutcome(False, last.step if last else 0, None,
                        last.score if last else float("nan"))


def run_trial(localizer, trial: Trial, threshold: float,
              trial_id: int = 0, base_seed: int = 0) -> TrialOutcome:
    """Step the localizer through the slice; stop at first acceptance."""
    return outcome_at(build_trace(localizer, trial, trial_id, base_seed),
                      threshold, localizer.higher_is_better)


_POOL_STATE: dict = {}


def _pool_init(localizer, trials, base_seed):
    _POOL_STATE["args"] = (localizer, tuple(trials), base_seed)


def _pool_trace(index: int) -> TrialTrace:
    localizer, trials, base_seed = _POOL_STATE["args"]
    return build_trace(localizer, trials[index], index, base_seed)


def evaluate_trials(localizer, trials, jobs: int = 1,
                    base_seed: int = 0) -> list:
    """One trace per trial; workers share the immutable map via the pool."""
    if jobs <= 1:
        traces = [build_trace(localizer, trial, i, base_seed)
                  for i, trial in enumerate(trials)]
    else:
        with ProcessPoolExecutor(
                max_workers=jobs, initializer=_pool_init,
                initargs=(localizer, tuple(trials), base_seed)) as pool:
            chunk = max(1, len(trials) // (4 * jobs))
            traces = list(pool.map(_pool_trace, range(len(trials)),
                                   chunksize=chunk))
    return sorted(traces, key=lambda tr: tr.trial_id)


def trace_outcomes_fn(traces, higher_is_better: bool):
    def outcomes_fn(threshold: float) -> list:
        return [outcome_at(tr, threshold, higher_is_better) for tr in traces]
    return outcomes_fn


def observed_scores(traces) -> np.ndarray:
    vals = [rec.score for tr in traces for rec in tr.records]
    return np.asarray(sorted(set(vals)), dtype=float)


def build_threshold_grid(scores, num: int = 50) -> np.ndarray:
    """Log-spaced grid over the observed score range plus the exact scores."""
    scores = np.asarray(scores, dtype=float)
    scores = scores[np.isfinite(scores)]
    if scores.size == 0:
        raise ValueError("no finite scores to build a grid from")
    positive = scores[scores > 0]
    lo = positive.min() if positive.size else 1e-12
    hi = max(scores.max(), lo)
    grid = np.geomspace(lo, hi, num=num)
    return np.unique(np.concatenate([grid, scores]))


# ---------------------------------------------------------------------------
# curves and summaries


@dataclass(frozen=True)
class PRPoint:
    threshold: float
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int


def _classify(outcomes, tol: ErrorTolerance) -> tuple[int, int, int]:
    tp = fp = fn = 0
    for outcome in outcomes:
        if not outcome.localized:
            fn += 1
        elif tol.accepts(outcome.trans_err, outcome.rot_err):
            tp += 1
        else:
            fp += 1
    return tp, fp, fn


def precision_recall_sweep(outcomes_fn, tol: ErrorTolerance,
                           thresholds) -> list:
    thresholds = sorted(float(t) for t in thresholds)
    if not thresholds:
        raise ValueError("threshold list must be nonempty")
    curve = []
    for threshold in thresholds:
        outcomes = outcomes_fn(threshold)
        tp, fp, fn = _classify(outcomes, tol)
        total = tp + fp + fn
        precision = tp / (tp + fp) if tp + fp else 1.0
        recall = tp / total if total else 0.0
        curve.append(PRPoint(threshold, precision, recall, tp, fp, fn))
    return curve


@dataclass(frozen=True)
class SummaryMetrics:
    recall_at_99: float
    auc: float
    mean_steps: float


def summary_metrics(curve, outcomes_fn) -> SummaryMetrics:
    """Recall at 99% precision, trapezoidal AUC, and mean steps there.

    The operating point is the maximum-recall curve point with precision at
    least 0.99 (ties to the smallest threshold); mean steps averages over
    trials localized at that point.
    """
    points = sorted(zip((p.recall for p in curve), (p.precision for p in curve)))
    recalls = np.concatenate([[0.0], [r for r, _ in points]])
    precisions = np.concatenate([[1.0], [p for _, p in points]])
    auc = float(np.trapezoid(precisions, recalls))

    qualifying = [p for p in curve if p.precision >= 0.99]
    if not qualifying:
        return SummaryMetrics(0.0, auc, float("nan"))
    best = min(qualifying, key=lambda p: (-p.recall, p.threshold))
    steps = [o.steps_used for o in outcomes_fn(best.threshold) if o.localized]
    mean_steps = float(np.mean(steps)) if steps else float("nan")
    return SummaryMetrics(best.recall, auc, mean_steps)


def benchmark_iteration(localizer, trial: Trial,
                        repetitions: int = 5) -> tuple[float, int]:
    """Median wall-clock milliseconds per step, with the step count."""
    if repetitions < 1:
        raise ValueError("repetitions must be at least 1")
    per_step = []
    steps = 0
    for _ in range(repetitions):
        t0 = time.perf_counter()
        steps = sum(1 for _ in localizer.episode(trial.observations, seed=0))
        elapsed = time.perf_counter() - t0
        per_step.append(1e3 * elapsed / max(steps, 1))
    return float(np.median(per_step)), steps


# ---------------------------------------------------------------------------
# CSV output


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def write_pr_curve(path, curve) -> None:
    with open(path, "w") as f:
        f.write("threshold,precision,recall,tp,fp,fn\n")
        for p in curve:
            f.write(f"{_fmt(p.threshold)},{_fmt(p.precision)},"
                    f"{_fmt(p.recall)},{p.tp},{p.fp},{p.fn}\n")


def write_summary(path, rows) -> None:
    """Rows: (method, embedding, tolerance, SummaryMetrics, ms_per_iter)."""
    with open(path, "w") as f:
        f.write("method,embedding,tolerance,recall_at_99,auc,mean_steps,"
                "ms_per_iter\n")
        for method, embedding, tolerance, metrics, ms in rows:
            f.write(f"{method},{embedding},{tolerance},"
                    f"{_fmt(metrics.recall_at_99)},{_fmt(metrics.auc)},"
                    f"{_fmt(metrics.mean_steps)},{_fmt(ms)}\n")
