"""Command-line front end: generate, evaluate, localize, bench.

One INI config drives every command; section defaults match the filter
defaults, so a bare config reproduces the standard settings.  Flags
override the [run] section.  Exit codes: 0 success, 2 config error,
3 data error, 4 not localized (localize only).
"""

import argparse
import configparser
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from .baselines import SequenceMatchParams
from .dataset import (
    Observations,
    SyntheticWorldConfig,
    Trial,
    generate_world,
    load_real_dataset,
    read_trials,
    sample_trials,
    save_dataset,
)
from .errors import (
    BayesVprError,
    ConfigInvalid,
    CountMismatch,
    DimensionMismatch,
    IndexOutOfRange,
    ParseError,
    TraverseTooShort,
)
from .evaluation import (
    METHOD_NAMES,
    TOLERANCES,
    benchmark_iteration,
    build_threshold_grid,
    build_trace,
    evaluate_trials,
    make_localizer,
    observed_scores,
    precision_recall_sweep,
    summary_metrics,
    trace_outcomes_fn,
    write_pr_curve,
    write_summary,
)
from .geometry import pose_to_row
from .map_store import MeasurementParams
from .mcl import MclParams
from .topo import TopoParams


@dataclass(frozen=True)
class RunConfig:
    method: str = "topological"
    seed: int = 0
    num_trials: int = 100
    trial_len: int = 30
    jobs: int = 1
    tolerance: str = "3m15deg"
    embedding: str = "synthetic-rff"
    # acceptance threshold for localize traces; values above 1 never fire
    accept_threshold: float = 0.9
    world: SyntheticWorldConfig = field(default_factory=SyntheticWorldConfig)
    dataset_paths: tuple | None = None  # (map_stem, query_stem, odom, trials|None)
    meas: MeasurementParams | None = None  # None: calibrate on each trial
    delta: float = 5.0
    topo: TopoParams = field(default_factory=TopoParams)
    mcl: MclParams = field(default_factory=MclParams)
    seq: SequenceMatchParams = field(default_factory=SequenceMatchParams)

    def __post_init__(self):
        if self.method not in METHOD_NAMES:
            raise ConfigInvalid(
                f"run.method: must be one of {METHOD_NAMES}, got {self.method!r}")
        if self.tolerance not in TOLERANCES:
            raise ConfigInvalid(
                f"run.tolerance: must be one of {tuple(TOLERANCES)}")
        if self.num_trials < 1:
            raise ConfigInvalid("run.num_trials: must be at least 1")
        if self.trial_len < 1:
            raise ConfigInvalid("run.trial_len: must be at least 1")
        if self.jobs < 1:
            raise ConfigInvalid("run.jobs: must be at least 1")
        if self.accept_threshold <= 0:
            raise ConfigInvalid("run.accept_threshold: must be positive")


def _parse_segments(text: str):
    """'20:35>130:145 40:55>200:215' -> ((  (20,35),(130,145) ), ...)."""
    segments = []
    for token in text.split():
        try:
            src, dst = token.split(">")
            s0, s1 = (float(v) for v in src.split(":"))
            d0, d1 = (float(v) for v in dst.split(":"))
        except ValueError as exc:
            raise ConfigInvalid(
                f"world.aliasing_segments: expected 's0:s1>d0:d1', got {token!r}"
            ) from exc
        segments.append(((s0, s1), (d0, d1)))
    return tuple(segments)


def _segments_to_text(segments) -> str:
    return " ".join(f"{s0:.17g}:{s1:.17g}>{d0:.17g}:{d1:.17g}"
                    for (s0, s1), (d0, d1) in segments)


def _vector6(text: str, where: str) -> tuple:
    parts = text.split()
    if len(parts) != 6:
        raise ConfigInvalid(f"{where}: expected 6 values, got {len(parts)}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise ConfigInvalid(f"{where}: {exc}") from exc


class _SectionReader:
    def __init__(self, parser: configparser.ConfigParser, section: str):
        self.parser = parser
        self.section = section

    def get(self, key: str, cast, default):
        if not self.parser.has_option(self.section, key):
            return default
        raw = self.parser.get(self.section, key).strip()
        if raw == "":
            return default
        try:
            if cast is bool:
                if raw.lower() in ("true", "yes", "1"):
                    return True
                if raw.lower() in ("false", "no", "0"):
                    return False
                raise ValueError(f"not a boolean: {raw!r}")
            return cast(raw)
        except ValueError as exc:
            raise ConfigInvalid(f"{self.section}.{key}: {exc}") from exc


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"{path}: config file not found")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ParseError(f"{path}: {exc}") from exc

    run = _SectionReader(parser, "run")
    world = _SectionReader(parser, "world")
    meas = _SectionReader(parser, "measurement")
    topo = _SectionReader(parser, "topo")
    mcl = _SectionReader(parser, "mcl")
    seq = _SectionReader(parser, "seqmatch")

    world_defaults = SyntheticWorldConfig()
    world_cfg = SyntheticWorldConfig(
        route_length=world.get("route_length", float, world_defaults.route_length),
        ref_spacing=world.get("ref_spacing", float, world_defaults.ref_spacing),
        query_spacing=world.get("query_spacing", float,
                                world_defaults.query_spacing),
        query_len=world.get("query_len", int, world_defaults.query_len),
        embed_dim=world.get("embed_dim", int, world_defaults.embed_dim),
        appearance_noise_sigma=world.get("appearance_noise_sigma", float,
                                         world_defaults.appearance_noise_sigma),
        aliasing_segments=world.get("aliasing_segments", _parse_segments, ()),
        odom_noise_sigma=world.get(
            "odom_noise_sigma", lambda t: _vector6(t, "world.odom_noise_sigma"),
            world_defaults.odom_noise_sigma),
        feature_length_scale=world.get("feature_length_scale", float,
                                       world_defaults.feature_length_scale),
        rng_seed=world.get("rng_seed", int, world_defaults.rng_seed),
    )

    dataset_paths = None
    if parser.has_section("dataset"):
        ds = _SectionReader(parser, "dataset")
        stems = (ds.get("map", str, None), ds.get("queries", str, None),
                 ds.get("odom", str, None))
        if any(s is None for s in stems):
            raise ConfigInvalid("dataset: needs map, queries, and odom paths")
        dataset_paths = (*stems, ds.get("trials", str, None))

    lambda1 = meas.get("lambda1", float, None)
    delta = meas.get("delta", float, 5.0)
    meas_params = None
    if lambda1 is not None:
        meas_params = MeasurementParams(lambda1, delta)

    # tau_threshold lives in (0, 1] on the params; the raw config value may
    # exceed 1 to force localize traces to run to completion, so it is kept
    # separately as the accept threshold
    raw_topo_tau = topo.get("tau_threshold", float, 0.9)
    raw_mcl_tau = mcl.get("tau_threshold", float, 0.9)
    topo_defaults = TopoParams()
    try:
        topo_params = TopoParams(
            w_lower=topo.get("w_lower", int, topo_defaults.w_lower),
            w_upper=topo.get("w_upper", int, topo_defaults.w_upper),
            window=topo.get("window", int, topo_defaults.window),
            tau_threshold=min(raw_topo_tau, 1.0),
            loop=topo.get("loop", bool, topo_defaults.loop),
        )
    except ValueError as exc:
        raise ConfigInvalid(f"topo: {exc}") from exc

    mcl_defaults = MclParams()
    try:
        mcl_params = MclParams(
            num_particles=mcl.get("num_particles", int,
                                  mcl_defaults.num_particles),
            sigma_init=mcl.get("sigma_init",
                               lambda t: _vector6(t, "mcl.sigma_init"),
                               mcl_defaults.sigma_init),
            sigma_odom=mcl.get("sigma_odom",
                               lambda t: _vector6(t, "mcl.sigma_odom"),
                               mcl_defaults.sigma_odom),
            lambda2=mcl.get("lambda2", float, mcl_defaults.lambda2),
            k_neighbors=mcl.get("k_neighbors", int, mcl_defaults.k_neighbors),
            alpha=mcl.get("alpha", float, mcl_defaults.alpha),
            radius=mcl.get("radius", float, mcl_defaults.radius),
            ess_threshold=mcl.get("ess_threshold", float,
                                  mcl_defaults.ess_threshold),
            tau_threshold=min(raw_mcl_tau, 1.0),
        )
    except ValueError as exc:
        raise ConfigInvalid(f"mcl: {exc}") from exc

    seq_defaults = SequenceMatchParams()
    v_min = seq.get("velocity_min", float, seq_defaults.velocity_range[0])
    v_max = seq.get("velocity_max", float, seq_defaults.velocity_range[1])
    try:
        seq_params = SequenceMatchParams(
            seq_length=seq.get("seq_length", int, seq_defaults.seq_length),
            velocity_range=(v_min, v_max),
            num_slopes=seq.get("num_slopes", int, seq_defaults.num_slopes),
        )
    except ValueError as exc:
        raise ConfigInvalid(f"seqmatch: {exc}") from exc

    method = run.get("method", str, "topological")
    accept = run.get("accept_threshold", float, None)
    if accept is None:
        accept = raw_mcl_tau if method == "mcl" else raw_topo_tau

    return RunConfig(
        method=method,
        seed=run.get("seed", int, 0),
        num_trials=run.get("num_trials", int, 100),
        trial_len=run.get("trial_len", int, world_cfg.query_len),
        jobs=run.get("jobs", int, 1),
        tolerance=run.get("tolerance", str, "3m15deg"),
        embedding=run.get("embedding", str, "synthetic-rff"),
        accept_threshold=accept,
        world=world_cfg,
        dataset_paths=dataset_paths,
        meas=meas_params,
        delta=delta,
        topo=topo_params,
        mcl=mcl_params,
        seq=seq_params,
    )


def dump_effective_config(cfg: RunConfig) -> str:
    """Every key with its effective value; reloading reproduces the run."""
    g = lambda v: format(v, ".17g")
    lines = [
        "[run]",
        f"method = {cfg.method}",
        f"seed = {cfg.seed}",
        f"num_trials = {cfg.num_trials}",
        f"trial_len = {cfg.trial_len}",
        f"jobs = {cfg.jobs}",
        f"tolerance = {cfg.tolerance}",
        f"embedding = {cfg.embedding}",
        f"accept_threshold = {g(cfg.accept_threshold)}",
        "",
        "[world]",
        f"route_length = {g(cfg.world.route_length)}",
        f"ref_spacing = {g(cfg.world.ref_spacing)}",
        f"query_spacing = {g(cfg.world.query_spacing)}",
        f"query_len = {cfg.world.query_len}",
        f"embed_dim = {cfg.world.embed_dim}",
        f"appearance_noise_sigma = {g(cfg.world.appearance_noise_sigma)}",
        f"aliasing_segments = {_segments_to_text(cfg.world.aliasing_segments)}",
        f"odom_noise_sigma = {' '.join(g(v) for v in cfg.world.odom_noise_sigma)}",
        f"feature_length_scale = {g(cfg.world.feature_length_scale)}",
        f"rng_seed = {cfg.world.rng_seed}",
        "",
        "[measurement]",
        f"lambda1 = {'' if cfg.meas is None else g(cfg.meas.lambda1)}",
        f"delta = {g(cfg.delta)}",
        "",
        "[topo]",
        f"w_lower = {cfg.topo.w_lower}",
        f"w_upper = {cfg.topo.w_upper}",
        f"window = {cfg.topo.window}",
        f"tau_threshold = {g(cfg.topo.tau_threshold)}",
        f"loop = {str(cfg.topo.loop).lower()}",
        "",
        "[mcl]",
        f"num_particles = {cfg.mcl.num_particles}",
        f"sigma_init = {' '.join(g(v) for v in cfg.mcl.sigma_init)}",
        f"sigma_odom = {' '.join(g(v) for v in cfg.mcl.sigma_odom)}",
        f"lambda2 = {g(cfg.mcl.lambda2)}",
        f"k_neighbors = {cfg.mcl.k_neighbors}",
        f"alpha = {g(cfg.mcl.alpha)}",
        f"radius = {g(cfg.mcl.radius)}",
        f"ess_threshold = {g(cfg.mcl.ess_threshold)}",
        f"tau_threshold = {g(cfg.mcl.tau_threshold)}",
        "",
        "[seqmatch]",
        f"seq_length = {cfg.seq.seq_length}",
        f"velocity_min = {g(cfg.seq.velocity_range[0])}",
        f"velocity_max = {g(cfg.seq.velocity_range[1])}",
        f"num_slopes = {cfg.seq.num_slopes}",
    ]
    if cfg.dataset_paths is not None:
        map_stem, query_stem, odom, trials = cfg.dataset_paths
        lines += ["", "[dataset]",
                  f"map = {map_stem}",
                  f"queries = {query_stem}",
                  f"odom = {odom}"]
        if trials is not None:
            lines.append(f"trials = {trials}")
    return "\n".join(lines) + "\n"


def _load_world_and_trials(cfg: RunConfig):
    if cfg.dataset_paths is not None:
        map_stem, query_stem, odom, trials_path = cfg.dataset_paths
        try:
            lmap, traverse = load_real_dataset(map_stem, query_stem, odom)
        except FileNotFoundError as exc:
            raise ParseError(f"{exc.filename}: file not found") from exc
        if trials_path is not None:
            starts = read_trials(trials_path)
            trials = _trials_from_starts(traverse, starts, cfg.trial_len)
        else:
            trials = sample_trials(traverse, cfg.num_trials, cfg.trial_len,
                                   cfg.seed)
    else:
        lmap, (traverse,) = generate_world(cfg.world)
        trials = sample_trials(traverse, cfg.num_trials, cfg.trial_len,
                               cfg.seed)
    return lmap, trials


def _trials_from_starts(traverse, starts, query_len):
    trials = []
    for start in starts:
        stop = start + query_len
        if start < 0 or stop > len(traverse):
            raise IndexOutOfRange(
                f"trial start {start} with length {query_len} exceeds "
                f"traverse of {len(traverse)} queries")
        obs = Observations(traverse.embeddings[start:stop],
                           traverse.odometry[start:stop - 1])
        trials.append(Trial(start, obs, traverse.ground_truth[start:stop]))
    return trials


def _localizer(cfg: RunConfig, lmap):
    return make_localizer(cfg.method, lmap, topo_params=cfg.topo,
                          mcl_params=cfg.mcl, seq_params=cfg.seq,
                          meas=cfg.meas, delta=cfg.delta)


def cmd_generate(cfg: RunConfig, out: Path) -> int:
    lmap, (traverse,) = generate_world(cfg.world)
    save_dataset(lmap, traverse, out)
    print(f"N={len(lmap)} T={len(traverse)} D={lmap.embed_dim}")
    return 0


def cmd_evaluate(cfg: RunConfig, out: Path) -> int:
    lmap, trials = _load_world_and_trials(cfg)
    localizer = _localizer(cfg, lmap)
    traces = evaluate_trials(localizer, trials, jobs=cfg.jobs,
                             base_seed=cfg.seed)
    outcomes_fn = trace_outcomes_fn(traces, localizer.higher_is_better)
    grid = build_threshold_grid(observed_scores(traces))
    curve = precision_recall_sweep(outcomes_fn, TOLERANCES[cfg.tolerance], grid)
    metrics = summary_metrics(curve, outcomes_fn)
    ms, _ = benchmark_iteration(localizer, trials[0], repetitions=3)
    write_pr_curve(out / "pr_curve.csv", curve)
    write_summary(out / "summary.csv",
                  [(cfg.method, cfg.embedding, cfg.tolerance, metrics, ms)])
    (out / "effective_config.ini").write_text(dump_effective_config(cfg))
    print(f"method={cfg.method} trials={len(trials)} "
          f"recall_at_99={metrics.recall_at_99:.6g} auc={metrics.auc:.6g}")
    return 0


def _pose_fields(pose) -> str:
    return pose_to_row(pose).replace(" ", ",")


def cmd_localize(cfg: RunConfig, out: Path, trial_index: int) -> int:
    lmap, trials = _load_world_and_trials(cfg)
    if not 0 <= trial_index < len(trials):
        raise IndexOutOfRange(
            f"trial index {trial_index} outside 0..{len(trials) - 1}")
    trial = trials[trial_index]
    localizer = _localizer(cfg, lmap)
    trace = build_trace(localizer, trial, trial_index, cfg.seed)

    header = ("step,tau,map_index,map_x,map_y,map_z,converged,"
              "est_x,est_y,est_z,est_qw,est_qx,est_qy,est_qz")
    rows = [header]
    localized = False
    for rec in trace.records:
        if localizer.higher_is_better:
            accepted = rec.score > cfg.accept_threshold
        else:
            accepted = rec.score <= cfg.accept_threshold
        accepted = accepted and rec.estimate is not None
        mp = rec.map_pose.translation
        row = (f"{rec.step},{format(rec.score, '.17g')},{rec.map_index},"
               f"{format(mp[0], '.17g')},{format(mp[1], '.17g')},"
               f"{format(mp[2], '.17g')},{str(accepted).lower()}")
        if accepted:
            row += "," + _pose_fields(rec.estimate)
        else:
            row += "," * 7
        rows.append(row)
        if accepted:
            localized = True
            break
    text = "\n".join(rows) + "\n"
    (out / "trace.csv").write_text(text)
    print(text, end="")
    return 0 if localized else 4


def cmd_bench(cfg: RunConfig, out: Path) -> int:
    lmap, trials = _load_world_and_trials(cfg)
    trial = trials[0]
    lines = ["method,ms_per_iter,steps"]
    for method in METHOD_NAMES:
        localizer = make_localizer(method, lmap, topo_params=cfg.topo,
                                   mcl_params=cfg.mcl, seq_params=cfg.seq,
                                   meas=cfg.meas, delta=cfg.delta)
        ms, steps = benchmark_iteration(localizer, trial, repetitions=3)
        lines.append(f"{method},{format(ms, '.17g')},{steps}")
    text = "\n".join(lines) + "\n"
    (out / "bench.csv").write_text(text)
    print(text, end="")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bayesvpr",
        description="Probabilistic visual place recognition experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("generate", "write synthetic dataset files"),
            ("evaluate", "run trials and write PR curve + summary"),
            ("localize", "write a per-step trace for one trial"),
            ("bench", "per-method time per iteration")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="INI config path")
        p.add_argument("--method", choices=METHOD_NAMES)
        p.add_argument("--seed", type=int)
        p.add_argument("--trials", type=int)
        p.add_argument("--jobs", type=int)
        p.add_argument("--out", help="output directory "
                                     "(default $BAYESVPR_OUT or ./out)")
        p.add_argument("--tolerance", choices=tuple(TOLERANCES))
        if name == "localize":
            p.add_argument("--trial", type=int, default=0,
                           help="trial index to trace")
    return parser


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    updates = {}
    if args.method is not None:
        updates["method"] = args.method
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.trials is not None:
        updates["num_trials"] = args.trials
    if args.jobs is not None:
        updates["jobs"] = args.jobs
    if args.tolerance is not None:
        updates["tolerance"] = args.tolerance
    return replace(cfg, **updates) if updates else cfg


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        out = Path(args.out or os.environ.get("BAYESVPR_OUT", "out"))
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "generate":
            return cmd_generate(cfg, out)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, out)
        if args.command == "localize":
            return cmd_localize(cfg, out, args.trial)
        return cmd_bench(cfg, out)
    except ConfigInvalid as exc:
        print(f"ConfigInvalid: {exc}", file=sys.stderr)
        return 2
    except (ParseError, CountMismatch, TraverseTooShort, IndexOutOfRange,
            DimensionMismatch) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except BayesVprError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
