"""Command-line entry point for routepredict.

Subcommands: generate, cluster, train, predict, evaluate, sweep.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Optional, Sequence, TextIO

import numpy as np
import pandas as pd

try:  # pragma: no cover - import resolution differs for packaging
    from . import __version__
except Exception:  # pragma: no cover - fallback for direct execution
    from __init__ import __version__

from clustering import cluster_history
from config import Settings, explicit_settings, resolve_settings
from evaluation import (
    grid_sweep,
    incremental_experiment,
    incremental_frame,
    leave_one_out_cv,
    merge_reports,
    outcomes_frame,
    random_split_cv,
    summary_frame,
    write_csv,
)
from markov_model import from_bundle, load_bundle, save_bundle, to_bundle, train_models
from predictor import PredictorConfig, new_session, priors_from_sizes
from synthetic_gen import GenConfig, generate_corpus, write_corpus
from trip_data import (
    ClusterSet,
    History,
    build_lexicon,
    dump_clusters,
    encode_trip,
    load_clusters,
    load_trips,
)
from utils import _parse_dims, _parse_floats, open_output

log = logging.getLogger("routepredict")

_SETTING_FLAGS = {
    "alpha": "alpha",
    "epsilon": "epsilon",
    "prior": "prior_mode",
    "pi": "pi_mode",
    "clustering": "clustering_mode",
    "route_threshold": "route_threshold",
    "seed": "seed",
    "protocol": "protocol",
    "rounds": "rounds",
    "split_fraction": "split_fraction",
    "alphas": "alphas",
    "epsilons": "epsilons",
}


def _configure_logging() -> None:
    level_name = os.getenv("ROUTEPREDICT_LOG_LEVEL", "INFO").upper()
    level = getattr(logging, level_name, None)
    invalid_level = not isinstance(level, int)
    if invalid_level:
        level = logging.INFO

    logging.basicConfig(
        level=level,
        format="%(levelname)s:%(name)s:%(message)s",
        stream=sys.stderr,
    )

    if invalid_level:
        logging.warning("Invalid log level %s provided, falling back to INFO", level_name)


def _flags(args: argparse.Namespace) -> dict[str, Any]:
    flags: dict[str, Any] = {}
    for attr, field in _SETTING_FLAGS.items():
        value = getattr(args, attr, None)
        if attr == "clustering" and isinstance(value, list):
            continue
        flags[field] = value
    return flags


def _settings(args: argparse.Namespace) -> Settings:
    return resolve_settings(_flags(args), getattr(args, "config", None))


def _predictor_config(settings: Settings) -> PredictorConfig:
    return PredictorConfig(
        alpha=settings.alpha,
        prior_mode=settings.prior_mode,
        epsilon=settings.epsilon,
        pi_mode=settings.pi_mode,
    )


def _load_history(path: str) -> History:
    history = load_trips(path).deduplicated()
    if not history.trips:
        raise ValueError(f"{path} contains no trips")
    return history


def _clusters_for(
    history: History, settings: Settings, clusters_path: Optional[str], mode: Optional[str] = None
) -> ClusterSet:
    if clusters_path:
        cluster_set = load_clusters(clusters_path)
        cluster_set.check_partition(history)
        return cluster_set
    return cluster_history(
        history,
        mode or settings.clustering_mode,  # type: ignore[arg-type]
        settings.route_threshold,
        settings.similarity,
    )


# ---- subcommands -----------------------------------------------------------------


def cmd_generate(args: argparse.Namespace, settings: Settings) -> None:
    width, height = _parse_dims(args.grid) if args.grid else (20, 20)
    overrides = {
        "n_pois": args.pois,
        "routes_per_od": args.routes_per_od,
        "trips_total": args.trips,
        "n_od_pairs": args.od_pairs,
        "p_drop": args.p_drop,
        "p_spurious": args.p_spurious,
    }
    gen = GenConfig(
        rng_seed=settings.seed,
        grid_width=width,
        grid_height=height,
        **{k: v for k, v in overrides.items() if v is not None},
    )
    history, truth = generate_corpus(gen)
    write_corpus(args.output, history, truth)
    log.info("wrote corpus to %s", args.output)


def cmd_cluster(args: argparse.Namespace, settings: Settings) -> None:
    history = _load_history(args.input)
    cluster_set = _clusters_for(history, settings, None)
    with open_output(args.output) as fh:
        dump_clusters(cluster_set, fh)


def cmd_train(args: argparse.Namespace, settings: Settings) -> None:
    history = _load_history(args.input)
    cluster_set = _clusters_for(history, settings, args.clusters)
    lexicon = build_lexicon(history)
    encoded = {t.trip_id: encode_trip(t, lexicon).states for t in history.trips}
    models = train_models(
        encoded,
        cluster_set,
        lexicon,
        epsilon=settings.epsilon,
        pi_mode=settings.pi_mode,
    )
    with open_output(args.output) as fh:
        save_bundle(to_bundle(lexicon, models), fh)
    log.info("trained %d cluster models over %d segments", len(models), lexicon.n)


def cmd_predict(
    args: argparse.Namespace, settings: Settings, stdin: TextIO, stdout: TextIO
) -> None:
    bundle = load_bundle(args.input)
    # The bundle's epsilon applies unless one was configured.
    explicit = explicit_settings(_flags(args), args.config)
    epsilon = settings.epsilon if "epsilon" in explicit else None
    lexicon, models = from_bundle(bundle, epsilon=epsilon)
    config = PredictorConfig(
        alpha=settings.alpha,
        prior_mode=settings.prior_mode,
        epsilon=models[0].epsilon,
        pi_mode=bundle.pi_mode,
    )
    priors = priors_from_sizes([m.trips_in_cluster for m in models], config.prior_mode)
    session = None
    previous: Optional[str] = None
    for line in stdin:
        segment = line.strip()
        if not segment or segment == previous:
            continue
        previous = segment
        state = lexicon.index.get(segment, lexicon.u)
        if session is None:
            session = new_session(models, priors, config, state)
        else:
            session.observe_segment(state)
        stdout.write(
            json.dumps(
                {
                    "segments_seen": session.segments_seen,
                    "posteriors": session.posteriors(),
                    "decided": session.decided,
                }
            )
            + "\n"
        )
        stdout.flush()
        if session.decided is not None:
            break


def cmd_evaluate(args: argparse.Namespace, settings: Settings, stdout: TextIO) -> None:
    history = _load_history(args.input)
    cluster_set = _clusters_for(history, settings, args.clusters)
    config = _predictor_config(settings)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    if settings.protocol == "split":
        report = merge_reports(
            random_split_cv(
                history,
                cluster_set,
                config,
                settings.rounds,
                settings.split_fraction,
                settings.seed,
            )
        )
    elif settings.protocol == "loo":
        report = leave_one_out_cv(history, cluster_set, config)
    else:
        order = [
            history.trip_ids[i]
            for i in np.random.default_rng(settings.seed).permutation(len(history))
        ]
        series = incremental_experiment(
            history, cluster_set, config, order, range(1, len(history), args.step)
        )
        with open_output(out / "incremental.csv") as fh:
            write_csv(incremental_frame(series), fh)
        report = merge_reports(r for _, r in series)
    if settings.protocol != "incremental":
        with open_output(out / "outcomes.csv") as fh:
            write_csv(outcomes_frame(report.outcomes), fh)
    summary = summary_frame(report, config, settings.clustering_mode, settings.protocol)
    with open_output(out / "summary.csv") as fh:
        write_csv(summary, fh)
    write_csv(summary, stdout)


def cmd_sweep(args: argparse.Namespace, settings: Settings) -> None:
    history = _load_history(args.input)
    if settings.protocol not in ("split", "loo"):
        raise ValueError("sweep supports --protocol split or loo")
    modes = args.clustering or ["od", "route"]
    frames = []
    for mode in dict.fromkeys(modes):
        cluster_set = _clusters_for(history, settings, None, mode)
        frames.append(
            grid_sweep(
                history,
                cluster_set,
                settings.alphas,
                settings.epsilons,
                settings.protocol,  # type: ignore[arg-type]
                clustering_mode=mode,
                base=_predictor_config(settings),
                n_rounds=settings.rounds,
                split=settings.split_fraction,
                rng_seed=settings.seed,
            )
        )
    with open_output(args.output) as fh:
        write_csv(pd.concat(frames, ignore_index=True), fh)


# ---- parser ----------------------------------------------------------------------


def _float_list(raw: str) -> tuple[float, ...]:
    try:
        return _parse_floats(raw)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _add_model_flags(p: argparse.ArgumentParser, *, pi: bool = True) -> None:
    p.add_argument("--alpha", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--prior", choices=["uniform", "proportional"])
    if pi:
        p.add_argument("--pi", choices=["ml", "cluster-uniform", "global-uniform"])


def _add_cluster_flags(p: argparse.ArgumentParser, *, repeat: bool = False) -> None:
    if repeat:
        p.add_argument(
            "--clustering",
            choices=["od", "route"],
            action="append",
            help="clustering mode; repeat for several (default: od and route)",
        )
    else:
        p.add_argument("--clustering", choices=["od", "route"])
    p.add_argument("--route-threshold", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="routepredict",
        description="Markov chain journey-pattern prediction from trip histories.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of settings")
    common.add_argument("--seed", type=int)

    p = sub.add_parser("generate", parents=[common], help="write a synthetic corpus")
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--pois", type=int)
    p.add_argument("--od-pairs", type=int)
    p.add_argument("--routes-per-od", type=int)
    p.add_argument("--trips", type=int)
    p.add_argument("--p-drop", type=float)
    p.add_argument("--p-spurious", type=float)
    p.add_argument("--grid", help="grid size W,H (default 20,20)")

    p = sub.add_parser("cluster", parents=[common], help="cluster a trip history")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    _add_cluster_flags(p)

    p = sub.add_parser("train", parents=[common], help="train a model bundle")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--clusters", help="clusters.json to use instead of clustering")
    _add_cluster_flags(p)
    _add_model_flags(p)

    p = sub.add_parser("predict", parents=[common], help="stream segments from stdin")
    p.add_argument("--input", required=True, help="model bundle")
    _add_model_flags(p, pi=False)

    p = sub.add_parser("evaluate", parents=[common], help="run one evaluation protocol")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--clusters")
    p.add_argument("--protocol", choices=["split", "loo", "incremental"])
    p.add_argument("--rounds", type=int)
    p.add_argument("--split-fraction", type=float)
    p.add_argument("--step", type=int, default=1, help="spacing of incremental training sizes")
    _add_cluster_flags(p)
    _add_model_flags(p)

    p = sub.add_parser("sweep", parents=[common], help="alpha x epsilon grid sweep")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--protocol", choices=["split", "loo"])
    p.add_argument("--rounds", type=int)
    p.add_argument("--split-fraction", type=float)
    p.add_argument("--alphas", type=_float_list)
    p.add_argument("--epsilons", type=_float_list)
    _add_cluster_flags(p, repeat=True)
    _add_model_flags(p)
    return parser


def run(
    argv: Optional[Sequence[str]] = None,
    stdin: Optional[TextIO] = None,
    stdout: Optional[TextIO] = None,
) -> int:
    """Parse ``argv`` and run one subcommand; returns the exit status."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        if getattr(args, "step", 1) < 1:
            raise ValueError("--step must be >= 1")
        settings = _settings(args)
        if args.command == "generate":
            cmd_generate(args, settings)
        elif args.command == "cluster":
            cmd_cluster(args, settings)
        elif args.command == "train":
            cmd_train(args, settings)
        elif args.command == "predict":
            cmd_predict(args, settings, stdin, stdout)
        elif args.command == "evaluate":
            cmd_evaluate(args, settings, stdout)
        elif args.command == "sweep":
            cmd_sweep(args, settings)
    except (OSError, ValueError, RuntimeError) as e:
        log.error("%s failed: %s", args.command, e)
        print(f"routepredict: error: {e}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    _configure_logging()
    sys.exit(run())


if __name__ == "__main__":
    main()
