"""Command-line entry point: ``chainforge <command> ...``.

Exit status is 0 on success, 2 for invalid arguments and 1 when a run
fails.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .core import (
    CLASSIFICATION,
    REGRESSION,
    BlackBox,
    ChainforgeError,
    InvalidArgumentError,
    RandomSource,
    read_csv_dataset,
    read_model,
    write_csv_dataset,
    write_model,
)
from .harness import (
    JS_MODES,
    ROSTER,
    BenchmarkConfig,
    ForestParams,
    InteractionConfig,
    run_benchmark,
    run_interaction_study,
    run_js_study,
    write_records,
)
from .learners import fit_forest
from .synth import CONCEPTS, IndependentConceptConfig, ToyConfig, gen_independent_concepts, gen_toy
from .transfer import pool_sources

SEED_ENV = "CHAINFORGE_SEED"
DEFAULT_GRIDS = {"vs_n": "2,3,5,10,20,50", "vs_m": "2,3,5,10,20", "ensemble": "20,50,100", "ensemble_effect": "20,50,100"}


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in _csv_list(text)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _env_seed() -> int | None:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise InvalidArgumentError(f"{SEED_ENV}={raw!r} is not an integer") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chainforge", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help):
        p.add_argument("--seed", type=int, default=None, help=f"master seed (falls back to ${SEED_ENV}, then 0)")
        p.add_argument("--out", required=True, help=out_help)

    p = sub.add_parser("gen", help="write a synthetic dataset as CSV")
    p.add_argument("--concept", choices=sorted(CONCEPTS) + ["independent"], default="xor")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--noise", type=float, default=None,
                   help="input jitter for toys (default 0.05) or target noise for independent concepts (default 1)")
    p.add_argument("--d", type=int, default=5, help="input width (independent concepts)")
    p.add_argument("--m", type=int, default=10, help="number of targets (independent concepts)")
    p.add_argument("--task", choices=[CLASSIFICATION, REGRESSION], default=REGRESSION)
    common(p, "dataset CSV path")

    p = sub.add_parser("train-source", help="fit a random forest source model")
    p.add_argument("--data", required=True)
    p.add_argument("--labels-last", type=int, required=True)
    p.add_argument("--trees", type=int, default=ForestParams.trees_per_label)
    p.add_argument("--max-depth", type=int, default=ForestParams.max_depth)
    common(p, "model artifact path (.model)")

    p = sub.add_parser("interaction", help="BR versus ECC under four base-learner settings")
    p.add_argument("--data", required=True)
    p.add_argument("--labels-last", type=int, required=True)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--members", type=int, default=InteractionConfig.n_members)
    p.add_argument("--sgd-steps", type=int, default=InteractionConfig.steps)
    p.add_argument("--learning-rate", type=float, default=InteractionConfig.learning_rate)
    p.add_argument("--experiments", type=_csv_list, default=["exp1", "exp2", "exp3", "exp4"])
    common(p, "record CSV path")

    p = sub.add_parser("js", help="shrinkage studies")
    p.add_argument("--mode", choices=JS_MODES + ("ensemble",), required=True)
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--grid", type=_int_list, default=None)
    common(p, "record CSV path")

    p = sub.add_parser("benchmark", help="stepwise accuracy against compute for the method roster")
    p.add_argument("--target", required=True)
    p.add_argument("--labels-last", type=int, required=True)
    p.add_argument("--source", type=_csv_list, required=True, help="comma-separated .model files")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--methods", type=_csv_list, default=list(ROSTER))
    p.add_argument("--learning-rate", type=float, default=BenchmarkConfig.learning_rate)
    p.add_argument("--l2", type=float, default=BenchmarkConfig.l2_penalty)
    p.add_argument("--search-budget", type=int, default=BenchmarkConfig.search_budget)
    common(p, "record CSV path")
    return parser


def _stem(path) -> str:
    return os.path.splitext(os.path.basename(str(path)))[0]


def _run(args) -> None:
    seed = args.seed if args.seed is not None else (_env_seed() or 0)
    if args.command == "gen":
        if args.concept == "independent":
            noise = 1.0 if args.noise is None else args.noise
            data = gen_independent_concepts(IndependentConceptConfig(
                args.n, args.d, args.m, noise, args.task, RandomSource(seed, "gen")))
        else:
            noise = 0.05 if args.noise is None else args.noise
            data = gen_toy(ToyConfig(args.concept, args.n, noise, RandomSource(seed, "gen")))
        write_csv_dataset(data, args.out)
    elif args.command == "train-source":
        data = read_csv_dataset(args.data, args.labels_last)
        forest = fit_forest(data, args.trees, args.max_depth, RandomSource(seed, "source"))
        write_model(forest, args.out)
    elif args.command == "interaction":
        data = read_csv_dataset(args.data, args.labels_last)
        cfg = InteractionConfig(n_members=args.members, steps=args.sgd_steps, learning_rate=args.learning_rate)
        unknown = set(args.experiments) - {"exp1", "exp2", "exp3", "exp4"}
        if unknown:
            raise InvalidArgumentError(f"unknown experiments {sorted(unknown)}")
        records = run_interaction_study(data, args.folds, seed, cfg, _stem(args.data), tuple(args.experiments))
        write_records(records, args.out)
    elif args.command == "js":
        grid = args.grid or _int_list(DEFAULT_GRIDS[args.mode])
        write_records(run_js_study(args.mode, grid, args.runs, seed), args.out)
    elif args.command == "benchmark":
        members = []
        for path in args.source:
            model, artifact = read_model(path)
            members.append(BlackBox(model, artifact))
        source = BlackBox(pool_sources(members)) if len(members) > 1 else members[0]
        cfg = BenchmarkConfig(_stem(args.target), tuple(_stem(p) for p in args.source), args.steps,
                              methods=tuple(args.methods), seed=seed, learning_rate=args.learning_rate,
                              l2_penalty=args.l2, search_budget=args.search_budget)
        data = read_csv_dataset(args.target, args.labels_last)
        write_records(run_benchmark(cfg, data, source), args.out)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _run(args)
    except InvalidArgumentError as exc:
        print(f"chainforge: error: {exc}", file=sys.stderr)
        return 2
    except (ChainforgeError, OSError, ArithmeticError) as exc:
        print(f"chainforge: {args.command} failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
