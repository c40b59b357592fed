import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import ValidationError

from .core.config import RunConfig, load_run_config
from .core.exceptions import GameSpecError, NeatestError, SpecValidationError
from .core.logging_config import configure_logging
from .schemas.harness import CoverageRow, DynamicTestSuite, MutationReport
from .services.cdg_service import cdg_service
from .services.game_spec_service import game_spec_service
from .services.mutation_service import mutation_service
from .services.neat_service import InnovationRegistry
from .services.oracle_service import oracle_service
from .services.report_service import report_service
from .services.search_service import search_service
from .services.statistics_service import statistics_service
from .utils.file_utils import artifact_path, ensure_dir, load_model, load_suite, save_model

logger = logging.getLogger("app.cli")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INVALID = 2
EXIT_PARTIAL = 3

# CLI flag -> RunConfig field
OVERRIDES = {
    "game": "game_path",
    "population_size": "population_size",
    "max_generations": "max_generations",
    "budget_seconds": "budget_seconds",
    "r_d": "r_d",
    "max_steps": "max_steps",
    "seed": "master_seed",
    "workers": "workers",
    "output_dir": "output_dir",
    "threshold": "oracle_threshold",
    "repetitions": "ground_truth_repetitions",
    "cap": "mutants_per_operator",
    "log_level": "log_level",
    "profile": "profile",
}


def _config(args: argparse.Namespace) -> RunConfig:
    overrides: Dict[str, Any] = {}
    for flag, field in OVERRIDES.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field] = value
    config = load_run_config(getattr(args, "config", None), overrides)
    configure_logging(config.log_level, config.log_file)
    return config


def _seeds(args: argparse.Namespace, config: RunConfig) -> List[int]:
    if args.seed_list:
        return [int(s) for s in args.seed_list.split(",")]
    rng = np.random.default_rng(config.master_seed + 1)
    return [int(s) for s in rng.integers(0, 2 ** 31 - 1, size=args.seeds)]


# ------------------------------------------------------------------ commands

def cmd_validate(args: argparse.Namespace) -> int:
    text = Path(args.game).read_text(encoding="utf-8")
    try:
        game_spec_service.parse_game(text)
    except SpecValidationError as e:
        sys.stdout.write(game_spec_service.report_jsonl(e.issues))
        return EXIT_INVALID
    print(f"{args.game}: ok")
    return EXIT_OK


def cmd_cdg(args: argparse.Namespace) -> int:
    spec = game_spec_service.load_game(args.game)
    sys.stdout.write(cdg_service.to_dot(cdg_service.build_cdg(spec)))
    return EXIT_OK


def cmd_generate(args: argparse.Namespace) -> int:
    config = _config(args)
    spec = game_spec_service.load_game(config.game_path)
    run = search_service.cmd_generate(spec, config)
    ensure_dir(config.output_dir)
    path = save_model(run.suite, artifact_path(config.output_dir, spec.name, "dynamic"))
    row = report_service.suite_row(run.suite, spec, "dynamic")
    report_service.write_report(config.output_dir, [row], generation_logs=run.logs)
    print(f"{path}: {len(run.suite.entries)} test(s), reliable coverage {run.suite.coverage:.2%}")
    return EXIT_PARTIAL if run.suite.budget_exhausted else EXIT_OK


def cmd_random(args: argparse.Namespace) -> int:
    config = _config(args)
    spec = game_spec_service.load_game(config.game_path)
    suite = search_service.cmd_random_baseline(spec, config)
    path = save_model(suite, artifact_path(config.output_dir, spec.name, "static"))
    print(f"{path}: {len(suite.tests)} test(s), reliable coverage {suite.coverage:.2%}")
    return EXIT_OK


def cmd_run_suite(args: argparse.Namespace) -> int:
    config = _config(args)
    spec = game_spec_service.load_game(config.game_path)
    suite = load_suite(args.suite)
    rows = search_service.cmd_run_suite(suite, spec, _seeds(args, config))
    frame = report_service.coverage_frame(rows)
    output = args.out or artifact_path(config.output_dir, spec.name, f"{rows[0].suite if rows else 'suite'}.runs", "csv")
    ensure_dir(str(Path(output).parent))
    frame.to_csv(output, index=False, float_format="%.6f")
    print(f"{output}: mean coverage {frame['coverage'].mean():.2%} over {len(rows)} seed(s)")
    return EXIT_OK


def cmd_mutate(args: argparse.Namespace) -> int:
    config = _config(args)
    spec = game_spec_service.load_game(config.game_path)
    if args.suite is None:
        mutants = mutation_service.generate_mutant_set(spec, np.random.default_rng(config.master_seed),
                                                       config.mutants_per_operator)
        directory = args.out or str(Path(config.output_dir) / "mutants")
        written = mutation_service.write_mutants(spec, mutants, directory)
        print(f"{len(written)} mutant(s) written to {directory}")
        return EXIT_OK
    suite = load_model(DynamicTestSuite, args.suite)
    report = search_service.cmd_mutation_analysis(suite, spec, config)
    save_model(report, artifact_path(config.output_dir, spec.name, "mutation"))
    profiled = save_model(suite, artifact_path(config.output_dir, spec.name, "profiled"))
    for row in report.rows:
        print(f"{row.operator}: {row.killed}/{row.generated} killed ({row.structural_kills} structural)")
    print(f"false positives: {report.false_positives}/{report.fp_runs}")
    print(f"{profiled}: suite with ground-truth profiles")
    return EXIT_OK


def cmd_judge(args: argparse.Namespace) -> int:
    config = _config(args)
    clean = game_spec_service.load_game(config.game_path)
    suspect = game_spec_service.load_game(args.suspect)
    suite = load_model(DynamicTestSuite, args.suite)
    rng = np.random.default_rng(config.master_seed)
    registry = InnovationRegistry.from_genomes([e.genome for e in suite.entries])
    search_service.ensure_profiles(suite, clean, config, rng, registry)
    seeds = _seeds(args, config)
    verdicts = []
    for entry in suite.entries:
        verdict = oracle_service.judge(entry.genome, suspect, entry.profile, config.oracle_threshold, seeds,
                                       registry, suite.max_steps, config.min_log_density)
        verdicts.append({"target": entry.target, **json.loads(verdict.model_dump_json())})
    print(json.dumps(verdicts, indent=2))
    return EXIT_OK


def _samples(path: str, column: str) -> List[float]:
    if path.endswith(".csv"):
        return pd.read_csv(path)[column].astype(float).tolist()
    return [float(v) for v in json.loads(Path(path).read_text(encoding="utf-8"))]


def cmd_stats(args: argparse.Namespace) -> int:
    result = statistics_service.compare(_samples(args.x, args.column), _samples(args.y, args.column))
    print(result.model_dump_json(indent=2))
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    rows: List[CoverageRow] = []
    for path in args.coverage or []:
        rows.extend(CoverageRow(**record) for record in pd.read_csv(path).to_dict(orient="records"))
    reports = [load_model(MutationReport, path) for path in args.mutation or []]
    written = report_service.write_report(args.out, rows, reports)
    for name, path in sorted(written.items()):
        print(f"{name}: {path}")
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn
    uvicorn.run("app.main:app", host=args.host, port=args.port)
    return EXIT_OK


# -------------------------------------------------------------------- parser

def _run_flags(parser: argparse.ArgumentParser, game_required: bool = True) -> None:
    parser.add_argument("--game", required=game_required, help="game DSL file")
    parser.add_argument("--config", help="TOML run configuration")
    parser.add_argument("--profile", choices=["desk", "cluster"])
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--output-dir", dest="output_dir")
    parser.add_argument("--max-steps", dest="max_steps", type=int)
    parser.add_argument("--r-d", dest="r_d", type=int)
    parser.add_argument("--log-level", dest="log_level")


def _seed_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seeds", type=int, default=10, help="number of fresh seeds")
    parser.add_argument("--seed-list", dest="seed_list", help="comma separated explicit seeds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="neatest", description="Neuroevolution test generator for mini games")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="evolve a dynamic test suite")
    _run_flags(p)
    p.add_argument("--population-size", dest="population_size", type=int)
    p.add_argument("--max-generations", dest="max_generations", type=int)
    p.add_argument("--budget-seconds", dest="budget_seconds", type=float)
    p.add_argument("--workers", type=int)
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("random", help="random baseline producing static tests")
    _run_flags(p)
    p.add_argument("--population-size", dest="population_size", type=int)
    p.add_argument("--max-generations", dest="max_generations", type=int)
    p.add_argument("--budget-seconds", dest="budget_seconds", type=float)
    p.set_defaults(handler=cmd_random)

    p = sub.add_parser("run-suite", help="execute a dynamic or static suite on fresh seeds")
    _run_flags(p)
    _seed_flags(p)
    p.add_argument("--suite", required=True)
    p.add_argument("--out")
    p.set_defaults(handler=cmd_run_suite)

    p = sub.add_parser("mutate", help="write mutants, or run mutation analysis with --suite")
    _run_flags(p)
    p.add_argument("--cap", type=int)
    p.add_argument("--suite")
    p.add_argument("--threshold", type=float)
    p.add_argument("--repetitions", type=int)
    p.add_argument("--out")
    p.set_defaults(handler=cmd_mutate)

    p = sub.add_parser("judge", help="judge a suspect game with a suite's networks")
    _run_flags(p)
    _seed_flags(p)
    p.add_argument("--suite", required=True)
    p.add_argument("--suspect", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--repetitions", type=int)
    p.set_defaults(handler=cmd_judge)

    p = sub.add_parser("stats", help="A12 and Mann-Whitney U of two samples")
    p.add_argument("x")
    p.add_argument("y")
    p.add_argument("--column", default="coverage")
    p.set_defaults(handler=cmd_stats)

    p = sub.add_parser("report", help="coverage and mutation tables")
    p.add_argument("--coverage", nargs="*")
    p.add_argument("--mutation", nargs="*")
    p.add_argument("--out", default="results/report")
    p.set_defaults(handler=cmd_report)

    p = sub.add_parser("validate", help="check a game file")
    p.add_argument("--game", required=True)
    p.set_defaults(handler=cmd_validate)

    p = sub.add_parser("cdg", help="print the control-dependence graph as DOT")
    p.add_argument("--game", required=True)
    p.set_defaults(handler=cmd_cdg)

    p = sub.add_parser("serve", help="run the HTTP API")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(handler=cmd_serve)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(getattr(args, "log_level", None) or "INFO")
    try:
        return args.handler(args)
    except (GameSpecError, SpecValidationError, ValidationError) as e:
        logger.error(f"Invalid input: {e}")
        return EXIT_INVALID
    except NeatestError as e:
        logger.error(str(e))
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
