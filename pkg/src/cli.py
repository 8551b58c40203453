"""
Command-line entry point

    python -m src.cli gen --config config/experiment.yaml
    python -m src.cli train --data runs/default/dataset.pgrd
    python -m src.cli eval --data runs/default/dataset.pgrd --run pgrd=runs/pgrd --run no_pgr=runs/no_pgr
    python -m src.cli bench-steps --data ... --run pgrd=runs/pgrd --steps 5,10,25,50
    python -m src.cli gradcheck

Exit codes: 0 success, 2 usage or configuration error, 3 numeric failure.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from config.settings import settings
from src.core.orchestrator import ExperimentOrchestrator
from src.models.config import RunConfig
from src.models.domain import PosteriorMode, SamplerType
from src.models.errors import CheckpointError, ConfigError, DatasetFormatError, NumericalError, PGRDError

logger = logging.getLogger("src.cli")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3

ABLATIONS = {
    "no_pgr": {"train.no_pgr": True},
    "no_dds": {"train.no_dds": True},
    "vanilla": {"train.no_pgr": True, "train.no_dds": True},
}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    """Flags shared by every command; each overrides one RunConfig field"""
    parser.add_argument("--config", type=Path, default=None, help="RunConfig file (.yaml or .json)")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--output-dir", dest="output_dir")
    parser.add_argument("--T", dest="T", type=int, help="diffusion steps")
    parser.add_argument("--S", dest="S", type=int, help="sampling steps")
    parser.add_argument("--M", dest="M", type=int, help="samples per case")
    parser.add_argument("--sampler", choices=[s.value for s in SamplerType])
    parser.add_argument("--posterior", choices=[p.value for p in PosteriorMode])
    parser.add_argument("--tau-out", dest="tau_out", type=float)
    parser.add_argument("--cases", type=int)
    parser.add_argument("--size", type=int)
    parser.add_argument("--classes", type=int)
    parser.add_argument("--raters", type=int)
    parser.add_argument("--ambiguity", type=float)
    parser.add_argument("--prior-steps", dest="prior_steps", type=int)
    parser.add_argument("--pgrd-steps", dest="pgrd_steps", type=int)
    parser.add_argument("--lr", type=float)
    parser.add_argument("--batch-size", dest="batch_size", type=int)
    parser.add_argument("--dds-weight", dest="dds_weight", type=float)
    parser.add_argument("--dds-window", dest="dds_window", type=int)
    parser.add_argument("--prefetch", type=int)
    parser.add_argument("--ablate", action="append", choices=sorted(ABLATIONS), default=[])
    parser.add_argument("--workers", type=int, default=settings.MAX_WORKERS)
    parser.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pgrd", description="Prior-guided residual diffusion experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate the synthetic dataset")
    gen.add_argument("--out", type=Path, help="dataset file (default: <output-dir>/dataset.pgrd)")

    train = sub.add_parser("train", help="two-stage training")
    train.add_argument("--data", type=Path, required=True)

    smp = sub.add_parser("sample", help="write a sample archive for a dataset split")
    smp.add_argument("--data", type=Path, required=True)
    smp.add_argument("--run", type=Path, required=True, help="trained run directory")
    smp.add_argument("--split", choices=["train", "test", "all"], default="test")

    ev = sub.add_parser("eval", help="metrics report and paired t-tests")
    ev.add_argument("--data", type=Path, required=True)
    ev.add_argument("--run", action="append", required=True, help="name=run_dir (repeatable)")
    ev.add_argument("--split", choices=["train", "test", "all"], default="test")
    ev.add_argument("--bins", type=int, default=10)
    ev.add_argument("--percent", action="store_true", help="x100 display in the text table")
    ev.add_argument("--limit", type=int, default=settings.EVAL_CASE_LIMIT, help="evaluate the first N cases only")

    bench = sub.add_parser("bench-steps", help="DSC versus sampling steps")
    bench.add_argument("--data", type=Path, required=True)
    bench.add_argument("--run", action="append", required=True, help="name=run_dir (repeatable)")
    bench.add_argument("--steps", required=True, help="comma-separated S values")
    bench.add_argument("--split", choices=["train", "test", "all"], default="test")
    bench.add_argument("--limit", type=int, default=settings.EVAL_CASE_LIMIT)

    gc = sub.add_parser("gradcheck", help="finite-difference check of every op and the loss")
    gc.add_argument("--tolerance", type=float, default=1e-4)

    for command in (gen, train, smp, ev, bench, gc):
        _add_config_flags(command)
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    """Config file (or the default experiment YAML, or built-in defaults) plus flag overrides"""
    path = args.config or settings.EXPERIMENT_CONFIG
    if path.exists():
        base = RunConfig.from_file(path)
    elif args.config is not None:
        raise ConfigError(f"config file not found: {path}")
    else:
        logger.warning(f"{path} not found, using built-in defaults")
        base = RunConfig()

    overrides: Dict[str, Any] = {
        "seed": args.seed,
        "output_dir": args.output_dir,
        "schedule.T": args.T,
        "sampler.S": args.S,
        "sampler.M": args.M,
        "sampler.type": args.sampler,
        "sampler.posterior": args.posterior,
        "sampler.tau_out": args.tau_out,
        "data.cases": args.cases,
        "data.size": args.size,
        "data.classes": args.classes,
        "data.raters": args.raters,
        "data.ambiguity": args.ambiguity,
        "train.prior_steps": args.prior_steps,
        "train.pgrd_steps": args.pgrd_steps,
        "train.lr": args.lr,
        "train.batch_size": args.batch_size,
        "train.dds_weight": args.dds_weight,
        "train.prefetch": args.prefetch,
        "network.dds_window": args.dds_window,
    }
    for name in args.ablate:
        overrides.update(ABLATIONS[name])
    return base.with_overrides(overrides)


def parse_runs(specs: Sequence[str]) -> Dict[str, Path]:
    runs: Dict[str, Path] = {}
    for spec in specs:
        name, sep, path = spec.partition("=")
        if not sep:
            path, name = spec, Path(spec).name
        if not name or not path:
            raise ConfigError(f"bad --run '{spec}', expected name=run_dir")
        if name in runs:
            raise ConfigError(f"duplicate run name '{name}'")
        runs[name] = Path(path)
    return runs


def parse_steps(text: str) -> List[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --steps '{text}': {exc}") from exc


def run_command(args: argparse.Namespace) -> int:
    config = load_config(args)
    orchestrator = ExperimentOrchestrator(config, max_workers=args.workers, log_every=settings.LOG_EVERY)

    if args.command == "gen":
        result = orchestrator.generate(args.out)
        print(f"cases: {result.data['count']}")
        print(f"checksum: {result.data['checksum']}")
        print(f"path: {result.data['path']}")
    elif args.command == "train":
        result = orchestrator.train(args.data)
        for name, path in sorted(result.outputs.items()):
            print(f"{name}: {path}")
    elif args.command == "sample":
        result = orchestrator.sample(args.run, args.data, split=args.split)
        print(f"samples: {result.outputs['samples']} (M={result.data['M']}, S={result.data['S']})")
    elif args.command == "eval":
        result = orchestrator.evaluate(parse_runs(args.run), args.data, split=args.split, bins=args.bins,
                                       percent=args.percent, case_limit=args.limit)
        print(Path(result.outputs["table"]).read_text(encoding="utf-8"), end="")
    elif args.command == "bench-steps":
        result = orchestrator.bench_steps(parse_runs(args.run), args.data, parse_steps(args.steps),
                                          split=args.split, case_limit=args.limit)
        for row in result.data["rows"]:
            print(f"{row['model']:>12}  S={row['S']:<5d} DSC {row['dsc_mean']:.4f} +- {row['dsc_std']:.4f}")
    else:
        result = orchestrator.gradcheck(tolerance=args.tolerance)
        for row in result.data["probes"]:
            mark = "ok" if row["passed"] else "FAIL"
            print(f"{row['probe']:<24} {row['max_rel_error']:.3e}  {mark}")

    if not result.is_success():
        logger.error(result.message)
        return EXIT_NUMERIC
    logger.info(result.message)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO),
        format=settings.LOG_FORMAT,
    )
    try:
        return run_command(args)
    except NumericalError as exc:
        logger.error(f"numeric failure: {exc}")
        return EXIT_NUMERIC
    except (ConfigError, CheckpointError, DatasetFormatError, FileNotFoundError, ValueError, PGRDError) as exc:
        logger.error(f"{type(exc).__name__}: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
