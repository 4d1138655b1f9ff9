"""
duqbench command line

    python cli.py run --functions borehole ishigami --emulators gp blm --out results/
    python cli.py analyze results/results.csv --which rank --filter n_train=1000 --out figs/

Exit codes: 0 success, 2 configuration or schema error, 1 anything else.
"""
import os
import sys
import json
import logging
import argparse
from typing import Dict, List, Optional

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from config import (
    VERSION,
    benchmark_settings,
    configure_logging,
    load_study_config,
    save_study_config,
)
from errors import ConfigError, DuqbenchError, IngestionError, NotFoundError, SchemaError

logger = logging.getLogger("duqbench.cli")

ANALYSES = ("rank", "heatmap", "pareto", "cluster", "boxplot", "all")
USAGE_ERRORS = (ConfigError, SchemaError, NotFoundError, IngestionError)


def _parse_filters(items: Optional[List[str]]) -> Dict[str, object]:
    """KEY=VALUE pairs; a repeated key matches any of its values"""
    filters: Dict[str, object] = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"Filter must look like KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        if key in filters:
            previous = filters[key]
            filters[key] = (previous if isinstance(previous, list) else [previous]) + [value]
        else:
            filters[key] = value
    return filters


def _study_overrides(args) -> dict:
    overrides = {
        "functions": getattr(args, "functions", None),
        "emulators": [{"method": m} for m in args.emulators] if args.emulators else None,
        "n_train": getattr(args, "n_train", None),
        "NSR": getattr(args, "nsr", None),
        "design_type": getattr(args, "design_type", None),
        "replications": getattr(args, "replications", None),
        "M": args.M,
        "n_test": getattr(args, "n_test", None),
        "workers": args.workers,
        "timeout": args.timeout,
        "out": args.out,
        "cv_type": getattr(args, "cv_type", None),
        "folds": getattr(args, "folds", None),
    }
    if getattr(args, "benchmark_grid", False):
        from services.functions import get_benchmark_functions

        grid = benchmark_settings()
        grid["functions"] = get_benchmark_functions()
        # explicit flags still win over the grid
        overrides = {**grid, **{k: v for k, v in overrides.items() if v is not None}}
    if getattr(args, "dataset", None):
        if not args.response:
            raise ConfigError("--dataset needs --response")
        overrides["datasets"] = [{"path": args.dataset, "response": args.response, "name": args.name}]
    if args.crps_variant:
        overrides["score"] = {"crps_variant": args.crps_variant}
    return overrides


def cmd_run(args) -> int:
    from services.harness import run_study, write_study

    config = load_study_config(args.config, _study_overrides(args))
    table, manifest = run_study(config)
    write_study(config.out, table, manifest)
    save_study_config(config, os.path.join(config.out, "study.toml"))
    failures = int((table["failure_type"] != "none").sum())
    print(f"{len(table)} rows written to {os.path.join(config.out, 'results.csv')} ({failures} fallbacks)")
    return 0


def cmd_run_data(args) -> int:
    from services.harness import run_data_study, write_study

    config = load_study_config(args.config, _study_overrides(args))
    table, manifest = run_data_study(config)
    write_study(config.out, table, manifest)
    save_study_config(config, os.path.join(config.out, "study.toml"))
    print(f"{len(table)} rows written to {os.path.join(config.out, 'results.csv')}")
    return 0


def _read_joined(paths: List[str]):
    from services.harness import join_sim_study, read_results

    table = None
    for path in paths:
        part = read_results(path)
        table = part if table is None else join_sim_study(table, part)
    return table


def _write_analyses(table, which, out: str, args) -> list:
    from services import analysis, plots
    from services.metrics import ScoreConfig

    written = []
    for name in which:
        if name == "rank":
            written += plots.write_rank_artifacts(
                analysis.cumulative_ranks(table), analysis.rank_summary(table), out
            )
        elif name == "heatmap":
            written += plots.write_heatmap_artifacts(analysis.heatmap_matrix(table), out)
        elif name == "pareto":
            cfg = ScoreConfig(epsilon=args.epsilon, cap=args.cap)
            written += plots.write_pareto_artifacts(analysis.pareto_frontier(table, cfg), out)
        elif name == "cluster":
            result = analysis.cluster_performance(table, args.axis, eps=args.eps, min_samples=args.min_samples)
            written += plots.write_cluster_artifacts(result, out)
        elif name == "boxplot":
            problems = [args.problem] if args.problem else sorted(table[analysis.problem_column(table)].unique())
            for problem in problems:
                written += plots.write_boxplot_artifacts(analysis.boxplot_data(table, problem), problem, out)
    return written


def cmd_analyze(args) -> int:
    from services.analysis import split_by_size
    from services.harness import filter_sim_study

    table = filter_sim_study(_read_joined(args.results), **_parse_filters(args.filter))
    which = ANALYSES[:-1] if args.which == "all" else (args.which,)
    if args.split_size is None:
        written = _write_analyses(table, which, args.out, args)
    else:
        # small and large problems are analyzed separately, each in its own subdirectory
        written = []
        small, large = split_by_size(table, args.split_size)
        for label, part in (("small", small), ("large", large)):
            if part.empty:
                logger.warning("No %s problems at threshold %d; skipping", label, args.split_size)
                continue
            written += _write_analyses(part, which, os.path.join(args.out, label), args)
    for path in written:
        print(path)
    return 0


def cmd_join(args) -> int:
    from services.harness import write_results

    table = _read_joined(args.results)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "results.csv")
    write_results(table, path)
    print(f"{len(table)} rows written to {path}")
    return 0


def cmd_filter(args) -> int:
    from services.harness import filter_sim_study, read_results, write_results

    table = filter_sim_study(read_results(args.results), **_parse_filters(args.filter))
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "results.csv")
    write_results(table, path)
    print(f"{len(table)} rows written to {path}")
    return 0


def cmd_list(args) -> int:
    from services.emulators import get_emulators_list
    from services.functions import export_manifest, registry_manifest

    functions = registry_manifest()
    methods = get_emulators_list()
    if args.out:
        export_manifest(args.out)
        logger.info("Function manifest written to %s", args.out)
    if args.json:
        print(json.dumps({"functions": functions, "emulators": methods}, indent=2))
        return 0
    print(f"Test functions ({len(functions)}):")
    for fn in functions:
        print(f"  {fn['name']:<20} p={fn['input_dim']:<3} {', '.join(fn['tags'])}")
    print(f"Emulators ({len(methods)}):")
    for m in methods:
        print(f"  {m['name']:<14} {m['description']}")
    return 0


def cmd_seed(args) -> int:
    from services.seeding import Scenario, canonical_string, scenario_seed

    if args.function:
        s = Scenario.synthetic(args.function, args.n_train, args.nsr, args.design_type, args.replication)
    elif args.dataset:
        if args.fold is None or args.fold_size is None:
            raise ConfigError("--dataset needs --fold and --fold-size")
        s = Scenario.dataset(args.dataset, args.n_train, args.fold, args.cv_type, args.fold_size)
    else:
        raise ConfigError("seed needs --function or --dataset")
    try:
        seed = scenario_seed(s)
    except DuqbenchError as e:
        raise ConfigError(str(e)) from None
    print(f"{canonical_string(s)}\t{seed}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn
    from main import app

    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def _add_study_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML study config; flags override its values")
    p.add_argument("--emulators", nargs="+", help="emulator methods, e.g. gp blm baseline_t")
    p.add_argument("--M", type=int, help="predictive draws per test point")
    p.add_argument("--workers", type=int, help="worker processes (default $DUQBENCH_WORKERS or 1)")
    p.add_argument("--timeout", type=float, help="per-call timeout in seconds")
    p.add_argument("--crps-variant", choices=("printed", "fair"))
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="duqbench", description="Benchmark probabilistic emulators")
    parser.add_argument("--version", action="version", version=f"duqbench {VERSION}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="synthetic simulation study")
    _add_study_flags(p)
    p.add_argument("--functions", nargs="+")
    p.add_argument("--n-train", dest="n_train", type=int, nargs="+")
    p.add_argument("--nsr", type=float, nargs="+")
    p.add_argument("--design-type", dest="design_type")
    p.add_argument("--replications", type=int, nargs="+")
    p.add_argument("--n-test", dest="n_test", type=int)
    p.add_argument("--benchmark-grid", dest="benchmark_grid", action="store_true",
                   help="every shipped function, n_train 500 1000 5000, NSR 0 0.1, 10 replications")
    p.set_defaults(handler=cmd_run)

    p = sub.add_parser("run-data", help="cross validation or bootstrap on CSV datasets")
    _add_study_flags(p)
    p.add_argument("--dataset", help="CSV file with a header")
    p.add_argument("--response", help="response column name")
    p.add_argument("--name", help="dataset name (default: file stem)")
    p.add_argument("--cv-type", dest="cv_type", choices=("cross_validation", "bootstrap"))
    p.add_argument("--folds", type=int)
    p.set_defaults(handler=cmd_run_data)

    p = sub.add_parser("analyze", help="rank, heatmap, pareto, cluster or boxplot artifacts")
    p.add_argument("results", nargs="+", help="results.csv files (joined in order)")
    p.add_argument("--which", choices=ANALYSES, default="all")
    p.add_argument("--filter", action="append", metavar="KEY=VALUE")
    p.add_argument("--axis", choices=("methods", "problems"), default="methods")
    p.add_argument("--eps", type=float, help="DBSCAN radius (default: median 4th-neighbor distance)")
    p.add_argument("--min-samples", dest="min_samples", type=int, default=3)
    p.add_argument("--problem", help="function or dataset for --which boxplot")
    p.add_argument("--epsilon", type=float, default=0.001)
    p.add_argument("--cap", type=float, default=100.0)
    p.add_argument("--split-size", dest="split_size", type=int, metavar="N",
                   help="analyze problems smaller than N and the rest separately")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_analyze)

    p = sub.add_parser("join", help="row union of result tables")
    p.add_argument("results", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_join)

    p = sub.add_parser("filter", help="rows matching KEY=VALUE filters")
    p.add_argument("results")
    p.add_argument("--filter", action="append", metavar="KEY=VALUE")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_filter)

    p = sub.add_parser("list", help="registered functions and emulators")
    p.add_argument("--json", action="store_true")
    p.add_argument("--out", help="also write the function manifest as JSON to this file")
    p.set_defaults(handler=cmd_list)

    p = sub.add_parser("seed", help="canonical string and seed of one scenario")
    p.add_argument("--function")
    p.add_argument("--dataset")
    p.add_argument("--n-train", dest="n_train", type=int, required=True)
    p.add_argument("--nsr", type=float, default=0.0)
    p.add_argument("--design-type", dest="design_type", default="LHS")
    p.add_argument("--replication", type=int, default=1)
    p.add_argument("--cv-type", dest="cv_type", default="cross_validation")
    p.add_argument("--fold", type=int)
    p.add_argument("--fold-size", dest="fold_size", type=int)
    p.set_defaults(handler=cmd_seed)

    p = sub.add_parser("serve", help="start the HTTP API")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(handler=cmd_serve)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    configure_logging(args.verbose)
    try:
        return args.handler(args)
    except USAGE_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        logger.debug("Unhandled error", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
