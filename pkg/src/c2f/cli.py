"""Command-line surface: enumerate, coarse, fine, export, scale, report.

Exit codes: 0 success, 2 config error, 3 evaluator error, 4 validation error.
Any field of the run config can be overridden with ``--set dotted.name=value``
(values parsed as JSON, falling back to plain strings).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import arch, evolution, runner
from .errors import (
    ConfigError,
    EvaluationError,
    StructuralError,
    ValidationError,
)
from .fine import op_space_size
from .topology import SpaceSpec, count_full_space, count_pruned, enumerate_pruned

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_EVALUATOR = 3
EXIT_VALIDATION = 4


def _apply_overrides(config: runner.RunConfig, pairs: list[str]) -> runner.RunConfig:
    doc = config.to_json_dict()
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not of the form dotted.name=value")
        dotted, raw = pair.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = doc
        *parents, leaf = dotted.split(".")
        for part in parents:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"unknown config section {part!r} in {dotted!r}")
            node = node[part]
        if leaf not in node:
            raise ConfigError(f"unknown config field {dotted!r}")
        node[leaf] = value
    return runner.RunConfig.from_json_dict(doc)


def _load_config(args) -> runner.RunConfig:
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        config = runner.RunConfig.from_json_dict(json.loads(path.read_text(encoding="utf-8")))
    else:
        config = runner.RunConfig()
    overrides = list(getattr(args, "set", None) or [])
    if getattr(args, "seed", None) is not None:
        overrides += [
            f"evolution.seed={args.seed}",
            f"fine.seed={args.seed}",
            f"evaluator.seed={args.seed}",
            f"cluster_seed={args.seed}",
        ]
    if getattr(args, "workers", None) is not None:
        overrides.append(f"workers={args.workers}")
    return _apply_overrides(config, overrides)


def _parse_code(args) -> tuple[int, ...]:
    if getattr(args, "topology", None):
        return runner.load_topology_file(args.topology)
    if getattr(args, "code", None):
        return tuple(json.loads(args.code))
    raise ConfigError("provide --code or --topology")


def _parse_ops(args, num_cells: int) -> tuple[str, ...]:
    if getattr(args, "ops_file", None):
        return runner.load_ops_file(args.ops_file)
    if getattr(args, "ops", None):
        return tuple(json.loads(args.ops))
    return ("3d",) * num_cells


def cmd_enumerate(args) -> int:
    spec = SpaceSpec(args.cells, args.downs, args.ups, args.max_level)
    codes = enumerate_pruned(spec)
    print(f"pruned={count_pruned(spec)}")
    print(f"full={count_full_space(spec)}")
    print(f"op_space={op_space_size(spec.num_cells)}")
    if args.list:
        with open(args.list, "w", encoding="utf-8") as fh:
            for code in codes:
                fh.write(json.dumps(list(code)) + "\n")
        print(f"codes written to {args.list}")
    return EXIT_OK


def cmd_coarse(args) -> int:
    if args.resume:
        out_dir = Path(args.resume)
        if not (out_dir / runner.JOURNAL).exists():
            raise ConfigError(f"no journal to resume in {out_dir}")
        best_code, best_score = runner.coarse_search(
            runner.RunConfig(), out_dir, resume=True
        )
    else:
        config = _load_config(args)
        out_dir = Path(args.out)
        best_code, best_score = runner.coarse_search(config, out_dir)
    print(f"best_code={json.dumps(list(best_code))}")
    print(f"best_score={best_score:.6f}")
    print(f"outputs in {out_dir}")
    return EXIT_OK


def cmd_fine(args) -> int:
    config = _load_config(args)
    code = runner.load_topology_file(args.topology)
    best_ops, best_score = runner.fine_search(code, config, Path(args.out))
    print(f"best_ops={json.dumps(list(best_ops))}")
    print(f"best_score={best_score:.6f}")
    print(f"outputs in {args.out}")
    return EXIT_OK


def cmd_export(args) -> int:
    code = _parse_code(args)
    ops = _parse_ops(args, len(code))
    extent = tuple(int(x) for x in args.input_extent.split(","))
    ir = arch.materialize(
        code,
        ops,
        base_filters=args.base_filters,
        multiplier=args.multiplier,
        in_channels=args.in_channels,
        num_classes=args.classes,
    )
    report = arch.cost_report(ir, extent)
    params, flops = report.params, report.flops
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / runner.ARCHITECTURE).write_text(
        json.dumps(arch.ir_to_json_dict(ir), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    (out_dir / "architecture.dot").write_text(arch.ir_to_dot(ir), encoding="utf-8")
    (out_dir / runner.COSTS).write_text(
        json.dumps(
            {
                "params": params,
                "flops": flops,
                "input_extent": list(extent),
                "multiplier": args.multiplier,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )
    print(f"params={params}")
    print(f"flops={flops}")
    print(f"outputs in {out_dir}")
    return EXIT_OK


def cmd_scale(args) -> int:
    code = _parse_code(args)
    ops = _parse_ops(args, len(code))
    extent = tuple(int(x) for x in args.input_extent.split(","))
    multipliers = (
        tuple(json.loads(args.multipliers)) if args.multipliers else arch.DEFAULT_MULTIPLIERS
    )
    evaluator = None
    if args.score:
        config = _load_config(args)
        evaluator = runner.build_evaluator(config, [code])
    try:
        rows = arch.scaling_grid(
            code,
            ops,
            multipliers=multipliers,
            evaluator=evaluator,
            base_filters=args.base_filters,
            input_extent=extent,
            num_classes=args.classes,
        )
    finally:
        if evaluator is not None:
            evaluator.close()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = out_dir / "scaling.csv"
    with open(table, "w", encoding="utf-8") as fh:
        fh.write("multiplier,params,flops,score,error\n")
        for row in rows:
            fh.write(
                f"{row.multiplier},{row.params if row.params is not None else ''},"
                f"{row.flops if row.flops is not None else ''},"
                f"{row.score if row.score is not None else ''},"
                f"{row.error or ''}\n"
            )
    print(f"rows={len(rows)}")
    print(f"table in {table}")
    return EXIT_OK


def cmd_report(args) -> int:
    run_dir = Path(args.run)
    journal = run_dir / runner.JOURNAL
    if not journal.exists():
        raise ConfigError(f"no journal found in {run_dir}")
    header, events = runner.read_journal(journal)
    config = runner.RunConfig.from_json_dict(header["config"])
    _population, model = runner.build_population_model(config)
    state = evolution.replay(model, config.evolution, events)
    best_code, best_score = evolution.best_model(state)
    runner.write_proportions_csv(run_dir / runner.PROPORTIONS, state)
    print(f"evaluations={len(state.history)}")
    print(f"pending={state.pending_count()}")
    print(f"best_code={json.dumps(list(best_code))}")
    print(f"best_score={best_score:.6f}")
    print(f"proportions in {run_dir / runner.PROPORTIONS}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="c2f", description="Coarse-to-fine architecture search engine"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enumerate", help="count and list the topology spaces")
    p.add_argument("--cells", type=int, default=12)
    p.add_argument("--downs", type=int, default=3)
    p.add_argument("--ups", type=int, default=3)
    p.add_argument("--max-level", type=int, default=None)
    p.add_argument("--list", help="write every pruned code to this file")
    p.set_defaults(func=cmd_enumerate)

    def add_config_flags(p):
        p.add_argument("--config", help="run-config JSON file")
        p.add_argument("--seed", type=int, help="set every stage seed at once")
        p.add_argument("--set", action="append", metavar="dotted.name=value",
                       help="override any config field (repeatable)")

    p = sub.add_parser("coarse", help="run the macro-level topology search")
    add_config_flags(p)
    p.add_argument("--out", default="runs/coarse")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--resume", metavar="DIR", help="continue an interrupted run")
    p.set_defaults(func=cmd_coarse)

    p = sub.add_parser("fine", help="run the micro-level operation search")
    add_config_flags(p)
    p.add_argument("--topology", required=True, help="best_topology.json from coarse")
    p.add_argument("--out", default="runs/fine")
    p.set_defaults(func=cmd_fine)

    def add_arch_flags(p):
        p.add_argument("--code", help="topology code as a JSON array")
        p.add_argument("--topology", help="topology JSON file (alternative to --code)")
        p.add_argument("--ops", help="op assignment as a JSON array")
        p.add_argument("--ops-file", help="ops JSON file (alternative to --ops)")
        p.add_argument("--base-filters", type=int, default=32)
        p.add_argument("--classes", type=int, default=3)
        p.add_argument("--input-extent", default="96,96,96")

    p = sub.add_parser("export", help="materialize an architecture and cost it")
    add_arch_flags(p)
    p.add_argument("--in-channels", type=int, default=1)
    p.add_argument("--multiplier", type=float, default=1.0)
    p.add_argument("--out", default="runs/export")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("scale", help="grid-search the channel multiplier")
    add_arch_flags(p)
    add_config_flags(p)
    p.add_argument("--multipliers", help="JSON array overriding the default grid")
    p.add_argument("--score", action="store_true", help="also score each row")
    p.add_argument("--out", default="runs/scale")
    p.set_defaults(func=cmd_scale)

    p = sub.add_parser("report", help="summarize a coarse run from its journal")
    p.add_argument("--run", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValidationError, StructuralError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except EvaluationError as exc:
        print(f"evaluator error: {exc}", file=sys.stderr)
        return EXIT_EVALUATOR


if __name__ == "__main__":
    sys.exit(main())
