"""Command-line front end: experiment execution, sweeps, report comparison.

Experiments are YAML documents (versioned ``schema_version`` header) listing
a model, a workload, configuration cells, and seeds; every cell is validated
before any run starts. ``run`` writes one JSON per run plus an aggregate
CSV, ``sweep`` generates budget grids, ``compare`` aggregates report JSONs.
Figures are rendered next to the CSV unless ``--no-plots`` is given.

Exit codes: 0 success, 2 parse/validation error, 3 infeasible budget,
4 I/O error.
"""
from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import yaml

from . import plots, report as report_mod
from .core import (
    BudgetError,
    CompressionConfig,
    ConfigError,
    MergeStrategy,
    Policy,
    SelectionMode,
    TokenKind,
)
from .attention import ModelSpec, ToyTransformer
from .harness import RunReport, SegmentSpec, WorkloadSpec, clustered_image_workload, run_pair

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_BUDGET = 3
EXIT_IO = 4

OUT_ENV_VAR = "LOOKM_OUT"
FILE_SCHEMA_VERSION = 1


class ExperimentError(ConfigError):
    """Malformed or invalid experiment file."""


@dataclass(frozen=True)
class Cell:
    index: int
    config: CompressionConfig

    @property
    def label(self) -> str:
        cfg = self.config
        parts = [f"{self.index:02d}", cfg.policy_label]
        if cfg.merge is not MergeStrategy.NONE:
            parts.append(cfg.merge.value)
        if cfg.text_prior:
            parts.append("tp")
        if cfg.policy is not Policy.FULL_CACHE:
            parts.append(f"a{cfg.alpha1:g}+{cfg.alpha2:g}")
        return "-".join(parts)


@dataclass
class Experiment:
    name: str
    model: ModelSpec
    workload: WorkloadSpec
    cells: list[Cell]
    seeds: list[int]
    out: Path | None = None
    bytes_per_scalar: int = 2
    free_running: bool = False


def _enum_by_value(enum_cls, raw: str, what: str):
    for member in enum_cls:
        if member.value == raw:
            return member
    valid = ", ".join(m.value for m in enum_cls)
    raise ExperimentError(f"{what} {raw!r} is not one of: {valid}")


def parse_cell(doc: dict, index: int) -> Cell:
    if not isinstance(doc, dict) or "policy" not in doc:
        raise ExperimentError(f"cell {index}: must be a mapping with a 'policy' key")
    known = {
        "policy", "merge", "text_prior", "selection_mode",
        "alpha1", "alpha2", "snapkv_kernel", "seed",
    }
    unknown = set(doc) - known
    if unknown:
        raise ExperimentError(f"cell {index}: unknown keys {sorted(unknown)}")
    config = CompressionConfig(
        policy=_enum_by_value(Policy, str(doc["policy"]), f"cell {index}: policy"),
        alpha1=float(doc.get("alpha1", 0.0)),
        alpha2=float(doc.get("alpha2", 0.0)),
        merge=_enum_by_value(MergeStrategy, str(doc.get("merge", "none")), f"cell {index}: merge"),
        text_prior=bool(doc.get("text_prior", False)),
        selection_mode=_enum_by_value(
            SelectionMode, str(doc.get("selection_mode", "top_n_only")),
            f"cell {index}: selection_mode",
        ),
        snapkv_kernel=int(doc.get("snapkv_kernel", 5)),
        seed=int(doc.get("seed", 0)),
    )
    try:
        config.validate()
    except ConfigError as err:
        raise ExperimentError(f"cell {index} ({doc.get('policy')}): {err}") from err
    return Cell(index=index, config=config)


def parse_workload(doc: dict) -> WorkloadSpec:
    if not isinstance(doc, dict) or "segments" not in doc:
        raise ExperimentError("workload: must be a mapping with a 'segments' list")
    segments = []
    for i, seg in enumerate(doc["segments"]):
        kind = _enum_by_value(TokenKind, str(seg.get("kind", "")), f"segment {i}: kind")
        segments.append(
            SegmentSpec(
                kind=kind,
                length=int(seg["length"]),
                spread=float(seg.get("spread", 1.0)),
            )
        )
    return WorkloadSpec(
        segments=tuple(segments),
        decode_steps=int(doc.get("decode_steps", 8)),
        embedding_seed=int(doc.get("embedding_seed", 0)),
    )


def parse_experiment(doc: dict, source: str = "<memory>") -> Experiment:
    if not isinstance(doc, dict):
        raise ExperimentError(f"{source}: experiment file must be a mapping")
    version = doc.get("schema_version")
    if version != FILE_SCHEMA_VERSION:
        raise ExperimentError(
            f"{source}: schema_version {version!r} is not {FILE_SCHEMA_VERSION}"
        )
    model_doc = doc.get("model", {})
    try:
        model = ModelSpec(
            n_layers=int(model_doc.get("layers", 2)),
            n_heads=int(model_doc.get("heads", 2)),
            d_model=int(model_doc.get("d_model", 16)),
            weight_seed=int(model_doc.get("weight_seed", 0)),
            use_positional=bool(model_doc.get("positional", False)),
        )
        workload = parse_workload(doc.get("workload", {}))
    except (ValueError, TypeError) as err:
        raise ExperimentError(f"{source}: {err}") from err
    cells_doc = doc.get("cells")
    if not cells_doc:
        raise ExperimentError(f"{source}: experiment needs a non-empty 'cells' list")
    cells = [parse_cell(cell, i) for i, cell in enumerate(cells_doc)]
    seeds = [int(s) for s in doc.get("seeds", [0])]
    if not seeds:
        raise ExperimentError(f"{source}: 'seeds' must be non-empty when given")
    out = doc.get("out")
    return Experiment(
        name=str(doc.get("name", Path(source).stem)),
        model=model,
        workload=workload,
        cells=cells,
        seeds=seeds,
        out=Path(out) if out else None,
        bytes_per_scalar=int(doc.get("bytes_per_scalar", 2)),
        free_running=bool(doc.get("free_running", False)),
    )


def load_experiment(path: Path) -> Experiment:
    try:
        text = path.read_text()
    except OSError as err:
        raise ExperimentError(f"{path}: cannot read experiment file: {err}") from err
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ExperimentError(f"{path}: invalid YAML: {err}") from err
    return parse_experiment(doc, source=str(path))


def resolve_out_dir(experiment: Experiment, cli_out: str | None) -> Path:
    if experiment.out is not None:
        if cli_out is not None:
            print(
                f"warning: --out {cli_out!r} ignored, experiment file sets "
                f"out={str(experiment.out)!r}",
                file=sys.stderr,
            )
        return experiment.out
    if cli_out is not None:
        return Path(cli_out)
    env = os.environ.get(OUT_ENV_VAR)
    if env:
        return Path(env) / experiment.name
    return Path("reports") / experiment.name


def execute_experiment(experiment: Experiment, out_dir: Path, jobs: int, render: bool) -> list[tuple[Cell, int, RunReport]]:
    """Run all cells x seeds, write per-run JSONs, aggregate CSV, and figures."""
    transformer = ToyTransformer(experiment.model)
    tasks = [
        (cell, seed)
        for cell in experiment.cells
        for seed in experiment.seeds
    ]

    def _one(cell: Cell, seed: int) -> RunReport:
        workload = experiment.workload.with_seed(seed)
        config = CompressionConfig(
            policy=cell.config.policy,
            alpha1=cell.config.alpha1,
            alpha2=cell.config.alpha2,
            merge=cell.config.merge,
            text_prior=cell.config.text_prior,
            selection_mode=cell.config.selection_mode,
            tie_break=cell.config.tie_break,
            snapkv_kernel=cell.config.snapkv_kernel,
            seed=seed,
        )
        return run_pair(
            transformer,
            workload,
            config,
            bytes_per_scalar=experiment.bytes_per_scalar,
            free_running=experiment.free_running,
        )

    results: list[RunReport]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_one, cell, seed) for cell, seed in tasks]
            results = [f.result() for f in futures]  # submission order keeps output deterministic
    else:
        results = [_one(cell, seed) for cell, seed in tasks]

    out_dir.mkdir(parents=True, exist_ok=True)
    triples = []
    for (cell, seed), run_report in zip(tasks, results):
        report_mod.write_report_json(
            run_report, out_dir / f"run_c{cell.index:02d}_s{seed}.json"
        )
        triples.append((cell, seed, run_report))

    csv_rows = [(experiment.name, cell.label, rep) for cell, _, rep in triples]
    (out_dir / f"{experiment.name}.csv").write_text(report_mod.runs_csv_text(csv_rows))

    if render:
        by_cell: dict[str, list[list[float]]] = {}
        for cell, _, rep in triples:
            by_cell.setdefault(cell.label, []).append([float(d) for d in rep.divergence])
        plots.render_divergence_traces(by_cell, out_dir / "divergence_steps.png")
        plots.render_modality_attention(
            triples[0][2].modality_attention, out_dir / "modality_attention.png"
        )
        docs = [report_mod.report_to_dict(rep) for _, _, rep in triples]
        plots.render_budget_curves(report_mod.compare_rows(docs), out_dir, stem=experiment.name)
    return triples


def _experiment_from_flags(args: argparse.Namespace) -> Experiment:
    config = CompressionConfig(
        policy=_enum_by_value(Policy, args.policy or "lookm", "policy"),
        alpha1=args.alpha1 if args.alpha1 is not None else 0.1,
        alpha2=args.alpha2 if args.alpha2 is not None else 0.1,
        merge=_enum_by_value(MergeStrategy, args.merge or "none", "merge"),
        text_prior=bool(args.text_prior),
        selection_mode=_enum_by_value(
            SelectionMode, args.selection_mode or "top_n_only", "selection_mode"
        ),
        snapkv_kernel=args.snapkv_kernel,
    )
    try:
        config.validate()
    except ConfigError as err:
        raise ExperimentError(str(err)) from err
    model = ModelSpec(
        n_layers=args.layers,
        n_heads=args.heads,
        d_model=args.d_model,
        weight_seed=args.weight_seed,
        use_positional=bool(args.positional),
    )
    workload = clustered_image_workload(decode_steps=args.decode_steps)
    return Experiment(
        name="adhoc",
        model=model,
        workload=workload,
        cells=[Cell(index=0, config=config)],
        seeds=[args.seed],
        bytes_per_scalar=args.bytes_per_scalar,
        free_running=bool(args.free_running),
    )


def _warn_ignored_flags(args: argparse.Namespace) -> None:
    ignored = [
        name
        for name, value in (
            ("--policy", args.policy),
            ("--merge", args.merge),
            ("--alpha1", args.alpha1),
            ("--alpha2", args.alpha2),
            ("--selection-mode", args.selection_mode),
        )
        if value is not None
    ]
    if args.text_prior:
        ignored.append("--text-prior")
    if ignored:
        print(
            f"warning: {', '.join(ignored)} ignored, experiment file values win",
            file=sys.stderr,
        )


def cmd_run(args: argparse.Namespace) -> int:
    try:
        if args.experiment is not None:
            experiment = load_experiment(Path(args.experiment))
            _warn_ignored_flags(args)
        else:
            experiment = _experiment_from_flags(args)
    except ExperimentError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_PARSE

    out_dir = resolve_out_dir(experiment, args.out)
    try:
        execute_experiment(experiment, out_dir, jobs=args.jobs, render=not args.no_plots)
    except BudgetError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_BUDGET
    except OSError as err:
        print(f"error: cannot write reports: {err}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote {len(experiment.cells) * len(experiment.seeds)} runs to {out_dir}")
    return EXIT_OK


def _parse_budgets(raw: str) -> list[tuple[float, float]]:
    budgets = []
    for token in raw.split(","):
        token = token.strip()
        if not token:
            continue
        if ":" in token:
            a1_s, a2_s = token.split(":", 1)
            budgets.append((float(a1_s), float(a2_s)))
        else:
            total = float(token)
            budgets.append((total / 2.0, total / 2.0))
    if not budgets:
        raise ExperimentError(f"--budgets {raw!r} contains no budgets")
    return budgets


def cmd_sweep(args: argparse.Namespace) -> int:
    try:
        budgets = _parse_budgets(args.budgets)
        base = _experiment_from_flags(args)
        cells = []
        for i, (a1, a2) in enumerate(budgets):
            config = base.cells[0].config.with_alphas(a1, a2)
            config.validate()
            cells.append(Cell(index=i, config=config))
    except (ExperimentError, ConfigError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_PARSE
    seeds = list(range(args.seeds)) if args.seeds else [args.seed]
    experiment = Experiment(
        name="sweep",
        model=base.model,
        workload=base.workload,
        cells=cells,
        seeds=seeds,
        bytes_per_scalar=args.bytes_per_scalar,
        free_running=bool(args.free_running),
    )
    out_dir = resolve_out_dir(experiment, args.out)
    try:
        execute_experiment(experiment, out_dir, jobs=args.jobs, render=not args.no_plots)
    except BudgetError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_BUDGET
    except OSError as err:
        print(f"error: cannot write reports: {err}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote {len(cells) * len(seeds)} runs to {out_dir}")
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    docs = []
    for path in args.reports:
        try:
            docs.append(report_mod.load_report_dict(path))
        except (OSError, ValueError) as err:
            print(f"error: {err}", file=sys.stderr)
            return EXIT_PARSE
    rows = report_mod.compare_rows(docs)
    sys.stdout.write(report_mod.compare_table_text(rows))
    out_dir = Path(args.out) if args.out else Path(os.environ.get(OUT_ENV_VAR, "reports"))
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "compare.csv").write_text(report_mod.compare_csv_text(rows))
        if not args.no_plots:
            plots.render_budget_curves(rows, out_dir, stem="compare")
    except OSError as err:
        print(f"error: cannot write comparison: {err}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="workload seed for one-off runs")
    parser.add_argument("--jobs", type=int, default=1, help="concurrent runs")
    parser.add_argument("--out", default=None, help=f"output directory (or ${OUT_ENV_VAR})")
    parser.add_argument("--policy", default=None, help="full|lookm|h2o|snapkv|roco")
    parser.add_argument("--merge", default=None, help="none|averaged|pivotal|weighted")
    parser.add_argument("--alpha1", type=float, default=None, help="recent-window ratio")
    parser.add_argument("--alpha2", type=float, default=None, help="important-token ratio")
    parser.add_argument("--text-prior", action="store_true", help="boost text scores")
    parser.add_argument("--selection-mode", default=None, help="top_n_only|union_text_top_n")
    parser.add_argument("--snapkv-kernel", type=int, default=5)
    parser.add_argument("--decode-steps", type=int, default=8)
    parser.add_argument("--layers", type=int, default=2)
    parser.add_argument("--heads", type=int, default=2)
    parser.add_argument("--d-model", type=int, default=16)
    parser.add_argument("--weight-seed", type=int, default=7)
    parser.add_argument("--positional", action="store_true",
                        help="add sinusoidal position offsets to embeddings")
    parser.add_argument("--bytes-per-scalar", type=int, default=2)
    parser.add_argument("--free-running", action="store_true",
                        help="each branch feeds on its own outputs instead of teacher forcing")
    parser.add_argument("--no-plots", action="store_true", help="skip figure rendering")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lookm",
        description="KV-cache compression experiments on a deterministic toy transformer.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment file or a one-off run")
    p_run.add_argument("experiment", nargs="?", default=None, help="experiment YAML path")
    _add_run_flags(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a budget grid")
    p_sweep.add_argument(
        "--budgets",
        required=True,
        help="comma list of totals (split evenly) or alpha1:alpha2 pairs, e.g. 0.1,0.2 or 0.05:0.15",
    )
    p_sweep.add_argument("--seeds", type=int, default=0,
                         help="run seeds 0..N-1 instead of a single --seed")
    _add_run_flags(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    p_cmp = sub.add_parser("compare", help="aggregate report JSONs into a table")
    p_cmp.add_argument("reports", nargs="+", help="report JSON paths")
    p_cmp.add_argument("--out", default=None, help="directory for compare.csv and figures")
    p_cmp.add_argument("--no-plots", action="store_true", help="skip figure rendering")
    p_cmp.set_defaults(func=cmd_compare)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
