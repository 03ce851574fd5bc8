"""Report serialization: versioned JSON documents and flat CSV rows.

The JSON document carries the full metrics bundle plus a ``created_at``
timestamp (the one field excluded from golden-file comparison). The CSV row
is the aggregation contract: fixed column order (``RUN_CSV_COLUMNS``),
floats rendered with %.12g, booleans as ``true``/``false``, missing values
empty. Identical inputs produce byte-identical CSV bytes.
"""
from __future__ import annotations

import csv
import datetime
import io
import json
from pathlib import Path

from .harness import RunReport

SCHEMA_VERSION = 1

RUN_CSV_COLUMNS = [
    "schema_version",
    "experiment",
    "cell",
    "policy",
    "merge",
    "text_prior",
    "selection_mode",
    "alpha1",
    "alpha2",
    "snapkv_kernel",
    "seed",
    "weight_seed",
    "n_layers",
    "n_heads",
    "d_model",
    "prompt_len",
    "decode_steps",
    "m_recent",
    "n_important",
    "entries_full",
    "entries_compressed",
    "memory_full_bytes",
    "memory_compressed_bytes",
    "memory_ratio",
    "flop_proxy_full",
    "flop_proxy_compressed",
    "flop_ratio",
    "mean_divergence",
    "max_divergence",
    "final_divergence",
    "negative_weight_fraction",
    "zero_norm_pairs",
    "free_running",
]

COMPARE_CSV_COLUMNS = [
    "policy",
    "merge",
    "alpha1",
    "alpha2",
    "n_seeds",
    "mean_divergence",
    "memory_ratio",
    "flop_ratio",
]


def fmt_float(x: float) -> str:
    """Deterministic float rendering used in every delimited output."""
    return f"{float(x):.12g}"


def fmt_value(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return fmt_float(x)
    return str(x)


def report_to_dict(report: RunReport, timestamp: str | None = None) -> dict:
    """JSON-ready document for one run. ``timestamp`` defaults to now (UTC)."""
    if timestamp is None:
        timestamp = datetime.datetime.now(datetime.timezone.utc).isoformat()
    cfg = report.config
    spec = report.model
    budget = report.budget
    return {
        "schema_version": SCHEMA_VERSION,
        "created_at": timestamp,
        "policy": report.policy,
        "config": {
            "policy": cfg.policy.value,
            "merge": cfg.merge.value,
            "text_prior": cfg.text_prior,
            "selection_mode": cfg.selection_mode.value,
            "tie_break": cfg.tie_break.value,
            "alpha1": cfg.alpha1,
            "alpha2": cfg.alpha2,
            "snapkv_kernel": cfg.snapkv_kernel,
            "seed": cfg.seed,
        },
        "model": {
            "n_layers": spec.n_layers,
            "n_heads": spec.n_heads,
            "d_model": spec.d_model,
            "d_head": spec.d_head,
            "weight_seed": spec.weight_seed,
            "use_positional": spec.use_positional,
        },
        "workload": {
            "segments": [
                {"kind": seg.kind.value, "length": seg.length, "spread": seg.spread}
                for seg in report.workload.segments
            ],
            "decode_steps": report.workload.decode_steps,
            "embedding_seed": report.workload.embedding_seed,
        },
        "prompt_len": report.prompt_len,
        "budget": None
        if budget is None
        else {
            "m_recent": budget.m_recent,
            "n_important": budget.n_important,
            "s_total": budget.s_total,
        },
        "conserved_sizes": report.conserved_sizes.tolist(),
        "metrics": {
            "entries_full": report.entries_full,
            "entries_compressed": report.entries_compressed,
            "memory_full_bytes": report.memory_full_bytes,
            "memory_compressed_bytes": report.memory_compressed_bytes,
            "memory_ratio": float(fmt_float(report.memory_ratio)),
            "flop_proxy_full": report.flop_proxy_full,
            "flop_proxy_compressed": report.flop_proxy_compressed,
            "flop_ratio": float(fmt_float(report.flop_ratio)),
            "divergence": [float(fmt_float(d)) for d in report.divergence],
            "mean_divergence": float(fmt_float(report.mean_divergence)),
            "max_divergence": float(fmt_float(report.max_divergence)),
            "negative_weight_fraction": float(fmt_float(report.negative_weight_fraction)),
            "zero_norm_pairs": report.zero_norm_pairs,
        },
        "modality_attention": [
            {
                "layer": row["layer"],
                "text_mass": float(fmt_float(row["text_mass"])),
                "image_mass": float(fmt_float(row["image_mass"])),
            }
            for row in report.modality_attention
        ],
        "bytes_per_scalar": report.bytes_per_scalar,
        "free_running": report.free_running,
    }


def write_report_json(report: RunReport, path: Path | str) -> None:
    doc = report_to_dict(report)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_report_dict(path: Path | str) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(
            f"{path}: schema_version {doc.get('schema_version')!r} != {SCHEMA_VERSION}"
        )
    return doc


def run_csv_row(report: RunReport, experiment: str = "", cell: str = "") -> list[str]:
    cfg = report.config
    budget = report.budget
    values = [
        SCHEMA_VERSION,
        experiment,
        cell,
        report.policy,
        cfg.merge.value,
        cfg.text_prior,
        cfg.selection_mode.value,
        cfg.alpha1,
        cfg.alpha2,
        cfg.snapkv_kernel,
        report.seed,
        report.model.weight_seed,
        report.model.n_layers,
        report.model.n_heads,
        report.model.d_model,
        report.prompt_len,
        report.workload.decode_steps,
        None if budget is None else budget.m_recent,
        None if budget is None else budget.n_important,
        report.entries_full,
        report.entries_compressed,
        report.memory_full_bytes,
        report.memory_compressed_bytes,
        report.memory_ratio,
        report.flop_proxy_full,
        report.flop_proxy_compressed,
        report.flop_ratio,
        report.mean_divergence,
        report.max_divergence,
        float(report.divergence[-1]),
        report.negative_weight_fraction,
        report.zero_norm_pairs,
        report.free_running,
    ]
    return [fmt_value(v) for v in values]


def runs_csv_text(rows: list[tuple[str, str, RunReport]]) -> str:
    """Aggregate CSV for (experiment, cell, report) triples, in the given order."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RUN_CSV_COLUMNS)
    for experiment, cell, report in rows:
        writer.writerow(run_csv_row(report, experiment, cell))
    return buf.getvalue()


def compare_rows(docs: list[dict]) -> list[dict]:
    """Aggregate report documents keyed by (policy, merge, alpha1, alpha2).

    Metric columns are means over the seeds in each group; row order is the
    sorted key order, so output is deterministic.
    """
    groups: dict[tuple, list[dict]] = {}
    for doc in docs:
        cfg = doc["config"]
        key = (doc["policy"], cfg["merge"], cfg["alpha1"], cfg["alpha2"])
        groups.setdefault(key, []).append(doc)
    rows = []
    for key in sorted(groups):
        members = groups[key]
        n = len(members)
        rows.append(
            {
                "policy": key[0],
                "merge": key[1],
                "alpha1": key[2],
                "alpha2": key[3],
                "n_seeds": n,
                "mean_divergence": sum(m["metrics"]["mean_divergence"] for m in members) / n,
                "memory_ratio": sum(m["metrics"]["memory_ratio"] for m in members) / n,
                "flop_ratio": sum(m["metrics"]["flop_ratio"] for m in members) / n,
            }
        )
    return rows


def compare_csv_text(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COMPARE_CSV_COLUMNS)
    for row in rows:
        writer.writerow([fmt_value(row[col]) for col in COMPARE_CSV_COLUMNS])
    return buf.getvalue()


def compare_table_text(rows: list[dict]) -> str:
    """Aligned plain-text rendering of compare rows for standard output."""
    headers = COMPARE_CSV_COLUMNS
    cells = [[fmt_value(row[col]) for col in headers] for row in rows]
    widths = [
        max(len(headers[i]), *(len(r[i]) for r in cells)) if cells else len(headers[i])
        for i in range(len(headers))
    ]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip()]
    for r in cells:
        lines.append("  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip())
    return "\n".join(lines) + "\n"
