"""
Command-line entry point for the Tree of Concepts harness.

    python app.py prepare --dataset heart --raw data/processed.cleveland.data
    python app.py run configs/heart_toc.json --override seed_list=[0]
    python app.py ablate configs/heart_toc.json
    python app.py report runs/*/report.json --out runs/summary.csv
    python app.py plot-data runs/*/report.json --out runs/scatter.csv

Progress goes to stderr, tables to stdout. Failures print a JSON object
{"error", "message", "context"} to stderr (exit 1, or 2 if unexpected).
"""
import argparse
import hashlib
import json
import os
import sys
import traceback

import pandas as pd

import config
from config import status
from errors import MissingReport, SchemaMismatch, TocError
from models import load_report, load_run_config, log_event, save_report
from protocol import (
    ablation_rows,
    plot_points,
    run_ablation_suite,
    run_protocol,
    table_rows,
    write_table,
)
from tabular_data import load_csv, load_schema, prepare_stream, save_stream, slice_by_column, subsample_rows

SCHEMA_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "schemas")


def _file_sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _safe_name(name):
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in name)


def _print_rows(rows):
    if rows:
        print(pd.DataFrame(rows).to_csv(index=False), end="")


# ============================================================================
# SUBCOMMANDS
# ============================================================================

def cmd_prepare(dataset, raw_path, out_dir, schema_path=None):
    """Validate a user-supplied raw CSV and write frozen slice snapshots."""
    schema = load_schema(schema_path or os.path.join(SCHEMA_DIR, f"{dataset}.json"))
    table = load_csv(raw_path, schema)
    status(f"Loaded {raw_path}: {table.n_rows} rows, {len(schema.columns)} columns")
    if schema.n_source is not None and table.n_rows != schema.n_source:
        raise SchemaMismatch(f"expected {schema.n_source} rows, found {table.n_rows}",
                             file=raw_path, expected=schema.n_source, found=table.n_rows)

    used = subsample_rows(table, schema.n_used, schema.split_seed)
    slices = slice_by_column(used, schema.slice_column, schema.boundaries)
    stream = prepare_stream(used, slices, schema.split_ratios, schema.split_seed)
    manifest = save_stream(stream, out_dir, manifest_extra={
        "source_file": os.path.basename(raw_path),
        "source_sha256": _file_sha256(raw_path),
        "n_source": table.n_rows,
        "n_used": used.n_rows,
        "n_dropped_subsample": table.n_rows - used.n_rows,
        "n_dropped_missing": used.n_rows - sum(s.n_rows for s in slices),
        "split_ratios": list(schema.split_ratios),
        "split_seed": schema.split_seed,
    })
    for info in manifest["slices"]:
        status(f"Slice {info['slice_id']} {info['provenance']}: {info['rows']} rows "
               f"(train {info['train']}, val {info['val']}, test {info['test']})")
    status(f"Prepared {dataset} -> {out_dir}")
    log_event("dataset_prepared", {"dataset": dataset, "out_dir": out_dir, "fingerprint": stream.fingerprint})
    return manifest


def cmd_run(config_path, overrides=(), report_path=None):
    """Protocol plus upper bound; writes the RunReport and prints its table row."""
    cfg = load_run_config(config_path, overrides)
    report = run_protocol(cfg)
    path = report_path or os.path.join(cfg.output_dir, "report.json")
    save_report(report, path)
    rows = table_rows([report])
    write_table(rows, os.path.join(os.path.dirname(path) or ".", "table.csv"))
    status(f"Report written to {path}")
    _print_rows(rows)
    return report


def cmd_ablate(config_path, overrides=()):
    cfg = load_run_config(config_path, overrides)
    reports = run_ablation_suite(cfg)
    out_dir = os.path.join(cfg.output_dir, "ablation")
    for report in reports:
        save_report(report, os.path.join(out_dir, f"{_safe_name(report.name)}.json"))
    rows = ablation_rows(reports)
    write_table(rows, os.path.join(out_dir, "ablation_table.csv"))
    status(f"Ablation reports written to {out_dir}")
    _print_rows(rows)
    return reports


def _load_reports(paths):
    if not paths:
        raise MissingReport("no report files given")
    return [load_report(p) for p in paths]


def cmd_report(paths, out_path=None):
    """Merge reports into one Table-1-shaped CSV."""
    rows = table_rows(_load_reports(paths))
    if out_path:
        write_table(rows, out_path)
    _print_rows(rows)
    return rows


def cmd_plot_data(paths, out_path=None):
    """Stability-plasticity scatter data; rendering is left to external tools."""
    frame = plot_points(_load_reports(paths))
    if out_path:
        os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
        frame.to_csv(out_path, index=False)
    print(frame.to_csv(index=False), end="")
    return frame


# ============================================================================
# ARGUMENT PARSING
# ============================================================================

def build_parser():
    parser = argparse.ArgumentParser(prog="toc", description="Tree of Concepts continual-learning harness")
    sub = parser.add_subparsers(dest="command", required=True)

    prep = sub.add_parser("prepare", help="validate a raw CSV and write slice snapshots")
    prep.add_argument("--dataset", required=True, help="dataset id, e.g. heart or cdc")
    prep.add_argument("--raw", required=True, help="path to the user-supplied raw CSV")
    prep.add_argument("--out", help="output directory (default: $TOC_DATA_DIR/prepared/<dataset>)")
    prep.add_argument("--schema", help="schema JSON (default: schemas/<dataset>.json)")

    for name, help_text in (("run", "run the continual protocol and the upper bound"),
                            ("ablate", "run the ablation suite and the capacity sweep")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="JSON run config")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="dotted config override, value parsed as JSON (repeatable)")
        if name == "run":
            p.add_argument("--out", help="report path (default: <output_dir>/report.json)")

    rep = sub.add_parser("report", help="merge run reports into a comparison table")
    rep.add_argument("reports", nargs="*")
    rep.add_argument("--out", help="CSV path")

    plot = sub.add_parser("plot-data", help="emit stability-plasticity scatter data")
    plot.add_argument("reports", nargs="*")
    plot.add_argument("--out", help="CSV path")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    if config.VERBOSE:
        print("=" * 70, file=sys.stderr)
        print(f"Tree of Concepts: {args.command}", file=sys.stderr)
        print("=" * 70, file=sys.stderr)
    try:
        if args.command == "prepare":
            out_dir = args.out or os.path.join(config.DATA_DIR, "prepared", args.dataset)
            cmd_prepare(args.dataset, args.raw, out_dir, args.schema)
        elif args.command == "run":
            cmd_run(args.config, args.override, args.out)
        elif args.command == "ablate":
            cmd_ablate(args.config, args.override)
        elif args.command == "report":
            cmd_report(args.reports, args.out)
        elif args.command == "plot-data":
            cmd_plot_data(args.reports, args.out)
        return 0
    except TocError as e:
        status(str(e), level="error")
        print(json.dumps(e.to_dict(), default=str), file=sys.stderr)
        return 1
    except Exception as e:
        traceback.print_exc()
        print(json.dumps({"error": type(e).__name__, "message": str(e), "context": {}}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
