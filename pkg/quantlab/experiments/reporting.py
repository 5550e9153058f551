"""Result files written by every run: results.csv, summary.json, manifest.json and a plot script."""

import csv
import dataclasses
import json
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional

from quantlab import __version__

from .services import ExperimentResult, TrialRecord

logger = logging.getLogger(__name__)

RESULTS_HEADER = tuple(field.name for field in dataclasses.fields(TrialRecord))

RESULTS_FILENAME = "results.csv"
SUMMARY_FILENAME = "summary.json"
MANIFEST_FILENAME = "manifest.json"
PLOT_FILENAME = "plot.gp"


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def jsonable(value):
    """Replace NaN with ``null`` so the JSON stays standard."""

    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {str(key): jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(item) for item in value]
    return value


def write_json(path: Path, payload) -> Path:
    path.write_text(json.dumps(jsonable(payload), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def write_results(result: ExperimentResult, out_dir) -> Dict[str, Path]:
    """Write ``results.csv`` (records sorted by cell and trial) and ``summary.json``."""

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results_path = out_dir / RESULTS_FILENAME
    with results_path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(RESULTS_HEADER)
        for record in result.records:
            writer.writerow([_format(getattr(record, name)) for name in RESULTS_HEADER])
    summary_path = write_json(out_dir / SUMMARY_FILENAME, result.summary())
    logger.info("Wrote %d records to %s", len(result.records), results_path)
    return {"results": results_path, "summary": summary_path}


def _parse_record(row: Dict[str, str]) -> TrialRecord:
    values = {}
    for field in dataclasses.fields(TrialRecord):
        text = row[field.name]
        if field.type is bool:
            values[field.name] = text == "true"
        elif field.type is int:
            values[field.name] = int(text)
        elif field.type is float:
            values[field.name] = float(text)
        else:
            values[field.name] = text
    return TrialRecord(**values)


def read_results(path) -> ExperimentResult:
    path = Path(path)
    with path.open(encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != RESULTS_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        try:
            records = [_parse_record(row) for row in reader]
        except (KeyError, ValueError) as exc:
            raise ValueError(f"{path}:{reader.line_num}: malformed record ({exc})") from exc
    return ExperimentResult(tuple(records))


def write_manifest(out_dir, config: dict, kind: str, outputs: Optional[Dict[str, List[str]]] = None) -> Path:
    """Echo the resolved config so a run can be repeated exactly."""

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "version": __version__,
        "kind": kind,
        "config": config,
        "outputs": outputs or {},
    }
    return write_json(out_dir / MANIFEST_FILENAME, manifest)


def emit_plot_script(result: ExperimentResult, out_dir, metric: str = "frob_error", title: str = "") -> Path:
    """gnuplot script drawing one log-log curve of the mean ``metric`` per (delta1, delta2).

    The script reads ``results.csv`` from its own directory and averages the
    trials of each cell with ``smooth unique``; a dashed ``n^(-1/2)`` guide is
    anchored at the first point of the first curve. Run it from ``out_dir``.
    """

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / PLOT_FILENAME
    settings = sorted({(delta1, delta2) for _, delta1, delta2 in result.cells()})
    n_col, delta1_col, delta2_col, metric_col = (
        RESULTS_HEADER.index(column) + 1 for column in ("n", "delta1", "delta2", metric)
    )

    lines = [
        f"# mean {metric} per cell, averaged over the trials in {RESULTS_FILENAME}",
        "set datafile separator ','",
        "set datafile missing 'nan'",
        f"set title '{title or metric}'",
        "set logscale xy",
        "set xlabel 'n'",
        f"set ylabel 'mean {metric}'",
        "set key top right",
        "set terminal pngcairo size 800,600",
        "set output 'plot.png'",
    ]
    plots = []
    anchor = None
    for delta1, delta2 in settings:
        curve = [(n, mean) for n, mean in result.curve(metric, delta1, delta2) if math.isfinite(mean)]
        if not curve:
            continue
        if anchor is None:
            anchor = curve[0]
        in_cell = f"abs(${delta1_col} - {delta1!r}) < 1e-12 && abs(${delta2_col} - {delta2!r}) < 1e-12"
        plots.append(
            f"'{RESULTS_FILENAME}' skip 1 using (${n_col}):({in_cell} ? ${metric_col} : NaN) "
            f"smooth unique with linespoints title 'delta1={delta1:g}, delta2={delta2:g}'"
        )
    if anchor is not None:
        n0, e0 = anchor
        plots.append(f"{e0!r} * sqrt({n0} / x) dashtype 2 lc rgb 'black' title 'n^(-1/2)'")
        lines.append("plot " + ", \\\n     ".join(plots))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
