"""Accuracy table, POS histogram and sweep grid, each next to the published full-scale numbers."""

from __future__ import annotations

import csv
import json
from pathlib import Path

from . import fullscale
from .errors import MissingArtifact
from .phase3 import SweepReport
from .text import STUDY_TAGS

TABLE2_ROWS = (("baseline", None), ("p1", 1), ("p5", 5), ("p10", 10), ("p15", 15))
FULL_POS_SET = "VERB_ADJ_NOUN"


def _read_json(path: Path):
    if not path.is_file():
        raise MissingArtifact(str(path))
    return json.loads(path.read_text())


def _pct(x) -> str:
    return "" if x is None else f"{100 * x:.1f}"


def emit_report(run_dir, out_dir=None) -> dict[str, Path]:
    """Write ``table2.csv``, ``figure2_histogram.csv``, ``figure4_sweep.csv`` and ``report.json``.

    Needs ``victim/eval.json`` and a nonempty ``sweep/sweep.json``; the
    histogram section is written only when a random study was run.
    """
    run = Path(run_dir)
    out = Path(out_dir) if out_dir else run / "report"
    victim_eval = _read_json(run / "victim" / "eval.json")
    sweep_path = run / "sweep" / "sweep.json"
    if not sweep_path.is_file():
        raise MissingArtifact(str(sweep_path))
    sweep = SweepReport.read_json(sweep_path)
    if not sweep.cells:
        raise MissingArtifact(f"{sweep_path} holds no sweep cells")
    out.mkdir(parents=True, exist_ok=True)
    dataset = sweep.dataset
    paper_t2 = fullscale.TABLE2.get(dataset, {})
    cells = {(c.pos_set, float(c.ratio)): c for c in sweep.cells}
    written = {}

    table = []
    for row, ratio in TABLE2_ROWS:
        if ratio is None:
            desk, selected = victim_eval["accuracy"], None
        else:
            cell = cells.get((FULL_POS_SET, float(ratio)))
            desk, selected = (cell.attack_acc, cell.baseline_acc) if cell else (None, None)
        table.append({"dataset": dataset, "row": row, "desk": _pct(desk), "desk_attacked_baseline": _pct(selected),
                      fullscale.COLUMN: paper_t2.get(row, "")})
    written["table2"] = out / "table2.csv"
    _write_rows(written["table2"], table)

    grid = []
    for ratio, values in fullscale.SWEEP.items():
        for config, paper in zip(fullscale.SWEEP_CONFIGS, values):
            cell = cells.get((config, float(ratio)))
            grid.append({"configuration": config, "perturbation": f"{ratio}%",
                         "desk": _pct(cell.attack_acc) if cell else "",
                         "desk_before_attack": _pct(cell.baseline_acc) if cell else "",
                         fullscale.COLUMN: paper if dataset == "imdb" else ""})
    written["figure4"] = out / "figure4_sweep.csv"
    _write_rows(written["figure4"], grid)

    summary = {"dataset": dataset, "victim_test_accuracy": victim_eval["accuracy"], "sweep_cells": len(sweep.cells),
               "full_scale": {"table2": paper_t2, "study_attempts": fullscale.STUDY_ATTEMPTS,
                              "study_successes": fullscale.STUDY_SUCCESSES,
                              "study_at_least_one": fullscale.STUDY_AT_LEAST_ONE}}
    study_dir = run / "random_study"
    if (study_dir / "summary.json").is_file():
        study = _read_json(study_dir / "summary.json")
        summary["random_study"] = study
        desk_rows = {}
        with open(study_dir / "histogram.csv", newline="") as fh:
            for rec in csv.reader(fh):
                if rec[0] != "tag":
                    desk_rows[rec[0]] = rec[1:]
        rows = []
        for tag in STUDY_TAGS:
            counts = desk_rows.get(tag, [])
            rows.append({"tag": tag, "source": "desk", **{str(c): v for c, v in enumerate(counts)}})
            rows.append({"tag": tag, "source": fullscale.COLUMN, **{str(c): v for c, v in enumerate(fullscale.HISTOGRAM[tag])}})
        written["figure2"] = out / "figure2_histogram.csv"
        _write_rows(written["figure2"], rows, ["tag", "source"] + [str(c) for c in range(11)])
    written["summary"] = out / "report.json"
    written["summary"].write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    return written


def _write_rows(path: Path, rows: list[dict], fields=None) -> None:
    fields = fields or list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n", restval="", extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
