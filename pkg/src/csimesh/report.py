"""Study report assembly and deterministic CSV/JSON emission.

All floats are written with ``repr`` (shortest round-trip form) and rows are
emitted in a fixed order, so regenerating a report from the same results is
byte-identical.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .protocol import TdmaSchedule
from .study import (
    FoldResult,
    LinkQualityMatrix,
    StatsSummary,
    SweepRow,
    compare_configurations,
)

DEFAULT_NODE_COST_USD = 10.0
DEFAULT_NYQUIST_HZ = 4.0


class ReportError(ValueError):
    pass


@dataclass
class StudyReport:
    """Everything a study produced, ready for table emission."""

    meta: dict
    fold_results: list[FoldResult]
    comparisons: list[StatsSummary] = field(default_factory=list)
    sweep: list[SweepRow] = field(default_factory=list)
    quality: LinkQualityMatrix | None = None
    node_count: int = 9
    slot_ms: float = 80.0
    node_cost_usd: float = DEFAULT_NODE_COST_USD
    nyquist_hz: float = DEFAULT_NYQUIST_HZ

    def config_ids(self) -> list[str]:
        seen: list[str] = []
        for r in self.fold_results:
            if r.config_id not in seen:
                seen.append(r.config_id)
        return seen

    def results_for(self, config_id: str) -> list[FoldResult]:
        return [r for r in self.fold_results if r.config_id == config_id]

    def validate_complete(self) -> None:
        """Every configuration must cover the same fold set."""
        by_config: dict[str, set[int]] = {}
        for r in self.fold_results:
            by_config.setdefault(r.config_id, set()).add(r.fold.test_day)
        if not by_config:
            raise ReportError("report has no fold results")
        all_days = set().union(*by_config.values())
        missing = [
            f"{cid}: day {d}"
            for cid, days in sorted(by_config.items())
            for d in sorted(all_days - days)
        ]
        if missing:
            raise ReportError("incomplete results; missing cells: " + ", ".join(missing))


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def cost_table(node_count: int, slot_ms: float, unit_cost: float) -> list[tuple]:
    rows = []
    for n in range(1, node_count + 1):
        sched = TdmaSchedule(node_count=n, slot_ms=slot_ms)
        rows.append((n, n * unit_cost, n * (n - 1), sched.cycle_ms, sched.mesh_rate_hz))
    return rows


def nyquist_table(node_count: int, slot_ms: float, threshold_hz: float) -> list[tuple]:
    rows = []
    for n in range(1, node_count + 1):
        sched = TdmaSchedule(node_count=n, slot_ms=slot_ms)
        rows.append((n, sched.mesh_rate_hz, threshold_hz, int(sched.mesh_rate_hz >= threshold_hz)))
    return rows


def emit_report(report: StudyReport, out_dir: str | Path) -> list[Path]:
    """Write the report bundle; refuses partial results.

    Emits fold_results.csv, comparisons.csv, sweep.csv (link-count curve
    data), q_matrix.csv and link_day_auc.csv (per-link distribution data),
    cost_table.csv and nyquist_table.csv (trade-off data), plus summary.json.
    """
    report.validate_complete()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    rows = [
        (
            r.config_id,
            r.fold.test_day,
            "|".join(str(d) for d in r.fold.train_days),
            r.classifier,
            r.auc,
            int(r.skipped),
            r.skip_reason,
            ";".join(f"{tx}-{rx}" for tx, rx in r.selected),
        )
        for r in sorted(
            report.fold_results, key=lambda r: (r.config_id, r.fold.test_day)
        )
    ]
    path = out / "fold_results.csv"
    _write_csv(
        path,
        ("config_id", "test_day", "train_days", "classifier", "auc", "skipped", "skip_reason", "selected_links"),
        rows,
    )
    written.append(path)

    comp_rows = [
        (
            c.config_a,
            c.config_b,
            c.n_folds,
            c.mean_a,
            c.std_a,
            c.mean_b,
            c.std_b,
            c.mean_diff,
            c.t_stat,
            c.t_p,
            c.wilcoxon_w,
            c.wilcoxon_p,
            c.cohens_d,
            c.ci_lo,
            c.ci_hi,
            c.wins_a,
            c.wins_b,
        )
        for c in report.comparisons
    ]
    path = out / "comparisons.csv"
    _write_csv(
        path,
        (
            "config_a", "config_b", "n_folds", "mean_a", "std_a", "mean_b", "std_b",
            "mean_diff", "t_stat", "t_p", "wilcoxon_w", "wilcoxon_p", "cohens_d",
            "ci_lo", "ci_hi", "wins_a", "wins_b",
        ),
        comp_rows,
    )
    written.append(path)

    path = out / "sweep.csv"
    _write_csv(
        path,
        ("link_count", "mean_auc", "std_auc", "fold_count"),
        [(s.link_count, s.mean_auc, s.std_auc, s.fold_count) for s in report.sweep],
    )
    written.append(path)

    if report.quality is not None:
        q = report.quality
        q_rows = []
        for i, tx in enumerate(q.node_ids):
            for j, rx in enumerate(q.node_ids):
                if i == j:
                    continue
                val = q.matrix[i, j]
                q_rows.append((tx, rx, None if np.isnan(val) else float(val)))
        path = out / "q_matrix.csv"
        _write_csv(path, ("tx", "rx", "mean_auc"), q_rows)
        written.append(path)
        path = out / "link_day_auc.csv"
        _write_csv(path, ("tx", "rx", "test_day", "auc"), sorted(q.records))
        written.append(path)

    path = out / "cost_table.csv"
    _write_csv(
        path,
        ("node_count", "hardware_cost_usd", "links", "cycle_ms", "mesh_rate_hz"),
        cost_table(report.node_count, report.slot_ms, report.node_cost_usd),
    )
    written.append(path)

    path = out / "nyquist_table.csv"
    _write_csv(
        path,
        ("node_count", "mesh_rate_hz", "nyquist_threshold_hz", "above_threshold"),
        nyquist_table(report.node_count, report.slot_ms, report.nyquist_hz),
    )
    written.append(path)

    summary = {
        "meta": report.meta,
        "configurations": {
            cid: {
                "fold_aucs": {
                    str(r.fold.test_day): r.auc for r in report.results_for(cid)
                },
            }
            for cid in report.config_ids()
        },
        "comparisons": [c.to_dict() for c in report.comparisons],
        "sweep": [
            {
                "link_count": s.link_count,
                "mean_auc": s.mean_auc,
                "std_auc": s.std_auc,
                "fold_count": s.fold_count,
            }
            for s in report.sweep
        ],
    }
    path = out / "summary.json"
    path.write_text(json.dumps(summary, indent=2, sort_keys=True))
    written.append(path)
    return written


def build_report(
    fold_results: list[FoldResult],
    meta: dict,
    sweep: list[SweepRow] | None = None,
    quality: LinkQualityMatrix | None = None,
    compare_pairs: Sequence[tuple[str, str]] = (),
    seed: int = 42,
    node_count: int = 9,
    slot_ms: float = 80.0,
) -> StudyReport:
    """Assemble a report, recomputing the requested paired comparisons."""
    report = StudyReport(
        meta=meta,
        fold_results=fold_results,
        sweep=sweep or [],
        quality=quality,
        node_count=node_count,
        slot_ms=slot_ms,
    )
    by_config = {cid: report.results_for(cid) for cid in report.config_ids()}
    for cid_a, cid_b in compare_pairs:
        if cid_a not in by_config or cid_b not in by_config:
            raise ReportError(f"cannot compare {cid_a} vs {cid_b}: results missing")
        report.comparisons.append(
            compare_configurations(by_config[cid_a], by_config[cid_b], seed=seed)
        )
    return report
