"""
Report Exporter - evaluation and benchmark deliverables
Writes machine-readable JSON, an aligned text table and CSV files
"""
import json
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

import logging
import pandas as pd

from src.metrics.statistics import SUMMARY_METRICS
from src.models.domain import CaseResult

logger = logging.getLogger(__name__)

BENCH_COLUMNS = ["model", "S", "dsc_mean", "dsc_std"]
RELIABILITY_COLUMNS = ["lower", "upper", "count", "accuracy", "confidence"]


class ReportExporter:
    """
    Exporter for evaluation reports

    Outputs:
    - report.json: per-run summaries and paired tests
    - report.txt: aligned mean +- std table
    - cases_<run>.csv: one row per case
    - reliability_<run>.csv: pooled ECE bins
    - bench_steps.csv: DSC versus sampling steps
    """

    def __init__(self, output_dir: Path, percent: bool = False):
        """
        Args:
            output_dir: Directory receiving all files
            percent: Show dsc/nll/ece multiplied by 100 in the text table
        """
        self.output_dir = Path(output_dir)
        self.percent = percent
        self.logger = logging.getLogger(__name__)

    def _path(self, name: str) -> Path:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        return self.output_dir / name

    def export_json(self, report: Mapping[str, Any], name: str = "report.json") -> str:
        path = self._path(name)
        path.write_text(json.dumps(report, indent=2, sort_keys=True), encoding="utf-8")
        self.logger.info(f"Report written: {path}")
        return str(path)

    def format_table(
        self,
        summaries: Mapping[str, Mapping[str, Mapping[str, float]]],
        tests: Optional[Mapping[str, Mapping[str, Mapping[str, float]]]] = None,
    ) -> str:
        """
        Aligned text table, one row per run

        Args:
            summaries: run -> metric -> {mean, std}
            tests: "runA vs runB" -> metric -> {t, p}
        """
        scale = {m: (100.0 if self.percent and m != "corr" else 1.0) for m in SUMMARY_METRICS}
        suffix = "(%)" if self.percent else ""
        headers = ["run"] + [f"{m.upper()}{suffix if m != 'corr' else ''}" for m in SUMMARY_METRICS]
        rows: List[List[str]] = []
        for run in summaries:
            cells = [run]
            for m in SUMMARY_METRICS:
                stat = summaries[run][m]
                cells.append(f"{stat['mean'] * scale[m]:.4f} +- {stat['std'] * scale[m]:.4f}")
            rows.append(cells)

        widths = [max(len(r[i]) for r in [headers] + rows) for i in range(len(headers))]
        lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths))]
        lines.append("  ".join("-" * w for w in widths))
        lines.extend("  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows)

        if tests:
            lines.append("")
            lines.append("paired t-tests (t, p):")
            for pair, per_metric in tests.items():
                cells = ", ".join(f"{m} t={v['t']:.3f} p={v['p']:.4f}" for m, v in per_metric.items())
                lines.append(f"  {pair}: {cells}")
        return "\n".join(lines) + "\n"

    def export_text(self, summaries, tests=None, name: str = "report.txt") -> str:
        path = self._path(name)
        path.write_text(self.format_table(summaries, tests), encoding="utf-8")
        return str(path)

    def export_cases(self, results: Sequence[CaseResult], run: str) -> str:
        path = self._path(f"cases_{run}.csv")
        pd.DataFrame([r.to_dict() for r in results]).to_csv(path, index=False)
        return str(path)

    def export_reliability(self, rows: Sequence[Dict[str, float]], run: str) -> str:
        path = self._path(f"reliability_{run}.csv")
        pd.DataFrame(list(rows), columns=RELIABILITY_COLUMNS).to_csv(path, index=False)
        return str(path)

    def export_bench(self, rows: Sequence[Dict[str, Any]], name: str = "bench_steps.csv") -> str:
        path = self._path(name)
        pd.DataFrame(list(rows), columns=BENCH_COLUMNS).to_csv(path, index=False)
        self.logger.info(f"Step benchmark written: {path}")
        return str(path)
