import json
import logging
import os
from typing import Dict, List, Optional, Sequence

import pandas as pd

from ..schemas.game import GameSpec
from ..schemas.harness import CoverageRow, GenerationLog, MutationReport
from ..utils.file_utils import ensure_dir
from .statistics_service import statistics_service

logger = logging.getLogger(__name__)

COVERAGE_COLUMNS = ["game", "suite", "seed", "covered", "statements", "coverage", "wins"]
SUMMARY_COLUMNS = ["game", "suite_a", "suite_b", "runs_a", "runs_b", "mean_a", "mean_b", "a12", "p_value",
                   "wins_a", "wins_b"]
MUTATION_COLUMNS = ["game", "operator", "generated", "killed", "structural_kills", "kill_rate", "fp_rate"]
FLOAT_FORMAT = "%.6f"


class ReportService:

    def suite_row(self, suite, spec: GameSpec, label: str) -> CoverageRow:
        """Generation-phase row: robust coverage of a finished suite"""
        covered = set(suite.covered)
        statements = len(spec.statement_ids())
        return CoverageRow(
            game=spec.name, suite=label, seed=suite.master_seed, covered=len(covered), statements=statements,
            coverage=len(covered) / statements if statements else 0.0,
            wins=any(w in covered for w in spec.win_statements),
        )

    def coverage_frame(self, rows: Sequence[CoverageRow]) -> pd.DataFrame:
        frame = pd.DataFrame([row.model_dump() for row in rows], columns=COVERAGE_COLUMNS)
        return frame.sort_values(["game", "suite", "seed"], kind="mergesort").reset_index(drop=True)

    def coverage_summary(self, rows: Sequence[CoverageRow]) -> pd.DataFrame:
        """
        Per game, compare the two suite kinds: mean coverage, A12, Mann-Whitney p
        and the number of winning runs
        """
        frame = self.coverage_frame(rows)
        records: List[Dict] = []
        for game, group in frame.groupby("game", sort=True):
            kinds = sorted(group["suite"].unique())
            first = group[group["suite"] == kinds[0]]
            second = group[group["suite"] == kinds[1]] if len(kinds) > 1 else None
            record = {
                "game": game, "suite_a": kinds[0], "suite_b": kinds[1] if second is not None else None,
                "runs_a": len(first), "runs_b": len(second) if second is not None else 0,
                "mean_a": float(first["coverage"].mean()),
                "mean_b": float(second["coverage"].mean()) if second is not None else None,
                "a12": None, "p_value": None,
                "wins_a": int(first["wins"].sum()),
                "wins_b": int(second["wins"].sum()) if second is not None else 0,
            }
            if second is not None:
                comparison = statistics_service.compare(first["coverage"].tolist(), second["coverage"].tolist())
                record["a12"] = comparison.a12
                record["p_value"] = comparison.p_value
            records.append(record)
        return pd.DataFrame(records, columns=SUMMARY_COLUMNS)

    def mutation_frame(self, reports: Sequence[MutationReport]) -> pd.DataFrame:
        records = []
        for report in reports:
            for row in report.rows:
                records.append({**row.model_dump(), "fp_rate": report.false_positive_rate})
        frame = pd.DataFrame(records, columns=MUTATION_COLUMNS)
        return frame.sort_values(["game", "operator"], kind="mergesort").reset_index(drop=True)

    def generation_frame(self, logs: Sequence[GenerationLog]) -> pd.DataFrame:
        records = [
            {**log.model_dump(exclude={"admitted", "elapsed_seconds"}), "admitted": " ".join(log.admitted)}
            for log in logs
        ]
        return pd.DataFrame(records)

    def write_report(self, output_dir: str, coverage_rows: Sequence[CoverageRow] = (),
                     mutation_reports: Sequence[MutationReport] = (),
                     generation_logs: Optional[Sequence[GenerationLog]] = None) -> Dict[str, str]:
        """
        CSV tables plus a JSON summary; identical inputs give identical bytes
        """
        ensure_dir(output_dir)
        written: Dict[str, str] = {}
        summary: Dict[str, object] = {}

        if coverage_rows:
            path = os.path.join(output_dir, "coverage.csv")
            self.coverage_frame(coverage_rows).to_csv(path, index=False, float_format=FLOAT_FORMAT)
            written["coverage"] = path
            table = self.coverage_summary(coverage_rows)
            path = os.path.join(output_dir, "coverage_summary.csv")
            table.to_csv(path, index=False, float_format=FLOAT_FORMAT)
            written["coverage_summary"] = path
            summary["coverage"] = json.loads(table.to_json(orient="records"))

        if mutation_reports:
            path = os.path.join(output_dir, "mutation.csv")
            table = self.mutation_frame(mutation_reports)
            table.to_csv(path, index=False, float_format=FLOAT_FORMAT)
            written["mutation"] = path
            summary["mutation"] = {
                report.game: {
                    "generated": sum(r.generated for r in report.rows),
                    "killed": sum(r.killed for r in report.rows),
                    "false_positive_rate": report.false_positive_rate,
                }
                for report in sorted(mutation_reports, key=lambda r: r.game)
            }

        if generation_logs:
            path = os.path.join(output_dir, "generations.csv")
            self.generation_frame(generation_logs).to_csv(path, index=False, float_format=FLOAT_FORMAT)
            written["generations"] = path

        path = os.path.join(output_dir, "summary.json")
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(summary, handle, indent=2, sort_keys=True)
        written["summary"] = path
        logger.info(f"Report written to {output_dir}: {', '.join(sorted(written))}")
        return written


report_service = ReportService()
