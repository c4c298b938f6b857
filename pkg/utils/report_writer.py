import json
import logging
import os
from typing import Dict, List

import pandas as pd

from utils.study_runner import FOOTER, Report

FORMATS = ('json', 'csv')


class ReportWriter:
    """Deterministic JSON / CSV serialization of study reports"""

    def __init__(self):
        self.logger = logging.getLogger(__name__)

    def write(self, report: Report, fmt: str, path: str) -> str:
        """
        Write ``report`` to ``path`` and its wall-clock timings to ``<path>.timings.json``.

        Args:
            report: Report produced by a study
            fmt: 'json' or 'csv'
            path: Output file

        Returns:
            The report path
        """
        fmt = fmt.lower()
        if fmt not in FORMATS:
            raise ValueError(f"unknown report format '{fmt}'; choose from {FORMATS}")
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)

        if fmt == 'json':
            text = json.dumps(report.to_dict(), indent=2, sort_keys=True) + '\n'
        else:
            text = self.csv_text(report)
        with open(path, 'w', encoding='utf-8', newline='') as handle:
            handle.write(text)

        timings_path = f"{path}.timings.json"
        with open(timings_path, 'w', encoding='utf-8') as handle:
            json.dump(report.timings, handle, indent=2, sort_keys=True, default=str)

        self.logger.info(f"Wrote {report.study} report to {path} (timings in {timings_path})")
        return path

    def csv_text(self, report: Report) -> str:
        """One CSV block per non-empty section, each headed by ``# section: <name>``"""
        data = report.to_dict()
        blocks: List[str] = [f"# study: {report.study}", f"# schema_version: {report.schema_version}",
                             f"# passed: {data['passed']}"]
        tables: Dict[str, List[Dict]] = {
            'config': [pd.json_normalize(data['config']).iloc[0].to_dict()],
            'runs': pd.json_normalize(data['runs']).to_dict('records') if data['runs'] else [],
            'checks': [{'check': k, 'passed': v} for k, v in sorted(data['checks'].items())],
            'expectations': [{'expectation': k, 'met': v} for k, v in sorted(data['expectations'].items())],
            'notes': [{'note': note} for note in data['notes']],
        }
        tables.update(data.get('sections', {}))
        for name, rows in tables.items():
            if not rows:
                continue
            frame = pd.DataFrame(rows)
            blocks.append(f"# section: {name}")
            blocks.append(frame.to_csv(index=False, lineterminator='\n').rstrip('\n'))
        blocks.append(f"# footer: {FOOTER}")
        return '\n'.join(blocks) + '\n'


def emit_report(report: Report, fmt: str, path: str) -> str:
    return ReportWriter().write(report, fmt, path)
