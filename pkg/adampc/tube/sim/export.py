"""Writes traces, set snapshots and reports to disk.

Every file is written with a fixed field order, so re-running a scenario produces
byte-identical output.

SPDX-License-Identifier: BSD-3-Clause
"""

import csv
import json
import logging
import os
from typing import Dict, List

from adampc.tube import constants, helpers
from adampc.tube.polytope import VertexSet
from adampc.tube.sim.run import PerformanceReport, TraceRecord, comparison_summary


def _cell(value) -> str:
    return json.dumps(helpers.to_jsonable(value))


def write_trace(trace: TraceRecord, path: str):
    """Writes one CSV row per step. Vector fields are JSON lists."""
    with open(path, "w", newline="") as fout:
        writer = csv.writer(fout, lineterminator="\n")
        writer.writerow(constants.TRACE_FIELDS)
        for step in trace.steps:
            writer.writerow(
                [_cell(getattr(step, name)) for name in constants.TRACE_FIELDS]
            )


def read_trace(path: str) -> List[Dict[str, object]]:
    """Reads a trace written by write_trace back into plain values."""
    with open(path, "r", newline="") as fin:
        return [
            {name: json.loads(value) for name, value in row.items()}
            for row in csv.DictReader(fin)
        ]


def write_document(document: Dict[str, object], path: str):
    with open(path, "w") as fout:
        fout.write(helpers.dumps(document))
        fout.write("\n")


def export_artifacts(
    trace: TraceRecord, report: PerformanceReport, out_dir: str
) -> List[str]:
    """Writes trace.csv, report.json and one sets_k{step}.json per snapshot."""
    log = logging.getLogger(__name__)

    out_dir = os.path.abspath(os.path.expanduser(out_dir))
    os.makedirs(out_dir, exist_ok=True)

    written = [os.path.join(out_dir, constants.TRACE_FILE)]
    write_trace(trace, written[-1])

    for step in sorted(trace.snapshots):
        written.append(
            os.path.join(out_dir, constants.SETS_FILE_TEMPLATE.format(step=step))
        )
        write_document(VertexSet(trace.snapshots[step]).to_dict(), written[-1])

    written.append(os.path.join(out_dir, constants.REPORT_FILE))
    write_document(report.to_dict(), written[-1])

    log.info(f"Wrote {len(written)} files to {out_dir}")

    return written


def export_comparison(
    traces: Dict[str, TraceRecord],
    reports: Dict[str, PerformanceReport],
    out_dir: str,
) -> List[str]:
    """Writes each mode's artifacts to its own directory, plus comparison.json."""
    out_dir = os.path.abspath(os.path.expanduser(out_dir))
    os.makedirs(out_dir, exist_ok=True)

    written = []
    for mode in traces:
        written.extend(
            export_artifacts(traces[mode], reports[mode], os.path.join(out_dir, mode))
        )

    written.append(os.path.join(out_dir, constants.COMPARISON_FILE))
    write_document(comparison_summary(reports), written[-1])

    return written
