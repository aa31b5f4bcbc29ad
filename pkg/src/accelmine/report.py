"""Deterministic report, trace and CSV writers.

Reports carry the tool version and a hash of every input that shaped the run,
and nothing time-dependent, so identical inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from pathlib import Path
from typing import Iterable, Mapping

from . import __version__


def _clean(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, Mapping):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    return x


def dumps(data) -> str:
    return json.dumps(_clean(data), sort_keys=True, indent=2, allow_nan=False) + "\n"


def config_hash(parts: Mapping) -> str:
    blob = json.dumps(_clean(parts), sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def header(parts: Mapping) -> dict:
    return {"tool": "accelmine", "version": __version__, "config_hash": config_hash(parts)}


def write_json(path, data) -> Path:
    path = Path(path)
    path.write_text(dumps(data))
    return path


def write_jsonl(path, records: Iterable[Mapping]) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        for r in records:
            fh.write(json.dumps(_clean(r), sort_keys=True, allow_nan=False) + "\n")
    return path


def write_csv(path, header_row: list[str], rows: Iterable[Iterable]) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header_row)
    for r in rows:
        w.writerow(["" if isinstance(v, float) and not math.isfinite(v) else v for v in r])
    path = Path(path)
    path.write_text(buf.getvalue())
    return path


TOPK_COLUMNS = ["rank", "design", "num_tc", "tc_rows", "tc_cols", "num_vc", "vc_width",
                "area_mm2", "tdp_watts", "makespan_cycles", "throughput", "metric"]


def topk_rows(entries) -> list[list]:
    rows = []
    for i, c in enumerate(entries):
        d = c.design
        rows.append([i + 1, d.label, d.num_tc, d.dims.tc_rows, d.dims.tc_cols, d.num_vc, d.dims.vc_width,
                     d.area_mm2, d.tdp_watts, c.makespan, c.throughput, c.value])
    return rows


PLAN_COLUMNS = ["mode", "model", "designs", "iteration_time_s", "throughput_samples_per_s",
                "total_tdp_w", "perf_per_tdp", "metric"]


def plan_row(mode: str, plan) -> list:
    return [mode, plan.model, " | ".join(d.label for d in plan.designs), plan.iteration_time_s,
            plan.throughput_samples_per_s, plan.total_tdp_w, plan.perf_per_tdp, plan.metric_value]
