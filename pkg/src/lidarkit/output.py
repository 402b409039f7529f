"""output.py

Writers for the signal file (CSV or JSON) and the JSON run summary.

The CSV starts with ``#`` comment lines: the contract version, the run
identity and one line per column describing it.  Floats are written with
``.17g`` so identical runs give byte-identical files.
"""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path
from typing import Dict, List, Optional, TextIO

from .models import ReturnSignal, RunSummary
from .tally import CATEGORIES

# ------------------------------------------------------------
# Columns
# ------------------------------------------------------------

_CATEGORY_KEYS = {"1": "1", "2": "2", "3+": "3p", "2:D0": "2_d0", "2:outside": "2_out", "total": "total"}

SINGLE_COLUMNS: Dict[str, str] = {
    "t": "return time (path length)",
    "i1": "single-scattering rate per emitted particle per unit time",
    "far_field_ok": "1 when (t/2)/(rho0/eps) exceeds the configured margin",
    "far_field_margin": "(t/2)/(rho0/eps)",
}

DOUBLE_COLUMNS: Dict[str, str] = {
    "smallness_q": "eps*sigma_max*rho0*ln(t/rho0); empty when t <= rho0",
    "smallness_ok": "1 when smallness_q <= threshold",
    "i21": "double-scattering rate over D0",
    "i21_error": "a posteriori quadrature error of i21",
    "i21_subdivisions": "cubature cell splits",
    "d0_empty": "1 when D0 is empty (t <= 2 rho0/eps)",
    "i22_bound": "upper bound of the neglected I22 term",
    "i23_bound": "upper bound of the neglected I23 term; empty when eps*t <= 2 rho0",
}

MC_COLUMNS: Dict[str, str] = {
    "bin_lo": "tally bin lower edge",
    "bin_hi": "tally bin upper edge (exclusive)",
}
for _cat, _key in _CATEGORY_KEYS.items():
    MC_COLUMNS[f"rate_{_key}"] = f"Monte Carlo rate, category {_cat}"
    MC_COLUMNS[f"stderr_{_key}"] = f"standard error of rate_{_key}"
    MC_COLUMNS[f"count_{_key}"] = f"detections scored, category {_cat}"
MC_COLUMNS["ratio_2_1"] = "rate_2 / rate_1"
MC_COLUMNS["ratio_3p_2"] = "rate_3p / rate_2"

VALIDATE_COLUMNS: Dict[str, str] = {
    "i1_bin": "i1 averaged over the tally bin",
    "graded_order1": "1 when count_1 reaches the grading minimum",
    "graded_order2": "1 when count_2_d0 reaches the grading minimum",
    "z_order1": "(rate_1 - i1_bin) / stderr_1; empty when order 1 is not graded",
    "z_order2": "(rate_2_d0 - i21) / stderr_2_d0; empty when order 2 is not graded",
    "rel_diff_order2": "|rate_2_d0 - i21| / i21; empty when order 2 is not graded",
    "d0_remainder": "order-2 rate outside D0",
    "remainder_bound": "i22_bound + i23_bound",
    "remainder_ok": "1 when d0_remainder <= remainder_bound + 3 stderr",
    "ok": "1 when the bin passes",
}


def columns_for(mode: str) -> Dict[str, str]:
    cols = dict(SINGLE_COLUMNS)
    if mode == "mc":
        cols = {"t": SINGLE_COLUMNS["t"]}
        cols.update(MC_COLUMNS)
        return cols
    if mode in ("double", "validate"):
        cols.update(DOUBLE_COLUMNS)
    if mode == "validate":
        cols.update(MC_COLUMNS)
        cols.update(VALIDATE_COLUMNS)
    return cols


# ------------------------------------------------------------
# Formatting
# ------------------------------------------------------------

def format_value(v: object) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return format(v, ".17g")
    return str(v)


def signal_records(signal: ReturnSignal) -> List[Dict[str, object]]:
    """Flatten the signal into one dict per time point."""
    n = max(len(signal.analytic), len(signal.montecarlo))
    records: List[Dict[str, object]] = [{} for _ in range(n)]
    for rec, row in zip(records, signal.analytic):
        rec.update(row.model_dump())
    for rec, row in zip(records, signal.montecarlo):
        rec["t"] = row.t
        rec["bin_lo"], rec["bin_hi"] = row.bin_lo, row.bin_hi
        for cat in CATEGORIES:
            key = _CATEGORY_KEYS[cat]
            rec[f"rate_{key}"] = row.rate[cat]
            rec[f"stderr_{key}"] = row.stderr[cat]
            rec[f"count_{key}"] = row.count[cat]
        rec["ratio_2_1"] = row.ratio.get("2/1")
        rec["ratio_3p_2"] = row.ratio.get("3+/2")
    for rec, row in zip(records, signal.validation):
        rec.update(row.model_dump(exclude={"t"}))
    return records


def write_csv(signal: ReturnSignal, summary: RunSummary, stream: TextIO) -> None:
    cols = columns_for(signal.mode)
    stream.write(f"# contract: {summary.contract}\n")
    stream.write(f"# mode: {summary.mode}\n")
    stream.write(f"# config_hash: {summary.config_hash}\n")
    if summary.seed is not None:
        stream.write(f"# seed: {summary.seed}\n")
        stream.write(f"# histories: {summary.histories}\n")
    for name, doc in cols.items():
        stream.write(f"# column {name}: {doc}\n")
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(cols)
    for rec in signal_records(signal):
        writer.writerow([format_value(rec.get(name)) for name in cols])


def render(signal: ReturnSignal, summary: RunSummary, fmt: str = "csv") -> str:
    if fmt == "json":
        return signal.model_dump_json(indent=2) + "\n"
    buf = io.StringIO()
    write_csv(signal, summary, buf)
    return buf.getvalue()


def summary_path(out: Path) -> Path:
    return out.with_name(out.name + ".summary.json")


def write_outputs(
    signal: ReturnSignal, summary: RunSummary, out: Optional[Path], fmt: str = "csv", stream: Optional[TextIO] = None
) -> Optional[Path]:
    """Write the signal to *out* (or *stream*) and the summary beside it.

    Returns:
        Path of the summary file, or ``None`` when writing to a stream.
    """
    text = render(signal, summary, fmt)
    if out is None:
        if stream is not None:
            stream.write(text)
        return None
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text, encoding="utf-8")
    target = summary_path(out)
    target.write_text(summary.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return target
