"""On-disk formats: sample CSV, run report, sweep table.

Sample CSV::

    time_s,receiver_id,v1_volts,v2_volts
    0.000000,0,0.004883,0.000000
    ...

rows sorted by time then receiver id, fixed-point with 6 decimals.

Run report: UTF-8 text, one ``key=value`` per line, ``#`` starts a comment.
Keys are dotted (``detection.time_s``); values are ``true``/``false``,
``none``, a decimal float (``repr`` precision) or a bare string.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np
import pandas as pd
import polars as pl

from .errors import DataError
from .frontend import FrameBlock
from .pipeline import DetectionEvent, IdentificationReport

SAMPLE_HEADER = "time_s,receiver_id,v1_volts,v2_volts"
SAMPLE_COLUMNS = SAMPLE_HEADER.split(",")


class CsvFormatError(DataError):
    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}" if lineno is not None else message)


# --- sample CSV -----------------------------------------------------------


def format_samples(blocks: list[FrameBlock]) -> str:
    """CSV rows (no header) for time-aligned per-receiver blocks."""
    if not blocks or len(blocks[0]) == 0:
        return ""
    n, r = len(blocks[0]), len(blocks)
    df = pl.DataFrame(
        {
            "t": np.repeat(blocks[0].time, r),
            "rid": np.tile(np.array([b.receiver_id for b in blocks], dtype=np.int64), n),
            "v1": np.column_stack([b.v1 for b in blocks]).ravel(),
            "v2": np.column_stack([b.v2 for b in blocks]).ravel(),
        }
    )
    return df.write_csv(include_header=False, float_precision=6, line_terminator="\n")


def write_samples(out: TextIO, stream: Iterable[list[FrameBlock]]) -> int:
    """Write the header and every block; returns the number of data rows."""
    out.write(SAMPLE_HEADER + "\n")
    rows = 0
    for blocks in stream:
        out.write(format_samples(blocks))
        rows += len(blocks[0]) * len(blocks) if blocks else 0
    return rows


def read_samples(path: str | Path) -> list[FrameBlock]:
    """Parse a sample CSV into one block per receiver (ordered by receiver id)."""
    text = Path(path).read_text(encoding="utf-8")
    return parse_samples(text)


def parse_samples(text: str) -> list[FrameBlock]:
    first, _, body = text.partition("\n")
    if first.strip() != SAMPLE_HEADER:
        raise CsvFormatError(f"expected header {SAMPLE_HEADER!r}", 1)
    if not body.strip():
        return []
    if not body.endswith("\n"):
        last = body.count("\n") + 2
        raise CsvFormatError("file ends mid-row (no trailing newline)", last)
    try:
        num = pd.read_csv(
            io.StringIO(body), header=None, names=SAMPLE_COLUMNS, dtype=np.float64,
            skip_blank_lines=False,
        )
    except (ValueError, pd.errors.ParserError):
        num = _locate_bad_row(body)
    if num.isna().to_numpy().any():
        i = int(np.flatnonzero(num.isna().any(axis=1).to_numpy())[0])
        raise CsvFormatError("missing or non-numeric field", i + 2)
    t = num["time_s"].to_numpy(dtype=np.float64)
    rid_f = num["receiver_id"].to_numpy(dtype=np.float64)
    v1 = num["v1_volts"].to_numpy(dtype=np.float64)
    v2 = num["v2_volts"].to_numpy(dtype=np.float64)
    if not np.all(np.isfinite(np.column_stack((t, v1, v2)))):
        i = int(np.flatnonzero(~np.isfinite(np.column_stack((t, v1, v2))).all(axis=1))[0])
        raise CsvFormatError("non-finite value", i + 2)
    if np.any(rid_f != np.round(rid_f)) or np.any(rid_f < 0):
        i = int(np.flatnonzero((rid_f != np.round(rid_f)) | (rid_f < 0))[0])
        raise CsvFormatError("receiver_id must be a non-negative integer", i + 2)
    if t.size > 1:
        dt = np.diff(t)
        bad_order = (dt < 0) | ((dt == 0) & (np.diff(rid_f) <= 0))
        if bad_order.any():
            raise CsvFormatError("rows not sorted by time then receiver_id", int(np.flatnonzero(bad_order)[0]) + 3)
    rid = rid_f.astype(np.int64)
    ids = np.unique(rid)
    blocks = []
    for r in ids:
        m = rid == r
        blocks.append(FrameBlock(t[m], v1[m], v2[m], int(r)))
    n = len(blocks[0])
    if any(len(b) != n or not np.array_equal(b.time, blocks[0].time) for b in blocks):
        raise CsvFormatError("receiver streams are not time-aligned")
    return blocks


def _locate_bad_row(body: str) -> pd.DataFrame:
    """Slow path: find the first unparseable row and raise with its line number."""
    for i, line in enumerate(body.split("\n")[:-1]):
        fields = line.split(",")
        if len(fields) != 4:
            raise CsvFormatError(f"expected 4 fields, got {len(fields)}", i + 2)
        try:
            [float(f) for f in fields]
        except ValueError:
            raise CsvFormatError("non-numeric field", i + 2) from None
    raise CsvFormatError("unparseable sample data")


# --- run report -----------------------------------------------------------


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _parse_value(s: str):
    if s == "none":
        return None
    if s in ("true", "false"):
        return s == "true"
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s


@dataclass
class RunReport:
    """Everything ``identify`` prints: scenario echo, results, errors, timing."""

    scenario: dict[str, object] = field(default_factory=dict)
    event: DetectionEvent | None = None
    report: IdentificationReport | None = None
    errors: dict[str, float] = field(default_factory=dict)
    timing: dict[str, float] = field(default_factory=dict)

    def to_text(self) -> str:
        lines = ["# echosense run report"]
        lines += [f"scenario.{k}={_fmt(v)}" for k, v in self.scenario.items()]
        lines.append(f"detection.detected={_fmt(self.event is not None)}")
        if self.event is not None:
            ev = self.event
            lines += [
                f"detection.time_s={_fmt(ev.detect_time)}",
                f"detection.decision_time_s={_fmt(ev.decision_time)}",
                f"detection.latency_s={_fmt(ev.latency_from_onset)}",
                f"detection.peak_v1_volts={_fmt(ev.peak_v1)}",
                f"detection.index={_fmt(ev.index)}",
            ]
        lines.append(f"identification.reported={_fmt(self.report is not None)}")
        if self.report is not None:
            r = self.report
            lines += [
                f"identification.amplitude_volts={_fmt(r.amplitude_estimate)}",
                f"identification.phase_flip={_fmt(r.phase_flip)}",
                f"identification.impedance={_fmt(r.estimated_impedance)}",
                f"identification.matched_gas={_fmt(r.matched_gas)}",
                f"identification.nearest_gas={_fmt(r.nearest_gas)}",
                f"identification.relative_error={_fmt(r.relative_error)}",
                f"identification.report_time_s={_fmt(r.report_time)}",
                f"identification.partial={_fmt(r.partial)}",
            ]
        lines += [f"error.{k}={_fmt(v)}" for k, v in self.errors.items()]
        lines += [f"timing.{k}={_fmt(v)}" for k, v in self.timing.items()]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunReport":
        kv: dict[str, object] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep or not key:
                raise DataError(f"line {lineno}: expected key=value")
            kv[key.strip()] = _parse_value(value.strip())

        def section(prefix: str) -> dict[str, object]:
            return {k[len(prefix):]: v for k, v in kv.items() if k.startswith(prefix)}

        out = cls(scenario=section("scenario."), errors=section("error."), timing=section("timing."))
        det = section("detection.")
        if det.get("detected"):
            out.event = DetectionEvent(
                detect_time=det["time_s"],
                latency_from_onset=det["latency_s"],
                peak_v1=det["peak_v1_volts"],
                index=det["index"],
                decision_time=det["decision_time_s"],
            )
        ident = section("identification.")
        if ident.get("reported"):
            out.report = IdentificationReport(
                amplitude_estimate=ident["amplitude_volts"],
                phase_flip=ident["phase_flip"],
                estimated_impedance=ident["impedance"],
                matched_gas=None if ident["matched_gas"] is None else str(ident["matched_gas"]),
                relative_error=ident["relative_error"],
                report_time=ident["report_time_s"],
                nearest_gas=str(ident["nearest_gas"]),
                partial=ident["partial"],
            )
        return out


# --- sweep table ----------------------------------------------------------

SWEEP_COLUMNS = [
    "gas", "distance_cm", "repeat", "seed", "estimated_impedance", "actual_impedance",
    "relative_error", "matched_gas", "phase_flip", "amplitude_volts",
]
SUMMARY_COLUMNS = ["gas", "actual_impedance", "n", "mean_relative_error", "max_relative_error"]


def summarize_sweep(rows: pd.DataFrame) -> pd.DataFrame:
    g = rows.groupby("gas", sort=False)
    out = pd.DataFrame(
        {
            "actual_impedance": g["actual_impedance"].first(),
            "n": g.size(),
            "mean_relative_error": g["relative_error"].mean(),
            "max_relative_error": g["relative_error"].max(),
        }
    ).reset_index()
    return out[SUMMARY_COLUMNS]

