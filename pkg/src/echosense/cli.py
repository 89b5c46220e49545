"""Command-line interface: ``echosense {simulate,identify,sweep,table}``.

Exit codes: 0 success, 1 leak detected but not identified, 2 bad
arguments or gas database, 3 unreadable/unwritable or malformed data,
4 no leak detected.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import pandas as pd

from . import frontend as fe
from . import gasdb
from .acoustics import AIR_IMPEDANCE, DomainError, Medium, impedance, invert_impedance, reflect
from .errors import ConfigurationError, DataError
from .formats import (
    SWEEP_COLUMNS,
    CsvFormatError,
    RunReport,
    read_samples,
    summarize_sweep,
    write_samples,
)
from .pipeline import PipelineConfig, StreamProcessor

log = logging.getLogger("echosense")

EXIT_OK, EXIT_UNIDENTIFIED, EXIT_USAGE, EXIT_DATA, EXIT_NO_LEAK = 0, 1, 2, 3, 4
MAX_DURATION_S = 60.0


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _load_db(path: str | None) -> gasdb.GasDatabase:
    try:
        return gasdb.load(path)
    except (gasdb.GasDbError, DomainError) as exc:
        raise CliError(f"gas database: {exc}", EXIT_USAGE) from exc


def _gas(db: gasdb.GasDatabase, name: str):
    try:
        return db.get(name)
    except KeyError:
        known = ", ".join(g.name for g in db)
        raise CliError(f"unknown gas {name!r} (known: {known})", EXIT_USAGE) from None


# --- simulate -------------------------------------------------------------


def cmd_simulate(args: argparse.Namespace) -> int:
    db = _load_db(args.db)
    gas = _gas(db, args.gas)
    if not 0 <= args.duration_s <= MAX_DURATION_S:
        raise CliError(f"--duration-s must be within [0, {MAX_DURATION_S:g}]", EXIT_USAGE)
    if not 2 <= args.distance_cm <= 30:
        raise CliError("--distance-cm must be within [2, 30]", EXIT_USAGE)
    scenario = None
    if args.duration_s > 0:
        onset = args.leak_at_s
        if onset is not None and onset >= args.duration_s:
            raise CliError("--leak-at-s must be earlier than --duration-s", EXIT_USAGE)
        try:
            scenario = fe.Scenario(
                gas, args.distance_cm, args.duration_s, onset,
                leak_end_s=args.leak_end_s,
                plume_length_m=args.plume_length_m,
                noise_sigma=args.noise_sigma,
                diffusion_tau_s=args.diffusion_tau_s,
                receivers=args.receivers,
                seed=args.seed,
            )
        except (ConfigurationError, DomainError) as exc:
            raise CliError(str(exc), EXIT_USAGE) from exc
    try:
        out = open(args.out, "w", encoding="utf-8", newline="")
    except OSError as exc:
        raise CliError(f"cannot write {args.out}: {exc.strerror}", EXIT_DATA) from exc
    with out:
        stream = fe.acquire(scenario) if scenario is not None else iter(())
        rows = write_samples(out, stream)
    log.info("wrote %d rows to %s", rows, args.out)
    return EXIT_OK


# --- identify -------------------------------------------------------------


def _pipeline_config(args: argparse.Namespace) -> PipelineConfig:
    kw = {}
    if getattr(args, "threshold", None) is not None:
        kw["threshold"] = args.threshold
    if getattr(args, "distance_cm", None) is not None:
        kw["distance_cm"] = args.distance_cm
    try:
        return PipelineConfig(**kw)
    except ConfigurationError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc


def identify_blocks(
    blocks: list[fe.FrameBlock],
    db: gasdb.GasDatabase,
    cfg: PipelineConfig,
    onset: float | None = None,
    chunk: int = 8192,
) -> tuple[StreamProcessor, float, Exception | None]:
    """Average receivers and stream the result through the pipeline."""
    proc = StreamProcessor(db, cfg, onset)
    err = None
    t0 = time.perf_counter()
    try:
        if blocks:
            avg = fe.average_receivers(blocks)
            for i in range(0, len(avg), chunk):
                proc.push(avg.time[i : i + chunk], avg.v1[i : i + chunk], avg.v2[i : i + chunk])
                if proc.done:
                    break
        proc.finish()
    except (DataError, DomainError) as exc:
        err = exc
    return proc, time.perf_counter() - t0, err


def cmd_identify(args: argparse.Namespace) -> int:
    db = _load_db(args.db)
    cfg = _pipeline_config(args)
    try:
        blocks = read_samples(args.input)
    except CsvFormatError as exc:
        raise CliError(f"{args.input}: {exc}", EXIT_DATA) from exc
    except (OSError, UnicodeDecodeError) as exc:
        raise CliError(f"cannot read {args.input}: {exc}", EXIT_DATA) from exc
    proc, wall, err = identify_blocks(blocks, db, cfg, args.leak_at_s)
    n = len(blocks[0]) if blocks else 0
    rep = RunReport(
        scenario={
            "input": Path(args.input).name,
            "receivers": len(blocks),
            "frames": n,
            "duration_s": float(blocks[0].time[-1]) if n else 0.0,
            "onset_s": args.leak_at_s,
            "compensated_distance_cm": cfg.distance_cm,
        },
        event=proc.event,
        report=proc.report,
    )
    if proc.report is not None:
        z = proc.report.estimated_impedance
        rep.errors = {name: abs(z - za) / za for name, za in db.impedances().items()}
    if not args.no_wall_clock:
        rep.timing = {"wall_clock_s": wall, "frames_per_s": n / wall if wall > 0 else math.inf}
    if err is not None:
        rep.scenario["error"] = str(err).replace("\n", " ")
    sys.stdout.write(rep.to_text())
    if proc.event is None and proc.detect_index is None:
        return EXIT_NO_LEAK
    if proc.report is None or proc.report.matched_gas is None:
        return EXIT_UNIDENTIFIED
    return EXIT_OK


# --- sweep ----------------------------------------------------------------


def _sweep_one(job: tuple) -> dict:
    gas, distance, repeat, seed, sigma, duration, onset, receivers, compensate, db = job
    scenario = fe.Scenario(
        gas, distance, duration, onset, noise_sigma=sigma, receivers=receivers, seed=seed
    )
    cfg = PipelineConfig(distance_cm=distance if compensate else None)
    proc = StreamProcessor(db, cfg, onset)
    for blocks in fe.acquire(scenario):
        avg = fe.average_receivers(blocks)
        proc.push(avg.time, avg.v1, avg.v2)
        if proc.done:
            break
    try:
        _, report = proc.finish()
    except (DataError, DomainError):
        report = None
    actual = impedance(gas).impedance
    if report is None:
        z = math.nan
        match, flip, amp = None, None, math.nan
    else:
        z, match, flip, amp = (
            report.estimated_impedance, report.matched_gas, report.phase_flip, report.amplitude_estimate,
        )
    return {
        "gas": gas.name,
        "distance_cm": distance,
        "repeat": repeat,
        "seed": seed,
        "estimated_impedance": z,
        "actual_impedance": actual,
        "relative_error": abs(z - actual) / actual,
        "matched_gas": match if match is not None else "none",
        "phase_flip": flip,
        "amplitude_volts": amp,
    }


def sweep_rows(
    db: gasdb.GasDatabase,
    gases: list,
    distances: list[float],
    repeats: int,
    sigma: float,
    *,
    seed: int = 0,
    duration: float = 0.75,
    onset: float = 0.15,
    receivers: int = 4,
    compensate: bool = True,
    jobs: int = 1,
) -> pd.DataFrame:
    """One row per (gas, distance, repeat), in that nesting order."""
    jobs_list = []
    for gi, gas in enumerate(gases):
        for d in distances:
            for rep in range(repeats):
                s = int(np.random.SeedSequence([seed, gi, int(round(d * 1000)), rep]).generate_state(1)[0])
                jobs_list.append((gas, d, rep, s, sigma, duration, onset, receivers, compensate, db))
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            rows = list(ex.map(_sweep_one, jobs_list, chunksize=4))
    else:
        rows = [_sweep_one(j) for j in jobs_list]
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)


def _float_list(text: str) -> list[float]:
    out: list[float] = []
    for part in text.split(","):
        part = part.strip()
        if ":" in part:
            lo, hi, step = (float(x) for x in part.split(":"))
            out += list(np.arange(lo, hi + step / 2, step).round(6))
        elif part:
            out.append(float(part))
    return out


def cmd_sweep(args: argparse.Namespace) -> int:
    db = _load_db(args.db)
    gases = [_gas(db, g) for g in args.gases.split(",")] if args.gases else list(db)
    try:
        distances = _float_list(args.distances)
    except ValueError as exc:
        raise CliError(f"bad --distances: {exc}", EXIT_USAGE) from exc
    if not distances or any(not 2 <= d <= 30 for d in distances):
        raise CliError("--distances must lie within [2, 30] cm", EXIT_USAGE)
    if args.repeats < 1 or args.noise_sigma < 0:
        raise CliError("--repeats must be >= 1 and --noise-sigma >= 0", EXIT_USAGE)
    try:
        rows = sweep_rows(
            db, gases, distances, args.repeats, args.noise_sigma, seed=args.seed,
            duration=args.duration_s, onset=args.leak_at_s, receivers=args.receivers,
            compensate=not args.no_compensate, jobs=args.jobs,
        )
    except (ConfigurationError, DomainError) as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    summary = summarize_sweep(rows)
    try:
        if args.out:
            rows.to_csv(args.out, index=False, float_format="%.6f")
        if args.summary:
            summary.to_csv(args.summary, index=False, float_format="%.6f")
    except OSError as exc:
        raise CliError(f"cannot write output: {exc.strerror}", EXIT_DATA) from exc
    if not args.out:
        sys.stdout.write(rows.to_csv(index=False, float_format="%.6f", lineterminator="\n"))
    order = summary.sort_values("mean_relative_error")["gas"].tolist()
    log.info("per-gas mean relative error, low to high: %s", " < ".join(order))
    if args.out:
        sys.stdout.write(summary.to_csv(index=False, float_format="%.6f", lineterminator="\n"))
    return EXIT_OK


# --- table ----------------------------------------------------------------


TABLE_COLUMNS = [
    "gas", "speed_m_s", "density_kg_m3", "actual_impedance",
    "v1_model_volts", "v1_measured_volts", "calc_impedance",
]


def table_rows(db: gasdb.GasDatabase, a0: float = fe.DEFAULT_A0, air: float = AIR_IMPEDANCE) -> list[dict]:
    """Impedance table; ``calc_impedance`` inverts the measured V1 when one exists."""
    rows = []
    for gas in db:
        z = impedance(gas).impedance
        refl = reflect(Medium(air), Medium(z))
        v1_model = a0 * abs(refl.amplitude_coeff)
        measured = gasdb.MEASURED_V1.get(gas.name.lower())
        v1 = measured if measured is not None else v1_model
        calc = invert_impedance(v1 / a0, refl.phase_flip, Medium(air)).impedance
        rows.append(
            {
                "gas": gas.name,
                "speed_m_s": gas.speed_of_sound,
                "density_kg_m3": gas.density,
                "actual_impedance": z,
                "v1_model_volts": v1_model,
                "v1_measured_volts": measured,
                "calc_impedance": calc,
            }
        )
    return rows


def cmd_table(args: argparse.Namespace) -> int:
    db = _load_db(args.db)
    print(",".join(TABLE_COLUMNS))
    for r in table_rows(db, args.a0):
        measured = "" if r["v1_measured_volts"] is None else f"{r['v1_measured_volts']:.2f}"
        print(
            f"{r['gas']},{r['speed_m_s']:g},{r['density_kg_m3']:g},{r['actual_impedance']:.2f},"
            f"{r['v1_model_volts']:.3f},{measured},{r['calc_impedance']:.3f}"
        )
    return EXIT_OK


# --- entry point ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="echosense", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def db_opt(sp):
        sp.add_argument("--db", help="gas database file (default: $ECHOSENSE_DB or bundled table)")

    s = sub.add_parser("simulate", help="simulate a leak and write the sample CSV")
    s.add_argument("--gas", required=True)
    s.add_argument("--distance-cm", type=float, required=True)
    s.add_argument("--duration-s", type=float, required=True)
    s.add_argument("--leak-at-s", type=float, default=None, help="leak onset; omit for a no-leak run")
    s.add_argument("--leak-end-s", type=float, default=None)
    s.add_argument("--noise-sigma", type=float, default=0.0)
    s.add_argument("--plume-length-m", type=float, default=0.0)
    s.add_argument("--diffusion-tau-s", type=float, default=math.inf)
    s.add_argument("--receivers", type=int, default=4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    db_opt(s)
    s.set_defaults(func=cmd_simulate)

    i = sub.add_parser("identify", help="detect and identify a leak in a sample CSV")
    i.add_argument("input")
    i.add_argument("--leak-at-s", type=float, default=None, help="known onset, for latency")
    i.add_argument("--distance-cm", type=float, default=None, help="compensate propagation loss")
    i.add_argument("--threshold", type=float, default=None)
    i.add_argument("--no-wall-clock", action="store_true", help="omit timing lines")
    db_opt(i)
    i.set_defaults(func=cmd_identify)

    w = sub.add_parser("sweep", help="impedance error over gases x distances x repeats")
    w.add_argument("--gases", default=None, help="comma list (default: whole database)")
    w.add_argument("--distances", default="2:30:2", help="list or lo:hi:step in cm")
    w.add_argument("--repeats", type=int, default=3)
    w.add_argument("--noise-sigma", type=float, default=0.0)
    w.add_argument("--duration-s", type=float, default=0.75)
    w.add_argument("--leak-at-s", type=float, default=0.15)
    w.add_argument("--receivers", type=int, default=4)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--no-compensate", action="store_true", help="ignore propagation loss")
    w.add_argument("--jobs", type=int, default=1)
    w.add_argument("--out", default=None, help="row CSV (default: stdout)")
    w.add_argument("--summary", default=None, help="per-gas mean error CSV")
    db_opt(w)
    w.set_defaults(func=cmd_sweep)

    t = sub.add_parser("table", help="reference impedance table")
    t.add_argument("--a0", type=float, default=fe.DEFAULT_A0)
    db_opt(t)
    t.set_defaults(func=cmd_table)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"echosense: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
