"""Reference gas database: load, validate, serialize, nearest-match."""

from __future__ import annotations

import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .acoustics import DomainError, Gas, impedance
from .errors import ConfigurationError

HEADER = ("name", "density_kg_m3", "speed_m_s")
ENV_VAR = "ECHOSENSE_DB"

# two entries closer than this (relative) cannot be told apart by impedance
MIN_SEPARATION = 0.01

# Averaged V1 amplitudes (volts) recorded on the bench for the bundled gases.
MEASURED_V1 = {"hydrogen": 2.78, "helium": 1.93, "argon": 0.79, "butane": 0.38}


class GasDbError(ConfigurationError):
    """Invalid database content. ``lineno`` is 1-based when known."""

    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class GasDatabase:
    entries: tuple[Gas, ...]

    def __post_init__(self) -> None:
        if not self.entries:
            raise GasDbError("database is empty")
        seen: set[str] = set()
        for gas in self.entries:
            key = gas.name.lower()
            if key in seen:
                raise GasDbError(f"duplicate gas name {gas.name!r}")
            seen.add(key)
        by_z = sorted(self.entries, key=lambda g: impedance(g).impedance)
        for lo, hi in zip(by_z, by_z[1:]):
            z_lo, z_hi = impedance(lo).impedance, impedance(hi).impedance
            if (z_hi - z_lo) / z_lo <= MIN_SEPARATION:
                raise GasDbError(
                    f"{lo.name!r} ({z_lo:.2f}) and {hi.name!r} ({z_hi:.2f}) have "
                    f"impedances within {MIN_SEPARATION:.0%}; identification is ill-posed"
                )

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def get(self, name: str) -> Gas:
        key = name.strip().lower()
        for gas in self.entries:
            if gas.name.lower() == key:
                return gas
        raise KeyError(name)

    def __contains__(self, name: object) -> bool:
        if not isinstance(name, str):
            return False
        try:
            self.get(name)
        except KeyError:
            return False
        return True

    def impedances(self) -> dict[str, float]:
        return {g.name: impedance(g).impedance for g in self.entries}


def loads(text: str) -> GasDatabase:
    """Parse database text (``name,density_kg_m3,speed_m_s`` records)."""
    header_seen = False
    entries: list[Gas] = []
    names: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = [f.strip() for f in line.split(",")]
        if not header_seen:
            if tuple(f.lower() for f in fields) != HEADER:
                raise GasDbError(f"expected header {','.join(HEADER)!r}, got {line!r}", lineno)
            header_seen = True
            continue
        if len(fields) != 3:
            raise GasDbError(f"expected 3 fields, got {len(fields)}", lineno)
        name, density, speed = fields
        try:
            gas = Gas(name, float(density), float(speed))
        except ValueError as exc:  # float() failures and DomainError
            raise GasDbError(str(exc), lineno) from exc
        key = name.lower()
        if key in names:
            raise GasDbError(f"duplicate gas name {name!r} (first on line {names[key]})", lineno)
        names[key] = lineno
        entries.append(gas)
    if not header_seen:
        raise GasDbError("database is empty")
    return GasDatabase(tuple(entries))


def dumps(db: GasDatabase) -> str:
    lines = [",".join(HEADER)]
    lines += [f"{g.name},{g.density!r},{g.speed_of_sound!r}" for g in db.entries]
    return "\n".join(lines) + "\n"


def load(source: str | os.PathLike | None = None) -> GasDatabase:
    """Load a database file; ``None`` means ``$ECHOSENSE_DB`` or the bundled table."""
    if source is None:
        source = os.environ.get(ENV_VAR) or None
    if source is None:
        text = resources.files("echosense").joinpath("data/gases.csv").read_text("utf-8")
    else:
        try:
            text = Path(source).read_text(encoding="utf-8")
        except OSError as exc:
            raise GasDbError(f"cannot read {source}: {exc.strerror}") from exc
    return loads(text)


def nearest(db: GasDatabase, z: float) -> tuple[Gas, float]:
    """Entry with the smallest relative impedance error; ties go to the lexically first name."""
    if z <= 0:
        raise DomainError("impedance must be > 0")
    best = min(
        db.entries,
        key=lambda g: (abs(z - impedance(g).impedance) / impedance(g).impedance, g.name),
    )
    z_ref = impedance(best).impedance
    return best, abs(z - z_ref) / z_ref
