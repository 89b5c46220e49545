"""Plane-wave reflection physics for a gas/air interface.

All functions are pure and operate on scalars. Impedances are in
kg m^-2 s^-1 (rayl), distances in centimetres where stated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

AIR_IMPEDANCE = 415.0
SPEED_OF_SOUND_AIR = 343.0

# received-amplitude loss at 30 cm; scaled linearly with range
ATTENUATION_AT_30CM = 0.02
MAX_ATTENUATION_RANGE_CM = 100.0


class DomainError(ValueError):
    """A physical quantity is outside the domain where the model is defined."""


def _positive(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value) or value <= 0.0:
        raise DomainError(f"{name} must be finite and > 0, got {value!r}")
    return value


@dataclass(frozen=True)
class Gas:
    name: str
    density: float
    speed_of_sound: float

    def __post_init__(self) -> None:
        if not self.name or not self.name.strip():
            raise DomainError("gas name must be non-empty")
        object.__setattr__(self, "density", _positive("density", self.density))
        object.__setattr__(
            self, "speed_of_sound", _positive("speed_of_sound", self.speed_of_sound)
        )

    @property
    def impedance(self) -> float:
        return self.density * self.speed_of_sound


@dataclass(frozen=True)
class Medium:
    impedance: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "impedance", _positive("impedance", self.impedance))


AIR = Medium(AIR_IMPEDANCE)


@dataclass(frozen=True)
class ReflectionResult:
    """Reflection at a planar interface.

    Attributes:
        intensity_coeff: reflected/incident intensity, in [0, 1).
        amplitude_coeff: signed pressure-amplitude coefficient, in (-1, 1).
        phase_flip: True when the echo is inverted (transmitted side is softer).
    """

    intensity_coeff: float
    amplitude_coeff: float
    phase_flip: bool


def impedance(gas: Gas) -> Medium:
    """Characteristic acoustic impedance ``density * speed_of_sound``."""
    return Medium(_positive("density", gas.density) * _positive("speed", gas.speed_of_sound))


def reflect(incident: Medium, transmitted: Medium) -> ReflectionResult:
    """Reflection of a wave travelling in ``incident`` off ``transmitted``.

    The pressure convention ``r = (Z2 - Z1) / (Z2 + Z1)`` is used, so a
    negative coefficient (a 180 degree inversion) means the wave went from
    a high to a low impedance medium.
    """
    z1 = _positive("incident impedance", incident.impedance)
    z2 = _positive("transmitted impedance", transmitted.impedance)
    r = (z2 - z1) / (z2 + z1)
    return ReflectionResult(intensity_coeff=r * r, amplitude_coeff=r, phase_flip=r < 0.0)


def invert_impedance(amplitude_magnitude: float, flip: bool, reference: Medium) -> Medium:
    """Recover the far-side impedance from ``|r|`` and the phase flag.

    ``R = r**2`` has one root on each side of the reference impedance; the
    flip flag picks the softer (flip) or harder (no flip) branch.
    """
    m = float(amplitude_magnitude)
    if not math.isfinite(m) or m < 0.0:
        raise DomainError(f"|r| must be finite and >= 0, got {m!r}")
    if m >= 1.0:
        raise DomainError("|r| >= 1 is total reflection; no finite impedance")
    z1 = _positive("reference impedance", reference.impedance)
    if flip:
        return Medium(z1 * (1.0 - m) / (1.0 + m))
    return Medium(z1 * (1.0 + m) / (1.0 - m))


def attenuation_offset(distance_cm: float) -> float:
    """Amplitude lost to propagation in air over ``distance_cm`` (volts)."""
    d = float(distance_cm)
    if not math.isfinite(d) or d < 0.0:
        raise DomainError(f"distance must be >= 0 cm, got {d!r}")
    if d > MAX_ATTENUATION_RANGE_CM:
        raise DomainError(f"attenuation model is only defined up to {MAX_ATTENUATION_RANGE_CM} cm")
    return ATTENUATION_AT_30CM / 30.0 * d
