"""Software twin of a 40 kHz ultrasonic reflection gas-leak detector."""

from .acoustics import (
    AIR,
    AIR_IMPEDANCE,
    DomainError,
    Gas,
    Medium,
    ReflectionResult,
    attenuation_offset,
    impedance,
    invert_impedance,
    reflect,
)

__version__ = "0.1.0"

__all__ = [
    "AIR",
    "AIR_IMPEDANCE",
    "DomainError",
    "Gas",
    "Medium",
    "ReflectionResult",
    "attenuation_offset",
    "impedance",
    "invert_impedance",
    "reflect",
]
