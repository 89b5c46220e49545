"""Analog acquisition chain of the reflection sensor.

A 40 kHz square drive excites the transmitter; each receiver picks up the
echo from the leak plume. Per receiver the chain is

    band-pass -> half-wave rectifier -> low-pass envelope   => V1 (amplitude)
    band-pass -> comparator -> XOR with reference -> mean    => V2 (phase)

and both lines are digitized by a 10-bit ADC at 80 kHz. The analog part is
simulated at ``INTERNAL_RATE`` and streamed in blocks so long scenarios run
in bounded memory.

The XOR reference is the drive delayed by the air round trip to the
configured range, so an echo that is not inverted reads as zero phase.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np
from scipy import signal

from . import kernels
from .acoustics import (
    AIR,
    SPEED_OF_SOUND_AIR,
    Gas,
    Medium,
    attenuation_offset,
    impedance,
    reflect,
)
from .errors import ConfigurationError, DataError

CARRIER_HZ = 40_000.0
# 25.6 samples per carrier period: edge alignment cycles through five
# positions, which keeps the XOR duty unbiased (an integer period would not).
INTERNAL_RATE = 1_024_000.0
LOGIC_HIGH = 5.0
DEFAULT_A0 = 5.0
TRANSDUCER_BANDWIDTH_HZ = 2_000.0
ENVELOPE_TAU = 10.0 / CARRIER_HZ
INTEGRATOR_WINDOW = 10.0 / CARRIER_HZ
# mean of a half-wave rectified sine is A/pi
ENVELOPE_GAIN = math.pi
BACKGROUND_V = 0.005
AVERAGED = -1

_BLOCK = 1 << 17


@dataclass
class Waveform:
    sample_rate: float
    samples: np.ndarray

    def __post_init__(self) -> None:
        self.sample_rate = float(self.sample_rate)
        if not self.sample_rate > 0:
            raise ConfigurationError("sample_rate must be > 0")
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DataError("waveform samples must be one-dimensional")
        if not np.all(np.isfinite(self.samples)):
            raise DataError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def times(self) -> np.ndarray:
        return np.arange(len(self)) / self.sample_rate


@dataclass(frozen=True)
class AdcConfig:
    bits: int = 10
    vref: float = 5.0
    sample_rate: float = 80_000.0

    def __post_init__(self) -> None:
        if int(self.bits) != self.bits or not 8 <= self.bits <= 16:
            raise ConfigurationError(f"ADC bits must be an integer in [8, 16], got {self.bits}")
        if not self.vref > 0:
            raise ConfigurationError("vref must be > 0")
        if not self.sample_rate >= 2 * CARRIER_HZ:
            raise ConfigurationError(
                f"ADC rate {self.sample_rate} Hz is below Nyquist for the {CARRIER_HZ:.0f} Hz carrier"
            )

    @property
    def lsb(self) -> float:
        return self.vref / 2**self.bits

    @property
    def max_code(self) -> int:
        return 2**self.bits - 1


class SampleFrame(NamedTuple):
    time: float
    receiver_id: int
    v1: float
    v2: float


@dataclass
class FrameBlock:
    """Contiguous digitized frames of one receiver (or of the receiver average)."""

    time: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    receiver_id: int = AVERAGED

    def __post_init__(self) -> None:
        self.time = np.asarray(self.time, dtype=np.float64)
        self.v1 = np.asarray(self.v1, dtype=np.float64)
        self.v2 = np.asarray(self.v2, dtype=np.float64)
        if not (self.time.shape == self.v1.shape == self.v2.shape):
            raise DataError("time, v1 and v2 must have equal length")

    def __len__(self) -> int:
        return self.time.shape[0]

    def frames(self) -> Iterator[SampleFrame]:
        rid = int(self.receiver_id)
        for t, a, b in zip(self.time.tolist(), self.v1.tolist(), self.v2.tolist()):
            yield SampleFrame(t, rid, a, b)

    @classmethod
    def concat(cls, blocks: Sequence["FrameBlock"]) -> "FrameBlock":
        if not blocks:
            return cls(np.empty(0), np.empty(0), np.empty(0))
        return cls(
            np.concatenate([b.time for b in blocks]),
            np.concatenate([b.v1 for b in blocks]),
            np.concatenate([b.v2 for b in blocks]),
            blocks[0].receiver_id,
        )


@dataclass(frozen=True)
class Scenario:
    """One simulated leak experiment.

    ``leak_onset_s=None`` describes a run with no leak at all. After onset
    the echo decays from its full value toward ``diffusion_floor`` of it
    with time constant ``diffusion_tau_s`` (infinite: no decay).
    """

    gas: Gas
    distance_cm: float
    duration_s: float
    leak_onset_s: float | None
    leak_end_s: float | None = None
    plume_length_m: float = 0.0
    noise_sigma: float = 0.0
    diffusion_tau_s: float = math.inf
    diffusion_floor: float = 0.5
    receivers: int = 4
    seed: int = 0
    background_v: float = BACKGROUND_V

    def __post_init__(self) -> None:
        if not 2.0 <= self.distance_cm <= 30.0:
            raise ConfigurationError(f"distance must be within [2, 30] cm, got {self.distance_cm}")
        if not self.duration_s > 0:
            raise ConfigurationError("duration must be > 0")
        if self.leak_onset_s is not None and not 0 <= self.leak_onset_s < self.duration_s:
            raise ConfigurationError("leak onset must satisfy 0 <= onset < duration")
        if self.leak_end_s is not None:
            if self.leak_onset_s is None or self.leak_end_s <= self.leak_onset_s:
                raise ConfigurationError("leak end must come after the onset")
        if self.noise_sigma < 0 or self.background_v < 0 or self.plume_length_m < 0:
            raise ConfigurationError("noise, background and plume length must be >= 0")
        if not self.diffusion_tau_s > 0:
            raise ConfigurationError("diffusion tau must be > 0")
        if not 0 <= self.diffusion_floor <= 1:
            raise ConfigurationError("diffusion floor must be in [0, 1]")
        if int(self.receivers) != self.receivers or self.receivers < 1:
            raise ConfigurationError("need at least one receiver")


# --- drive and echo -------------------------------------------------------


def _square_bits(n0: int, n: int, rate: float, frequency: float, delay: float) -> np.ndarray:
    u = (n0 + np.arange(n)) * (frequency / rate) - frequency * delay
    return (np.mod(u, 1.0) < 0.5).astype(np.uint8)


def synth_tx(
    frequency: float = CARRIER_HZ,
    duration: float = 1e-3,
    internal_rate: float = INTERNAL_RATE,
    delay: float = 0.0,
) -> Waveform:
    """0/5 V, 50 % duty square drive, high during the first half period.

    ``delay`` shifts the wave later in time (used for the XOR reference).
    """
    if frequency <= 0 or duration < 0:
        raise ConfigurationError("frequency must be > 0 and duration >= 0")
    if internal_rate < 10 * frequency:
        raise ConfigurationError(
            f"internal rate {internal_rate} Hz undersamples a {frequency} Hz square (need >= 10x)"
        )
    n = int(round(duration * internal_rate))
    return Waveform(internal_rate, LOGIC_HIGH * _square_bits(0, n, internal_rate, frequency, delay))


def path_delay(distance_cm: float, speed: float = SPEED_OF_SOUND_AIR) -> float:
    """Round-trip travel time to a reflector ``distance_cm`` away."""
    return 2.0 * distance_cm / 100.0 / speed


@dataclass(frozen=True)
class EchoModel:
    amplitude: float
    phase: float
    flip: bool


def echo_model(
    scenario: Scenario,
    air: Medium = AIR,
    a0: float = DEFAULT_A0,
    air_speed: float = SPEED_OF_SOUND_AIR,
    frequency: float = CARRIER_HZ,
) -> EchoModel:
    """Steady echo amplitude and phase (relative to the range-gated reference)."""
    refl = reflect(air, impedance(scenario.gas))
    amp = max(a0 * abs(refl.amplitude_coeff) - attenuation_offset(scenario.distance_cm), 0.0)
    plume = (
        2.0 * math.pi * frequency * scenario.plume_length_m
        * (1.0 / scenario.gas.speed_of_sound - 1.0 / air_speed)
    )
    return EchoModel(amp, math.pi * refl.phase_flip + plume, refl.phase_flip)


class ReceiverModel:
    """Generates the received pressure signal (volts) for one receiver."""

    def __init__(
        self,
        scenario: Scenario,
        *,
        air: Medium = AIR,
        a0: float = DEFAULT_A0,
        internal_rate: float = INTERNAL_RATE,
        frequency: float = CARRIER_HZ,
    ):
        self.scenario = scenario
        self.rate = float(internal_rate)
        self.frequency = float(frequency)
        self.delay = path_delay(scenario.distance_cm)
        self.echo = echo_model(scenario, air, a0, frequency=frequency)

    def envelope(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        sc = self.scenario
        amp = np.full(t.shape, sc.background_v)
        phase = np.zeros(t.shape)
        if sc.leak_onset_s is None:
            return amp, phase
        end = math.inf if sc.leak_end_s is None else sc.leak_end_s
        leak = (t >= sc.leak_onset_s) & (t < end)
        if not leak.any():
            return amp, phase
        a = np.full(int(leak.sum()), self.echo.amplitude)
        if math.isfinite(sc.diffusion_tau_s):
            age = t[leak] - sc.leak_onset_s
            f = sc.diffusion_floor
            a *= f + (1.0 - f) * np.exp(-age / sc.diffusion_tau_s)
        amp[leak] = a
        phase[leak] = self.echo.phase
        return amp, phase

    def block(self, n0: int, n: int, rng: np.random.Generator | None) -> np.ndarray:
        idx = n0 + np.arange(n)
        amp, phase = self.envelope(idx / self.rate)
        u = idx * (self.frequency / self.rate) - self.frequency * self.delay
        x = amp * np.sin(2.0 * math.pi * u + phase)
        if self.scenario.noise_sigma > 0:
            x += self.scenario.noise_sigma * rng.standard_normal(n)
        return x

    def reference(self, n0: int, n: int) -> np.ndarray:
        return _square_bits(n0, n, self.rate, self.frequency, self.delay)


def _receiver_rngs(scenario: Scenario) -> list[np.random.Generator]:
    seqs = np.random.SeedSequence(scenario.seed).spawn(scenario.receivers)
    return [np.random.default_rng(s) for s in seqs]


def synth_received(
    scenario: Scenario,
    *,
    air: Medium = AIR,
    a0: float = DEFAULT_A0,
    internal_rate: float = INTERNAL_RATE,
) -> list[Waveform]:
    """Whole received waveform of every receiver (fine for short scenarios)."""
    model = ReceiverModel(scenario, air=air, a0=a0, internal_rate=internal_rate)
    n = int(round(scenario.duration_s * internal_rate))
    return [Waveform(internal_rate, model.block(0, n, rng)) for rng in _receiver_rngs(scenario)]


# --- analog stages --------------------------------------------------------


def bandpass_sos(sample_rate: float, center: float = CARRIER_HZ, bandwidth: float = TRANSDUCER_BANDWIDTH_HZ):
    if bandwidth <= 0 or center <= 0 or bandwidth >= 2 * center:
        raise ConfigurationError(f"invalid band: center {center} Hz, bandwidth {bandwidth} Hz")
    if sample_rate < 2 * (center + bandwidth):
        raise ConfigurationError("sample rate too low for the requested band")
    # edges placed so their geometric mean is the centre (zero phase there)
    lo = math.sqrt(center**2 + bandwidth**2 / 4) - bandwidth / 2
    return signal.butter(1, [lo, lo + bandwidth], btype="bandpass", fs=sample_rate, output="sos")


def bandpass(w: Waveform, center: float = CARRIER_HZ, bandwidth: float = TRANSDUCER_BANDWIDTH_HZ) -> Waveform:
    """Two-pole resonator matching the transducer passband."""
    sos = bandpass_sos(w.sample_rate, center, bandwidth)
    return Waveform(w.sample_rate, signal.sosfilt(sos, w.samples))


def half_wave_rectify(w: Waveform) -> Waveform:
    return Waveform(w.sample_rate, np.maximum(w.samples, 0.0))


def _envelope_alpha(sample_rate: float, time_constant: float) -> float:
    return -math.expm1(-1.0 / (sample_rate * time_constant))


def envelope_detect(w: Waveform, time_constant: float = ENVELOPE_TAU, carrier: float = CARRIER_HZ) -> Waveform:
    """Rectify, one-pole low-pass, and rescale so a steady sine reads its peak."""
    if time_constant < 2.0 / carrier:
        raise ConfigurationError("envelope time constant must span at least two carrier periods")
    y, _ = kernels.envelope_follow(w.samples, _envelope_alpha(w.sample_rate, time_constant), 0.0)
    return Waveform(w.sample_rate, ENVELOPE_GAIN * y)


def comparator(w: Waveform, threshold: float = 0.0) -> Waveform:
    return Waveform(w.sample_rate, np.where(w.samples > threshold, LOGIC_HIGH, 0.0))


def xor_phase(tx_sq: Waveform, rx_sq: Waveform) -> Waveform:
    if tx_sq.sample_rate != rx_sq.sample_rate:
        raise ConfigurationError("XOR inputs must share one sample rate")
    if len(tx_sq) != len(rx_sq):
        raise DataError("XOR inputs must have equal length")
    hi = LOGIC_HIGH / 2
    return Waveform(tx_sq.sample_rate, LOGIC_HIGH * ((tx_sq.samples > hi) ^ (rx_sq.samples > hi)))


def integrate_mean(w: Waveform, window: float = INTEGRATOR_WINDOW, carrier: float = CARRIER_HZ) -> Waveform:
    """Causal running mean over ``window`` seconds, starting from rest."""
    if window < 5.0 / carrier:
        raise ConfigurationError("integrator window must span at least five carrier periods")
    n = max(int(round(window * w.sample_rate)), 1)
    csum = np.concatenate((np.zeros(n + 1), np.cumsum(w.samples)))
    return Waveform(w.sample_rate, (csum[n + 1 :] - csum[1 : len(w) + 1]) / n)


def quantize(values: np.ndarray, cfg: AdcConfig) -> np.ndarray:
    """Clamp to [0, vref] and round to the nearest ADC level (returned in volts)."""
    codes = np.floor(np.asarray(values, dtype=np.float64) / cfg.lsb + 0.5)
    return np.clip(codes, 0, cfg.max_code) * cfg.lsb


def resample_times(n_in: int, in_rate: float, out_rate: float) -> np.ndarray:
    count = int(math.floor((n_in - 1) * out_rate / in_rate + 1e-9)) + 1 if n_in else 0
    return np.arange(count) / out_rate


def adc_quantize(w: Waveform, cfg: AdcConfig = AdcConfig(), aperture: bool = False) -> np.ndarray:
    """Sample ``w`` at the ADC clock and quantize.

    With ``aperture`` the input is first averaged over each conversion
    interval; otherwise it is sampled instantaneously (linear interpolation).
    """
    x = w.samples
    if aperture:
        x = signal.lfilter(aperture_taps(w.sample_rate / cfg.sample_rate), [1.0], x)
    t = resample_times(len(w), w.sample_rate, cfg.sample_rate)
    return quantize(np.interp(t * w.sample_rate, np.arange(len(w)), x), cfg)


def average_receivers(streams: Sequence[FrameBlock]) -> FrameBlock:
    """Per-instant mean of V1 and V2 across time-aligned receiver streams."""
    if not streams:
        raise DataError("no receiver streams to average")
    n = len(streams[0])
    if any(len(s) != n for s in streams):
        raise DataError("receiver streams differ in length")
    t = streams[0].time
    if any(not np.array_equal(s.time, t) for s in streams[1:]):
        raise DataError("receiver streams are not time-aligned")
    v1 = np.mean([s.v1 for s in streams], axis=0)
    v2 = np.mean([s.v2 for s in streams], axis=0)
    return FrameBlock(t.copy(), v1, v2, AVERAGED)


# --- streaming acquisition -----------------------------------------------


def aperture_taps(ratio: float) -> np.ndarray:
    """Boxcar spanning one ADC conversion interval of ``ratio`` input samples.

    Averaging over the interval nulls the envelope ripple harmonic at the
    ADC rate, which would otherwise alias to a DC bias.
    """
    full = int(math.floor(ratio))
    edge = (ratio - full) / 2
    return np.concatenate(([edge], np.ones(full), [edge])) / ratio


@dataclass
class _ChainState:
    zi: np.ndarray
    ring: np.ndarray
    zi_ap: np.ndarray
    env: float = 0.0
    pos: int = 0
    count: int = 0
    prev: tuple[float, float] | None = None
    next_k: int = 0


@dataclass
class AcquisitionChain:
    """Streaming band-pass/envelope/XOR chain and ADC for one receiver."""

    internal_rate: float = INTERNAL_RATE
    adc: AdcConfig = field(default_factory=AdcConfig)
    envelope_tau: float = ENVELOPE_TAU
    integrator_window: float = INTEGRATOR_WINDOW

    def __post_init__(self) -> None:
        self.sos = bandpass_sos(self.internal_rate)
        self.alpha = _envelope_alpha(self.internal_rate, self.envelope_tau)
        self.window = max(int(round(self.integrator_window * self.internal_rate)), 1)
        self.ratio = self.internal_rate / self.adc.sample_rate
        self.aperture = aperture_taps(self.ratio)
        self.reset()

    def reset(self) -> None:
        self.state = _ChainState(
            zi=np.zeros((self.sos.shape[0], 2)),
            ring=np.zeros(self.window, dtype=np.uint8),
            zi_ap=np.zeros((2, self.aperture.size - 1)),
        )

    def analog(self, rx: np.ndarray, ref: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        st = self.state
        bp, st.zi = signal.sosfilt(self.sos, rx, zi=st.zi)
        env, st.env = kernels.envelope_follow(bp, self.alpha, st.env)
        frac, st.pos, st.count = kernels.xor_integrate(bp, ref, 0.0, st.ring, st.pos, st.count)
        lines = np.vstack((ENVELOPE_GAIN * env, LOGIC_HIGH * frac))
        lines, st.zi_ap = signal.lfilter(self.aperture, [1.0], lines, axis=1, zi=st.zi_ap)
        return lines[0], lines[1]

    def process(self, n0: int, rx: np.ndarray, ref: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Run ``rx`` (internal samples ``n0..``) through the chain; return ADC frames."""
        st = self.state
        v1, v2 = self.analog(rx, ref)
        base = n0
        if st.prev is not None:
            v1 = np.concatenate(([st.prev[0]], v1))
            v2 = np.concatenate(([st.prev[1]], v2))
            base = n0 - 1
        if v1.size == 0:
            return np.empty(0), np.empty(0), np.empty(0)
        last = base + v1.size - 1
        k_end = int(math.floor(last / self.ratio + 1e-9)) + 1
        ks = np.arange(st.next_k, k_end)
        pos = ks * self.ratio - base
        grid = np.arange(v1.size)
        s1 = quantize(np.interp(pos, grid, v1), self.adc)
        s2 = quantize(np.interp(pos, grid, v2), self.adc)
        st.prev = (float(v1[-1]), float(v2[-1]))
        st.next_k = k_end
        return ks / self.adc.sample_rate, s1, s2


def acquire(
    scenario: Scenario,
    adc: AdcConfig = AdcConfig(),
    *,
    air: Medium = AIR,
    a0: float = DEFAULT_A0,
    internal_rate: float = INTERNAL_RATE,
    block: int = _BLOCK,
) -> Iterator[list[FrameBlock]]:
    """Stream digitized frames, one list of per-receiver blocks per time block.

    Output is a pure function of the scenario (including its seed).
    """
    model = ReceiverModel(scenario, air=air, a0=a0, internal_rate=internal_rate)
    total = int(round(scenario.duration_s * internal_rate))
    noisy = scenario.noise_sigma > 0
    n_chains = scenario.receivers if noisy else 1
    chains = [AcquisitionChain(internal_rate, adc) for _ in range(n_chains)]
    rngs = _receiver_rngs(scenario) if noisy else [None]
    for n0 in range(0, total, block):
        n = min(block, total - n0)
        ref = model.reference(n0, n)
        out = []
        for chain, rng in zip(chains, rngs):
            out.append(chain.process(n0, model.block(n0, n, rng), ref))
        if not noisy:
            out = out * scenario.receivers
        yield [FrameBlock(t, a, b, rid) for rid, (t, a, b) in enumerate(out)]


def simulate(scenario: Scenario, adc: AdcConfig = AdcConfig(), **kwargs) -> list[FrameBlock]:
    """Run a whole scenario; returns one frame stream per receiver."""
    per_rx: list[list[FrameBlock]] = [[] for _ in range(scenario.receivers)]
    for blocks in acquire(scenario, adc, **kwargs):
        for rid, b in enumerate(blocks):
            per_rx[rid].append(b)
    return [FrameBlock.concat(bs) for bs in per_rx]
