"""Digital detection and identification stage.

Operates on the receiver-averaged frame stream: Gaussian smoothing, leak
detection by threshold, amplitude estimation around the post-onset maximum,
phase-flip decision from V2, impedance inversion and gas matching.

:class:`StreamProcessor` does the same work incrementally, frame block by
frame block, and produces results identical to the offline functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from . import kernels
from .acoustics import Medium, attenuation_offset, invert_impedance
from .errors import ConfigurationError, DataError, DomainError, SaturationError
from .frontend import FrameBlock, SampleFrame
from .gasdb import GasDatabase, nearest


@dataclass(frozen=True)
class PipelineConfig:
    """Tuning of the digital stage. Windows are in frames, spans in seconds."""

    threshold: float = 0.1
    smoothing_window: int = 51
    smoothing_sigma: float | None = None
    maxima_window: int = 4001
    a0: float = 5.0
    air_impedance: float = 415.0
    identify_budget: float = 0.8
    frame_rate: float = 80_000.0
    vref: float = 5.0
    search_span: float = 0.5
    settle: float = 0.005
    baseline_span: float = 0.1
    baseline_guard: float = 0.005
    match_cutoff: float = 0.25
    # range to the leak; when set the propagation loss is added back
    distance_cm: float | None = None

    def __post_init__(self) -> None:
        if not self.threshold > 0:
            raise ConfigurationError("threshold must be > 0")
        for name in ("smoothing_window", "maxima_window"):
            w = getattr(self, name)
            if int(w) != w or w < 3 or w % 2 == 0:
                raise ConfigurationError(f"{name} must be an odd integer >= 3, got {w}")
        if self.smoothing_sigma is not None and not self.smoothing_sigma > 0:
            raise ConfigurationError("smoothing_sigma must be > 0")
        if not (self.a0 > 0 and self.air_impedance > 0 and self.frame_rate > 0 and self.vref > 0):
            raise ConfigurationError("a0, air impedance, frame rate and vref must be > 0")
        if min(self.search_span, self.settle, self.baseline_span, self.baseline_guard) < 0:
            raise ConfigurationError("spans must be >= 0")

    @property
    def sigma(self) -> float:
        if self.smoothing_sigma is not None:
            return float(self.smoothing_sigma)
        return (self.smoothing_window - 1) / 5.0

    def frames(self, seconds: float) -> int:
        return int(round(seconds * self.frame_rate))


@dataclass(frozen=True)
class DetectionEvent:
    """First threshold crossing of the smoothed V1.

    ``detect_time`` is the timestamp of the crossing sample; ``decision_time``
    is when a causal smoother has that sample available (half a window later).
    """

    detect_time: float
    latency_from_onset: float | None
    peak_v1: float
    index: int
    decision_time: float


@dataclass(frozen=True)
class AmplitudeEstimate:
    volts: float
    peak_index: int
    lo: int
    hi: int
    partial: bool


@dataclass(frozen=True)
class IdentificationReport:
    amplitude_estimate: float
    phase_flip: bool
    estimated_impedance: float
    matched_gas: str | None
    relative_error: float
    report_time: float
    nearest_gas: str = ""
    partial: bool = False


# --- smoothing ------------------------------------------------------------


def gaussian_kernel(cfg: PipelineConfig) -> np.ndarray:
    h = cfg.smoothing_window // 2
    n = np.arange(-h, h + 1)
    k = np.exp(-0.5 * (n / cfg.sigma) ** 2)
    return k / k.sum()


def _edge_smooth(x: np.ndarray, taps: np.ndarray, centers: Iterable[int]) -> np.ndarray:
    """Smoothed values at ``centers`` with the kernel renormalized over valid support."""
    h = taps.size // 2
    out = []
    for c in centers:
        lo, hi = max(c - h, 0), min(c + h + 1, x.size)
        k = taps[lo - c + h : hi - c + h]
        out.append(float(np.dot(k, x[lo:hi]) / k.sum()))
    return np.asarray(out)


def gaussian_smooth(stream: np.ndarray, cfg: PipelineConfig = PipelineConfig()) -> np.ndarray:
    """Unit-sum Gaussian smoothing; edges use the renormalized partial kernel."""
    x = np.asarray(stream, dtype=np.float64)
    taps = gaussian_kernel(cfg)
    if x.size < taps.size:
        raise DataError(f"stream of {x.size} samples is shorter than the {taps.size}-sample window")
    h = taps.size // 2
    out = np.empty_like(x)
    out[h : x.size - h] = kernels.fir_valid(x, taps)
    out[:h] = _edge_smooth(x, taps, range(h))
    out[x.size - h :] = _edge_smooth(x, taps, range(x.size - h, x.size))
    return out


# --- analysis -------------------------------------------------------------


def _times(n: int, times: np.ndarray | None, cfg: PipelineConfig) -> np.ndarray:
    return np.arange(n) / cfg.frame_rate if times is None else np.asarray(times, dtype=np.float64)


def detect_leak(
    v1_smoothed: np.ndarray,
    cfg: PipelineConfig = PipelineConfig(),
    times: np.ndarray | None = None,
    onset: float | None = None,
) -> DetectionEvent | None:
    """First sample of the smoothed V1 strictly above the threshold."""
    v1 = np.asarray(v1_smoothed, dtype=np.float64)
    i = kernels.first_above(v1, cfg.threshold)
    if i < 0:
        return None
    t = _times(v1.size, times, cfg)
    span = v1[i : i + cfg.frames(cfg.settle + cfg.search_span) + 1]
    decision = float(t[min(i + cfg.smoothing_window // 2, t.size - 1)])
    return DetectionEvent(
        detect_time=float(t[i]),
        latency_from_onset=None if onset is None else decision - onset,
        peak_v1=float(span.max()),
        index=i,
        decision_time=decision,
    )


def _amplitude_window(v1: np.ndarray, start: int, cfg: PipelineConfig) -> AmplitudeEstimate:
    """Mean of V1 around its maximum, searched from ``start`` + settle.

    The averaging window is centred on the maximum but never reaches back
    before the settled region; it slides forward instead.
    """
    n = v1.size
    s0 = start + cfg.frames(cfg.settle)
    if s0 >= n:
        s0 = start
    s1 = min(s0 + cfg.frames(cfg.search_span) + 1, n)
    m = s0 + int(np.argmax(v1[s0:s1]))
    L = cfg.maxima_window
    lo = max(m - L // 2, s0)
    hi = lo + L
    partial = hi > n
    hi = min(hi, n)
    return AmplitudeEstimate(float(v1[lo:hi].mean()), m, lo, hi, partial)


def estimate_amplitude(
    v1_smoothed: np.ndarray, event: DetectionEvent, cfg: PipelineConfig = PipelineConfig()
) -> AmplitudeEstimate:
    if event is None:
        raise DataError("amplitude estimation needs a detection event")
    v1 = np.asarray(v1_smoothed, dtype=np.float64)
    if not 0 <= event.index < v1.size:
        raise DataError("detection index outside the stream")
    return _amplitude_window(v1, event.index, cfg)


def _wrapped(x: float) -> float:
    return (x + math.pi) % (2 * math.pi) - math.pi


def _flip_from(baseline_v2: float, post_v2: float, cfg: PipelineConfig) -> bool:
    dphi = _wrapped((post_v2 - baseline_v2) * math.pi / cfg.vref)
    return abs(dphi) > math.pi / 2


def _baseline_bounds(onset_index: int, cfg: PipelineConfig) -> tuple[int, int]:
    hi = onset_index - cfg.frames(cfg.baseline_guard)
    lo = hi - cfg.frames(cfg.baseline_span)
    if lo < 0:
        raise DataError(
            f"phase baseline needs {cfg.baseline_span + cfg.baseline_guard:.3f} s before onset"
        )
    return lo, hi


def detect_flip(
    v2_smoothed: np.ndarray,
    onset: float,
    cfg: PipelineConfig = PipelineConfig(),
    times: np.ndarray | None = None,
    window: tuple[int, int] | None = None,
) -> bool:
    """Whether the echo phase moved by more than 90 degrees from the pre-onset baseline.

    ``window`` selects the post-onset frames to average (defaults to one
    maxima window after the settle time).
    """
    v2 = np.asarray(v2_smoothed, dtype=np.float64)
    t = _times(v2.size, times, cfg)
    i = int(np.searchsorted(t, onset))
    lo, hi = _baseline_bounds(i, cfg)
    if window is None:
        a = i + cfg.frames(cfg.settle)
        window = (a, a + cfg.maxima_window)
    post = v2[window[0] : window[1]]
    if post.size == 0:
        raise DataError("no post-onset V2 samples")
    return _flip_from(float(v2[lo:hi].mean()), float(post.mean()), cfg)


def estimate_impedance(amplitude: float, flip: bool, cfg: PipelineConfig = PipelineConfig()) -> float:
    """Gas impedance from the echo amplitude and phase flag."""
    a = float(amplitude)
    if cfg.distance_cm is not None:
        a += attenuation_offset(cfg.distance_cm)
    if not math.isfinite(a) or a < 0:
        raise DomainError(f"amplitude must be >= 0, got {a!r}")
    if a >= cfg.a0:
        raise SaturationError(f"echo amplitude {a:.4f} V reaches a0 = {cfg.a0} V (total reflection)")
    return invert_impedance(a / cfg.a0, flip, Medium(cfg.air_impedance)).impedance


def identify_gas(
    z: float,
    db: GasDatabase,
    cfg: PipelineConfig = PipelineConfig(),
    *,
    amplitude: float = math.nan,
    flip: bool = False,
    report_time: float = math.nan,
    partial: bool = False,
) -> IdentificationReport:
    """Match ``z`` to the closest database gas by relative impedance error.

    No gas is matched when the best error exceeds ``cfg.match_cutoff`` or
    when ``z`` is relatively closer to air than to every database entry.
    """
    if db is None or len(db) == 0:
        raise ConfigurationError("gas database is empty")
    gas, err = nearest(db, z)
    air_err = abs(z - cfg.air_impedance) / cfg.air_impedance
    matched = gas.name if err <= cfg.match_cutoff and err < air_err else None
    return IdentificationReport(
        amplitude_estimate=float(amplitude),
        phase_flip=bool(flip),
        estimated_impedance=float(z),
        matched_gas=matched,
        relative_error=float(err),
        report_time=float(report_time),
        nearest_gas=gas.name,
        partial=partial,
    )


def analyze(
    stream: FrameBlock, cfg: PipelineConfig, db: GasDatabase, onset: float | None = None
) -> tuple[DetectionEvent | None, IdentificationReport | None]:
    """Offline composition of the stages over a whole averaged stream."""
    s1 = gaussian_smooth(stream.v1, cfg)
    s2 = gaussian_smooth(stream.v2, cfg)
    event = detect_leak(s1, cfg, stream.time, onset)
    if event is None:
        return None, None
    return event, _identify(s1, s2, stream.time, event.index, event.index, cfg, db)


def _identify(s1, s2, times, start, baseline_ref, cfg, db) -> IdentificationReport:
    amp = _amplitude_window(s1, start, cfg)
    lo, hi = _baseline_bounds(baseline_ref, cfg)
    flip = _flip_from(float(s2[lo:hi].mean()), float(s2[amp.lo : amp.hi].mean()), cfg)
    z = estimate_impedance(amp.volts, flip, cfg)
    last = min(amp.hi, s1.size) - 1
    report_time = float(times[min(last + cfg.smoothing_window // 2, times.size - 1)])
    return identify_gas(
        z, db, cfg, amplitude=amp.volts, flip=flip, report_time=report_time, partial=amp.partial
    )


# --- streaming ------------------------------------------------------------


class _Ring:
    """Fixed-capacity FIFO of floats keeping the most recent values."""

    def __init__(self, capacity: int):
        self.buf = np.zeros(max(capacity, 1))
        self.size = 0
        self.pos = 0

    def extend(self, x: np.ndarray) -> None:
        cap = self.buf.size
        x = x[-cap:]
        n = x.size
        first = min(n, cap - self.pos)
        self.buf[self.pos : self.pos + first] = x[:first]
        self.buf[: n - first] = x[first:]
        self.pos = (self.pos + n) % cap
        self.size = min(self.size + n, cap)

    def values(self) -> np.ndarray:
        if self.size < self.buf.size:
            return self.buf[: self.size].copy()
        return np.roll(self.buf, -self.pos)


@dataclass
class StreamProcessor:
    """Incremental detector/identifier over an averaged frame stream.

    Feed frames with :meth:`push` (any block size, time-ordered) and call
    :meth:`finish` at end of stream. Work per frame is constant apart from
    the one-off maximum search when the post-detection buffer is full.
    """

    db: GasDatabase
    cfg: PipelineConfig = field(default_factory=PipelineConfig)
    onset: float | None = None

    def __post_init__(self) -> None:
        self.taps = gaussian_kernel(self.cfg)
        self.h = self.taps.size // 2
        self._raw_t = np.empty(0)
        self._raw1 = np.empty(0)
        self._raw2 = np.empty(0)
        self._started = False
        self._n_smoothed = 0
        self._last_time = -math.inf
        self._pre_needed = self.cfg.frames(self.cfg.baseline_span) + self.cfg.frames(self.cfg.baseline_guard)
        self._pre2 = _Ring(self._pre_needed)
        self._pre_count = 0
        self._post: list[tuple[np.ndarray, ...]] = []
        self._post_count = 0
        self._post_needed = (
            self.cfg.frames(self.cfg.settle)
            + self.cfg.frames(self.cfg.search_span)
            + self.cfg.maxima_window
        )
        self._baseline: np.ndarray | None = None
        self.detect_index: int | None = None
        self.detect_time: float | None = None
        self.decision_time: float | None = None
        self.event: DetectionEvent | None = None
        self.report: IdentificationReport | None = None
        self.done = False

    # smoothing ---------------------------------------------------------

    def push(self, times, v1, v2) -> None:
        t = np.asarray(times, dtype=np.float64)
        a = np.asarray(v1, dtype=np.float64)
        b = np.asarray(v2, dtype=np.float64)
        if not (t.shape == a.shape == b.shape):
            raise DataError("times, v1, v2 must have equal length")
        if t.size == 0 or self.done:
            return
        if t[0] < self._last_time or np.any(np.diff(t) < 0):
            raise DataError("frames must be time-ordered")
        self._last_time = float(t[-1])
        rt = np.concatenate((self._raw_t, t))
        r1 = np.concatenate((self._raw1, a))
        r2 = np.concatenate((self._raw2, b))
        L, h = self.taps.size, self.h
        if not self._started:
            if rt.size < L:
                self._raw_t, self._raw1, self._raw2 = rt, r1, r2
                return
            self._started = True
            self._emit(
                rt[:h],
                _edge_smooth(r1[:L], self.taps, range(h)),
                _edge_smooth(r2[:L], self.taps, range(h)),
                rt[h : 2 * h],
            )
        s1 = kernels.fir_valid(r1, self.taps)
        s2 = kernels.fir_valid(r2, self.taps)
        if s1.size:
            self._emit(rt[h : h + s1.size], s1, s2, rt[L - 1 :])
        keep = L - 1
        self._raw_t, self._raw1, self._raw2 = rt[-keep:], r1[-keep:], r2[-keep:]

    def push_block(self, block: FrameBlock) -> None:
        self.push(block.time, block.v1, block.v2)

    def finish(self) -> tuple[DetectionEvent | None, IdentificationReport | None]:
        if not self.done:
            rt, r1, r2 = self._raw_t, self._raw1, self._raw2
            # short streams never filled a window: smooth all of it here
            first = rt.size - self.h if self._started else 0
            if rt.size:
                idx = list(range(first, rt.size))
                self._emit(
                    rt[idx],
                    _edge_smooth(r1, self.taps, idx),
                    _edge_smooth(r2, self.taps, idx),
                    np.full(len(idx), rt[-1]),
                )
            if self.detect_index is not None and not self.done:
                self._finalize(partial_end=True)
            self.done = True
        return self.event, self.report

    # detection ---------------------------------------------------------

    def _emit(self, ts, s1, s2, avail) -> None:
        """Consume smoothed samples; ``avail`` is when each became available."""
        if self.done or ts.size == 0:
            return
        base = self._n_smoothed
        self._n_smoothed += ts.size
        if self.detect_index is None:
            i = kernels.first_above(s1, self.cfg.threshold)
            if i < 0:
                self._pre2.extend(s2)
                self._pre_count += ts.size
                return
            self._pre2.extend(s2[:i])
            self._pre_count += i
            self.detect_index = base + i
            self.detect_time = float(ts[i])
            self.decision_time = float(avail[i])
            self._baseline = self._pre2.values()
            ts, s1, s2, avail = ts[i:], s1[i:], s2[i:], avail[i:]
        self._post.append((ts, s1, s2, avail))
        self._post_count += ts.size
        if self._post_count >= self._post_needed:
            self._finalize(partial_end=False)
            self.done = True

    def _finalize(self, partial_end: bool) -> None:
        s1 = np.concatenate([p[1] for p in self._post])
        s2 = np.concatenate([p[2] for p in self._post])
        avail = np.concatenate([p[3] for p in self._post])
        cfg = self.cfg
        span = s1[: cfg.frames(cfg.settle + cfg.search_span) + 1]
        self.event = DetectionEvent(
            detect_time=self.detect_time,
            latency_from_onset=None if self.onset is None else self.decision_time - self.onset,
            peak_v1=float(span.max()),
            index=self.detect_index,
            decision_time=self.decision_time,
        )
        if self._pre_count < self._pre_needed:
            raise DataError(
                f"phase baseline needs {cfg.baseline_span + cfg.baseline_guard:.3f} s before detection"
            )
        amp = _amplitude_window(s1, 0, cfg)
        pre = self._baseline
        base_v2 = float(pre[: cfg.frames(cfg.baseline_span)].mean())
        flip = _flip_from(base_v2, float(s2[amp.lo : amp.hi].mean()), cfg)
        z = estimate_impedance(amp.volts, flip, cfg)
        last = min(amp.hi, s1.size) - 1
        self.report = identify_gas(
            z, self.db, cfg, amplitude=amp.volts, flip=flip,
            report_time=float(avail[last]), partial=amp.partial,
        )


def _as_blocks(frames) -> Iterable[FrameBlock]:
    if isinstance(frames, FrameBlock):
        yield frames
        return
    batch: list[SampleFrame] = []
    for item in frames:
        if isinstance(item, FrameBlock):
            yield item
            continue
        batch.append(item)
        if len(batch) >= 4096:
            yield _frames_to_block(batch)
            batch = []
    if batch:
        yield _frames_to_block(batch)


def _frames_to_block(batch: list[SampleFrame]) -> FrameBlock:
    arr = np.asarray([(f.time, f.v1, f.v2) for f in batch], dtype=np.float64)
    return FrameBlock(arr[:, 0], arr[:, 1], arr[:, 2])


def run_stream(
    frames,
    cfg: PipelineConfig = PipelineConfig(),
    db: GasDatabase | None = None,
    onset: float | None = None,
) -> tuple[DetectionEvent | None, IdentificationReport | None]:
    """Detect and identify over an averaged stream.

    ``frames`` may be a :class:`FrameBlock`, an iterable of blocks, or an
    iterable of :class:`SampleFrame`. ``onset`` (if known) fills in the
    detection latency.
    """
    if db is None:
        from .gasdb import load

        db = load()
    proc = StreamProcessor(db, cfg, onset)
    for block in _as_blocks(frames):
        proc.push_block(block)
        if proc.done:
            break
    return proc.finish()


def with_overrides(cfg: PipelineConfig, **changes) -> PipelineConfig:
    return replace(cfg, **{k: v for k, v in changes.items() if v is not None})
