"""Vectorized numpy/scipy versions of the streaming kernels.

Used when the compiled ``_ckernels`` extension is unavailable. Signatures
and state handling mirror the extension exactly.
"""

import numpy as np
from scipy.signal import lfilter


def envelope_follow(x, alpha, y0):
    """Rectify then one-pole low-pass. Returns ``(y, last_y)``."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return np.empty(0), float(y0)
    rect = np.maximum(x, 0.0)
    y, zf = lfilter([alpha], [1.0, alpha - 1.0], rect, zi=[(1.0 - alpha) * y0])
    return y, float(y[-1])


def xor_integrate(rx, ref, threshold, ring, pos, count):
    """Comparator on ``rx``, XOR with logic ``ref``, boxcar count over ``len(ring)``.

    Returns ``(high_fraction, pos, count)``; ``ring`` is updated in place.
    """
    rx = np.asarray(rx, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.uint8)
    w = ring.shape[0]
    n = rx.shape[0]
    if n == 0:
        return np.empty(0), pos, count
    bits = ((rx > threshold).astype(np.uint8) ^ ref).astype(np.int64)
    hist = np.roll(ring, -pos).astype(np.int64)
    full = np.concatenate((hist, bits))
    csum = np.concatenate(([0], np.cumsum(full)))
    idx = np.arange(n)
    sums = csum[w + idx + 1] - csum[idx + 1]
    ring[:] = full[-w:]
    return sums / w, 0, int(sums[-1])


def fir_valid(x, taps):
    """Correlate ``x`` with ``taps``, valid part only."""
    return np.convolve(np.asarray(x, dtype=np.float64), np.asarray(taps)[::-1], mode="valid")


def first_above(x, threshold):
    """Index of the first sample strictly above ``threshold``, or -1."""
    x = np.asarray(x, dtype=np.float64)
    hits = np.flatnonzero(x > threshold)
    return int(hits[0]) if hits.size else -1
