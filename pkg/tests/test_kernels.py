import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from echosense import _pykernels

try:
    from echosense import _ckernels
except ImportError:  # pragma: no cover - build without a compiler
    _ckernels = None

BACKENDS = [pytest.param(_pykernels, id="python")]
BACKENDS.append(
    pytest.param(_ckernels, id="cython", marks=pytest.mark.skipif(_ckernels is None, reason="not built"))
)


def naive_envelope(x, alpha, y0):
    y, out = y0, []
    for v in x:
        y += alpha * (max(v, 0.0) - y)
        out.append(y)
    return np.array(out)


def naive_xor(rx, ref, thr, w, history):
    bits = list(history) + [int(a > thr) ^ int(b) for a, b in zip(rx, ref)]
    return np.array([sum(bits[i + 1 : i + 1 + w]) / w for i in range(len(rx))])


@pytest.mark.parametrize("k", BACKENDS)
def test_envelope_matches_loop(k):
    rng = np.random.default_rng(1)
    x = rng.normal(size=500)
    y, last = k.envelope_follow(x, 0.1, 0.3)
    np.testing.assert_allclose(y, naive_envelope(x, 0.1, 0.3), rtol=1e-12, atol=1e-14)
    assert last == y[-1]


@pytest.mark.parametrize("k", BACKENDS)
def test_xor_matches_loop(k):
    rng = np.random.default_rng(2)
    rx, ref = rng.normal(size=300), rng.integers(0, 2, 300).astype(np.uint8)
    ring = np.zeros(16, np.uint8)
    frac, _, _ = k.xor_integrate(rx, ref, 0.0, ring, 0, 0)
    np.testing.assert_allclose(frac, naive_xor(rx, ref, 0.0, 16, [0] * 16), atol=1e-15)


@pytest.mark.parametrize("k", BACKENDS)
@settings(max_examples=30, deadline=None)
@given(cuts=st.lists(st.integers(1, 399), max_size=6))
def test_chunked_state_carry(k, cuts):
    rng = np.random.default_rng(3)
    x, ref = rng.normal(size=400), rng.integers(0, 2, 400).astype(np.uint8)
    whole_env, _ = k.envelope_follow(x, 0.05, 0.0)
    whole_xor, _, _ = k.xor_integrate(x, ref, 0.0, np.zeros(25, np.uint8), 0, 0)
    bounds = [0, *sorted(set(cuts)), 400]
    env, y = [], 0.0
    xor, ring, pos, count = [], np.zeros(25, np.uint8), 0, 0
    for a, b in zip(bounds, bounds[1:]):
        e, y = k.envelope_follow(x[a:b], 0.05, y)
        f, pos, count = k.xor_integrate(x[a:b], ref[a:b], 0.0, ring, pos, count)
        env.append(e)
        xor.append(f)
    np.testing.assert_allclose(np.concatenate(env), whole_env, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(np.concatenate(xor), whole_xor, atol=1e-15)


def test_fir_and_threshold():
    k = _pykernels
    x = np.arange(10.0)
    np.testing.assert_allclose(k.fir_valid(x, np.array([0.25, 0.5, 0.25])), x[1:-1])
    assert k.first_above(x, 4.0) == 5
    assert k.first_above(x, 4.5) == 5
    assert k.first_above(x, 9.0) == -1
    assert k.first_above(np.empty(0), 0.0) == -1


@pytest.mark.skipif(_ckernels is None, reason="not built")
def test_backends_agree_on_empty_input():
    for k in (_pykernels, _ckernels):
        y, last = k.envelope_follow(np.empty(0), 0.1, 0.7)
        assert y.size == 0 and last == 0.7


def test_env_var_forces_fallback():
    code = "import echosense.kernels as k; print(k.BACKEND)"
    out = subprocess.run(
        [sys.executable, "-c", code], capture_output=True, text=True,
        env={"ECHOSENSE_PURE_PYTHON": "1", "PATH": ""}, check=True,
    )
    assert out.stdout.strip() == "python"

