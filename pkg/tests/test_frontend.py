import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from echosense import frontend as fe
from echosense.errors import ConfigurationError, DataError

RATE = fe.INTERNAL_RATE
F = fe.CARRIER_HZ


def sine(amplitude=1.0, freq=F, seconds=0.01, rate=RATE, phase=0.0):
    t = np.arange(int(round(seconds * rate))) / rate
    return fe.Waveform(rate, amplitude * np.sin(2 * np.pi * freq * t + phase))


def steady_amplitude(x, settle):
    return float(np.max(np.abs(x[settle:])))


def chain_levels(phase=0.0, amplitude=1.0, seconds=0.02):
    """Settled (V1, V2) of one acquisition chain fed a pure carrier at ``phase``."""
    chain = fe.AcquisitionChain()
    n = int(round(seconds * RATE))
    rx = sine(amplitude, seconds=seconds, phase=phase).samples
    ref = fe._square_bits(0, n, RATE, F, 0.0)
    _, v1, v2 = chain.process(0, rx, ref)
    half = v1.size // 2
    return float(v1[half:].mean()), float(v2[half:].mean())


# --- synth_tx ------------------------------------------------------------------


def test_synth_tx_counting_at_1mhz():
    w = fe.synth_tx(F, 1e-3, 1e6)
    assert len(w) == 1000
    rising = np.flatnonzero(np.diff(w.samples) > 0).size + (w.samples[0] > 0)
    assert rising == 40


def test_synth_tx_single_period():
    w = fe.synth_tx(F, 25e-6, 1e6)
    assert len(w) == 25
    assert set(w.samples[:12]) == {5.0} and set(w.samples[13:]) == {0.0}


def test_synth_tx_mean():
    assert fe.synth_tx(F, 1e-3).samples.mean() == pytest.approx(2.5, abs=fe.AdcConfig().lsb)
    # 25 samples per period cannot split evenly: one sample (0.2 V) of slack
    assert fe.synth_tx(F, 1e-3, 1e6).samples.mean() == pytest.approx(2.5, abs=5.0 / 25)


def test_synth_tx_undersampled():
    with pytest.raises(ConfigurationError):
        fe.synth_tx(F, 1e-3, 200e3)


# --- synth_received ------------------------------------------------------------


def butane(db, **kw):
    return fe.Scenario(db.get("butane"), 15.0, 0.12, 0.02, **kw)


def test_butane_echo_amplitude(db):
    w = fe.synth_received(butane(db))[0]
    z = 2.48 * 194
    expected = 5.0 * (z - 415) / (z + 415) - 0.02 * 15 / 30
    tail = w.samples[int(0.05 * RATE) :]
    assert steady_amplitude(tail, 0) == pytest.approx(expected, rel=0.01)
    assert expected == pytest.approx(0.3589, abs=1e-4)


def test_no_leak_amplitude_bounded(db):
    sigma = 0.01
    sc = fe.Scenario(db.get("argon"), 10.0, 0.05, None, noise_sigma=sigma, seed=3)
    model = fe.ReceiverModel(sc)
    amp, _ = model.envelope(np.linspace(0, 0.05, 1000))
    assert amp.max() <= sc.background_v + 3 * sigma
    v1 = fe.simulate(sc)[0].v1
    assert v1.max() <= sc.background_v + 3 * sigma


def test_synth_received_seeded(db):
    sc = butane(db, noise_sigma=0.01, seed=11)
    a, b = fe.synth_received(sc), fe.synth_received(sc)
    assert all(np.array_equal(x.samples, y.samples) for x, y in zip(a, b))
    assert not np.array_equal(a[0].samples, a[1].samples)


@pytest.mark.parametrize(
    "kw",
    [dict(distance_cm=1.0), dict(duration_s=0.0), dict(leak_onset_s=0.2), dict(receivers=0)],
)
def test_scenario_validation(db, kw):
    base = dict(gas=db.get("argon"), distance_cm=10.0, duration_s=0.1, leak_onset_s=0.05)
    base.update(kw)
    with pytest.raises(ConfigurationError):
        fe.Scenario(**base)


# --- analog stages -------------------------------------------------------------


def test_bandpass_passband():
    y = fe.bandpass(sine(seconds=0.02)).samples
    assert steady_amplitude(y, int(0.01 * RATE)) == pytest.approx(1.0, abs=0.05)


@pytest.mark.parametrize("freq, limit", [(5e3, 0.1), (20e3, 0.1), (80e3, 0.1)])
def test_bandpass_stopband(freq, limit):
    y = fe.bandpass(sine(freq=freq, seconds=0.02)).samples
    assert steady_amplitude(y, int(0.01 * RATE)) <= limit


def test_bandpass_zero_and_errors():
    z = fe.Waveform(RATE, np.zeros(1000))
    assert not fe.bandpass(z).samples.any()
    with pytest.raises(ConfigurationError):
        fe.bandpass(z, bandwidth=0.0)
    with pytest.raises(ConfigurationError):
        fe.bandpass(fe.Waveform(50e3, np.zeros(10)))


def test_half_wave_rectify():
    w = fe.Waveform(1.0, np.array([-1.0, 0.0, 1.0]))
    assert list(fe.half_wave_rectify(w).samples) == [0.0, 0.0, 1.0]
    assert not fe.half_wave_rectify(fe.Waveform(1.0, -np.ones(5))).samples.any()
    pos = np.abs(np.random.default_rng(0).normal(size=50))
    assert np.array_equal(fe.half_wave_rectify(fe.Waveform(1.0, pos)).samples, pos)


def test_envelope_steady_sine():
    y = fe.envelope_detect(sine(seconds=0.01)).samples[int(0.005 * RATE) :]
    assert y.min() >= 0.95 and y.max() <= 1.05


def test_envelope_zero_and_scaling():
    assert not fe.envelope_detect(fe.Waveform(RATE, np.zeros(500))).samples.any()
    a = fe.envelope_detect(sine(1.0)).samples[-2000:].mean()
    b = fe.envelope_detect(sine(2.0)).samples[-2000:].mean()
    assert b == pytest.approx(2 * a, rel=0.01)


def test_comparator():
    w = fe.comparator(sine(seconds=1e-3))
    assert set(np.unique(w.samples)) == {0.0, 5.0}
    assert w.samples.mean() / 5.0 == pytest.approx(0.5, abs=1 / 25.6)
    assert not fe.comparator(fe.Waveform(RATE, -np.ones(10))).samples.any()
    assert set(fe.comparator(fe.Waveform(RATE, np.ones(10))).samples) == {5.0}


def test_xor_phase_examples():
    tx = fe.synth_tx(F, 1e-3)
    assert not fe.xor_phase(tx, tx).samples.any()
    half = fe.synth_tx(F, 1e-3, delay=0.5 / F)
    assert set(fe.xor_phase(tx, half).samples) == {5.0}
    quarter = fe.synth_tx(F, 1e-3, delay=0.25 / F)
    assert fe.xor_phase(tx, quarter).samples.mean() == pytest.approx(2.5, abs=0.05)


def test_xor_phase_errors():
    with pytest.raises(ConfigurationError):
        fe.xor_phase(fe.synth_tx(F, 1e-3), fe.synth_tx(F, 1e-3, 2e6))
    with pytest.raises(DataError):
        fe.xor_phase(fe.synth_tx(F, 1e-3), fe.synth_tx(F, 2e-3))


@pytest.mark.parametrize("dphi, v2", [(0.0, 0.0), (math.pi, 5.0), (math.pi / 2, 2.5)])
def test_integrate_mean_transfer(dphi, v2):
    tx = fe.synth_tx(F, 2e-3)
    rx = fe.synth_tx(F, 2e-3, delay=dphi / (2 * math.pi * F))
    out = fe.integrate_mean(fe.xor_phase(tx, rx)).samples
    settled = out[int(fe.INTEGRATOR_WINDOW * RATE) :]
    assert np.all(np.abs(settled - v2) <= 0.05)


def test_integrate_mean_too_short():
    with pytest.raises(ConfigurationError):
        fe.integrate_mean(fe.Waveform(RATE, np.zeros(10)), window=1e-5)


# --- ADC -----------------------------------------------------------------------


@pytest.mark.parametrize("v, out", [(2.5, 2.5), (-0.1, 0.0), (5.0, 1023 * 5 / 1024)])
def test_adc_examples(v, out):
    w = fe.Waveform(RATE, np.full(1024, v))
    got = fe.adc_quantize(w)
    assert got.size == 80
    assert np.all(got == out)


@given(
    st.integers(8, 16),
    st.floats(-10.0, 10.0, allow_nan=False),
)
def test_adc_error_bound(bits, v):
    cfg = fe.AdcConfig(bits=bits)
    q = fe.quantize(np.array([v]), cfg)[0]
    clamped = min(max(v, 0.0), cfg.max_code * cfg.lsb)
    assert abs(q - clamped) <= cfg.vref / 2 ** (bits + 1) + 1e-12


@pytest.mark.parametrize("kw", [dict(bits=7), dict(bits=17), dict(vref=0.0), dict(sample_rate=50e3)])
def test_adc_config_validation(kw):
    with pytest.raises(ConfigurationError):
        fe.AdcConfig(**kw)


# --- averaging -------------------------------------------------------------------


def block(v1, v2=None, t=None, rid=0):
    v1 = np.asarray(v1, dtype=float)
    t = np.arange(v1.size) / 80e3 if t is None else t
    return fe.FrameBlock(t, v1, np.zeros_like(v1) if v2 is None else v2, rid)


def test_average_examples():
    b = block([0.1, 0.2, 0.3])
    avg = fe.average_receivers([b, b, b, b])
    np.testing.assert_allclose(avg.v1, b.v1)
    four = [block([0.0]), block([0.0]), block([0.0]), block([4.0])]
    assert fe.average_receivers(four).v1[0] == 1.0


def test_average_errors():
    with pytest.raises(DataError):
        fe.average_receivers([block([0, 1]), block([0])])
    with pytest.raises(DataError):
        fe.average_receivers([block([0, 1]), block([0, 1], t=np.array([0.0, 2.0]))])
    with pytest.raises(DataError):
        fe.average_receivers([])


def test_average_noise_sqrt_n():
    rng = np.random.default_rng(5)
    sigma = 0.01
    stds = []
    for _ in range(100):
        streams = [block(sigma * rng.standard_normal(2000), rid=i) for i in range(4)]
        stds.append(fe.average_receivers(streams).v1.std())
    assert np.mean(stds) == pytest.approx(sigma / 2, rel=0.2)


# --- full chain --------------------------------------------------------------------


def test_full_chain_deterministic(db):
    sc = butane(db, noise_sigma=0.01, seed=4)
    a, b = fe.simulate(sc), fe.simulate(sc)
    for x, y in zip(a, b):
        assert np.array_equal(x.v1, y.v1) and np.array_equal(x.v2, y.v2)
    c = fe.simulate(fe.Scenario(sc.gas, 15.0, 0.12, 0.02, noise_sigma=0.01, seed=5))
    assert not np.array_equal(a[0].v1, c[0].v1)


def test_block_size_does_not_change_output(db):
    sc = butane(db)
    a = fe.simulate(sc)[0]
    b = fe.simulate(sc, block=12_345)[0]
    assert np.array_equal(a.time, b.time)
    np.testing.assert_allclose(a.v1, b.v1, atol=1e-12)
    np.testing.assert_allclose(a.v2, b.v2, atol=1e-12)


def test_frames_in_range_and_ordered(db):
    s = fe.simulate(butane(db, noise_sigma=0.02, seed=1))[0]
    assert s.time.size == 0.12 * 80e3
    assert np.all(np.diff(s.time) > 0)
    for v in (s.v1, s.v2):
        assert v.min() >= 0 and v.max() <= fe.AdcConfig().max_code * fe.AdcConfig().lsb


def test_butane_settled_levels(db):
    s = fe.simulate(fe.Scenario(db.get("butane"), 15.0, 0.2, 0.1))[0]
    t = s.time
    pre, post = (t > 0.05) & (t < 0.095), t > 0.15
    assert s.v1[post].mean() == pytest.approx(0.3589, rel=0.01)
    dphi = (s.v2[post].mean() - s.v2[pre].mean()) * math.pi / 5.0
    assert abs((dphi + math.pi) % (2 * math.pi) - math.pi) < math.pi / 2


def test_v2_linear_in_phase():
    phases = np.linspace(0, math.pi, 9)
    v2 = np.array([chain_levels(p)[1] for p in phases])
    slope = np.polyfit(phases, v2, 1)[0]
    assert slope == pytest.approx(5 / math.pi, rel=0.02)


def test_v1_linear_in_amplitude():
    chain = fe.AcquisitionChain()
    rx = sine(0.3, seconds=0.01).samples
    ref = np.zeros(rx.size, np.uint8)
    v1a, _ = chain.analog(rx, ref)
    chain.reset()
    v1b, _ = chain.analog(2.5 * rx, ref)
    half = rx.size // 2
    assert v1b[half:].mean() == pytest.approx(2.5 * v1a[half:].mean(), rel=0.02)
