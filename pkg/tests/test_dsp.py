import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sslkit import dsp
from sslkit.dsp import (FRAME_LEN, ConfigurationError, InputError,
                        MultichannelFrame, MelFilterBank, extract_features,
                        frame_signal, gcc_phat, gccfb, hann, hz_to_mel,
                        make_mel_filterbank, mic_pairs, num_frames,
                        window_and_fft)

from conftest import circular_delay, plane_wave_frame


def _ncc_argmax(a, b, max_lag=25):
    """Brute-force time-domain circular cross-correlation with whitening
    removed: argmax over lags of sum_t a[t] b[t + lag]."""
    lags = np.arange(-max_lag, max_lag + 1)
    scores = [np.dot(a, np.roll(b, -lag)) for lag in lags]
    return lags[int(np.argmax(scores))]


# --- framing and FFT ---------------------------------------------------------

def test_frame_count_formula():
    for t in (8192, 8193, 12288, 12287, 48000, 100000):
        x = np.zeros((2, t))
        assert len(frame_signal(x)) == (t - 8192) // 4096 + 1 == num_frames(t)
    assert len(frame_signal(np.zeros((2, 100)))) == 0


def test_frame_signal_contents(rng):
    x = rng.standard_normal((3, 20000))
    fr = frame_signal(x)
    np.testing.assert_array_equal(fr[2], x[:, 8192:8192 + 8192])


def test_frame_validation():
    with pytest.raises(InputError):
        MultichannelFrame(np.zeros((1, FRAME_LEN)))
    with pytest.raises(InputError):
        MultichannelFrame(np.zeros((2, 4096)))
    assert MultichannelFrame(np.zeros((4, FRAME_LEN))).num_channels == 4


def test_zero_frame_gives_zero_bins():
    spec = window_and_fft(MultichannelFrame(np.zeros((2, FRAME_LEN))))
    assert spec.shape == (2, 4097)
    assert not np.any(spec)


def test_nonfinite_input_rejected():
    x = np.zeros((2, FRAME_LEN))
    x[1, 10] = np.nan
    with pytest.raises(InputError):
        window_and_fft(x)


def test_cosine_energy_concentrated():
    k0 = 700
    t = np.arange(FRAME_LEN)
    x = np.cos(2 * np.pi * k0 * t / FRAME_LEN)
    p = np.abs(window_and_fft(np.stack([x, x])))[0] ** 2
    assert p[k0 - 2:k0 + 3].sum() / p.sum() >= 0.99


def test_parseval(rng):
    x = rng.standard_normal((2, FRAME_LEN))
    xw = x * hann(FRAME_LEN)
    spec = window_and_fft(x)
    # one-sided spectrum: interior bins count twice
    p = np.abs(spec) ** 2
    total = p[:, 0] + p[:, -1] + 2 * p[:, 1:-1].sum(axis=1)
    np.testing.assert_allclose(total / FRAME_LEN, (xw ** 2).sum(axis=1),
                               rtol=1e-6)


def test_hann_is_periodic():
    w = hann(8)
    np.testing.assert_allclose(w, 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(8) / 8))
    assert w[0] == 0 and w[4] == 1


# --- GCC-PHAT -----------------------------------------------------------------

def test_pairs_lexicographic():
    assert mic_pairs(4) == [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]


def test_identical_channels_peak_at_zero(rng):
    x = rng.standard_normal(FRAME_LEN)
    g = gcc_phat(window_and_fft(np.stack([x, x])))
    assert g.values.shape == (1, 51)
    assert g.delays[np.argmax(g.values[0])] == 0
    assert abs(g.values[0].max() - 1.0) < 1e-6


def test_delay_matches_time_domain_oracle(rng):
    x = rng.standard_normal(FRAME_LEN)
    y = circular_delay(x, 5)
    g = gcc_phat(window_and_fft(np.stack([x, y])))
    tau = g.delays[np.argmax(g.values[0])]
    assert tau == 5
    # the oracle agrees on sign and magnitude
    assert _ncc_argmax(x, y) == 5


@pytest.mark.parametrize('d', [-17, -3, 1, 12, 25])
def test_delay_sign_convention(rng, d):
    x = rng.standard_normal(FRAME_LEN)
    g = gcc_phat(window_and_fft(np.stack([x, circular_delay(x, d)])))
    assert g.delays[np.argmax(g.values[0])] == d


def test_incoherent_channels_stay_small(rng):
    worst = 0.0
    for _ in range(100):
        g = gcc_phat(window_and_fft(rng.standard_normal((2, FRAME_LEN))))
        worst = max(worst, np.abs(g.values).max())
    assert worst < 0.2


def test_zero_cross_power_bins_skipped():
    spec = np.zeros((2, 4097), complex)
    g = gcc_phat(spec)
    assert not np.any(g.values)


def test_pair_symmetry(rng):
    x = plane_wave_frame(rng, [0.0, 3.3])
    a = gcc_phat(window_and_fft(x)).values[0]
    b = gcc_phat(window_and_fft(x[::-1])).values[0]
    np.testing.assert_allclose(a, b[::-1], atol=1e-9)


def test_gcc_determinism(rng):
    x = rng.standard_normal((4, FRAME_LEN))
    a = gcc_phat(window_and_fft(x)).values
    b = gcc_phat(window_and_fft(x.copy())).values
    assert a.tobytes() == b.tobytes()


def test_delay_range_configurable(rng):
    x = rng.standard_normal((3, FRAME_LEN))
    g = gcc_phat(window_and_fft(x), delay_range=(-5, 7))
    assert g.values.shape == (3, 13)
    with pytest.raises(ConfigurationError):
        gcc_phat(window_and_fft(x), delay_range=(3, 2))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 31), scale=st.floats(1e-6, 1e3))
def test_gcc_bounded(seed, scale):
    r = np.random.default_rng(seed)
    x = scale * r.standard_normal((3, FRAME_LEN))
    x[2] = x[0] * r.uniform(0.1, 2.0)
    spec = window_and_fft(x)
    assert np.all(np.abs(gcc_phat(spec).values) <= 1 + 1e-12)
    fb = make_mel_filterbank(8, 200, 4000)
    assert np.all(np.abs(gccfb(spec, fb).values) <= 1 + 1e-12)


# --- mel filterbank ------------------------------------------------------------

def test_mel_near_fixed_point_at_1khz():
    # with the 2595 * log10(1 + f / 700) constants 1 kHz maps to 999.9855 mel
    assert abs(hz_to_mel(1000.0) - 999.98553714) < 1e-6
    assert abs(hz_to_mel(1000.0) - 1000.0) < 0.02
    assert abs(dsp.mel_to_hz(hz_to_mel(1234.5)) - 1234.5) < 1e-9


def test_default_filterbank_layout():
    fb = make_mel_filterbank(40, 100, 8000, 48000, 8192)
    assert fb.transfer.shape == (40, 4097)
    assert fb.centers[0] > 100 and fb.centers[-1] < 8000
    assert np.all(np.diff(fb.centers) > 0)
    assert np.all(fb.transfer >= 0)
    assert np.all(fb.transfer.sum(axis=1) > 0)
    for f, (lo, hi) in enumerate(fb.supports):
        nz = np.flatnonzero(fb.transfer[f])
        assert (nz[0], nz[-1] + 1) == (lo, hi)
        assert np.all(fb.transfer[f, lo:hi] > 0)   # contiguous support


def test_filters_overlap_only_neighbours():
    fb = make_mel_filterbank()
    overlap = (fb.transfer > 0).astype(int) @ (fb.transfer > 0).T.astype(int)
    for a in range(40):
        for b in range(40):
            if abs(a - b) > 1:
                assert overlap[a, b] == 0
            elif abs(a - b) == 1:
                assert overlap[a, b] > 0


@pytest.mark.parametrize('args', [(40, 8000, 100), (40, -1, 100),
                                  (40, 100, 30000), (0, 100, 8000),
                                  (2000, 100, 200)])
def test_degenerate_filterbank_rejected(args):
    with pytest.raises(ConfigurationError):
        make_mel_filterbank(*args)


# --- GCCFB ------------------------------------------------------------------------

def test_gccfb_identical_channels(rng):
    x = rng.standard_normal(FRAME_LEN)
    g = gccfb(window_and_fft(np.stack([x, x])), make_mel_filterbank())
    assert g.values.shape == (1, 40, 51)
    np.testing.assert_allclose(g.values[0, :, 25], 1.0, atol=1e-6)


def test_gccfb_band_delays(rng):
    x = plane_wave_frame(rng, [0.0, 7.0])
    spec = window_and_fft(x)
    fb = make_mel_filterbank()
    g = gccfb(spec, fb).values[0]
    energy = fb.transfer @ (np.abs(spec[0]) ** 2)
    strong = energy > 0.01 * energy.sum()
    assert strong.sum() > 5
    assert np.all(g.argmax(axis=1)[strong] - 25 == 7)


def _band_limited(rng, lo_hz, hi_hz, lag):
    n = FRAME_LEN * 2
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1 / 48000)
    spec[(f < lo_hz) | (f > hi_hz)] = 0
    w = 2 * np.pi * np.fft.rfftfreq(n)
    return np.array([np.fft.irfft(spec, n)[:FRAME_LEN],
                     np.fft.irfft(spec * np.exp(-1j * w * lag), n)[:FRAME_LEN]])


def test_gccfb_separates_band_disjoint_sources(rng):
    low = _band_limited(rng, 100, 1500, -9)
    high = _band_limited(rng, 2500, 8000, 6)
    fb = make_mel_filterbank()
    mix = gccfb(window_and_fft(low + high), fb).values[0]
    # oracle: per-band analysis of each source alone
    lone_low = gccfb(window_and_fft(low), fb).values[0].argmax(axis=1) - 25
    lone_high = gccfb(window_and_fft(high), fb).values[0].argmax(axis=1) - 25
    low_bands = np.flatnonzero(fb.centers < 1200)
    high_bands = np.flatnonzero((fb.centers > 3000) & (fb.centers < 7500))
    assert np.all(lone_low[low_bands] == -9)
    assert np.all(lone_high[high_bands] == 6)
    assert np.all(mix[low_bands].argmax(axis=1) - 25 == -9)
    assert np.all(mix[high_bands].argmax(axis=1) - 25 == 6)


def test_boxcar_aggregation_matches_full_band(rng):
    x = plane_wave_frame(rng, [0.0, 2.5, -4.0])
    spec = window_and_fft(x)
    k = spec.shape[-1]
    edges = np.linspace(20, 1500, 9).astype(int)
    transfer = np.zeros((8, k))
    for f in range(8):
        transfer[f, edges[f]:edges[f + 1]] = 1.0
    fb = MelFilterBank(transfer, [(edges[f], edges[f + 1]) for f in range(8)],
                       np.zeros(8), 0, 0, 48000, FRAME_LEN)
    bands = gccfb(spec, fb).values                       # (P, F, D)
    w = transfer.sum(axis=1) / transfer.sum()
    combined = np.einsum('f,pfd->pd', w, bands)
    # full-band GCC restricted to the union of supports
    restricted = spec.copy()
    restricted[:, :edges[0]] = 0
    restricted[:, edges[-1]:] = 0
    full = gcc_phat(restricted).values
    np.testing.assert_allclose(combined, full, atol=1e-6)


def test_extract_features_shapes_and_order(rng):
    frames = rng.standard_normal((5, 4, FRAME_LEN))
    a = extract_features(frames, 'gcc', chunk=2)
    assert a.shape == (5, 6, 51)
    np.testing.assert_array_equal(a[3], gcc_phat(window_and_fft(frames[3])).values)
    b = extract_features(frames[:2], 'gccfb')
    assert b.shape == (2, 6, 40, 51)
    with pytest.raises(ConfigurationError):
        extract_features(frames, 'mfcc')
