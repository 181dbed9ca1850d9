"""Frame-level spectral analysis and cross-correlation features.

All features are computed from a single Hann-windowed FFT over the whole
8192-sample frame. Delays are integers in samples; a positive delay means the
second channel of a pair lags the first one.
"""

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

FRAME_LEN = 8192
HOP_LEN = 4096
SAMPLE_RATE = 48000
DEFAULT_DELAYS = (-25, 25)
DEFAULT_NUM_FILTERS = 40
DEFAULT_FMIN = 100.0
DEFAULT_FMAX = 8000.0

# cross-power bins below this magnitude are skipped
CROSS_POWER_FLOOR = 1e-12


class ConfigurationError(ValueError):
    """Invalid static configuration (filterbank range, delay range, ...)."""


class InputError(ValueError):
    """Invalid signal input (wrong shape, non-finite samples, ...)."""


@dataclass
class MultichannelFrame:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    frame_index: int = 0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[0] < 2:
            raise InputError('frame must be a (M >= 2, L) matrix, got shape %s'
                             % (self.samples.shape,))
        if self.samples.shape[1] != FRAME_LEN:
            raise InputError('frame length must be %d, got %d'
                             % (FRAME_LEN, self.samples.shape[1]))

    @property
    def num_channels(self):
        return self.samples.shape[0]


@dataclass
class MelFilterBank:
    """Triangular filters sampled on the rfft bin grid.

    ``transfer`` has shape (num_filters, fft_len // 2 + 1); ``supports`` holds
    the half-open bin range ``[lo, hi)`` where each filter is nonzero.
    """
    transfer: np.ndarray
    supports: list
    centers: np.ndarray
    f_min: float
    f_max: float
    sample_rate: int
    fft_len: int

    @property
    def num_filters(self):
        return self.transfer.shape[0]


@dataclass
class GccPhatFeature:
    values: np.ndarray            # (P, D)
    delays: np.ndarray            # (D,)
    pairs: list = field(default_factory=list)


@dataclass
class GccFbFeature:
    values: np.ndarray            # (P, F, D)
    delays: np.ndarray
    pairs: list = field(default_factory=list)


def mic_pairs(num_channels):
    """Lexicographic ``(i, j)`` pairs with ``i < j``."""
    return list(combinations(range(num_channels), 2))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def frame_signal(signal, frame_len=FRAME_LEN, hop=HOP_LEN):
    """Cut a (M, T) signal into frames of shape (N, M, frame_len).

    N = floor((T - frame_len) / hop) + 1; trailing samples are dropped.
    """
    signal = np.asarray(signal)
    if signal.shape[-1] < frame_len:
        return np.zeros((0,) + signal.shape[:-1] + (frame_len,), signal.dtype)
    n = num_frames(signal.shape[-1], frame_len, hop)
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n)[:, None]
    return np.moveaxis(signal[..., idx], -2, 0)


def num_frames(length, frame_len=FRAME_LEN, hop=HOP_LEN):
    if length < frame_len:
        return 0
    return (length - frame_len) // hop + 1


def hann(length):
    """Periodic Hann window."""
    n = np.arange(length)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / length)


def window_and_fft(frame):
    """Hann-windowed real FFT of every channel.

    Args:
        frame : MultichannelFrame, or an array of shape (..., M, L).

    Returns:
        complex array of shape (..., M, L // 2 + 1)
    """
    x = frame.samples if isinstance(frame, MultichannelFrame) else np.asarray(
        frame, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InputError('frame contains non-finite samples')
    return np.fft.rfft(x * hann(x.shape[-1]), axis=-1)


def _delay_axis(delay_range):
    lo, hi = delay_range
    if lo > hi:
        raise ConfigurationError('empty delay range %s' % (delay_range,))
    return np.arange(lo, hi + 1)


def _phase_basis(fft_len, bins, delays):
    """cos/sin of w_k * tau for the selected bins, shape (K, D) each."""
    phase = 2.0 * np.pi * np.outer(bins, delays) / fft_len
    return np.cos(phase), np.sin(phase)


def _project(unit, cos, sin):
    """Re(unit @ (cos + j sin)) with contiguous 2-D BLAS products."""
    lead = unit.shape[:-1]
    re = np.ascontiguousarray(unit.real).reshape(-1, unit.shape[-1])
    im = np.ascontiguousarray(unit.imag).reshape(-1, unit.shape[-1])
    return (re @ cos - im @ sin).reshape(lead + (cos.shape[1],))


def _unit_cross_power(spectra, pairs, bins):
    """PHAT-normalized cross spectra conj(X_i) X_j on ``bins``.

    Returns (C, mask) of shape (..., P, K); masked-out bins are zero.
    """
    xi = spectra[..., [i for i, _ in pairs], :][..., bins]
    xj = spectra[..., [j for _, j in pairs], :][..., bins]
    cross = np.conj(xi) * xj
    mag = np.abs(cross)
    mask = mag >= CROSS_POWER_FLOOR
    unit = np.where(mask, cross / np.where(mask, mag, 1.0), 0.0)
    return unit, mask


def gcc_phat(spectra, delay_range=DEFAULT_DELAYS, fft_len=None):
    """GCC-PHAT over all positive-frequency bins.

    Args:
        spectra     : (..., M, K) one-sided spectra, K = fft_len // 2 + 1.
        delay_range : inclusive integer delay range.
        fft_len     : FFT length, default 2 * (K - 1).

    Returns:
        GccPhatFeature whose values have shape (..., P, D). Each value is the
        mean over contributing bins, so the autocorrelation peak is 1.
    """
    spectra = np.asarray(spectra)
    if spectra.shape[-2] < 2:
        raise InputError('need at least two channels')
    k = spectra.shape[-1]
    fft_len = fft_len or 2 * (k - 1)
    delays = _delay_axis(delay_range)
    pairs = mic_pairs(spectra.shape[-2])
    bins = np.arange(1, fft_len // 2)
    unit, mask = _unit_cross_power(spectra, pairs, bins)
    cos, sin = _phase_basis(fft_len, bins, delays)
    values = _project(unit, cos, sin)
    count = mask.sum(axis=-1, keepdims=True)
    values = values / np.maximum(count, 1)
    return GccPhatFeature(values=values, delays=delays, pairs=pairs)


def make_mel_filterbank(num_filters=DEFAULT_NUM_FILTERS, f_min=DEFAULT_FMIN,
                        f_max=DEFAULT_FMAX, sample_rate=SAMPLE_RATE,
                        fft_len=FRAME_LEN):
    """Mel-spaced triangular filters (HTK mel scale) on the rfft grid."""
    if num_filters < 1:
        raise ConfigurationError('num_filters must be positive')
    if not 0.0 <= f_min < f_max <= sample_rate / 2.0:
        raise ConfigurationError(
            'need 0 <= f_min < f_max <= sample_rate / 2, got %g, %g'
            % (f_min, f_max))
    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max),
                                  num_filters + 2))
    freqs = np.arange(fft_len // 2 + 1) * sample_rate / fft_len
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    transfer = np.maximum(0.0, np.minimum(rising, falling))

    supports = []
    for f, row in enumerate(transfer):
        nz = np.flatnonzero(row)
        if len(nz) == 0:
            raise ConfigurationError(
                'filter %d has no FFT bin in its support; use fewer filters '
                'or a longer FFT' % f)
        supports.append((int(nz[0]), int(nz[-1]) + 1))
    return MelFilterBank(transfer=transfer, supports=supports,
                         centers=edges[1:-1], f_min=float(f_min),
                         f_max=float(f_max), sample_rate=sample_rate,
                         fft_len=fft_len)


def gccfb(spectra, filterbank, delay_range=DEFAULT_DELAYS):
    """GCC-PHAT restricted to, and weighted by, each filter of a filterbank.

    Every band is normalized by the filter weight of its contributing bins,
    so values stay in [-1, 1] and a band with no usable bins is all zero.

    Returns:
        GccFbFeature whose values have shape (..., P, F, D).
    """
    spectra = np.asarray(spectra)
    if spectra.shape[-2] < 2:
        raise InputError('need at least two channels')
    fft_len = filterbank.fft_len
    if spectra.shape[-1] != fft_len // 2 + 1:
        raise InputError('spectra have %d bins, filterbank expects %d'
                         % (spectra.shape[-1], fft_len // 2 + 1))
    delays = _delay_axis(delay_range)
    pairs = mic_pairs(spectra.shape[-2])
    lo = max(1, min(s[0] for s in filterbank.supports))
    hi = min(fft_len // 2, max(s[1] for s in filterbank.supports))
    bins = np.arange(lo, hi)
    weights = filterbank.transfer[:, bins]                    # (F, K)
    unit, mask = _unit_cross_power(spectra, pairs, bins)      # (..., P, K)
    cos, sin = _phase_basis(fft_len, bins, delays)
    nf, nd = weights.shape[0], len(delays)
    # fold the filter weights into the phase basis: (K, F * D)
    wcos = (weights.T[:, :, None] * cos[:, None, :]).reshape(len(bins), -1)
    wsin = (weights.T[:, :, None] * sin[:, None, :]).reshape(len(bins), -1)
    values = _project(unit, wcos, wsin).reshape(unit.shape[:-1] + (nf, nd))
    norm = mask.astype(np.float64) @ weights.T                # (..., P, F)
    values = np.where(norm[..., None] > 0,
                      values / np.where(norm > 0, norm, 1.0)[..., None], 0.0)
    return GccFbFeature(values=values, delays=delays, pairs=pairs)


def extract_features(frames, kind='gcc', delay_range=DEFAULT_DELAYS,
                     filterbank=None, chunk=64):
    """Batch feature extraction for frames of shape (N, M, L).

    Args:
        kind : 'gcc' gives (N, P, D), 'gccfb' gives (N, P, F, D).

    Returns:
        float64 array, rows in input order.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if kind == 'gccfb' and filterbank is None:
        filterbank = make_mel_filterbank(fft_len=frames.shape[-1])
    out = []
    for start in range(0, len(frames), chunk):
        spectra = window_and_fft(frames[start:start + chunk])
        if kind == 'gcc':
            out.append(gcc_phat(spectra, delay_range).values)
        elif kind == 'gccfb':
            out.append(gccfb(spectra, filterbank, delay_range).values)
        else:
            raise ConfigurationError('unknown feature kind %r' % kind)
    if not out:
        m = frames.shape[1] if frames.ndim == 3 else 2
        p, d = m * (m - 1) // 2, len(_delay_axis(delay_range))
        shape = (0, p, d) if kind == 'gcc' else (
            0, p, (filterbank.num_filters if filterbank else 0), d)
        return np.zeros(shape)
    return np.concatenate(out, axis=0)
