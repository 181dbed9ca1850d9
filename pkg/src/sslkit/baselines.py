"""Spatial-spectrum baselines: SRP-PHAT, SRP-NONLIN, MVDR-SNR, SEVD-MUSIC and
GEVD-MUSIC.

Every method scores the 360-point azimuth grid from block-averaged spatial
covariance matrices and rescales the frame's spectrum to [0, 1], so outputs
can be decoded and evaluated exactly like network likelihoods.

Steering vectors follow the signal model X_m = S exp(-j w tau_m), where tau_m
is the far-field arrival delay at microphone m, so a source at direction theta
gives R(w) proportional to a(theta) a(theta)^H.
"""

from dataclasses import dataclass

import numpy as np

from .coding import doa_grid
from .dsp import FRAME_LEN, SAMPLE_RATE, hann
from .geometry import far_field_delays

BLOCK_LEN = 2048
NUM_BLOCKS = 7
BLOCK_OVERLAP = 0.5
F_MIN = 100.0
F_MAX = 8000.0
LOADING = 1e-6
METHODS = ('srp_phat', 'srp_nonlin', 'mvdr_snr', 'sevd_music', 'gevd_music')


class BaselineError(ValueError):
    pass


@dataclass
class SpatialCovariance:
    matrices: np.ndarray        # (K, M, M) complex
    freqs: np.ndarray           # (K,) Hz
    block_len: int = BLOCK_LEN
    num_blocks: int = NUM_BLOCKS


@dataclass
class SteeringField:
    vectors: np.ndarray         # (D, K, M) complex, unit-modulus entries
    azimuths: np.ndarray
    freqs: np.ndarray


def band_bins(block_len=BLOCK_LEN, sample_rate=SAMPLE_RATE, f_min=F_MIN,
              f_max=F_MAX):
    freqs = np.arange(block_len // 2 + 1) * sample_rate / block_len
    return np.flatnonzero((freqs >= f_min) & (freqs <= f_max))


def block_covariance(frame, block_len=BLOCK_LEN, num_blocks=NUM_BLOCKS,
                     overlap=BLOCK_OVERLAP, sample_rate=SAMPLE_RATE,
                     f_min=F_MIN, f_max=F_MAX):
    """Average of x x^H over Hann-windowed blocks, per frequency bin.

    Args:
        frame : (M, 8192) samples, or a batch (N, M, 8192).

    Returns:
        SpatialCovariance with matrices (K, M, M), or (N, K, M, M) for a batch.
    """
    x = np.asarray(frame, dtype=np.float64)
    hop = int(block_len * (1.0 - overlap))
    if x.shape[-1] != FRAME_LEN or (num_blocks - 1) * hop + block_len != FRAME_LEN:
        raise BaselineError('blocks of %d with hop %d must tile a %d-sample '
                            'frame exactly, got frame length %d'
                            % (block_len, hop, FRAME_LEN, x.shape[-1]))
    starts = hop * np.arange(num_blocks)
    blocks = x[..., starts[:, None] + np.arange(block_len)]   # (..., M, B, L)
    spec = np.fft.rfft(blocks * hann(block_len), axis=-1)
    bins = band_bins(block_len, sample_rate, f_min, f_max)
    spec = spec[..., bins]                                     # (..., M, B, K)
    cov = np.einsum('...ibk,...jbk->...kij', spec, np.conj(spec)) / num_blocks
    return SpatialCovariance(cov, bins * sample_rate / block_len,
                             block_len, num_blocks)


def steering(geometry, freqs, azimuths=None, elevation=0.0):
    """Far-field steering vectors exp(-j w tau_m(theta)), shape (D, K, M)."""
    azimuths = doa_grid() if azimuths is None else np.asarray(azimuths, float)
    tau = far_field_delays(geometry, azimuths, elevation)      # (D, M)
    omega = 2.0 * np.pi * np.asarray(freqs, dtype=np.float64)
    vec = np.exp(-1j * omega[None, :, None] * tau[:, None, :])
    return SteeringField(vec, azimuths, np.asarray(freqs, dtype=np.float64))


def rescale(scores):
    """Affine map of the last axis onto [0, 1]; a flat spectrum maps to 0."""
    scores = np.asarray(scores, dtype=np.float64)
    lo = scores.min(axis=-1, keepdims=True)
    span = scores.max(axis=-1, keepdims=True) - lo
    flat = span <= 1e-12 * np.maximum(np.abs(lo), 1e-300)
    return np.where(flat, 0.0, (scores - lo) / np.where(flat, 1.0, span))


def _matrices(cov):
    return cov.matrices if isinstance(cov, SpatialCovariance) else np.asarray(cov)


def _unit_pairs(cov):
    r = _matrices(cov)
    iu, ju = np.triu_indices(r.shape[-1], 1)
    rij = r[..., iu, ju]                                       # (..., K, P)
    mag = np.abs(rij)
    return np.where(mag > 0, rij / np.where(mag > 0, mag, 1.0), 0.0), iu, ju


def _pair_phat(cov, field):
    """Re(a_i^* a_j R_ij / |R_ij|) per direction, frequency and pair i < j."""
    unit, iu, ju = _unit_pairs(cov)
    a = field.vectors
    phase = np.conj(a[..., iu]) * a[..., ju]                   # (D, K, P)
    return np.real(unit[..., None, :, :] * phase)              # (..., D, K, P)


def srp_phat_raw(cov, field):
    unit, iu, ju = _unit_pairs(cov)
    a = field.vectors
    phase = (np.conj(a[..., iu]) * a[..., ju]).reshape(len(a), -1)
    flat = unit.reshape(unit.shape[:-2] + (-1,))
    return flat.real @ phase.real.T - flat.imag @ phase.imag.T


def srp_phat(cov, field):
    """Steered response power with phase transform, rescaled to [0, 1]."""
    return rescale(srp_phat_raw(cov, field))


def default_nonlin_gamma(num_bins):
    return num_bins / 100.0


def srp_nonlin_raw(cov, field, gamma=None):
    mats = _matrices(cov)
    gamma = default_nonlin_gamma(mats.shape[-3]) if gamma is None else gamma
    if mats.ndim > 3:
        return np.stack([srp_nonlin_raw(m, field, gamma) for m in mats])
    r = _pair_phat(mats, field)
    score = 1.0 - np.tanh(gamma * np.sqrt(np.clip(1.0 - r, 0.0, None)))
    return score.sum(axis=(-1, -2))


def srp_nonlin(cov, field, gamma=None):
    """SRP-PHAT with each pair/frequency term r mapped to
    1 - tanh(gamma * sqrt(1 - r)) before summation."""
    return rescale(srp_nonlin_raw(cov, field, gamma))


def diagonal_loading(r, factor=LOADING):
    """R + delta I with delta = factor * trace(R) / M (per matrix)."""
    m = r.shape[-1]
    tr = np.real(np.trace(r, axis1=-2, axis2=-1))
    delta = np.maximum(factor * tr / m, 1e-30)
    return r + delta[..., None, None] * np.eye(m)


def _quad(a, b, c):
    """Re(a^H B c) for steering (D, K, M) against (..., K, M, M)."""
    bc = np.einsum('...kij,dkj->...dki', b, c)
    return np.real(np.einsum('dki,...dki->...dk', np.conj(a), bc))


def mvdr_snr_raw(cov, field, noise_cov=None):
    r = diagonal_loading(_matrices(cov))
    rinv = np.linalg.inv(r)
    a = field.vectors
    denom = _quad(a, rinv, a)                                  # a^H R^-1 a
    power = 1.0 / denom                                        # (..., D, K)
    if noise_cov is None:
        floor = power.min(axis=-2, keepdims=True)
    else:
        n = _matrices(noise_cov)
        # output noise power w^H N w with w = R^-1 a / (a^H R^-1 a)
        rna = np.einsum('...kij,...kjl,...klm->...kim', rinv, n, rinv)
        floor = _quad(a, rna, a) / denom ** 2
    return (power / floor).mean(axis=-1)


def mvdr_snr(cov, field, noise_cov=None):
    """MVDR output power per direction as an SNR against the noise floor.

    Without ``noise_cov`` the floor is the weakest direction's output power
    in each frequency; with it, the beamformed noise power.
    """
    return rescale(mvdr_snr_raw(cov, field, noise_cov))


def _music(r, a, num_sources):
    m = r.shape[-1]
    _, vecs = np.linalg.eigh(r)                                # ascending
    en = vecs[..., :m - num_sources]                           # (..., K, M, m-s)
    proj = np.einsum('...kmn,dkm->...dkn', np.conj(en), a)
    dist = np.sum(np.abs(proj) ** 2, axis=-1)
    # normalize by |a|^2 so whitened steering vectors of unequal length
    # compare by angle to the noise subspace only
    norm = np.sum(np.abs(a) ** 2, axis=-1)
    return (norm / np.maximum(dist, 1e-12 * norm)).mean(axis=-1)


def sevd_music(cov, field, num_sources=1):
    """MUSIC pseudo-spectrum assuming spatially white noise, averaged over
    frequency. ``num_sources`` is the signal-subspace size per bin."""
    return rescale(_music(_matrices(cov), field.vectors, num_sources))


def whitening_matrix(noise_cov):
    """Hermitian N^(-1/2) per frequency and a flag telling whether diagonal
    loading was needed because N was (near-)singular."""
    n = _matrices(noise_cov)
    n = 0.5 * (n + np.conj(np.swapaxes(n, -1, -2)))
    vals = np.linalg.eigvalsh(n)
    singular = bool(np.any(vals[..., 0] <= 1e-10 * np.maximum(vals[..., -1], 1e-300)))
    if singular:
        n = diagonal_loading(n)
    vals, vecs = np.linalg.eigh(n)
    w = np.einsum('...ij,...j,...kj->...ik', vecs, 1.0 / np.sqrt(vals),
                  np.conj(vecs))
    return w, singular


def gevd_music(cov, noise_cov, field, num_sources=1, return_info=False):
    """MUSIC after whitening with a measured noise covariance."""
    w, singular = whitening_matrix(noise_cov)
    r = _matrices(cov)
    rw = w @ r @ w
    aw = np.einsum('kij,dkj->dki', w, field.vectors) if w.ndim == 3 else \
        np.einsum('...kij,dkj->...dki', w, field.vectors)
    spectrum = rescale(_music(rw, aw, num_sources))
    if return_info:
        return spectrum, {'noise_cov_loaded': singular}
    return spectrum


def noise_covariance(noise_frames, **kwargs):
    """Average block covariance of noise-only frames (N, M, 8192)."""
    frames = np.asarray(noise_frames, dtype=np.float64)
    if frames.ndim == 2:
        frames = frames[None]
    cov = block_covariance(frames, **kwargs)
    return SpatialCovariance(cov.matrices.mean(axis=0), cov.freqs,
                             cov.block_len, cov.num_blocks)


def run_baseline(method, frames, geometry, noise_cov=None, num_sources=1,
                 gamma=None, chunk=8):
    """Spatial spectra (N, 360) for frames (N, M, 8192).

    GEVD-MUSIC needs ``noise_cov``. MVDR-SNR always scores against the
    weakest direction here; call :func:`mvdr_snr` directly for a measured
    noise floor.
    """
    if method not in METHODS:
        raise BaselineError('unknown method %r; valid methods: %s'
                            % (method, ', '.join(METHODS)))
    if method == 'gevd_music' and noise_cov is None:
        raise BaselineError('gevd_music needs a noise covariance')
    frames = np.asarray(frames, dtype=np.float64)
    field = None
    out = []
    for i in range(0, len(frames), chunk):
        cov = block_covariance(frames[i:i + chunk])
        if field is None:
            field = steering(geometry, cov.freqs)
        if method == 'srp_phat':
            out.append(srp_phat(cov, field))
        elif method == 'srp_nonlin':
            out.append(srp_nonlin(cov, field, gamma))
        elif method == 'mvdr_snr':
            out.append(mvdr_snr(cov, field))
        elif method == 'sevd_music':
            out.append(sevd_music(cov, field, num_sources))
        else:
            out.append(gevd_music(cov, noise_cov, field, num_sources))
    return np.concatenate(out) if out else np.zeros((0, 360))
