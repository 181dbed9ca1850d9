"""Synthetic labeled multichannel scenes under free-field propagation.

Each source is rendered at every microphone with a 1/r gain and a fractional
delay (64-tap windowed sinc), sources are summed and spatially white noise is
added at a target SNR. Frames are annotated with the azimuths of the sources
that are active in them.
"""

import json
import os
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import signal as sps
from scipy.io import wavfile

from .dsp import FRAME_LEN, HOP_LEN, SAMPLE_RATE, frame_signal, num_frames
from .geometry import ArrayGeometry, default_geometry, direction_vector

SCHEMA_VERSION = 1
FRACTIONAL_TAPS = 64
ACTIVITY_RANGE_DB = 30.0
NOISE_ONLY_RMS = 0.01
SOURCE_RMS = 0.05


class SceneError(ValueError):
    pass


@dataclass
class SourceSpec:
    azimuth: float
    elevation: float = 0.0
    distance: float = 1.0
    signal: np.ndarray = None
    gain_db: float = 0.0
    onset: float = 0.0
    offset: float = None

    def __post_init__(self):
        if not -180.0 <= self.azimuth < 180.0:
            raise SceneError('azimuth must be in [-180, 180), got %r'
                             % self.azimuth)
        if self.distance <= 0.3:
            raise SceneError('distance must exceed 0.3 m, got %r'
                             % self.distance)


@dataclass
class NoiseSpec:
    kind: str = 'white'
    snr_db: float = None
    rms: float = NOISE_ONLY_RMS
    recording: np.ndarray = None


@dataclass
class SceneSpec:
    sources: list
    duration: float
    geometry: ArrayGeometry = field(default_factory=default_geometry)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    seed: int = 0
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if not 0 <= len(self.sources) <= 4:
            raise SceneError('a scene holds 0 to 4 sources')
        if self.num_samples < FRAME_LEN:
            raise SceneError('scene shorter than one frame')

    @property
    def num_samples(self):
        return int(round(self.duration * self.sample_rate))


@dataclass
class ScenarioAnnotation:
    azimuths: list
    frame_len: int = FRAME_LEN
    hop: int = HOP_LEN
    sample_rate: int = SAMPLE_RATE

    @property
    def counts(self):
        return [len(a) for a in self.azimuths]

    def __len__(self):
        return len(self.azimuths)

    def to_json(self):
        return {
            'schema_version': SCHEMA_VERSION,
            'sample_rate': self.sample_rate,
            'frame_len': self.frame_len,
            'hop': self.hop,
            'frames': [{'index': i, 'azimuths': [float(a) for a in az],
                        'count': len(az)}
                       for i, az in enumerate(self.azimuths)],
        }

    @classmethod
    def from_json(cls, doc):
        if doc.get('schema_version') != SCHEMA_VERSION:
            raise SceneError('unsupported sidecar schema version %r'
                             % doc.get('schema_version'))
        frames = sorted(doc['frames'], key=lambda fr: fr['index'])
        for fr in frames:
            if fr['count'] != len(fr['azimuths']):
                raise SceneError('frame %d: count does not match azimuths'
                                 % fr['index'])
        return cls([list(fr['azimuths']) for fr in frames], doc['frame_len'],
                   doc['hop'], doc['sample_rate'])


# --- source signals -------------------------------------------------------

def _tilt_filter(sample_rate, corner=500.0):
    # first-order low-pass: -6 dB/octave above the corner
    return sps.butter(1, corner, btype='low', fs=sample_rate)


def speech_like(duration, rng, sample_rate=SAMPLE_RATE):
    """Speech-like test signal with unit RMS.

    Alternating voiced (jittered glottal pulses plus breath noise) and
    unvoiced (noise) segments of 50-250 ms, a -6 dB/octave tilt above 500 Hz,
    and a syllabic amplitude envelope at a random 2-8 Hz rate.
    """
    n = int(round(duration * sample_rate))
    excitation = np.zeros(n)
    pos = 0
    while pos < n:
        seg = min(n - pos, int(rng.uniform(0.05, 0.25) * sample_rate))
        noise = rng.standard_normal(seg)
        if rng.random() < 0.6:
            f0 = rng.uniform(90.0, 250.0)
            pulses = np.zeros(seg)
            t = rng.uniform(0, sample_rate / f0)
            while t < seg:
                pulses[int(t)] = 1.0
                t += sample_rate / f0 * (1.0 + 0.02 * rng.standard_normal())
            pulses *= np.sqrt(seg / max(pulses.sum(), 1.0))
            excitation[pos:pos + seg] = 0.7 * pulses + 0.5 * noise
        else:
            excitation[pos:pos + seg] = noise
        pos += seg
    b, a = _tilt_filter(sample_rate)
    x = sps.lfilter(b, a, excitation)
    b, a = sps.butter(2, 80.0, btype='high', fs=sample_rate)
    x = sps.lfilter(b, a, x)
    t = np.arange(n) / sample_rate
    rate = rng.uniform(2.0, 8.0)
    env = 0.1 + 0.9 * (0.5 - 0.5 * np.cos(2 * np.pi * rate * t
                                          + rng.uniform(0, 2 * np.pi)))
    x *= env
    return x / max(np.sqrt(np.mean(x ** 2)), 1e-12)


def noise_burst(duration, rng, sample_rate=SAMPLE_RATE):
    """White noise with unit RMS."""
    return rng.standard_normal(int(round(duration * sample_rate)))


def load_mono(path, sample_rate=SAMPLE_RATE):
    """Read a WAV file, mix to mono and resample to ``sample_rate``."""
    rate, data = wavfile.read(path)
    data = np.asarray(data)
    if np.issubdtype(data.dtype, np.integer):
        data = data / float(np.iinfo(data.dtype).max)
    data = data.astype(np.float64)
    if data.ndim == 2:
        data = data.mean(axis=1)
    if rate != sample_rate:
        g = np.gcd(int(rate), int(sample_rate))
        data = sps.resample_poly(data, sample_rate // g, int(rate) // g)
    return data


def source_signal_bank(kind, duration=1.0, rng=None, paths=(),
                       count=1, sample_rate=SAMPLE_RATE):
    """Mono waveforms: ``speech_like``, ``noise_burst`` or ``file``."""
    if kind == 'file':
        return [load_mono(p, sample_rate) for p in paths]
    rng = np.random.default_rng(0) if rng is None else rng
    gen = {'speech_like': speech_like, 'noise_burst': noise_burst}.get(kind)
    if gen is None:
        raise SceneError('unknown signal kind %r' % kind)
    return [gen(duration, rng, sample_rate) for _ in range(count)]


# --- propagation ----------------------------------------------------------

def fractional_delay(x, delay, taps=FRACTIONAL_TAPS):
    """Delay ``x`` by ``delay`` samples (>= 0) without changing its length.

    Integer delays are exact shifts; otherwise a Hann-windowed sinc of
    ``taps`` taps interpolates.
    """
    x = np.asarray(x, dtype=np.float64)
    n_int = int(np.floor(delay))
    frac = delay - n_int
    y = np.zeros_like(x)
    if frac == 0.0:
        if n_int < len(x):
            y[n_int:] = x[:len(x) - n_int]
        return y
    half = taps // 2 - 1
    k = np.arange(taps) - half - frac
    h = np.sinc(k) * (0.5 + 0.5 * np.cos(np.pi * k / (taps // 2)))
    h /= h.sum()
    full = np.convolve(x, h)
    # full[t + half] aligns with x[t]; shift further by n_int
    start = half - n_int
    lo = max(0, -start)
    src = full[max(0, start):start + len(x)] if start + len(x) > 0 else []
    y[lo:lo + len(src)] = src
    return y


def render_sources(scene, rng=None):
    """Clean per-source images at every microphone, shape (S, M, T).

    Missing source signals are drawn as speech-like from ``rng``.
    """
    rng = np.random.default_rng(scene.seed) if rng is None else rng
    n = scene.num_samples
    fs = scene.sample_rate
    geom = scene.geometry
    images = np.zeros((len(scene.sources), geom.num_mics, n))
    for s, src in enumerate(scene.sources):
        sig = src.signal
        if sig is None:
            sig = speech_like(scene.duration, rng, fs)
        sig = np.asarray(sig, dtype=np.float64)[:n]
        sig = np.pad(sig, (0, n - len(sig)))
        sig = sig * SOURCE_RMS * 10.0 ** (src.gain_db / 20.0)
        gate = np.zeros(n)
        on = int(round(src.onset * fs))
        off = n if src.offset is None else int(round(src.offset * fs))
        gate[max(on, 0):max(min(off, n), 0)] = 1.0
        sig = sig * gate
        pos = src.distance * direction_vector(src.azimuth, src.elevation)
        dist = np.linalg.norm(geom.mic_positions - pos, axis=1)
        for m in range(geom.num_mics):
            images[s, m] = fractional_delay(
                sig, dist[m] / geom.speed_of_sound * fs) / dist[m]
    return images


def _frame_rms(images):
    """RMS per (source, frame), averaged over microphones."""
    frames = frame_signal(images)                  # (N, S, M, L)
    return np.sqrt(np.mean(frames ** 2, axis=(-1, -2))).T


def annotate(images, azimuths, activity_db=ACTIVITY_RANGE_DB):
    """Frames where each source is within ``activity_db`` of its peak RMS."""
    n = num_frames(images.shape[-1])
    if len(azimuths) == 0:
        return ScenarioAnnotation([[] for _ in range(n)])
    rms = _frame_rms(images)                       # (S, N)
    peak = rms.max(axis=1, keepdims=True)
    active = (rms > 0) & (rms >= peak * 10 ** (-activity_db / 20.0))
    return ScenarioAnnotation(
        [[float(azimuths[s]) for s in range(len(azimuths)) if active[s, i]]
         for i in range(n)])


def synthesize(scene, rng=None):
    """Render a scene.

    Returns:
        waveform   : (M, T) float64 mixture
        annotation : ScenarioAnnotation aligned to the 8192 / 4096 framing
        meta       : dict with the applied noise RMS, SNR and any warnings
    """
    rng = np.random.default_rng(scene.seed) if rng is None else rng
    images = render_sources(scene, rng)
    clean = images.sum(axis=0) if len(images) else np.zeros(
        (scene.geometry.num_mics, scene.num_samples))
    annotation = annotate(images, [s.azimuth for s in scene.sources])
    meta = {'warnings': []}

    noise = scene.noise
    shape = clean.shape
    if noise.kind == 'white':
        base = rng.standard_normal(shape)
    elif noise.kind == 'recorded':
        if noise.recording is None:
            raise SceneError('recorded noise requires a recording')
        base = np.asarray(noise.recording, dtype=np.float64)
        if base.shape[0] != shape[0] or base.shape[1] < shape[1]:
            raise SceneError('noise recording must be (M, >= T)')
        base = base[:, :shape[1]]
    else:
        raise SceneError('unknown noise kind %r' % noise.kind)
    base_rms = np.sqrt(np.mean(base ** 2))
    clean_power = np.mean(clean ** 2)
    if noise.snr_db is not None and clean_power > 0:
        target = np.sqrt(clean_power / 10 ** (noise.snr_db / 10.0))
    else:
        target = noise.rms
    mix = clean + base * (target / base_rms if base_rms > 0 else 0.0)
    meta['noise_rms'] = float(target)
    meta['snr_db'] = noise.snr_db

    peak = np.max(np.abs(mix)) if mix.size else 0.0
    if peak > 1.0:
        mix *= 0.99 / peak
        meta['warnings'].append('clipping: rescaled by %.6g' % (0.99 / peak))
        warnings.warn('scene mixture clipped; rescaled', RuntimeWarning)
    return mix, annotation, meta


# --- datasets -------------------------------------------------------------

@dataclass
class DatasetRecipe:
    num_frames: int = 1000
    seed: int = 0
    frames_per_file: int = 4
    # fractions of files with one source, two sources, and no source
    mix: tuple = (0.55, 0.28, 0.17)
    snr_range: tuple = (0.0, 20.0)
    distance_range: tuple = (0.5, 1.8)
    elevation_range: tuple = (0.0, 0.0)
    gain_db_range: tuple = (-3.0, 3.0)
    min_separation: float = 20.0
    signal_kind: str = 'speech_like'

    def __post_init__(self):
        if self.num_frames < 1 or self.frames_per_file < 1:
            raise SceneError('num_frames and frames_per_file must be >= 1')
        if len(self.mix) != 3 or min(self.mix) < 0 or sum(self.mix) <= 0:
            raise SceneError('mix must be three nonnegative fractions')


def _sample_scene(recipe, index, frames, geometry):
    rng = np.random.default_rng([recipe.seed, index])
    p = np.asarray(recipe.mix, dtype=np.float64)
    count = (1, 2, 0)[rng.choice(3, p=p / p.sum())]
    azimuths = []
    while len(azimuths) < count:
        a = float(rng.uniform(-180.0, 180.0))
        if a >= 180.0:
            a = -180.0
        d = [abs((a - b + 180.0) % 360.0 - 180.0) for b in azimuths]
        if all(x >= recipe.min_separation for x in d):
            azimuths.append(a)
    duration = (FRAME_LEN + (frames - 1) * HOP_LEN) / SAMPLE_RATE
    sources = []
    for a in azimuths:
        sig = source_signal_bank(recipe.signal_kind, duration, rng)[0]
        sources.append(SourceSpec(
            azimuth=a,
            elevation=float(rng.uniform(*recipe.elevation_range)),
            distance=float(rng.uniform(*recipe.distance_range)),
            signal=sig,
            gain_db=float(rng.uniform(*recipe.gain_db_range))))
    snr = float(rng.uniform(*recipe.snr_range))
    noise = NoiseSpec(snr_db=snr if count else None)
    return SceneSpec(sources=sources, duration=duration, geometry=geometry,
                     noise=noise, seed=recipe.seed), rng


def generate_scenes(recipe, geometry=None):
    """Yield ``(index, waveform, annotation, meta)`` covering exactly
    ``recipe.num_frames`` frames. Every file draws from its own RNG stream
    seeded by ``(seed, index)``.
    """
    geometry = default_geometry() if geometry is None else geometry
    remaining = recipe.num_frames
    index = 0
    while remaining > 0:
        frames = min(recipe.frames_per_file, remaining)
        scene, rng = _sample_scene(recipe, index, frames, geometry)
        with warnings.catch_warnings():
            warnings.simplefilter('ignore', RuntimeWarning)
            wave, ann, meta = synthesize(scene, rng)
        meta['scene'] = {
            'snr_db': scene.noise.snr_db,
            'sources': [{'azimuth': s.azimuth, 'elevation': s.elevation,
                         'distance': s.distance, 'gain_db': s.gain_db}
                        for s in scene.sources]}
        yield index, wave, ann, meta
        remaining -= frames
        index += 1


def generate_frames(recipe, geometry=None, transform=None):
    """In-memory dataset: per-frame arrays and per-frame azimuth lists.

    Without ``transform`` the frames (N, M, L) are returned; otherwise
    ``transform`` maps each scene's frames to features, which keeps memory
    bounded for large recipes.
    """
    out, truths = [], []
    for _, wave, ann, _ in generate_scenes(recipe, geometry):
        frames = frame_signal(wave)
        out.append(frames if transform is None else transform(frames))
        truths.extend(ann.azimuths)
    return np.concatenate(out), truths


def _check_outdir(out_dir, force):
    if os.path.isdir(out_dir) and os.listdir(out_dir) and not force:
        raise FileExistsError('output directory %s is not empty '
                              '(use force to overwrite)' % out_dir)
    os.makedirs(out_dir, exist_ok=True)


def write_json(path, doc):
    with open(path, 'w') as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write('\n')


def make_dataset(recipe, out_dir, geometry=None, force=False):
    """Write a WAV (float32) plus JSON sidecar per scene and a manifest.

    Returns the manifest dict (also written to ``dataset.json``).
    """
    geometry = default_geometry() if geometry is None else geometry
    _check_outdir(out_dir, force)
    files = []
    for index, wave, ann, meta in generate_scenes(recipe, geometry):
        stem = 'scene_%05d' % index
        wavfile.write(os.path.join(out_dir, stem + '.wav'), SAMPLE_RATE,
                      wave.T.astype(np.float32))
        doc = ann.to_json()
        doc['scene'] = meta['scene']
        doc['warnings'] = meta['warnings']
        write_json(os.path.join(out_dir, stem + '.json'), doc)
        files.append({'wav': stem + '.wav', 'sidecar': stem + '.json',
                      'frames': len(ann)})
    recipe_doc = asdict(recipe)
    recipe_doc = {k: list(v) if isinstance(v, tuple) else v
                  for k, v in recipe_doc.items()}
    manifest = {
        'schema_version': SCHEMA_VERSION,
        'recipe': recipe_doc,
        'geometry': {'mic_positions': geometry.mic_positions.tolist(),
                     'speed_of_sound': geometry.speed_of_sound},
        'files': files,
        'total_frames': sum(f['frames'] for f in files),
    }
    write_json(os.path.join(out_dir, 'dataset.json'), manifest)
    return manifest


def read_wav(path):
    """(M, T) float64 samples and the sample rate."""
    rate, data = wavfile.read(path)
    data = np.asarray(data)
    if np.issubdtype(data.dtype, np.integer):
        data = data / float(np.iinfo(data.dtype).max)
    data = np.atleast_2d(data.astype(np.float64).T) if data.ndim == 2 \
        else data.astype(np.float64)[None, :]
    return data, rate


def read_sidecar(path):
    with open(path) as f:
        return ScenarioAnnotation.from_json(json.load(f))


def load_dataset(data_dir):
    """Frames (N, M, L) and per-frame azimuth lists of a dataset directory."""
    with open(os.path.join(data_dir, 'dataset.json')) as f:
        manifest = json.load(f)
    frames, truths = [], []
    for entry in manifest['files']:
        wave, _ = read_wav(os.path.join(data_dir, entry['wav']))
        ann = read_sidecar(os.path.join(data_dir, entry['sidecar']))
        fr = frame_signal(wave)
        if len(fr) != len(ann):
            raise SceneError('%s: %d frames but %d annotations'
                             % (entry['wav'], len(fr), len(ann)))
        frames.append(fr)
        truths.extend(ann.azimuths)
    return np.concatenate(frames), truths
