"""
Cross-correlation features of a simulated two-source frame
==========================================================

"""

import numpy as np

from sslkit.dsp import extract_features, make_mel_filterbank
from sslkit.geometry import default_geometry, pair_lags
from sslkit.sim import NoiseSpec, SceneSpec, SourceSpec, speech_like, synthesize
from sslkit.dsp import frame_signal

rng = np.random.default_rng(0)
geom = default_geometry()
print('microphones (m):\n', geom.mic_positions)

# two talkers, 1.5 m away, in a 0.5 s scene with light sensor noise
azimuths = [-60.0, 45.0]
sources = [SourceSpec(azimuth=a, distance=1.5, signal=speech_like(0.5, rng))
           for a in azimuths]
wave, ann, _ = synthesize(SceneSpec(sources=sources, duration=0.5,
                                    geometry=geom, noise=NoiseSpec(rms=1e-3)),
                          rng)
frames = frame_signal(wave)
print('%d frames of 8192 samples, active sources per frame: %s'
      % (len(frames), ann.counts))

# the expected lag of mic j behind mic i for each pair, in samples
for a in azimuths:
    print('far-field lags at %+.0f deg:' % a,
          np.round(pair_lags(geom, a, 48000), 2))

# GCC-PHAT: one 51-lag curve per pair; the peak sits at one of the sources
gcc = extract_features(frames[-1:], 'gcc')[0]
print('GCC-PHAT argmax lag per pair:', gcc.argmax(axis=1) - 25)

# per-band GCC: different mel bands can be dominated by different talkers
bank = make_mel_filterbank()
fb = extract_features(frames[-1:], 'gccfb', filterbank=bank)[0]
pair = 0
lags = fb[pair].argmax(axis=1) - 25
print('pair (0, 1) lag per band:')
for f in range(0, 40, 4):
    print('  %6.0f Hz  lag %+d' % (bank.centers[f], lags[f]))
