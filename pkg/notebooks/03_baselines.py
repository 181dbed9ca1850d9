"""
Spatial-spectrum baselines on one scene
=======================================

"""

import numpy as np

from sslkit.baselines import METHODS, noise_covariance, run_baseline
from sslkit.coding import local_maxima
from sslkit.dsp import frame_signal
from sslkit.geometry import default_geometry
from sslkit.sim import NoiseSpec, SceneSpec, SourceSpec, speech_like, synthesize

rng = np.random.default_rng(3)
geom = default_geometry()

def scene(azimuths, noise_rms=1e-3, seconds=0.5):
    sources = [SourceSpec(azimuth=a, distance=1.4, signal=speech_like(seconds, rng))
               for a in azimuths]
    wave, ann, _ = synthesize(SceneSpec(sources=sources, duration=seconds,
                                        geometry=geom,
                                        noise=NoiseSpec(rms=noise_rms)), rng)
    return frame_signal(wave), ann

# one source at 60 degrees
frames, _ = scene([60.0])
noise = noise_covariance(rng.standard_normal((3, 4, 8192)) * 1e-3)
print('single source at 60 deg, spectrum argmax per method:')
for m in METHODS:
    spec = run_baseline(m, frames[-1:], geom,
                        noise_cov=noise if m == 'gevd_music' else None)[0]
    print('  %-11s %+4d deg' % (m, spec.argmax() - 180))

# two sources: look at the two highest local maxima
frames, ann = scene([-100.0, 20.0])
print('two sources at -100 and 20 deg (frame truth %s):' % ann.azimuths[-1])
for m in ('srp_phat', 'srp_nonlin', 'mvdr_snr'):
    spec = run_baseline(m, frames[-1:], geom)[0]
    peaks = local_maxima(spec, 8)
    best = peaks[np.argsort(-spec[peaks])[:2]] - 180
    print('  %-11s top peaks %s' % (m, sorted(best.tolist())))
for m in ('sevd_music', 'gevd_music'):
    spec = run_baseline(m, frames[-1:], geom, num_sources=2,
                        noise_cov=noise if m == 'gevd_music' else None)[0]
    peaks = local_maxima(spec, 8)
    best = peaks[np.argsort(-spec[peaks])[:2]] - 180
    print('  %-11s top peaks %s' % (m, sorted(best.tolist())))
