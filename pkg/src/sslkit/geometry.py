"""Microphone array geometry and far-field propagation delays.

Azimuth 0 points along +x and grows counter-clockwise towards +y; elevation is
measured up from the x-y plane.
"""

from dataclasses import dataclass

import numpy as np

SPEED_OF_SOUND = 343.0
GEOMETRY_HEADER = '# sslkit array geometry v1'


class GeometryError(ValueError):
    pass


@dataclass
class ArrayGeometry:
    mic_positions: np.ndarray
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        pos = np.asarray(self.mic_positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 2:
            raise GeometryError('mic_positions must be (M >= 2, 3)')
        dist = np.linalg.norm(pos[:, None] - pos[None, :], axis=-1)
        if np.any(dist[np.triu_indices(len(pos), 1)] <= 0):
            raise GeometryError('microphones must be at distinct positions')
        if self.speed_of_sound <= 0:
            raise GeometryError('speed_of_sound must be positive')
        self.mic_positions = pos

    @property
    def num_mics(self):
        return self.mic_positions.shape[0]

    def rotated(self, degrees):
        """Array rotated about the z axis."""
        a = np.deg2rad(degrees)
        rot = np.array([[np.cos(a), -np.sin(a), 0.0],
                        [np.sin(a), np.cos(a), 0.0],
                        [0.0, 0.0, 1.0]])
        return ArrayGeometry(self.mic_positions @ rot.T, self.speed_of_sound)


def default_geometry():
    """Four coplanar microphones on a 6 cm square, counter-clockwise."""
    h = 0.03
    return ArrayGeometry(np.array([[h, h, 0.0], [-h, h, 0.0],
                                   [-h, -h, 0.0], [h, -h, 0.0]]))


def direction_vector(azimuth, elevation=0.0):
    """Unit vectors pointing from the array towards the given directions."""
    az = np.deg2rad(np.asarray(azimuth, dtype=np.float64))
    el = np.deg2rad(np.asarray(elevation, dtype=np.float64))
    return np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az),
                     np.sin(el) * np.ones_like(az)], axis=-1)


def far_field_delays(geometry, azimuth, elevation=0.0):
    """Arrival delay in seconds at each mic relative to the array origin.

    Returns an array of shape azimuth.shape + (M,).
    """
    u = direction_vector(azimuth, elevation)
    return -(u @ geometry.mic_positions.T) / geometry.speed_of_sound


def pair_lags(geometry, azimuth, sample_rate, elevation=0.0):
    """Far-field lag (samples) of mic j behind mic i for every pair i < j."""
    tau = far_field_delays(geometry, azimuth, elevation) * sample_rate
    m = geometry.num_mics
    return np.stack([tau[..., j] - tau[..., i]
                     for i in range(m) for j in range(i + 1, m)], axis=-1)


def save_geometry(geometry, path):
    lines = [GEOMETRY_HEADER,
             'speed_of_sound %r' % float(geometry.speed_of_sound)]
    lines += ['mic %r %r %r' % tuple(float(v) for v in p)
              for p in geometry.mic_positions]
    with open(path, 'w') as f:
        f.write('\n'.join(lines) + '\n')


def load_geometry(path):
    """Read the text geometry format written by :func:`save_geometry`.

    Blank lines and ``#`` comments are ignored; each ``mic x y z`` line adds a
    microphone (meters) and ``speed_of_sound c`` is optional.
    """
    mics = []
    c = SPEED_OF_SOUND
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split('#', 1)[0].strip()
            if not line:
                continue
            key, *vals = line.split()
            try:
                if key == 'mic' and len(vals) == 3:
                    mics.append([float(v) for v in vals])
                elif key == 'speed_of_sound' and len(vals) == 1:
                    c = float(vals[0])
                else:
                    raise ValueError(line)
            except ValueError:
                raise GeometryError('%s:%d: cannot parse %r'
                                    % (path, lineno, line)) from None
    return ArrayGeometry(np.array(mics).reshape(-1, 3), c)
