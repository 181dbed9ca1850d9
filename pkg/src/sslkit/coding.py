"""Likelihood coding of source directions on a 1-degree azimuth grid."""

from dataclasses import dataclass

import numpy as np

NUM_DIRECTIONS = 360


def doa_grid():
    """Azimuths -180, -179, ..., 179 in degrees."""
    return np.arange(NUM_DIRECTIONS, dtype=np.float64) - 180.0


@dataclass(frozen=True)
class CodingParams:
    sigma: float = 8.0
    sigma_n: float = 8.0
    xi: float = 0.5

    def __post_init__(self):
        if self.sigma <= 0 or self.sigma_n <= 0:
            raise ValueError('sigma and sigma_n must be positive')
        if not 0.0 < self.xi < 1.0:
            raise ValueError('xi must lie in (0, 1), got %r' % self.xi)


def angular_distance(a, b):
    """Absolute angular difference in degrees, in [0, 180]."""
    diff = np.mod(np.abs(np.asarray(a, dtype=np.float64)
                         - np.asarray(b, dtype=np.float64)), 360.0)
    return np.minimum(diff, 360.0 - diff)


def wrap_azimuth(a):
    """Map degrees to [-180, 180)."""
    return np.mod(np.asarray(a, dtype=np.float64) + 180.0, 360.0) - 180.0


def encode(azimuths, params=CodingParams(), grid=None):
    """Max of Gaussian bumps centred on each true azimuth; zeros if none.

    Off-grid azimuths are used as-is, not snapped to the grid.
    """
    grid = doa_grid() if grid is None else grid
    azimuths = np.atleast_1d(np.asarray(azimuths, dtype=np.float64))
    if azimuths.size == 0:
        return np.zeros(len(grid))
    d = angular_distance(grid[:, None], azimuths[None, :])
    return np.exp(-d ** 2 / params.sigma ** 2).max(axis=1)


def encode_batch(truths, params=CodingParams()):
    """Encode a list of azimuth lists into an (N, 360) target matrix."""
    grid = doa_grid()
    return np.stack([encode(t, params, grid) for t in truths]) if truths \
        else np.zeros((0, NUM_DIRECTIONS))


def _neighbour_offsets(sigma_n, spacing=1.0):
    reach = int(np.ceil(sigma_n / spacing))
    offsets = np.arange(-reach, reach + 1)
    offsets = offsets[(np.abs(offsets) * spacing < sigma_n) & (offsets != 0)]
    return offsets


def local_maxima(likelihood, sigma_n=8.0):
    """Indices of circular local maxima within neighbourhood ``< sigma_n``.

    A point is a maximum if no neighbour exceeds it and no equal neighbour has
    a smaller azimuth, so a plateau yields only its smallest azimuth.
    """
    o = np.asarray(likelihood, dtype=np.float64)
    n = len(o)
    idx = np.arange(n)
    is_peak = np.ones(n, dtype=bool)
    for k in _neighbour_offsets(sigma_n, 360.0 / n):
        j = (idx + k) % n
        other = o[j]
        is_peak &= (other < o) | ((other == o) & (j > idx))
    return np.flatnonzero(is_peak)


def decode(likelihood, params=CodingParams(), xi=None):
    """Azimuths of local maxima strictly above the threshold, ascending."""
    xi = params.xi if xi is None else xi
    o = np.asarray(likelihood, dtype=np.float64)
    peaks = local_maxima(o, params.sigma_n)
    peaks = peaks[o[peaks] > xi]
    return [float(a) for a in doa_grid()[np.sort(peaks)]]


def top_n(likelihood, n, params=CodingParams()):
    """The ``n`` highest local maxima, padded if there are fewer than ``n``.

    Padding takes the largest remaining grid points (ties by smaller azimuth)
    that keep at least ``sigma_n`` from everything already selected.
    """
    if n < 1:
        raise ValueError('n must be >= 1')
    o = np.asarray(likelihood, dtype=np.float64)
    grid = doa_grid()
    peaks = local_maxima(o, params.sigma_n)
    order = peaks[np.lexsort((peaks, -o[peaks]))]
    chosen = list(order[:n])
    if len(chosen) < n:
        taken = set(chosen)
        for i in np.lexsort((np.arange(len(o)), -o)):
            if len(chosen) == n:
                break
            if i in taken:
                continue
            if all(angular_distance(grid[i], grid[c]) >= params.sigma_n
                   for c in chosen):
                chosen.append(i)
                taken.add(i)
        # pathological tiny grids: relax the spacing rule
        for i in np.lexsort((np.arange(len(o)), -o)):
            if len(chosen) == n:
                break
            if i not in taken:
                chosen.append(i)
                taken.add(i)
    return [float(grid[i]) for i in chosen]
