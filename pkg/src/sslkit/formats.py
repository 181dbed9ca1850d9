"""SSLF binary arrays and the plain-text likelihood format.

SSLF layout (little-endian)::

    b'SSLF'  u32 version  u8 kind  u8 ndim  ndim x u32 dims
    prod(dims) x f32 values, row-major
"""

import struct

import numpy as np

MAGIC = b'SSLF'
VERSION = 1
KINDS = {'gcc_phat': 1, 'gccfb': 2, 'likelihood': 3}


class FormatError(ValueError):
    pass


def write_sslf(path, array, kind):
    if kind not in KINDS:
        raise FormatError('unknown SSLF kind %r' % kind)
    array = np.ascontiguousarray(array, dtype='<f4')
    with open(path, 'wb') as f:
        f.write(MAGIC + struct.pack('<IBB', VERSION, KINDS[kind], array.ndim))
        f.write(struct.pack('<%dI' % array.ndim, *array.shape))
        f.write(array.tobytes())


def read_sslf(path):
    """Returns (kind name, float32 array)."""
    with open(path, 'rb') as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise FormatError('%s: not an SSLF file' % path)
    if len(data) < 10:
        raise FormatError('%s: truncated header' % path)
    version, kind, ndim = struct.unpack('<IBB', data[4:10])
    if version != VERSION:
        raise FormatError('%s: unsupported version %d' % (path, version))
    names = {v: k for k, v in KINDS.items()}
    if kind not in names:
        raise FormatError('%s: unknown kind id %d' % (path, kind))
    end = 10 + 4 * ndim
    shape = struct.unpack('<%dI' % ndim, data[10:end])
    count = int(np.prod(shape)) if ndim else 1
    if len(data) != end + 4 * count:
        raise FormatError('%s: payload size does not match shape %s'
                          % (path, shape))
    return names[kind], np.frombuffer(data[end:], dtype='<f4').reshape(shape)


def write_likelihood_text(path, likelihoods):
    """One line per frame with 360 space-separated values."""
    with open(path, 'w') as f:
        for row in np.atleast_2d(likelihoods):
            f.write(' '.join('%.6f' % v for v in row) + '\n')


def read_likelihood_text(path):
    with open(path) as f:
        rows = [[float(v) for v in line.split()] for line in f if line.strip()]
    if any(len(r) != 360 for r in rows):
        raise FormatError('%s: every line needs 360 values' % path)
    return np.array(rows).reshape(-1, 360)
