"""Binary checkpoint container.

Layout (little-endian)::

    b'SSLW'  u32 version  u8 architecture id
    u32 n    n bytes of UTF-8 JSON (hyperparameters, seed, extra metadata)
    u32 count of tensors, then per tensor:
        u16 name length, name (UTF-8), u8 ndim, ndim x u32 dims,
        prod(dims) x f64 values (row-major)
"""

import json
import struct

import numpy as np

from .models import ARCHITECTURES, build_architecture

MAGIC = b'SSLW'
VERSION = 1


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint file."""


class ArchitectureMismatch(CheckpointError):
    pass


def _write_tensor(f, name, array):
    array = np.ascontiguousarray(array, dtype='<f8')
    raw = name.encode('utf-8')
    f.write(struct.pack('<H', len(raw)) + raw)
    f.write(struct.pack('<B', array.ndim))
    f.write(struct.pack('<%dI' % array.ndim, *array.shape))
    f.write(array.tobytes())


def _read_exact(f, n):
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError('truncated checkpoint')
    return data


def _read_tensor(f):
    (n,) = struct.unpack('<H', _read_exact(f, 2))
    name = _read_exact(f, n).decode('utf-8')
    (ndim,) = struct.unpack('<B', _read_exact(f, 1))
    shape = struct.unpack('<%dI' % ndim, _read_exact(f, 4 * ndim))
    count = int(np.prod(shape)) if ndim else 1
    data = np.frombuffer(_read_exact(f, 8 * count), dtype='<f8')
    return name, data.reshape(shape).astype(np.float64)


def save_weights(net, path, meta=None, optimizer=None):
    """Write architecture, hyperparameters, parameters, batchnorm statistics
    and (optionally) Adam moments plus free-form JSON ``meta``."""
    header = {'hyper': net.hyper, 'seed': net.seed, 'meta': meta or {}}
    tensors = [('param/' + k, v) for k, v in net.parameters().items()]
    tensors += [('buffer/' + k, v) for k, v in net.buffers().items()]
    if optimizer is not None:
        header['optimizer'] = optimizer.state()
        tensors += [('adam_m/' + k, v) for k, v in sorted(optimizer.m.items())]
        tensors += [('adam_v/' + k, v) for k, v in sorted(optimizer.v.items())]
    blob = json.dumps(header, sort_keys=True).encode('utf-8')
    with open(path, 'wb') as f:
        f.write(MAGIC + struct.pack('<IB', VERSION,
                                    ARCHITECTURES.index(net.kind)))
        f.write(struct.pack('<I', len(blob)) + blob)
        f.write(struct.pack('<I', len(tensors)))
        for name, value in tensors:
            _write_tensor(f, name, value)


def read_checkpoint(path):
    """Raw contents: (kind, header dict, {name: array})."""
    with open(path, 'rb') as f:
        if f.read(4) != MAGIC:
            raise CheckpointError('%s: not an SSLW checkpoint' % path)
        version, arch = struct.unpack('<IB', _read_exact(f, 5))
        if version != VERSION:
            raise CheckpointError('%s: unsupported version %d' % (path, version))
        if arch >= len(ARCHITECTURES):
            raise CheckpointError('%s: unknown architecture id %d' % (path, arch))
        (n,) = struct.unpack('<I', _read_exact(f, 4))
        header = json.loads(_read_exact(f, n).decode('utf-8'))
        (count,) = struct.unpack('<I', _read_exact(f, 4))
        tensors = dict(_read_tensor(f) for _ in range(count))
    return ARCHITECTURES[arch], header, tensors


def load_weights(path, kind=None, with_optimizer=False):
    """Rebuild the network stored at ``path``.

    Args:
        kind : expected architecture; a different stored one raises
               ArchitectureMismatch.
        with_optimizer : also return (header, Adam moments m, v).
    """
    stored, header, tensors = read_checkpoint(path)
    if kind is not None and kind != stored:
        raise ArchitectureMismatch('%s holds %s, expected %s'
                                   % (path, stored, kind))
    net = build_architecture(stored, header['hyper'], header['seed'])
    params = net.parameters()
    for name, p in params.items():
        value = tensors.get('param/' + name)
        if value is None or value.shape != p.shape:
            raise CheckpointError('%s: missing or misshaped parameter %s'
                                  % (path, name))
        np.copyto(p, value)
    net.set_buffers({k[len('buffer/'):]: v for k, v in tensors.items()
                     if k.startswith('buffer/')})
    if not with_optimizer:
        return net
    m = {k[len('adam_m/'):]: v for k, v in tensors.items() if k.startswith('adam_m/')}
    v = {k[len('adam_v/'):]: v for k, v in tensors.items() if k.startswith('adam_v/')}
    return net, header, m, v
