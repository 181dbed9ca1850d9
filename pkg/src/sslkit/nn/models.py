"""The three localization networks.

Inputs are batches of cross-correlation features:

    MLP_GCC     (B, P * D)  or (B, P, D)
    CNN_GCCFB   (B, P, F, D)
    TSNN_GCCFB  (B, P, F, D)

and every network returns (B, 360) likelihoods through a final sigmoid.
"""

import numpy as np

from ..coding import NUM_DIRECTIONS
from .layers import (BatchNorm, Conv2d, ContractError, Dense, Flatten, ReLU,
                     Sequential, Sigmoid)

MLP_GCC = 'MLP_GCC'
CNN_GCCFB = 'CNN_GCCFB'
TSNN_GCCFB = 'TSNN_GCCFB'
ARCHITECTURES = (MLP_GCC, CNN_GCCFB, TSNN_GCCFB)

DEFAULT_HYPER = {
    MLP_GCC: {'num_pairs': 6, 'num_delays': 51,
              'hidden': [1000, 1000, 500]},
    CNN_GCCFB: {'num_pairs': 6, 'num_bands': 40, 'num_delays': 51,
                'channels': [32, 64, 128, 128], 'kernel': 3, 'stride': 2},
    TSNN_GCCFB: {'num_pairs': 6, 'num_bands': 40, 'num_delays': 51,
                 'subnet1_hidden': [500, 500], 'subnet2_hidden': [500],
                 'neighborhood': 12},
}


class ArchitectureError(ValueError):
    pass


def _hidden_block(n_in, n_out, rng):
    return [Dense(n_in, n_out, rng), ReLU(), BatchNorm(n_out)]


def _mlp(n_in, hidden, n_out, rng, check_finite=True):
    layers = []
    for h in hidden:
        layers += _hidden_block(n_in, h, rng)
        n_in = h
    layers.append(Dense(n_in, n_out, rng, relu_gain=False))
    return Sequential(layers, check_finite=check_finite)


class Network:
    """Base class: a named parameter set plus forward/backward passes."""

    kind = None

    def __init__(self, hyper, seed):
        self.hyper = hyper
        self.seed = seed

    # subclasses provide self.parts: ordered {prefix: Sequential}
    def named_parameters(self):
        for prefix, part in self.parts.items():
            for name, layer, pname in part.named_params():
                yield prefix + '.' + name, layer, pname

    def parameters(self):
        return {name: layer.params[p] for name, layer, p in self.named_parameters()}

    def buffers(self):
        return {prefix + '.' + name: layer.buffers[b]
                for prefix, part in self.parts.items()
                for name, layer, b in part.named_buffers()}

    def set_buffers(self, values):
        for prefix, part in self.parts.items():
            for name, layer, b in part.named_buffers():
                layer.buffers[b] = np.array(values[prefix + '.' + name],
                                            dtype=np.float64)

    def gradients(self):
        return {prefix + '.' + name: g for prefix, part in self.parts.items()
                for name, g in part.grads.items()}

    def num_parameters(self):
        return int(sum(p.size for p in self.parameters().values()))

    def layer_specs(self):
        return {prefix: part.spec() for prefix, part in self.parts.items()}

    def __call__(self, x, training=False):
        return self.forward(x, training)


class MLPGCC(Network):
    kind = MLP_GCC

    def __init__(self, hyper, seed):
        super().__init__(hyper, seed)
        rng = np.random.default_rng(seed)
        self.input_dim = hyper['num_pairs'] * hyper['num_delays']
        self.net = _mlp(self.input_dim, hyper['hidden'], NUM_DIRECTIONS, rng)
        self.net.layers.append(Sigmoid())
        self.parts = {'mlp': self.net}

    def forward(self, x, training=False):
        x = np.asarray(x, dtype=np.float64)
        x = x.reshape(len(x), -1)
        if x.shape[1] != self.input_dim:
            raise ContractError('MLP_GCC expects %d inputs per sample, got %d'
                                % (self.input_dim, x.shape[1]))
        return self.net.forward(x, training)

    def backward(self, dy):
        return self.net.backward(dy)


class CNNGCCFB(Network):
    kind = CNN_GCCFB

    def __init__(self, hyper, seed):
        super().__init__(hyper, seed)
        rng = np.random.default_rng(seed)
        layers = []
        c_in = hyper['num_pairs']
        h, w = hyper['num_bands'], hyper['num_delays']
        for c_out in hyper['channels']:
            conv = Conv2d(c_in, c_out, rng, hyper['kernel'], hyper['stride'])
            layers += [conv, ReLU(), BatchNorm(c_out)]
            h, w = conv.out_shape(h, w)
            c_in = c_out
        self.feature_shape = (c_in, h, w)
        layers += [Flatten(), Dense(c_in * h * w, NUM_DIRECTIONS, rng,
                                    relu_gain=False), Sigmoid()]
        self.net = Sequential(layers)
        self.parts = {'cnn': self.net}

    def forward(self, x, training=False):
        x = np.asarray(x, dtype=np.float64)
        want = (self.hyper['num_pairs'], self.hyper['num_bands'],
                self.hyper['num_delays'])
        if x.ndim != 4 or x.shape[1:] != want:
            raise ContractError('CNN_GCCFB expects (B, %d, %d, %d), got %s'
                                % (want + (x.shape,)))
        return self.net.forward(x, training)

    def backward(self, dy):
        return self.net.backward(dy)


class TSNNGCCFB(Network):
    """Two-stage network.

    Stage 1 applies Subnet1 to every band (all pairs, all delays) and yields a
    360-point latent per band. Stage 2 applies Subnet2 at every direction to
    the latents of all bands within +-neighborhood grid points.
    """
    kind = TSNN_GCCFB

    def __init__(self, hyper, seed):
        super().__init__(hyper, seed)
        rng = np.random.default_rng(seed)
        p, f, d = hyper['num_pairs'], hyper['num_bands'], hyper['num_delays']
        r = hyper['neighborhood']
        self.subnet1 = _mlp(p * d, hyper['subnet1_hidden'], NUM_DIRECTIONS, rng)
        self.subnet2 = _mlp(f * (2 * r + 1), hyper['subnet2_hidden'], 1, rng)
        self.head1 = Sigmoid()
        self.head2 = Sigmoid()
        self.offsets = np.arange(-r, r + 1)
        self.parts = {'subnet1': self.subnet1, 'subnet2': self.subnet2}

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        want = (self.hyper['num_pairs'], self.hyper['num_bands'],
                self.hyper['num_delays'])
        if x.ndim != 4 or x.shape[1:] != want:
            raise ContractError('TSNN_GCCFB expects (B, %d, %d, %d), got %s'
                                % (want + (x.shape,)))
        return x

    def _latent(self, x, training):
        b, p, f, d = x.shape
        per_band = x.transpose(0, 2, 1, 3).reshape(b * f, p * d)
        return self.subnet1.forward(per_band, training).reshape(
            b, f, NUM_DIRECTIONS)

    def forward_stage1(self, x, training=False):
        """Per-band sigmoid likelihoods from Subnet1, shape (B, F, 360)."""
        x = self._check(x)
        self._stage = 1
        self._b, self._f = x.shape[0], x.shape[2]
        return self.head1.forward(self._latent(x, training), training)

    def forward(self, x, training=False):
        x = self._check(x)
        self._stage = 2
        b, f = x.shape[0], x.shape[2]
        self._b, self._f = b, f
        z = self._latent(x, training)                          # (B, F, 360)
        n = NUM_DIRECTIONS
        idx = (np.arange(n)[:, None] + self.offsets[None, :]) % n
        windows = z[:, :, idx]                                 # (B, F, 360, K)
        windows = windows.transpose(0, 2, 1, 3).reshape(b * n, -1)
        out = self.subnet2.forward(windows, training).reshape(b, n)
        return self.head2.forward(out, training)

    def backward(self, dy):
        b, f, n = self._b, self._f, NUM_DIRECTIONS
        if self._stage == 1:
            dz = self.head1.backward(dy)
            self.subnet1.backward(dz.reshape(b * f, n))
            self.subnet2.grads = {k: np.zeros_like(v)
                                  for k, v in self.subnet2.params.items()}
            return None
        dout = self.head2.backward(dy).reshape(b * n, 1)
        dwin = self.subnet2.backward(dout)
        dwin = dwin.reshape(b, n, f, len(self.offsets)).transpose(0, 2, 1, 3)
        dz = np.zeros((b, f, n))
        for k, off in enumerate(self.offsets):
            dz += np.roll(dwin[..., k], off, axis=2)
        self.subnet1.backward(dz.reshape(b * f, n))
        return None


_CLASSES = {MLP_GCC: MLPGCC, CNN_GCCFB: CNNGCCFB, TSNN_GCCFB: TSNNGCCFB}


def build_architecture(kind, hyper=None, seed=0):
    """Construct a network; ``hyper`` entries override the defaults."""
    if kind not in _CLASSES:
        raise ArchitectureError('unknown architecture %r; expected one of %s'
                                % (kind, ', '.join(ARCHITECTURES)))
    merged = dict(DEFAULT_HYPER[kind])
    unknown = set(hyper or {}) - set(merged)
    if unknown:
        raise ArchitectureError('unknown hyperparameters for %s: %s'
                                % (kind, ', '.join(sorted(unknown))))
    merged.update(hyper or {})
    return _CLASSES[kind](merged, seed)


def expected_parameter_count(specs):
    """Closed-form parameter count from layer specs (see ``layer_specs``)."""
    total = 0
    for layers in specs.values():
        for spec in layers:
            kind = spec['kind']
            if kind == 'dense':
                total += spec['n_in'] * spec['n_out'] + spec['n_out']
            elif kind == 'conv2d':
                total += (spec['out_ch'] * spec['in_ch'] * spec['kernel'] ** 2
                          + spec['out_ch'])
            elif kind == 'batchnorm':
                total += 2 * spec['num_features']
    return total
