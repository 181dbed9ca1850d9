"""Differentiable layers in float64 numpy.

Each layer caches what its backward pass needs during ``forward`` and writes
parameter gradients into ``self.grads`` during ``backward``.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ContractError(ValueError):
    """Input does not match what a layer or network expects."""


class NumericError(FloatingPointError):
    """A non-finite value appeared inside the network."""


class Layer:
    kind = 'layer'

    def __init__(self):
        self.params = {}
        self.grads = {}
        self.buffers = {}

    def forward(self, x, training=False):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def spec(self):
        return {'kind': self.kind}


class Dense(Layer):
    kind = 'dense'

    def __init__(self, n_in, n_out, rng, relu_gain=True):
        super().__init__()
        # He-style uniform fan-in init for ReLU layers, LeCun-style otherwise
        limit = np.sqrt((6.0 if relu_gain else 3.0) / n_in)
        self.params['W'] = rng.uniform(-limit, limit, size=(n_in, n_out))
        self.params['b'] = np.zeros(n_out)
        self.n_in, self.n_out = n_in, n_out

    def forward(self, x, training=False):
        if x.shape[-1] != self.n_in:
            raise ContractError('dense layer expects %d inputs, got %d'
                                % (self.n_in, x.shape[-1]))
        self._x = x
        return x @ self.params['W'] + self.params['b']

    def backward(self, dy):
        x = self._x
        self.grads['W'] = x.reshape(-1, self.n_in).T @ dy.reshape(-1, self.n_out)
        self.grads['b'] = dy.reshape(-1, self.n_out).sum(axis=0)
        return dy @ self.params['W'].T

    def spec(self):
        return {'kind': self.kind, 'n_in': self.n_in, 'n_out': self.n_out}


class ReLU(Layer):
    kind = 'relu'

    def forward(self, x, training=False):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dy):
        return np.where(self._mask, dy, 0.0)


class Sigmoid(Layer):
    kind = 'sigmoid'

    def forward(self, x, training=False):
        # split by sign to avoid overflow in exp
        e = np.exp(-np.abs(x))
        self._y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return self._y

    def backward(self, dy):
        return dy * self._y * (1.0 - self._y)


class BatchNorm(Layer):
    """Batch normalization over all axes except the feature axis 1.

    Training mode normalizes with batch statistics and updates running
    estimates; inference mode uses the running estimates.
    """
    kind = 'batchnorm'

    def __init__(self, num_features, momentum=0.1, eps=1e-5):
        super().__init__()
        self.num_features = num_features
        self.momentum, self.eps = momentum, eps
        self.params['gamma'] = np.ones(num_features)
        self.params['beta'] = np.zeros(num_features)
        self.buffers['running_mean'] = np.zeros(num_features)
        self.buffers['running_var'] = np.ones(num_features)

    def _axes(self, x):
        return (0,) + tuple(range(2, x.ndim))

    def _bcast(self, v, x):
        return v.reshape((1, -1) + (1,) * (x.ndim - 2))

    def forward(self, x, training=False):
        if x.ndim < 2 or x.shape[1] != self.num_features:
            raise ContractError('batchnorm expects %d features on axis 1, '
                                'got shape %s' % (self.num_features, x.shape))
        axes = self._axes(x)
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            n = x.size // self.num_features
            m = self.momentum
            self.buffers['running_mean'] = (1 - m) * self.buffers['running_mean'] + m * mean
            unbiased = var * n / max(n - 1, 1)
            self.buffers['running_var'] = (1 - m) * self.buffers['running_var'] + m * unbiased
        else:
            mean = self.buffers['running_mean']
            var = self.buffers['running_var']
        self._training = training
        self._inv_std = 1.0 / np.sqrt(var + self.eps)
        self._xhat = (x - self._bcast(mean, x)) * self._bcast(self._inv_std, x)
        return (self._xhat * self._bcast(self.params['gamma'], x)
                + self._bcast(self.params['beta'], x))

    def backward(self, dy):
        xhat = self._xhat
        axes = self._axes(dy)
        self.grads['gamma'] = (dy * xhat).sum(axis=axes)
        self.grads['beta'] = dy.sum(axis=axes)
        dxhat = dy * self._bcast(self.params['gamma'], dy)
        inv_std = self._bcast(self._inv_std, dy)
        if not self._training:
            return dxhat * inv_std
        mean_dxhat = dxhat.mean(axis=axes, keepdims=True)
        mean_dxhat_xhat = (dxhat * xhat).mean(axis=axes, keepdims=True)
        return inv_std * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)

    def spec(self):
        return {'kind': self.kind, 'num_features': self.num_features}


def same_padding(size, kernel, stride):
    """(before, after) padding so that output size = ceil(size / stride)."""
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


class Conv2d(Layer):
    """2-D convolution with 'same' padding, input/output (B, C, H, W)."""
    kind = 'conv2d'

    def __init__(self, in_ch, out_ch, rng, kernel=3, stride=2):
        super().__init__()
        fan_in = in_ch * kernel * kernel
        limit = np.sqrt(6.0 / fan_in)
        self.params['W'] = rng.uniform(-limit, limit,
                                       size=(out_ch, in_ch, kernel, kernel))
        self.params['b'] = np.zeros(out_ch)
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kernel, self.stride = kernel, stride

    def out_shape(self, h, w):
        return -(-h // self.stride), -(-w // self.stride)

    def forward(self, x, training=False):
        if x.ndim != 4 or x.shape[1] != self.in_ch:
            raise ContractError('conv2d expects (B, %d, H, W), got %s'
                                % (self.in_ch, x.shape))
        b, c, h, w = x.shape
        k, s = self.kernel, self.stride
        ph, pw = same_padding(h, k, s), same_padding(w, k, s)
        xp = np.pad(x, ((0, 0), (0, 0), ph, pw))
        ho, wo = self.out_shape(h, w)
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        win = win[:, :, :ho, :wo]                        # (B, C, Ho, Wo, k, k)
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, c * k * k)
        wmat = self.params['W'].reshape(self.out_ch, -1).T
        out = cols @ wmat + self.params['b']
        self._cache = (x.shape, xp.shape, ph, pw, cols, ho, wo)
        return out.reshape(b, ho, wo, self.out_ch).transpose(0, 3, 1, 2)

    def backward(self, dy):
        (b, c, h, w), xp_shape, ph, pw, cols, ho, wo = self._cache
        k, s = self.kernel, self.stride
        dmat = dy.transpose(0, 2, 3, 1).reshape(-1, self.out_ch)
        self.grads['W'] = (cols.T @ dmat).T.reshape(self.params['W'].shape)
        self.grads['b'] = dmat.sum(axis=0)
        dcols = (dmat @ self.params['W'].reshape(self.out_ch, -1))
        dcols = dcols.reshape(b, ho, wo, c, k, k)
        dxp = np.zeros(xp_shape)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += \
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dxp[:, :, ph[0]:ph[0] + h, pw[0]:pw[0] + w]

    def spec(self):
        return {'kind': self.kind, 'in_ch': self.in_ch, 'out_ch': self.out_ch,
                'kernel': self.kernel, 'stride': self.stride}


class Flatten(Layer):
    kind = 'flatten'

    def forward(self, x, training=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


class Sequential(Layer):
    """Layers applied in order; parameters are named ``'<index>.<name>'``."""
    kind = 'sequential'

    def __init__(self, layers, check_finite=True):
        super().__init__()
        self.layers = list(layers)
        self.check_finite = check_finite
        for i, layer in enumerate(self.layers):
            for name, value in layer.params.items():
                self.params['%d.%s' % (i, name)] = value

    def named_params(self):
        for i, layer in enumerate(self.layers):
            for name in layer.params:
                yield '%d.%s' % (i, name), layer, name

    def named_buffers(self):
        for i, layer in enumerate(self.layers):
            for name in layer.buffers:
                yield '%d.%s' % (i, name), layer, name

    def forward(self, x, training=False):
        for i, layer in enumerate(self.layers):
            x = layer.forward(x, training)
            if self.check_finite and not np.all(np.isfinite(x)):
                raise NumericError('non-finite activation after layer %d (%s)'
                                   % (i, layer.kind))
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        self.grads = {'%d.%s' % (i, name): layer.grads[name]
                      for i, layer in enumerate(self.layers)
                      for name in layer.params}
        return dy

    def spec(self):
        return [layer.spec() for layer in self.layers]
