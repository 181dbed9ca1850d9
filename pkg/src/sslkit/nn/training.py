"""Mini-batch training with Adam and MSE, including the two-step TSNN scheme."""

import logging
from dataclasses import dataclass, field

import numpy as np

from .models import TSNN_GCCFB, ArchitectureError
from .optim import Adam, mse_loss

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 256
    epochs: int = 10
    stage1_epochs: int = 4
    skip_stage1: bool = False
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError('batch_size must be >= 1')
        if self.epochs < 0 or self.stage1_epochs < 0:
            raise ValueError('epoch counts must be >= 0')

    def make_optimizer(self):
        return Adam(self.lr, self.beta1, self.beta2, self.eps)


@dataclass
class TrainResult:
    losses: list = field(default_factory=list)
    optimizer: Adam = None
    phase: str = 'end_to_end'


def backward(net, x, target):
    """Training-mode forward and backward pass.

    Returns:
        loss  : mean squared error over batch and outputs
        grads : dict of parameter gradients keyed like ``net.parameters()``
    """
    out = net.forward(x, training=True)
    if out.shape != np.shape(target):
        raise ValueError('target shape %s does not match output %s'
                         % (np.shape(target), out.shape))
    loss, dout = mse_loss(out, target)
    net.backward(dout)
    return loss, net.gradients()


def _stage1_backward(net, x, target):
    out = net.forward_stage1(x, training=True)
    target = np.broadcast_to(target[:, None, :], out.shape)
    loss, dout = mse_loss(out, target)
    net.backward(dout)
    return loss, net.gradients()


def predict(net, x, batch_size=256):
    """Inference-mode outputs, computed in chunks."""
    x = np.asarray(x)
    outs = [net.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
    return np.concatenate(outs) if outs else np.zeros((0, 360))


def evaluate_loss(net, x, y, batch_size=256, stage=2):
    """Inference-mode MSE over a dataset."""
    total = 0.0
    for i in range(0, len(x), batch_size):
        if stage == 1:
            out = net.forward_stage1(x[i:i + batch_size])
            tgt = np.broadcast_to(y[i:i + batch_size, None, :], out.shape)
        else:
            out = net.forward(x[i:i + batch_size])
            tgt = y[i:i + batch_size]
        total += np.sum((out - tgt) ** 2) / out[0].size
    return float(total / len(x))


def _run(net, x, y, config, epochs, step_fn, param_names, phase,
         optimizer=None, start_epoch=0, on_epoch=None):
    if len(x) == 0:
        raise ValueError('cannot train on an empty dataset')
    if len(x) != len(y):
        raise ValueError('features and targets differ in length')
    optimizer = optimizer or config.make_optimizer()
    result = TrainResult(optimizer=optimizer, phase=phase)
    for epoch in range(start_epoch, epochs):
        # per-epoch RNG stream so resumed runs shuffle identically
        order = np.random.default_rng([config.seed, epoch, len(phase)]) \
            .permutation(len(x))
        total = 0.0
        for i in range(0, len(x), config.batch_size):
            idx = order[i:i + config.batch_size]
            loss, grads = step_fn(net, x[idx], y[idx])
            params = net.parameters()
            optimizer.step({k: params[k] for k in param_names},
                           {k: grads[k] for k in param_names})
            total += loss * len(idx)
        mean = total / len(x)
        if not np.isfinite(mean):
            raise FloatingPointError('loss became non-finite in epoch %d'
                                     % epoch)
        result.losses.append(mean)
        log.info('%s epoch %d/%d loss %.6f', phase, epoch + 1, epochs, mean)
        if on_epoch is not None:
            on_epoch(phase, epoch, mean, optimizer)
    return result


def train(net, x, y, config=TrainConfig(), optimizer=None, start_epoch=0,
          on_epoch=None):
    """Shuffled mini-batch Adam on MSE for ``config.epochs`` epochs.

    ``net`` is updated in place. Pass ``optimizer`` and ``start_epoch`` to
    resume an interrupted run.
    """
    names = list(net.parameters())
    return _run(net, x, y, config, config.epochs, backward, names,
                'end_to_end', optimizer, start_epoch, on_epoch)


def train_two_stage(net, x, y, config=TrainConfig(), on_epoch=None):
    """Subnet1 alone against the frame likelihood, then end to end.

    Returns a dict of TrainResult keyed by ``'stage1'`` (absent when
    ``config.skip_stage1``) and ``'end_to_end'``.
    """
    if net.kind != TSNN_GCCFB:
        raise ArchitectureError('two-stage training needs %s, got %s'
                                % (TSNN_GCCFB, net.kind))
    results = {}
    if not config.skip_stage1 and config.stage1_epochs > 0:
        names = [k for k in net.parameters() if k.startswith('subnet1.')]
        results['stage1'] = _run(net, x, y, config, config.stage1_epochs,
                                 _stage1_backward, names, 'stage1',
                                 on_epoch=on_epoch)
    results['end_to_end'] = train(net, x, y, config, on_epoch=on_epoch)
    return results
