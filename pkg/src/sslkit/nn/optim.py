import numpy as np


class Adam:
    """Bias-corrected Adam; updates parameter arrays in place."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self.m = {}
        self.v = {}

    def step(self, params, grads):
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ValueError('gradient for %s has shape %s, parameter %s'
                                 % (name, g.shape, p.shape))
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self):
        return {'step': self.step_count, 'lr': self.lr, 'beta1': self.beta1,
                'beta2': self.beta2, 'eps': self.eps}

    def load_state(self, state, m, v):
        self.step_count = int(state['step'])
        self.m = {k: np.array(a) for k, a in m.items()}
        self.v = {k: np.array(a) for k, a in v.items()}


def mse_loss(output, target):
    """Mean squared error over batch and outputs, and its gradient."""
    diff = output - target
    return float(np.mean(diff ** 2)), 2.0 * diff / diff.size
