"""Run configuration: a YAML document with fixed sections.

Every section and key has a default; unknown sections or keys are rejected
with an error naming the offending key.
"""

import copy

import yaml

DEFAULTS = {
    'dataset': {
        'num_frames': 1000,
        'seed': 0,
        'frames_per_file': 4,
        'mix': [0.55, 0.28, 0.17],
        'snr_range': [0.0, 20.0],
        'distance_range': [0.5, 1.8],
        'elevation_range': [0.0, 0.0],
        'gain_db_range': [-3.0, 3.0],
        'min_separation': 20.0,
        'signal_kind': 'speech_like',
    },
    'features': {
        'delay_range': [-25, 25],
        'num_filters': 40,
        'f_min': 100.0,
        'f_max': 8000.0,
    },
    'model': {
        'architecture': 'MLP_GCC',
        'seed': 0,
        'hyper': {},
    },
    'train': {
        'batch_size': 256,
        'epochs': 10,
        'stage1_epochs': 4,
        'skip_stage1': False,
        'lr': 1e-3,
        'beta1': 0.9,
        'beta2': 0.999,
        'eps': 1e-8,
        'seed': 0,
    },
    'eval': {
        'admissible_error': 5.0,
        'sigma': 8.0,
        'sigma_n': 8.0,
        'xi': 0.5,
        'thresholds': None,
    },
    'geometry': {
        'path': None,
        'mic_positions': None,
        'speed_of_sound': 343.0,
    },
    'baseline': {
        'num_sources': 1,
        'nonlin_gamma': None,
        'noise_file': None,
    },
}


class ConfigError(ValueError):
    pass


def _merge(base, override, where):
    for key, value in override.items():
        name = '%s.%s' % (where, key) if where else key
        if key not in base:
            raise ConfigError('unknown configuration key %r' % name)
        if isinstance(base[key], dict) and key != 'hyper':
            if not isinstance(value, dict):
                raise ConfigError('%r must be a mapping' % name)
            _merge(base[key], value, name)
        else:
            base[key] = value


def resolve(override=None, seed=None):
    """Defaults merged with ``override``; ``seed`` overrides every seed."""
    cfg = copy.deepcopy(DEFAULTS)
    if override:
        if not isinstance(override, dict):
            raise ConfigError('configuration must be a mapping of sections')
        _merge(cfg, override, '')
    if seed is not None:
        for section in ('dataset', 'model', 'train'):
            cfg[section]['seed'] = int(seed)
    return cfg


def load(path=None, seed=None):
    """Read and resolve a YAML configuration file (``None`` = defaults)."""
    if path is None:
        return resolve(None, seed)
    with open(path) as f:
        try:
            doc = yaml.safe_load(f)
        except yaml.YAMLError as exc:
            raise ConfigError('%s: invalid YAML: %s' % (path, exc)) from None
    return resolve(doc or {}, seed)


def dump(cfg):
    return yaml.safe_dump(cfg, sort_keys=True)
