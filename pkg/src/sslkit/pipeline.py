"""Glue between configuration, datasets, models and file outputs.

Each function here backs one CLI command but is usable on its own.
"""

import csv
import json
import os

import numpy as np

from . import __version__
from .baselines import noise_covariance, run_baseline
from .config import ConfigError
from .coding import CodingParams, decode, encode_batch
from .dsp import (HOP_LEN, FRAME_LEN, SAMPLE_RATE, extract_features,
                  frame_signal, make_mel_filterbank)
from .evaluation import EvalConfig, default_thresholds
from .formats import read_sslf, write_sslf
from .geometry import ArrayGeometry, default_geometry, load_geometry
from .nn import (MLP_GCC, TSNN_GCCFB, TrainConfig, build_architecture,
                 load_weights, predict, save_weights)
from .nn.training import _run, _stage1_backward, backward
from .sim import DatasetRecipe, SceneError, read_sidecar, read_wav, write_json

PREDICTIONS_SCHEMA_VERSION = 1


class PipelineError(ValueError):
    pass


def _checked(build, section, *args, **kwargs):
    """Turn a bad value in a config section into a ConfigError."""
    try:
        return build(*args, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError('%s: %s' % (section, exc)) from None


# --- configuration views ----------------------------------------------------

def geometry_from_config(cfg):
    g = cfg['geometry']
    if g['path'] and g['mic_positions']:
        raise ConfigError('geometry: give either path or mic_positions')
    if g['path']:
        return load_geometry(g['path'])
    if g['mic_positions']:
        return _checked(lambda: ArrayGeometry(
            np.asarray(g['mic_positions'], dtype=np.float64),
            float(g['speed_of_sound'])), 'geometry')
    geom = default_geometry()
    return _checked(ArrayGeometry, 'geometry', geom.mic_positions,
                    float(g['speed_of_sound']))


def recipe_from_config(cfg):
    d = dict(cfg['dataset'])
    for key in ('mix', 'snr_range', 'distance_range', 'elevation_range',
                'gain_db_range'):
        d[key] = tuple(d[key])
    return _checked(DatasetRecipe, 'dataset', **d)


def train_config(cfg):
    return _checked(TrainConfig, 'train', **cfg['train'])


def coding_params(cfg):
    e = cfg['eval']
    return _checked(CodingParams, 'eval', sigma=e['sigma'],
                    sigma_n=e['sigma_n'], xi=e['xi'])


def eval_config(cfg):
    e = cfg['eval']
    return _checked(EvalConfig, 'eval',
                    admissible_error=e['admissible_error'],
                    sigma_n=e['sigma_n'],
                    thresholds=e['thresholds'] or default_thresholds())


def feature_kind(architecture):
    """GCC-PHAT for the MLP, filterbank GCC for the other two."""
    return 'gcc' if architecture == MLP_GCC else 'gccfb'


def model_hyper(cfg, num_mics):
    """Architecture hyperparameters with input sizes tied to the features."""
    f = cfg['features']
    lo, hi = f['delay_range']
    hyper = {'num_pairs': num_mics * (num_mics - 1) // 2,
             'num_delays': int(hi) - int(lo) + 1}
    if cfg['model']['architecture'] != MLP_GCC:
        hyper['num_bands'] = int(f['num_filters'])
    hyper.update(cfg['model']['hyper'] or {})
    return hyper


def featurizer(cfg, architecture=None):
    """Function mapping frames (N, M, 8192) to network inputs."""
    architecture = architecture or cfg['model']['architecture']
    f = cfg['features']
    kind = feature_kind(architecture)
    bank = None
    if kind == 'gccfb':
        bank = make_mel_filterbank(int(f['num_filters']), f['f_min'], f['f_max'])
    delays = tuple(int(v) for v in f['delay_range'])

    def transform(frames):
        return extract_features(frames, kind, delays, bank)
    return transform


# --- datasets ---------------------------------------------------------------

def read_manifest(data_dir):
    path = os.path.join(data_dir, 'dataset.json')
    if not os.path.isfile(path):
        raise FileNotFoundError('no dataset manifest at %s' % path)
    with open(path) as f:
        return json.load(f)


def dataset_features(data_dir, transform):
    """Features and per-frame azimuth lists, one file at a time."""
    manifest = read_manifest(data_dir)
    feats, truths = [], []
    for entry in manifest['files']:
        wave, _ = read_wav(os.path.join(data_dir, entry['wav']))
        ann = read_sidecar(os.path.join(data_dir, entry['sidecar']))
        frames = frame_signal(wave)
        if len(frames) != len(ann):
            raise SceneError('%s: %d frames but %d annotations'
                             % (entry['wav'], len(frames), len(ann)))
        feats.append(transform(frames))
        truths.extend(ann.azimuths)
    if not feats:
        raise PipelineError('%s: dataset has no files' % data_dir)
    return np.concatenate(feats), truths


# --- training ---------------------------------------------------------------

def _phases(architecture, tc):
    phases = []
    if architecture == TSNN_GCCFB and not tc.skip_stage1 and tc.stage1_epochs:
        phases.append(('stage1', tc.stage1_epochs))
    phases.append(('end_to_end', tc.epochs))
    return phases


def train_from_features(x, truths, cfg, checkpoint, log_path, resume=None,
                        num_mics=None):
    """Train the configured model, writing a checkpoint after every epoch.

    Args:
        resume : checkpoint of an interrupted run; training picks up after
                 its last completed epoch with the stored optimizer state.

    Returns:
        (network, list of (phase, epoch, loss) rows logged in this call)
    """
    arch = cfg['model']['architecture']
    tc = train_config(cfg)
    y = encode_batch(truths, coding_params(cfg))
    done = {}
    optimizer = None
    if resume is not None:
        net, header, m, v = load_weights(resume, arch, with_optimizer=True)
        state = header['meta'].get('train_state')
        if state is None or 'optimizer' not in header:
            raise PipelineError('%s has no resumable training state' % resume)
        done = state['completed']
        optimizer = tc.make_optimizer()
        optimizer.load_state(header['optimizer'], m, v)
        rows = _read_log(log_path) if os.path.isfile(log_path) else []
    else:
        m_count = num_mics or default_geometry().num_mics
        net = build_architecture(arch, model_hyper(cfg, m_count),
                                 cfg['model']['seed'])
        rows = []

    new_rows = []
    for phase, epochs in _phases(arch, tc):
        start = done.get(phase, 0)
        if start >= epochs:
            continue
        if phase == 'stage1':
            names = [k for k in net.parameters() if k.startswith('subnet1.')]
            step = _stage1_backward
        else:
            names = list(net.parameters())
            step = backward
        # a fresh optimizer per phase, except when resuming mid-phase
        opt = optimizer if (optimizer is not None and start > 0) else None

        def on_epoch(ph, epoch, loss, optim, _phase=phase):
            done[_phase] = epoch + 1
            row = (_phase, epoch + 1, loss)
            rows.append(row)
            new_rows.append(row)
            meta = {'config': cfg, 'tool_version': __version__,
                    'train_state': {'completed': dict(done),
                                    'phase': _phase}}
            save_weights(net, checkpoint, meta=meta, optimizer=optim)
            _write_log(log_path, rows, cfg)

        _run(net, x, y, tc, epochs, step, names, phase, optimizer=opt,
             start_epoch=start, on_epoch=on_epoch)
        optimizer = None
    if not new_rows and resume is None:
        raise PipelineError('no epochs to train')
    return net, new_rows


def _write_log(path, rows, cfg):
    with open(path, 'w', newline='') as f:
        f.write('# sslkit %s config=%s\n'
                % (__version__, json.dumps(cfg, sort_keys=True)))
        w = csv.writer(f, lineterminator='\n')
        w.writerow(['phase', 'epoch', 'loss'])
        for phase, epoch, loss in rows:
            w.writerow([phase, epoch, '%.10g' % loss])


def _read_log(path):
    with open(path) as f:
        lines = [l for l in f if not l.startswith('#')]
    return [(r['phase'], int(r['epoch']), float(r['loss']))
            for r in csv.DictReader(lines)]


def read_metrics(path):
    """Rows (phase, epoch, loss) of a training log."""
    return _read_log(path)


# --- inference and baselines -----------------------------------------------

def audio_frames(path):
    wave, rate = read_wav(path)
    if rate != SAMPLE_RATE:
        raise PipelineError('%s: sample rate %d, expected %d'
                            % (path, rate, SAMPLE_RATE))
    if wave.shape[1] < FRAME_LEN:
        return np.zeros((0, wave.shape[0], FRAME_LEN))
    return frame_signal(wave)


def infer_frames(net, frames, cfg, architecture):
    if len(frames) == 0:
        return np.zeros((0, 360))
    return predict(net, featurizer(cfg, architecture)(frames))


def write_outputs(out_dir, stem, likelihoods, cfg, method, source):
    """SSLF likelihood dump plus JSON predictions decoded at the config xi."""
    params = coding_params(cfg)
    sslf = os.path.join(out_dir, stem + '.sslf')
    write_sslf(sslf, likelihoods, 'likelihood')
    doc = {
        'schema_version': PREDICTIONS_SCHEMA_VERSION,
        'tool_version': __version__,
        'config': cfg,
        'method': method,
        'source': os.path.basename(source),
        'likelihoods': os.path.basename(sslf),
        'frame_len': FRAME_LEN,
        'hop': HOP_LEN,
        'sample_rate': SAMPLE_RATE,
        'xi': params.xi,
        'frames': [{'index': i, 'azimuths': decode(row, params)}
                   for i, row in enumerate(likelihoods)],
    }
    path = os.path.join(out_dir, stem + '.predictions.json')
    write_json(path, doc)
    return sslf, path


def baseline_spectra(method, frames, cfg, geometry, noise_cov=None):
    b = cfg['baseline']
    return run_baseline(method, frames, geometry, noise_cov=noise_cov,
                        num_sources=int(b['num_sources']),
                        gamma=b['nonlin_gamma'])


def noise_cov_from_file(path):
    frames = audio_frames(path)
    if len(frames) == 0:
        raise PipelineError('%s: noise recording shorter than one frame' % path)
    return noise_covariance(frames)


# --- evaluation inputs ------------------------------------------------------

def _stem(path):
    name = os.path.basename(path)
    for suffix in ('.predictions.json', '.sslf', '.json', '.wav'):
        if name.endswith(suffix):
            return name[:-len(suffix)]
    return os.path.splitext(name)[0]


def collect_outputs(paths):
    """Expand directories into sorted likelihood (or prediction) files."""
    out = []
    for p in paths:
        if os.path.isdir(p):
            found = sorted(f for f in os.listdir(p) if f.endswith('.sslf'))
            if not found:
                found = sorted(f for f in os.listdir(p)
                               if f.endswith('.predictions.json'))
            out += [os.path.join(p, f) for f in found]
        elif os.path.isfile(p):
            out.append(p)
        else:
            raise FileNotFoundError('no such output file: %s' % p)
    return out


def collect_annotations(paths):
    """Map stem -> sidecar path; directories use their dataset manifest."""
    out = {}
    for p in paths:
        if os.path.isdir(p):
            for entry in read_manifest(p)['files']:
                side = os.path.join(p, entry['sidecar'])
                out[_stem(side)] = side
        elif os.path.isfile(p):
            out[_stem(p)] = p
        else:
            raise FileNotFoundError('no such annotation file: %s' % p)
    return out


def load_eval_inputs(outputs, annotations):
    """Paired per-frame outputs and truths.

    Returns:
        (kind, values, truths) where kind is 'likelihood' (values is an
        (N, 360) array) or 'predictions' (values is a list of azimuth lists).
    """
    files = collect_outputs(outputs)
    sidecars = collect_annotations(annotations)
    if not files:
        raise PipelineError('no outputs to evaluate')
    kinds = {'likelihood' if f.endswith('.sslf') else 'predictions'
             for f in files}
    if len(kinds) > 1:
        raise PipelineError('mixing likelihood dumps and prediction files')
    kind = kinds.pop()
    values, truths = [], []
    for f in files:
        stem = _stem(f)
        if stem not in sidecars:
            raise FileNotFoundError('no annotation for %s (expected %s.json)'
                                    % (f, stem))
        side = sidecars[stem]
        if not os.path.isfile(side):
            raise FileNotFoundError('missing annotation file: %s' % side)
        ann = read_sidecar(side)
        if kind == 'likelihood':
            fk, arr = read_sslf(f)
            if fk != 'likelihood':
                raise PipelineError('%s holds %s, not likelihoods' % (f, fk))
            rows = list(np.asarray(arr, dtype=np.float64))
        else:
            with open(f) as fh:
                rows = [fr['azimuths'] for fr in json.load(fh)['frames']]
        if len(rows) != len(ann):
            raise PipelineError('%s: %d frames but annotation has %d'
                                % (f, len(rows), len(ann)))
        values.extend(rows)
        truths.extend(ann.azimuths)
    if kind == 'likelihood':
        values = np.asarray(values).reshape(-1, 360)
    return kind, values, truths
