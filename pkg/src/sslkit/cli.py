"""Command-line entry points: simulate, train, infer, baseline and eval.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 contract
violation (bad data, incompatible files, numeric failure).
"""

import argparse
import json
import logging
import os
import sys

from . import __version__
from . import config as config_mod
from . import pipeline
from .baselines import METHODS, BaselineError
from .config import ConfigError
from .evaluation import (eval_known_n, eval_predictions, eval_unknown_n,
                         report)
from .formats import FormatError
from .geometry import GeometryError
from .nn import (ARCHITECTURES, ArchitectureError, CheckpointError,
                 ContractError, NumericError, load_weights)
from .sim import SceneError, make_dataset

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_CONTRACT = 4

log = logging.getLogger('sslkit')


def _threads(args):
    value = args.threads
    if value is None and os.environ.get('SSLKIT_THREADS'):
        value = os.environ['SSLKIT_THREADS']
    if value is None:
        return None
    try:
        value = int(value)
    except ValueError:
        raise ConfigError('thread count must be an integer, got %r' % value)
    if value < 1:
        raise ConfigError('thread count must be >= 1')
    return value


def _out_dir(args, default):
    out = args.out or default
    if os.path.isdir(out) and os.listdir(out) and not args.force:
        raise FileExistsError('output directory %s is not empty '
                              '(pass --force to overwrite)' % out)
    os.makedirs(out, exist_ok=True)
    return out


def _echo(cfg):
    return {'tool_version': __version__, 'config': cfg}


# --- commands ---------------------------------------------------------------

def cmd_simulate(args, cfg):
    recipe = pipeline.recipe_from_config(cfg)
    geometry = pipeline.geometry_from_config(cfg)
    out = args.out or 'dataset'
    manifest = make_dataset(recipe, out, geometry, force=args.force)
    counts = {}
    for entry in manifest['files']:
        ann = pipeline.read_sidecar(os.path.join(out, entry['sidecar']))
        for n in ann.counts:
            counts[n] = counts.get(n, 0) + 1
    pipeline.write_json(os.path.join(out, 'run.json'),
                        dict(_echo(cfg), command='simulate'))
    print('wrote %d files, %d frames to %s'
          % (len(manifest['files']), manifest['total_frames'], out))
    for n in sorted(counts):
        print('  frames with %d active source(s): %d' % (n, counts[n]))


def cmd_train(args, cfg):
    arch = cfg['model']['architecture']
    if arch not in ARCHITECTURES:
        raise ConfigError('model.architecture must be one of %s, got %r'
                          % (', '.join(ARCHITECTURES), arch))
    manifest = pipeline.read_manifest(args.dataset)
    num_mics = len(manifest['geometry']['mic_positions'])
    x, truths = pipeline.dataset_features(args.dataset, pipeline.featurizer(cfg))
    out = args.out or 'model'
    os.makedirs(out, exist_ok=True)
    ckpt = os.path.join(out, 'model.sslw')
    metrics = os.path.join(out, 'metrics.csv')
    if args.resume is None and os.path.exists(ckpt) and not args.force:
        raise FileExistsError('%s exists (pass --force to overwrite or '
                              '--resume to continue)' % ckpt)
    _, rows = pipeline.train_from_features(x, truths, cfg, ckpt, metrics,
                                           resume=args.resume,
                                           num_mics=num_mics)
    pipeline.write_json(os.path.join(out, 'run.json'),
                        dict(_echo(cfg), command='train', frames=len(x),
                             dataset=os.path.basename(
                                 os.path.normpath(args.dataset))))
    for phase, epoch, loss in rows:
        print('%-10s epoch %3d  loss %.6f' % (phase, epoch, loss))
    print('checkpoint: %s' % ckpt)


def _write_run(out, cfg, command, method, files):
    pipeline.write_json(os.path.join(out, 'run.json'),
                        dict(_echo(cfg), command=command, method=method,
                             inputs=[os.path.basename(f) for f in files]))


def cmd_infer(args, cfg):
    net = load_weights(args.checkpoint)
    arch = net.kind
    out = _out_dir(args, 'predictions')
    for path in args.audio:
        frames = pipeline.audio_frames(path)
        like = pipeline.infer_frames(net, frames, cfg, arch)
        pipeline.write_outputs(out, pipeline._stem(path), like, cfg, arch, path)
        print('%s: %d frames' % (path, len(like)))
    _write_run(out, cfg, 'infer', arch, args.audio)


def cmd_baseline(args, cfg):
    if args.method not in METHODS:
        raise BaselineError('unknown method %r; valid methods: %s'
                            % (args.method, ', '.join(METHODS)))
    geometry = pipeline.geometry_from_config(cfg)
    noise_file = args.noise or cfg['baseline']['noise_file']
    noise_cov = None
    if args.method == 'gevd_music':
        if not noise_file:
            raise ConfigError('gevd_music needs a noise recording '
                              '(--noise or baseline.noise_file)')
        noise_cov = pipeline.noise_cov_from_file(noise_file)
    out = _out_dir(args, 'predictions')
    for path in args.audio:
        frames = pipeline.audio_frames(path)
        if frames.shape[1] != geometry.num_mics:
            raise ContractError('%s has %d channels but the geometry has %d '
                                'microphones' % (path, frames.shape[1],
                                                 geometry.num_mics))
        spectra = pipeline.baseline_spectra(args.method, frames, cfg, geometry,
                                            noise_cov)
        pipeline.write_outputs(out, pipeline._stem(path), spectra, cfg,
                               args.method, path)
        print('%s: %d frames' % (path, len(spectra)))
    _write_run(out, cfg, 'baseline', args.method, args.audio)


def cmd_eval(args, cfg):
    kind, values, truths = pipeline.load_eval_inputs(args.outputs,
                                                     args.annotations)
    ecfg = pipeline.eval_config(cfg)
    params = pipeline.coding_params(cfg)
    out = _out_dir(args, 'report')
    method = args.method
    if args.mode == 'known':
        if kind != 'likelihood':
            raise ContractError('known mode needs likelihood dumps (.sslf)')
        results = eval_known_n(values, truths, ecfg, params)
    elif kind == 'likelihood':
        results = eval_unknown_n(values, truths, ecfg, params)
    else:
        # decoded predictions give one point at the xi they were made with
        results = eval_predictions(values, truths, params.xi, ecfg)
    with open(os.path.join(out, 'report.json'), 'w') as f:
        f.write(report(results, 'json', cfg, method))
    table = report(results, 'table', cfg, method)
    with open(os.path.join(out, 'report.txt'), 'w') as f:
        f.write('# sslkit %s\n' % __version__)
        f.write(table)
    if args.mode == 'unknown':
        with open(os.path.join(out, 'pr_curve.csv'), 'w') as f:
            f.write('# sslkit %s config=%s\n'
                    % (__version__, json.dumps(cfg, sort_keys=True)))
            f.write(report(results, 'csv', cfg, method))
    if args.mode == 'known':
        sys.stdout.write(table)
    else:
        best = max(results, key=lambda p: min(p.precision, p.recall))
        print('%d PR points; best balanced point xi=%.3f precision=%.4f '
              'recall=%.4f' % (len(results), best.xi, best.precision,
                               best.recall))


# --- parser -----------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='YAML run configuration')
    common.add_argument('--seed', type=int, help='overrides every seed')
    common.add_argument('--out', help='output directory')
    common.add_argument('--force', action='store_true',
                        help='overwrite existing outputs')
    common.add_argument('--threads', help='BLAS threads (env SSLKIT_THREADS)')
    common.add_argument('-v', '--verbose', action='store_true')

    parser = argparse.ArgumentParser(
        prog='sslkit', description='Multi-source sound localization toolkit')
    parser.add_argument('--version', action='version',
                        version='sslkit ' + __version__)
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('simulate', parents=[common],
                       help='synthesize a labelled dataset')
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser('train', parents=[common], help='train a model')
    p.add_argument('dataset', help='dataset directory from simulate')
    p.add_argument('--resume', help='checkpoint of an interrupted run')
    p.set_defaults(func=cmd_train)

    p = sub.add_parser('infer', parents=[common],
                       help='likelihoods and predictions for audio files')
    p.add_argument('checkpoint')
    p.add_argument('audio', nargs='+')
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser('baseline', parents=[common],
                       help='spatial-spectrum baseline on audio files')
    p.add_argument('method', help='one of: ' + ', '.join(METHODS))
    p.add_argument('audio', nargs='+')
    p.add_argument('--noise', help='noise-only recording (gevd_music)')
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser('eval', parents=[common],
                       help='score outputs against annotations')
    p.add_argument('mode', choices=['known', 'unknown'])
    p.add_argument('--outputs', nargs='+', required=True,
                   help='likelihood dumps or a directory of them')
    p.add_argument('--annotations', nargs='+', required=True,
                   help='sidecar JSON files or a dataset directory')
    p.add_argument('--method', default='model', help='label for the report')
    p.set_defaults(func=cmd_eval)
    return parser


def _run(args):
    cfg = config_mod.load(args.config, args.seed)
    threads = _threads(args)
    if threads is None:
        return args.func(args, cfg)
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=threads):
        return args.func(args, cfg)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format='%(levelname)s %(name)s: %(message)s')
    try:
        _run(args)
    except (ConfigError, ArchitectureError) as exc:
        print('config error: %s' % exc, file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print('I/O error: %s' % exc, file=sys.stderr)
        return EXIT_IO
    except (ContractError, CheckpointError, FormatError, SceneError,
            GeometryError, BaselineError, NumericError, FloatingPointError,
            pipeline.PipelineError, ValueError, KeyError) as exc:
        print('error: %s' % exc, file=sys.stderr)
        return EXIT_CONTRACT
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
