import csv
import hashlib
import json
import os
import subprocess
import sys

import numpy as np
import pytest
from scipy.io import wavfile

from sslkit import cli
from sslkit.coding import angular_distance
from sslkit.formats import read_sslf
from sslkit.nn import load_weights
from sslkit.sim import (NoiseSpec, SceneSpec, SourceSpec, noise_burst,
                        speech_like, synthesize)


def run(*argv):
    return cli.main([str(a) for a in argv])


def _yaml(path, text):
    path.write_text(text)
    return path


def _tree_hash(root):
    h = hashlib.sha256()
    for dirpath, _, files in sorted(os.walk(root)):
        for name in sorted(files):
            p = os.path.join(dirpath, name)
            h.update(os.path.relpath(p, root).encode())
            h.update(open(p, 'rb').read())
    return h.hexdigest()


def _metrics(path):
    with open(path) as f:
        header = f.readline()
        rows = list(csv.DictReader(f))
    return header, rows


def _write_scene(path, azimuths, seconds=0.6, seed=0):
    rng = np.random.default_rng(seed)
    sources = [SourceSpec(azimuth=a, distance=1.5,
                          signal=speech_like(seconds, rng)) for a in azimuths]
    wave, _, _ = synthesize(SceneSpec(sources=sources, duration=seconds,
                                      noise=NoiseSpec(rms=1e-4), seed=seed),
                            rng)
    wavfile.write(path, 48000, wave.T.astype(np.float32))
    return wave.shape[1]


@pytest.fixture(scope='module')
def toy(tmp_path_factory):
    """500-frame dataset plus a 10-epoch MLP trained on it."""
    root = tmp_path_factory.mktemp('toy')
    cfg = _yaml(root / 'run.yaml',
                'dataset:\n  num_frames: 500\n  seed: 4\n'
                'train:\n  epochs: 10\n  batch_size: 64\n')
    assert run('simulate', '--config', cfg, '--out', root / 'data') == 0
    assert run('train', root / 'data', '--config', cfg,
               '--out', root / 'model') == 0
    return root, cfg


# --- simulate --------------------------------------------------------------------

def test_simulate_counts_and_determinism(tmp_path, capsys):
    cfg = _yaml(tmp_path / 'c.yaml', 'dataset:\n  num_frames: 100\n')
    assert run('simulate', '--config', cfg, '--out', tmp_path / 'a') == 0
    out = capsys.readouterr().out
    assert '100 frames' in out
    manifest = json.loads((tmp_path / 'a' / 'dataset.json').read_text())
    assert manifest['total_frames'] == 100
    frames = 0
    for entry in manifest['files']:
        doc = json.loads((tmp_path / 'a' / entry['sidecar']).read_text())
        frames += len(doc['frames'])
    assert frames == 100
    assert run('simulate', '--config', cfg, '--out', tmp_path / 'b') == 0
    assert _tree_hash(tmp_path / 'a') == _tree_hash(tmp_path / 'b')
    run_doc = json.loads((tmp_path / 'a' / 'run.json').read_text())
    assert run_doc['config']['dataset']['num_frames'] == 100
    assert 'tool_version' in run_doc


def test_simulate_seed_flag_changes_output(tmp_path):
    cfg = _yaml(tmp_path / 'c.yaml', 'dataset:\n  num_frames: 8\n')
    assert run('simulate', '--config', cfg, '--out', tmp_path / 'a') == 0
    assert run('simulate', '--config', cfg, '--seed', 9,
               '--out', tmp_path / 'b') == 0
    assert _tree_hash(tmp_path / 'a') != _tree_hash(tmp_path / 'b')


def test_simulate_refuses_non_empty_dir(tmp_path, capsys):
    cfg = _yaml(tmp_path / 'c.yaml', 'dataset:\n  num_frames: 4\n')
    assert run('simulate', '--config', cfg, '--out', tmp_path / 'a') == 0
    assert run('simulate', '--config', cfg, '--out', tmp_path / 'a') == 3
    assert 'force' in capsys.readouterr().err
    assert run('simulate', '--config', cfg, '--out', tmp_path / 'a',
               '--force') == 0


def test_bad_key_exits_config_error(tmp_path, capsys):
    cfg = _yaml(tmp_path / 'c.yaml', 'train:\n  epoch: 3\n')
    assert run('simulate', '--config', cfg, '--out', tmp_path / 'a') == 2
    assert 'train.epoch' in capsys.readouterr().err
    cfg = _yaml(tmp_path / 'd.yaml', 'dataset:\n  num_frames: -1\n')
    assert run('simulate', '--config', cfg, '--out', tmp_path / 'b') == 2


def test_missing_config_file_is_io_error(tmp_path, capsys):
    assert run('simulate', '--config', tmp_path / 'nope.yaml') == 3
    assert 'nope.yaml' in capsys.readouterr().err


# --- train ----------------------------------------------------------------------

def test_mlp_training_progresses(toy):
    root, _ = toy
    header, rows = _metrics(root / 'model' / 'metrics.csv')
    assert header.startswith('# sslkit ') and 'config=' in header
    assert [int(r['epoch']) for r in rows] == list(range(1, 11))
    assert {r['phase'] for r in rows} == {'end_to_end'}
    assert float(rows[9]['loss']) < float(rows[0]['loss'])
    net, header, _, _ = load_weights(str(root / 'model' / 'model.sslw'),
                                     with_optimizer=True)
    assert net.kind == 'MLP_GCC'
    assert header['meta']['config']['train']['epochs'] == 10
    assert header['meta']['train_state']['completed'] == {'end_to_end': 10}


def test_train_refuses_overwrite(toy, capsys):
    root, cfg = toy
    assert run('train', root / 'data', '--config', cfg,
               '--out', root / 'model') == 3
    assert '--resume' in capsys.readouterr().err


def test_train_missing_dataset(tmp_path, capsys):
    assert run('train', tmp_path / 'nothing', '--out', tmp_path / 'm') == 3
    assert 'nothing' in capsys.readouterr().err


def test_resume_continues_and_matches_uninterrupted(toy, tmp_path):
    root, _ = toy
    short = _yaml(tmp_path / 's.yaml', 'dataset:\n  num_frames: 500\n'
                  'train:\n  epochs: 2\n  batch_size: 64\n')
    full = _yaml(tmp_path / 'f.yaml', 'dataset:\n  num_frames: 500\n'
                 'train:\n  epochs: 4\n  batch_size: 64\n')
    assert run('train', root / 'data', '--config', short,
               '--out', tmp_path / 'r') == 0
    ckpt = tmp_path / 'r' / 'model.sslw'
    assert run('train', root / 'data', '--config', full,
               '--out', tmp_path / 'r', '--resume', ckpt) == 0
    _, rows = _metrics(tmp_path / 'r' / 'metrics.csv')
    assert [int(r['epoch']) for r in rows] == [1, 2, 3, 4]
    assert run('train', root / 'data', '--config', full,
               '--out', tmp_path / 'u') == 0
    _, straight = _metrics(tmp_path / 'u' / 'metrics.csv')
    assert [r['loss'] for r in rows] == [r['loss'] for r in straight]
    a = load_weights(str(ckpt)).parameters()
    b = load_weights(str(tmp_path / 'u' / 'model.sslw')).parameters()
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])


def test_tsnn_logs_two_phases(toy, tmp_path):
    root, _ = toy
    cfg = _yaml(tmp_path / 't.yaml',
                'model:\n  architecture: TSNN_GCCFB\n  hyper:\n'
                '    subnet1_hidden: [8, 8]\n    subnet2_hidden: [8]\n'
                'train:\n  batch_size: 128\n')
    assert run('train', root / 'data', '--config', cfg,
               '--out', tmp_path / 't') == 0
    _, rows = _metrics(tmp_path / 't' / 'metrics.csv')
    phases = [r['phase'] for r in rows]
    assert phases == ['stage1'] * 4 + ['end_to_end'] * 10


def test_unknown_architecture(toy, tmp_path, capsys):
    root, _ = toy
    cfg = _yaml(tmp_path / 'a.yaml', 'model:\n  architecture: RNN\n')
    assert run('train', root / 'data', '--config', cfg,
               '--out', tmp_path / 'x') == 2
    assert 'MLP_GCC' in capsys.readouterr().err


# --- infer / baseline -----------------------------------------------------------

def test_infer_frame_count_and_determinism(toy, tmp_path):
    root, cfg = toy
    wav = tmp_path / 'clip.wav'
    n = _write_scene(wav, [30.0], seconds=0.9)
    ckpt = root / 'model' / 'model.sslw'
    assert run('infer', ckpt, wav, '--config', cfg, '--out', tmp_path / 'a') == 0
    assert run('infer', ckpt, wav, '--config', cfg, '--out', tmp_path / 'b') == 0
    assert _tree_hash(tmp_path / 'a') == _tree_hash(tmp_path / 'b')
    kind, like = read_sslf(tmp_path / 'a' / 'clip.sslf')
    assert kind == 'likelihood'
    assert like.shape == ((n - 8192) // 4096 + 1, 360)
    doc = json.loads((tmp_path / 'a' / 'clip.predictions.json').read_text())
    assert len(doc['frames']) == len(like)
    assert doc['method'] == 'MLP_GCC' and doc['xi'] == 0.5
    assert doc['config']['train']['epochs'] == 10


def test_infer_rejects_wrong_rate(toy, tmp_path, capsys):
    root, cfg = toy
    wav = tmp_path / 'slow.wav'
    wavfile.write(wav, 16000, np.zeros((20000, 4), np.float32))
    assert run('infer', root / 'model' / 'model.sslw', wav,
               '--out', tmp_path / 'o') == 4
    assert '48' in capsys.readouterr().err


def test_baseline_schema_matches_infer_and_finds_60(toy, tmp_path):
    root, cfg = toy
    wav = tmp_path / 'src.wav'
    _write_scene(wav, [60.0], seconds=0.6, seed=3)
    assert run('baseline', 'srp_phat', wav, '--config', cfg,
               '--out', tmp_path / 'b') == 0
    assert run('infer', root / 'model' / 'model.sslw', wav, '--config', cfg,
               '--out', tmp_path / 'i') == 0
    b = json.loads((tmp_path / 'b' / 'src.predictions.json').read_text())
    i = json.loads((tmp_path / 'i' / 'src.predictions.json').read_text())
    assert set(b) == set(i)
    assert set(b['frames'][0]) == set(i['frames'][0])
    assert b['method'] == 'srp_phat'
    _, spectra = read_sslf(tmp_path / 'b' / 'src.sslf')
    for s in spectra:
        assert angular_distance(np.argmax(s) - 180, 60.0) <= 2


def test_baseline_unknown_method_lists_valid(tmp_path, capsys):
    wav = tmp_path / 'x.wav'
    _write_scene(wav, [0.0], seconds=0.2)
    assert run('baseline', 'beamformit', wav, '--out', tmp_path / 'o') == 4
    err = capsys.readouterr().err
    for name in ('srp_phat', 'srp_nonlin', 'mvdr_snr', 'sevd_music',
                 'gevd_music'):
        assert name in err


def test_gevd_baseline_uses_noise_file(tmp_path):
    wav = tmp_path / 'x.wav'
    _write_scene(wav, [-100.0], seconds=0.4, seed=2)
    noise = tmp_path / 'n.wav'
    r = np.random.default_rng(0).standard_normal((20000, 4)) * 1e-3
    wavfile.write(noise, 48000, r.astype(np.float32))
    assert run('baseline', 'gevd_music', wav, '--out', tmp_path / 'o') == 2
    assert run('baseline', 'gevd_music', wav, '--noise', noise,
               '--out', tmp_path / 'g') == 0
    _, spectra = read_sslf(tmp_path / 'g' / 'x.sslf')
    assert angular_distance(np.argmax(spectra[0]) - 180, -100.0) <= 2


# --- eval -----------------------------------------------------------------------

def _perfect_dumps(data_dir, out_dir):
    from sslkit.coding import encode_batch
    from sslkit.formats import write_sslf
    from sslkit.sim import read_sidecar
    manifest = json.loads((data_dir / 'dataset.json').read_text())
    os.makedirs(out_dir, exist_ok=True)
    for entry in manifest['files']:
        ann = read_sidecar(data_dir / entry['sidecar'])
        stem = entry['wav'][:-4]
        write_sslf(out_dir / (stem + '.sslf'),
                   encode_batch(ann.azimuths).astype(np.float32), 'likelihood')


def test_eval_known_perfect(toy, tmp_path):
    root, _ = toy
    _perfect_dumps(root / 'data', tmp_path / 'p')
    assert run('eval', 'known', '--outputs', tmp_path / 'p',
               '--annotations', root / 'data', '--out', tmp_path / 'r') == 0
    doc = json.loads((tmp_path / 'r' / 'report.json').read_text())
    # simulated azimuths are off-grid: only grid quantization remains
    assert doc['metrics']['overall']['mae'] <= 0.5
    assert doc['metrics']['overall']['acc'] == 1.0
    assert doc['config']['eval']['admissible_error'] == 5
    assert 'Overall' in (tmp_path / 'r' / 'report.txt').read_text()


def test_eval_known_perfect_on_grid(tmp_path):
    from sslkit.coding import encode_batch
    from sslkit.formats import write_sslf
    from sslkit.sim import ScenarioAnnotation
    truths = [[10.0], [-40.0, 40.0], [], [179.0, -100.0]]
    (tmp_path / 'clip.json').write_text(
        json.dumps(ScenarioAnnotation(truths).to_json()))
    write_sslf(tmp_path / 'clip.sslf', encode_batch(truths).astype(np.float32),
               'likelihood')
    assert run('eval', 'known', '--outputs', tmp_path / 'clip.sslf',
               '--annotations', tmp_path / 'clip.json',
               '--out', tmp_path / 'r') == 0
    doc = json.loads((tmp_path / 'r' / 'report.json').read_text())
    assert doc['metrics']['overall']['mae'] == 0.0
    assert doc['metrics']['overall']['acc'] == 1.0
    assert doc['metrics']['N=2']['frames'] == 2


def test_eval_unknown_101_rows(toy, tmp_path, capsys):
    root, _ = toy
    _perfect_dumps(root / 'data', tmp_path / 'p')
    assert run('eval', 'unknown', '--outputs', tmp_path / 'p',
               '--annotations', root / 'data', '--out', tmp_path / 'r') == 0
    lines = (tmp_path / 'r' / 'pr_curve.csv').read_text().splitlines()
    assert lines[0].startswith('# sslkit') and 'config=' in lines[0]
    assert lines[1] == 'xi,precision,recall,tp,fp,fn'
    assert len(lines) - 2 == 101
    assert '101 PR points' in capsys.readouterr().out


def test_eval_missing_annotation(toy, tmp_path, capsys):
    root, _ = toy
    _perfect_dumps(root / 'data', tmp_path / 'p')
    missing = tmp_path / 'gone' / 'scene_00000.json'
    assert run('eval', 'known', '--outputs', tmp_path / 'p' / 'scene_00000.sslf',
               '--annotations', missing, '--out', tmp_path / 'r') == 3
    assert str(missing) in capsys.readouterr().err


def test_eval_reports_deterministic(toy, tmp_path):
    root, _ = toy
    ckpt = root / 'model' / 'model.sslw'
    wavs = sorted((root / 'data').glob('scene_0000*.wav'))
    assert run('infer', ckpt, *wavs, '--out', tmp_path / 'i') == 0
    sidecars = [w.with_suffix('.json') for w in wavs]
    for name in ('a', 'b'):
        assert run('eval', 'unknown', '--outputs', tmp_path / 'i',
                   '--annotations', *sidecars, '--out', tmp_path / name) == 0
    assert _tree_hash(tmp_path / 'a') == _tree_hash(tmp_path / 'b')


# --- threads --------------------------------------------------------------------

def test_threads_flag_and_env(tmp_path, monkeypatch):
    from threadpoolctl import threadpool_info
    seen = []
    real = cli.cmd_simulate

    def spy(args, cfg):
        seen.append([p['num_threads'] for p in threadpool_info()])
        return real(args, cfg)

    monkeypatch.setattr(cli, 'cmd_simulate', spy)
    parser_func = cli.build_parser
    monkeypatch.setattr(cli, 'build_parser', lambda: _rebind(parser_func(), spy))
    cfg = _yaml(tmp_path / 'c.yaml', 'dataset:\n  num_frames: 4\n')
    assert run('simulate', '--config', cfg, '--out', tmp_path / 'a',
               '--threads', 1) == 0
    monkeypatch.setenv('SSLKIT_THREADS', '1')
    assert run('simulate', '--config', cfg, '--out', tmp_path / 'b') == 0
    assert all(n == 1 for s in seen for n in s)
    monkeypatch.setenv('SSLKIT_THREADS', 'many')
    assert run('simulate', '--config', cfg, '--out', tmp_path / 'c') == 2
    assert run('simulate', '--config', cfg, '--out', tmp_path / 'd',
               '--threads', 0) == 2


def _rebind(parser, func):
    for action in parser._subparsers._group_actions:
        action.choices['simulate'].set_defaults(func=func)
    return parser


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, '-m', 'sslkit.cli', '--version'],
                         capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith('sslkit ')
