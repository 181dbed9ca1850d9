"""Frame-level evaluation for known and unknown numbers of sources."""

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from itertools import permutations

import numpy as np

from . import __version__
from .coding import CodingParams, angular_distance, decode, top_n

REPORT_SCHEMA_VERSION = 1


def default_thresholds():
    """101 thresholds 0.005, 0.01, 0.02, ..., 0.99, 0.995."""
    grid = np.round(np.linspace(0.0, 1.0, 101), 2)
    grid[0], grid[-1] = 0.005, 0.995
    return [float(x) for x in grid]


@dataclass
class EvalConfig:
    admissible_error: float = 5.0
    sigma_n: float = 8.0
    thresholds: list = field(default_factory=default_thresholds)

    def __post_init__(self):
        if self.admissible_error <= 0:
            raise ValueError('admissible_error must be positive')
        t = np.asarray(self.thresholds, dtype=np.float64)
        if t.size == 0 or np.any(np.diff(t) <= 0) or t[0] <= 0 or t[-1] >= 1:
            raise ValueError('thresholds must be strictly increasing in (0, 1)')


@dataclass
class FrameResult:
    index: int
    truth: list
    predictions: list
    matches: list          # (truth index, prediction index, error)


@dataclass
class PrPoint:
    xi: float
    precision: float
    recall: float
    tp: int
    fp: int
    fn: int


def match_optimal(truth, predictions):
    """One-to-one assignment minimizing the total angular error.

    Exhaustive over permutations, which is fine for the handful of sources
    per frame. Ties in total error go to the assignment whose sorted error
    list is smallest, so the result does not depend on input order.
    Returns a list of (truth index, prediction index, error).
    """
    if not truth or not predictions:
        return []
    err = angular_distance(np.asarray(truth, dtype=np.float64)[:, None],
                           np.asarray(predictions, dtype=np.float64)[None, :])
    transpose = len(truth) > len(predictions)
    e = err.T if transpose else err
    best, best_key = None, None
    for perm in permutations(range(e.shape[1]), e.shape[0]):
        errs = [float(e[i, j]) for i, j in enumerate(perm)]
        key = (round(sum(errs), 9), sorted(errs))
        if best_key is None or key < best_key:
            best, best_key = perm, key
    pairs = [(j, i) if transpose else (i, j) for i, j in enumerate(best)]
    return sorted((i, j, float(err[i, j])) for i, j in pairs)


def match_greedy(truth, predictions):
    """Nearest-first one-to-one matching.

    Equal errors are ordered by the azimuth values, not list positions, so
    shuffling either list does not change the matched errors.
    """
    if not truth or not predictions:
        return []
    err = angular_distance(np.asarray(truth, dtype=np.float64)[:, None],
                           np.asarray(predictions, dtype=np.float64)[None, :])
    pairs = sorted((float(err[i, j]), float(truth[i]), float(predictions[j]),
                    i, j) for i in range(len(truth))
                   for j in range(len(predictions)))
    used_t, used_p, out = set(), set(), []
    for e, _, _, i, j in pairs:
        if i not in used_t and j not in used_p:
            used_t.add(i)
            used_p.add(j)
            out.append((i, j, e))
    return sorted(out)


def eval_known_n(outputs, truths, cfg=EvalConfig(), params=None):
    """MAE and ACC with the true source count per frame.

    The N highest peaks of each output are matched to the N ground-truth
    azimuths; frames with N = 0 are skipped.

    Returns:
        dict with 'overall' and per-N ('N=1', 'N=2', ...) entries, each
        holding mae, acc, frames and predictions, plus the list of
        FrameResult under 'frames'.
    """
    params = params or CodingParams(sigma_n=cfg.sigma_n)
    errors = {}
    frames = []
    for idx, (out, truth) in enumerate(zip(outputs, truths)):
        n = len(truth)
        if n == 0:
            continue
        preds = top_n(out, n, params)
        matches = match_optimal(truth, preds)
        frames.append(FrameResult(idx, list(truth), preds, matches))
        errors.setdefault(n, []).extend(e for _, _, e in matches)

    def summary(errs, nframes):
        errs = np.asarray(errs, dtype=np.float64)
        return {'mae': float(errs.mean()) if errs.size else float('nan'),
                'acc': float(np.mean(errs < cfg.admissible_error))
                if errs.size else float('nan'),
                'frames': nframes, 'predictions': int(errs.size)}

    counts = {}
    for fr in frames:
        counts[len(fr.truth)] = counts.get(len(fr.truth), 0) + 1
    result = {'overall': summary([e for n in sorted(errors) for e in errors[n]],
                                 len(frames))}
    for n in sorted(errors):
        result['N=%d' % n] = summary(errors[n], counts[n])
    result['frames'] = frames
    return result


def count_detections(outputs, truths, xi, cfg=EvalConfig(), params=None):
    """(tp, fp, fn) pooled over frames for decoding threshold ``xi``."""
    params = params or CodingParams(sigma_n=cfg.sigma_n)
    return _pooled_counts((decode(out, params, xi=xi) for out in outputs),
                          truths, cfg)


def _pooled_counts(predictions, truths, cfg):
    tp = fp = fn = 0
    for preds, truth in zip(predictions, truths):
        correct = sum(1 for _, _, e in match_greedy(list(truth), list(preds))
                      if e < cfg.admissible_error)
        tp += correct
        fp += len(preds) - correct
        fn += len(truth) - correct
    return tp, fp, fn


def _point(xi, tp, fp, fn):
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    return PrPoint(float(xi), precision, recall, tp, fp, fn)


def eval_predictions(predictions, truths, xi, cfg=EvalConfig()):
    """A single precision/recall point for already-decoded predictions."""
    return [_point(xi, *_pooled_counts(predictions, truths, cfg))]


def eval_unknown_n(outputs, truths, cfg=EvalConfig(), params=None):
    """Precision/recall over the threshold grid (counts pooled over frames).

    Precision is 1 when nothing is predicted; recall is 1 when there is no
    ground truth at all.
    """
    points = []
    for xi in cfg.thresholds:
        points.append(_point(xi, *count_detections(outputs, truths, xi,
                                                   cfg, params)))
    return points


def best_operating_point(points, target=0.85):
    """First PR point with both precision and recall >= target, or None."""
    for p in points:
        if p.precision >= target and p.recall >= target:
            return p
    return None


# --- reports --------------------------------------------------------------

def _known_table(known, method):
    cols = ['overall'] + sorted(k for k in known if k.startswith('N='))
    lines = []
    header = '%-12s' % 'Method'
    sub = '%-12s' % ''
    for c in cols:
        label = 'Overall' if c == 'overall' else c
        header += ' | %-17s' % ('%s (%d)' % (label, known[c]['frames']))
        sub += ' | %8s %8s' % ('MAE(deg)', 'ACC')
    lines.append(header)
    lines.append(sub)
    row = '%-12s' % method
    for c in cols:
        row += ' | %8.2f %8.2f' % (known[c]['mae'], known[c]['acc'])
    lines.append(row)
    return '\n'.join(lines) + '\n'


def report(results, fmt='json', config=None, method='model'):
    """Serialize evaluation results deterministically.

    Args:
        results : output of eval_known_n (dict) or eval_unknown_n (list).
        fmt     : 'json', 'csv' (PR curves only) or 'table'.
        config  : resolved configuration echoed into json reports.

    Returns:
        the report as a string.
    """
    is_pr = isinstance(results, list)
    if fmt == 'csv':
        if not is_pr:
            raise ValueError('csv reports are for precision-recall curves')
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator='\n')
        w.writerow(['xi', 'precision', 'recall', 'tp', 'fp', 'fn'])
        for p in results:
            w.writerow(['%.3f' % p.xi, '%.6f' % p.precision, '%.6f' % p.recall,
                        p.tp, p.fp, p.fn])
        return buf.getvalue()
    if fmt == 'table':
        if is_pr:
            lines = ['%6s %9s %9s %7s %7s %7s' % ('xi', 'precision', 'recall',
                                                  'tp', 'fp', 'fn')]
            lines += ['%6.3f %9.4f %9.4f %7d %7d %7d'
                      % (p.xi, p.precision, p.recall, p.tp, p.fp, p.fn)
                      for p in results]
            return '\n'.join(lines) + '\n'
        return _known_table(results, method)
    if fmt != 'json':
        raise ValueError('unknown report format %r' % fmt)
    doc = {'schema_version': REPORT_SCHEMA_VERSION, 'tool_version': __version__,
           'method': method, 'config': config or {},
           'notes': ['precision is 1 when no predictions are made',
                     'precision/recall counts are pooled over frames']}
    if is_pr:
        doc['mode'] = 'unknown'
        doc['pr_curve'] = [asdict(p) for p in results]
    else:
        doc['mode'] = 'known'
        doc['metrics'] = {k: v for k, v in results.items() if k != 'frames'}
    return json.dumps(doc, indent=1, sort_keys=True) + '\n'
