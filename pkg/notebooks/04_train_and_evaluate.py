"""
Train a small MLP on synthetic frames and compare with SRP-PHAT
===============================================================

Under a minute on one CPU core. The acceptance suite runs the full-size
version (20k training frames).
"""

import time

import numpy as np

from sslkit import config, pipeline
from sslkit.baselines import run_baseline
from sslkit.dsp import frame_signal
from sslkit.evaluation import eval_known_n, eval_unknown_n, report
from sslkit.geometry import default_geometry
from sslkit.nn import TrainConfig, build_architecture, predict, train
from sslkit.coding import encode_batch
from sslkit.sim import DatasetRecipe, generate_frames, generate_scenes

cfg = config.resolve({'dataset': {'num_frames': 3000, 'seed': 1}})
features = pipeline.featurizer(cfg)

t0 = time.time()
x, truths = generate_frames(pipeline.recipe_from_config(cfg), transform=features)
print('training set', x.shape, 'built in %.0f s' % (time.time() - t0))

net = build_architecture('MLP_GCC', seed=0)
result = train(net, x, encode_batch(truths), TrainConfig(epochs=10))
print('loss per epoch', np.round(result.losses, 4))

# held-out scenes: network outputs for every frame, SRP-PHAT for two-source frames
geom = default_geometry()
outputs, held, srp, srp_truth = [], [], [], []
for _, wave, ann, _ in generate_scenes(DatasetRecipe(num_frames=400, seed=2), geom):
    frames = frame_signal(wave)
    outputs.append(predict(net, features(frames)))
    held += ann.azimuths
    two = [i for i, a in enumerate(ann.azimuths) if len(a) == 2]
    if two:
        srp.append(run_baseline('srp_phat', frames[two], geom))
        srp_truth += [ann.azimuths[i] for i in two]
outputs = np.concatenate(outputs)

print(report(eval_known_n(outputs, held), 'table', method='MLP_GCC'))
print(report(eval_known_n(np.concatenate(srp), srp_truth), 'table',
             method='SRP-PHAT'))

points = eval_unknown_n(outputs, held)
best = max(points, key=lambda p: min(p.precision, p.recall))
print('unknown count: best balanced xi=%.2f precision=%.3f recall=%.3f'
      % (best.xi, best.precision, best.recall))
