"""
A tour of the network: shapes, gradients and initialisation
============================================================

Run with ``python3 demos/02_network_tour.py``.
"""
import numpy as np

from darkhorse.features import apply_normalizer, build_feature_set, fit_normalizer
from darkhorse.model import DarkhorseNet, LossConfig, batch_loss
from darkhorse.nn import GRU, LocalConv1D, grad_check
from darkhorse.synth import GeneratorConfig, generate_matches

rng = np.random.default_rng(0)

net = DarkhorseNet(seed=0)
print("parameters:", net.n_params)
for name, shape in net.shape_trace(rng.random((1, 240, 60))).items():
    print(f"  {name:10s} {shape}")

# Every layer has a hand-written backward pass; compare it with central
# differences on small random instances.
print("local conv gradient error: %.1e" % grad_check(LocalConv1D(6, 2, 3, 5, rng), rng.standard_normal((2, 6, 2)), rng=rng))
print("GRU gradient error:        %.1e" % grad_check(GRU(3, 4, rng), rng.standard_normal((2, 7, 3)), rng=rng))

# Featurise a few hundred synthetic matches
matches = generate_matches(GeneratorConfig(n_matches=300, seed=3))
fs, _ = build_feature_set([m[0] for m in matches], {m[0].match_id: m[1] for m in matches})
fs = apply_normalizer(fit_normalizer(fs), fs)

# With plain Glorot weights the two sigmoid layers squash every match to
# nearly the same summary, so the head starts out blind to the input.
f4 = net.dump_f4(fs.X)
print("spread of f4 across matches, glorot:     %.2e" % f4.std(axis=0).mean())

# Rescaling each layer on a data sample restores per-match variation.
net.calibrate(fs.X[:200])
f4 = net.dump_f4(fs.X)
print("spread of f4 across matches, calibrated: %.2e" % f4.std(axis=0).mean())
p = net.predict_proba(fs.X)
print("initial predictions stay near uniform: max |p - 1/3| = %.3f" % np.abs(p - 1 / 3).max())

# Calibration enlarges the weights, so the default 1e-3 penalties now
# dwarf the data term; the experiments in demo 03 train without them.
args = (net, fs.X[:64], fs.labels[:64], fs.true_odds[:64])
data = batch_loss(*args, LossConfig(0, 0), grad=False)
full = batch_loss(*args, LossConfig(), grad=False)
print("first batch: data term %.3f, weight penalty %.3f" % (data, full - data))
