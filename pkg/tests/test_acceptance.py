"""End-to-end acceptance checks, one test per criterion.

Each test prints a ``criterion N PASS|FAIL`` line; the lines are repeated in
the pytest terminal summary.  Seeds are fixed up front and never tuned.
"""
import filecmp
import time

import numpy as np

from darkhorse.cli import main
from darkhorse.evaluation import (
    HorseClass,
    baselines,
    classify_horse,
    gain_1bet,
    horse_distribution,
    run_trial,
    run_trials,
)
from darkhorse.features import FeatureSet, apply_normalizer, fit_normalizer
from darkhorse.market_data import Outcome
from darkhorse.model import DarkhorseNet, LossConfig, batch_loss, data_term
from darkhorse.nn import (
    GRU,
    Conv1D,
    Dense,
    LocalConv1D,
    MaxPool1D,
    ReLU,
    Sigmoid,
    Softmax,
    grad_check,
    numeric_grad,
    relative_error,
)
from darkhorse.synth import GeneratorConfig, generate_matches
from darkhorse.train import EarlyStopping, TrainConfig, train

from conftest import feature_set_for

LAYERS = {
    "conv1d": lambda r: ([Conv1D(3, 2, 3, r)], r.standard_normal((2, 8, 3))),
    "local_conv1d": lambda r: ([LocalConv1D(6, 2, 3, 5, r)], r.standard_normal((2, 6, 2))),
    "maxpool1d": lambda r: ([MaxPool1D(2)], r.standard_normal((2, 7, 3))),
    "gru": lambda r: ([GRU(3, 2, r)], r.standard_normal((2, 5, 3))),
    "dense": lambda r: ([Dense(5, 4, r)], r.standard_normal((3, 5))),
    "sigmoid": lambda r: ([Sigmoid()], r.standard_normal((3, 4))),
    "relu": lambda r: ([ReLU()], r.standard_normal((3, 4))),
    "softmax": lambda r: ([Softmax()], r.standard_normal((3, 3))),
}
INSTANCES = 20


def _layer_error(name, seed):
    r = np.random.default_rng(seed)
    layers, x = LAYERS[name](r)
    for layer in layers:
        for p in layer.params().values():
            p.value += 0.1 * r.standard_normal(p.value.shape)
    return grad_check(layers, x, rng=r)


def _composite_error(seed):
    r = np.random.default_rng(1000 + seed)
    net = DarkhorseNet(seq_len=12, n_features=4, seed=seed)
    for p in net.params():
        p.value += 0.2 * r.standard_normal(p.value.shape)
    X = r.random((2, 12, 4))
    y = r.integers(0, 3, 2)
    odds = r.uniform(1.01, 20, 2)
    cfg = LossConfig(1e-3, 1e-3)
    batch_loss(net, X, y, odds, cfg)
    worst = 0.0
    for _, _, p in net.named_params():
        idx = np.sort(r.choice(p.value.size, size=min(p.value.size, 12), replace=False))
        num = numeric_grad(lambda: batch_loss(net, X, y, odds, cfg, grad=False), p.value, 1e-6, idx)
        worst = max(worst, relative_error(p.grad.reshape(-1)[idx], num))
    return worst


def test_criterion_1_gradient_suite(criterion):
    start = time.perf_counter()
    worst = {name: max(_layer_error(name, s) for s in range(INSTANCES)) for name in LAYERS}
    worst["full loss"] = max(_composite_error(s) for s in range(INSTANCES))
    elapsed = time.perf_counter() - start
    top = max(worst, key=worst.get)
    detail = f"{INSTANCES} instances each, worst {top} {worst[top]:.2e}, {elapsed:.1f}s"
    criterion(1, "gradient checks below 1e-4 in under a minute", max(worst.values()) < 1e-4 and elapsed < 60, detail)


def test_criterion_2_shape_pipeline(criterion):
    shapes = DarkhorseNet(seed=0).shape_trace(np.random.default_rng(0).random((1, 240, 60)))
    chain = [shapes[k] for k in ("f1", "f2", "f3", "f4", "hidden", "probs")]
    expected = [(240, 9), (120, 3), (60, 3), (9,), (18,), (3,)]
    criterion(2, "240x60 -> 240x9 -> 120x3 -> 60x3 -> 9 -> 18 -> 3", chain == expected, str(chain))


def test_criterion_3_loss_degeneration(criterion):
    r = np.random.default_rng(3)
    net = DarkhorseNet(seed=3)
    X = r.random((6, 240, 60))
    y = r.integers(0, 3, 6)
    probs = net.predict_proba(X)
    ce = np.mean(-np.log(probs[np.arange(6), y]))
    unit = batch_loss(net, X, y, np.ones(6), LossConfig(0, 0, min_odds=1.0), grad=False)
    table = data_term([[0.4075, 0.5777, 0.0147]], [1], [9.8])
    hand = 9.8 * 0.54870058  # -ln 0.5777 to 8 places, about 5.3773
    ok = abs(unit - ce) < 1e-12 and abs(table - hand) < 1e-6
    criterion(3, "unit odds give cross-entropy; worked example data term", ok, f"|diff| {abs(unit - ce):.1e}, table {table:.6f}")


def test_criterion_4_baselines(criterion):
    start = time.perf_counter()
    matches = generate_matches(GeneratorConfig(n_matches=10_000, seed=40, overround=0.0, base_event_rate=0.001))
    odds = np.array([m[0].closing_odds for m in matches])
    y = np.array([int(m[0].final_outcome) for m in matches])
    g = baselines(odds, y, np.random.default_rng(41))
    hot_acc = horse_distribution(odds, y)["hot"]
    elapsed = time.perf_counter() - start
    ok = all(abs(g[k] - 1) <= 0.1 for k in ("G_rand", "G_min", "G_max", "G_middle"))
    ok = ok and abs(g["G_best"] - 3) <= 0.15 and hot_acc > 0.5 and elapsed < 120
    detail = ", ".join(f"{k} {v:.3f}" for k, v in g.items()) + f", G_min accuracy {hot_acc:.3f}, {elapsed:.0f}s"
    criterion(4, "odds-only baselines on fair markets", ok, detail)


def test_criterion_5_learning_signal(criterion):
    # calibrated init without the weight penalty; see the decisions ledger
    config = TrainConfig(l1=0.0, l2=0.0, init="calibrated")
    start = time.perf_counter()
    arms = {}
    for signal, data_seed in ((0.6, 11), (0.0, 12)):
        fs = feature_set_for(GeneratorConfig(n_matches=4000, seed=data_seed, signal_strength=signal, overround=0.05))
        arms[signal] = run_trials(fs, n_trials=5, base_seed=0, config=config, ensure_coverage=False).summary()
    elapsed = time.perf_counter() - start

    s = arms[0.6]
    g1, gmin = s["mean_gains"]["G_1bet"], s["mean_gains"]["G_min"]
    dark, big = s["mean_accuracy_dark"], s["mean_horse_distribution"]["big_dark"]
    n = arms[0.0]
    n1, nrand = n["mean_gains"]["G_1bet"], n["mean_gains"]["G_rand"]
    results = [
        ("signal: 1-bet gain beats G_min by 0.03", g1 >= gmin + 0.03, f"G_1bet {g1:.3f}, G_min {gmin:.3f}"),
        ("signal: dark accuracy beats big-dark rate by 0.05", dark >= big + 0.05, f"{dark:.3f} vs {big:.3f}"),
        ("no signal: 1-bet gain within 0.05 of G_rand", abs(n1 - nrand) <= 0.05, f"G_1bet {n1:.3f}, G_rand {nrand:.3f}"),
        ("runtime under 30 minutes", elapsed < 1800, f"{elapsed:.0f}s"),
    ]
    ok = all(r[1] for r in results)
    detail = "; ".join(f"{name}: {'ok' if good else 'MISSED'} [{info}]" for name, good, info in results)
    criterion(5, "learning signal on 4000 synthetic matches", ok, detail)


def test_criterion_6_worked_example(criterion):
    odds = (1.17, 9.8, 22.0)
    cls = classify_horse(odds, Outcome.DRAW)
    gain = gain_1bet((0.4075, 0.5777, 0.0147), odds, Outcome.DRAW).gain
    implied = 1 / odds[0]
    ok = cls == HorseClass.MIDDLE and gain == 9.8 and abs(implied - 0.8547) <= 1e-4
    criterion(6, "worked example: middle horse, gain 9.8, implied 0.8547", ok, f"{cls}, {gain}, {implied:.4f}")


def _scripted(losses, seen):
    it = iter(losses)

    def fn(net, val_set, cfg):
        seen.append(net.get_weights()[0])
        return next(it)

    return fn


def test_criterion_7_protocol(criterion):
    fs = feature_set_for(GeneratorConfig(n_matches=4669, seed=70, base_event_rate=0.002))
    report = run_trial(fs, 71, TrainConfig(max_epochs=1))
    n_test = len(report.test_ids)
    del fs

    script = [5, 4, 3, 3.1, 3.2, 3.05, 3.3, 3.4, 3.2, 3.15, 3.25, 3.5, 2.0]
    r = np.random.default_rng(72)
    tiny = FeatureSet([f"m{i}" for i in range(8)], r.random((8, 12, 4)), r.integers(0, 3, 8), r.uniform(1.5, 6, (8, 3)))
    net = DarkhorseNet(seq_len=12, n_features=4, seed=0)
    seen = []
    hist = train(net, tiny, tiny, TrainConfig(learning_rate=1e-2), val_loss_fn=_scripted(script, seen))
    restored = np.array_equal(net.get_weights()[0], seen[2]) and not np.array_equal(seen[2], seen[-1])
    stopper = EarlyStopping(8)
    stop_at = next(e for e, v in enumerate(script, start=1) if stopper.update(v, e))
    ok = n_test == 467 and hist.convergence_epoch == 11 and stop_at == 11 and hist.best_epoch == 3 and restored
    detail = f"test size {n_test}, stopped at epoch {hist.convergence_epoch}, restored epoch {hist.best_epoch}"
    criterion(7, "467-match test split; stop after 8 flat epochs and restore best", ok, detail)


def _pipeline(d, capsys):
    base = ["--data-dir", str(d)]
    fast = ["--seed", "9", "--max-epochs", "2", "--batch-size", "16"]
    codes = [
        main(["generate", *base, "--seed", "9", "--n-matches", "60", "--base-event-rate", "0.05"]),
        main(["featurize", *base, "--csv"]),
        main(["train", *base, *fast]),
        main(["trial", *base, *fast, "--trials", "2", "--coverage", "false"]),
        main(["inspect", *base, "--top-k", "3"]),
    ]
    capsys.readouterr()
    return codes


def test_criterion_8_determinism(criterion, tmp_path, capsys):
    codes = _pipeline(tmp_path / "a", capsys) + _pipeline(tmp_path / "b", capsys)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    same = [filecmp.cmp(tmp_path / "a" / f, tmp_path / "b" / f, shallow=False) for f in files]
    ok = codes == [0] * 10 and len(files) > 15 and all(same)
    criterion(8, "every command reruns to identical files", ok, f"{sum(same)}/{len(files)} files identical")


def test_criterion_9_overfit(criterion):
    fs = feature_set_for(GeneratorConfig(n_matches=20, seed=30, signal_strength=0.6))
    fs = apply_normalizer(fit_normalizer(fs), fs)
    # small-data sanity check: faster learning rate, no weight penalty
    cfg = TrainConfig(max_epochs=200, patience=200, learning_rate=1e-3, l1=0.0, l2=0.0, init="calibrated")
    hist = train(DarkhorseNet(seed=0), fs, fs, cfg)
    drop = 1 - hist.train_loss[-1] / hist.train_loss[0]
    ok = len(hist.train_loss) == 200 and drop >= 0.5
    criterion(9, "20-match training loss falls by half within 200 epochs", ok, f"{hist.train_loss[0]:.3f} -> {hist.train_loss[-1]:.3f}, drop {drop:.0%}")
