import csv
import filecmp
import os

import pytest

from darkhorse.cli import main
from darkhorse.features import read_feature_header

GEN = ["--n-matches", "100", "--seed", "4", "--base-event-rate", "0.05"]
FAST = ["--max-epochs", "2", "--batch-size", "32"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["generate", "--data-dir", str(d), *GEN]) == 0
    assert main(["featurize", "--data-dir", str(d)]) == 0
    return d


def test_generate_reports_counts(tmp_path, capsys):
    code, out, _ = run(capsys, "generate", "--data-dir", tmp_path, *GEN)
    assert code == 0 and out.startswith("100 matches")
    assert (tmp_path / "matches.csv").exists() and (tmp_path / "events.csv").exists()


def test_negative_overround_is_a_config_error(tmp_path, capsys):
    code, _, err = run(capsys, "generate", "--data-dir", tmp_path, "--overround", "-0.1")
    assert code == 2 and "overround" in err


def test_featurize_header(dataset):
    assert read_feature_header(dataset / "features.bin") == (100, 240, 60)


def test_featurize_drops_invalid_match(tmp_path, capsys, dataset):
    for name in ("matches.csv", "events.csv"):
        (tmp_path / name).write_bytes((dataset / name).read_bytes())
    first = (tmp_path / "matches.csv").read_text().splitlines()
    victim = next(line for line in first if line and not line.startswith("#")).split(",")[0]
    lines = (tmp_path / "events.csv").read_text().splitlines(keepends=True)
    (tmp_path / "events.csv").write_text("".join(l for l in lines if not l.startswith(victim + ",")))
    code, out, err = run(capsys, "featurize", "--data-dir", tmp_path, "--csv")
    assert code == 0 and "kept 99, dropped 1" in out and victim in err
    assert read_feature_header(tmp_path / "features.bin") == (99, 240, 60)
    assert (tmp_path / "features.csv").exists()


def test_train_trial_inspect(tmp_path, capsys, dataset):
    feats = dataset / "features.bin"
    model = tmp_path / "model"
    code, out, _ = run(capsys, "train", "--features", feats, "--out", model, *FAST)
    assert code == 0 and "G_1bet" in out
    for name in ("model.ckpt", "normalizer.json", "report.json", "test_ids.txt", "model_card.txt", "train_log.csv"):
        assert (model / name).exists(), name

    code, out, _ = run(capsys, "inspect", "--checkpoint", model / "model.ckpt", "--features", feats, "--top-k", 3)
    assert code == 0
    with open(model / "indicators.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 1 + 6 and (model / "schema.json").exists()

    trials = tmp_path / "trials"
    code, out, _ = run(capsys, "trial", "--features", feats, "--out", trials, "--trials", 3, "--coverage", "false", *FAST)
    assert code == 0 and out.startswith("3 trials")
    assert len(list((trials / "trials").glob("trial_*.json"))) == 3
    for name in ("gains_sorted.csv", "gain_vs_accuracy.csv", "gain_vs_horse_dist.csv", "gain_vs_epochs.csv"):
        assert (trials / name).exists()


def test_inspect_bad_checkpoints(tmp_path, capsys, dataset):
    code, _, err = run(capsys, "inspect", "--checkpoint", tmp_path / "none.ckpt", "--features", dataset / "features.bin")
    assert code == 3 and "none.ckpt" in err
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint")
    code, _, _ = run(capsys, "inspect", "--checkpoint", bad, "--features", dataset / "features.bin")
    assert code == 3


def test_reruns_are_byte_identical(tmp_path, capsys):
    for k in ("a", "b"):
        d = tmp_path / k
        assert main(["generate", "--data-dir", str(d), "--n-matches", "40", "--seed", "8", "--base-event-rate", "0.05"]) == 0
        assert main(["featurize", "--data-dir", str(d)]) == 0
        assert main(["train", "--data-dir", str(d), *FAST]) == 0
    capsys.readouterr()
    for rel in ("matches.csv", "events.csv", "features.bin", "model/model.ckpt", "model/report.json", "model/train_log.csv"):
        assert filecmp.cmp(tmp_path / "a" / rel, tmp_path / "b" / rel, shallow=False), rel


def test_config_file_precedence(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# settings\nn_matches = 7\nseed = 3\nbase-event-rate = 0.05\n")
    code, out, _ = run(capsys, "generate", "--config", cfg, "--data-dir", tmp_path / "a")
    assert code == 0 and out.startswith("7 matches")
    code, out, _ = run(capsys, "generate", "--config", cfg, "--data-dir", tmp_path / "b", "--n-matches", 5)
    assert code == 0 and out.startswith("5 matches")


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("n_matchez = 7\n")
    code, _, err = run(capsys, "generate", "--config", cfg, "--data-dir", tmp_path)
    assert code == 2 and "n_matchez" in err


def test_data_dir_from_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("DARKHORSE_DATA_DIR", str(tmp_path / "env"))
    code, _, _ = run(capsys, "generate", "--n-matches", 3, "--base-event-rate", "0.05")
    assert code == 0 and (tmp_path / "env" / "matches.csv").exists()


def test_help_lists_defaults(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    assert "--learning-rate" in out and "0.0001" in out and "--patience" in out


def test_missing_input_is_io_error(tmp_path, capsys):
    code, _, err = run(capsys, "featurize", "--data-dir", tmp_path / "nothing")
    assert code == 3 and os.path.join("nothing", "matches.csv") in err
