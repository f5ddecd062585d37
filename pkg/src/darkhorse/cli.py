"""darkhorse command line: generate -> featurize -> train / trial -> inspect.

Every flag is also a key of the optional ``--config`` file (flat
``key = value`` lines, ``#`` comments), with dashes written as underscores.
Precedence is built-in default < config file < command-line flag.

Exit codes: 0 ok, 2 bad configuration, 3 unreadable or malformed input or
output, 4 training produced a non-finite loss.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

from darkhorse import evaluation, features, market_data, synth
from darkhorse.model import DarkhorseNet
from darkhorse.nn import CheckpointError
from darkhorse.train import INIT_MODES, NumericalError, TrainConfig

DATA_DIR_ENV = "DARKHORSE_DATA_DIR"

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("darkhorse")


class CliConfigError(ValueError):
    pass


def _bool(text):
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _prior(text):
    if isinstance(text, tuple):
        return text
    try:
        return tuple(float(v) for v in str(text).split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _choice(*options):
    def parse(text):
        if text not in options:
            raise argparse.ArgumentTypeError(f"expected one of {', '.join(options)}, got {text!r}")
        return text

    return parse


_GEN = {f.name: f.default for f in dataclasses.fields(synth.GeneratorConfig)}
_TRAIN = {f.name: f.default for f in dataclasses.fields(TrainConfig)}

_G, _F, _TR, _TL, _I = "generate", "featurize", "train", "trial", "inspect"
_ALL = (_G, _F, _TR, _TL, _I)
_FIT = (_TR, _TL)

# key -> (type, default, commands, help); None defaults are resolved from data_dir
OPTIONS = {
    "data_dir": (str, None, _ALL, f"dataset directory (default: ${DATA_DIR_ENV} or ./data)"),
    "out": (str, None, _ALL, "output path; defaults: generate/featurize -> data_dir, train -> data_dir/model, "
            "trial -> data_dir/trials, inspect -> <checkpoint dir>/indicators.csv"),
    "seed": (int, 0, (_G, _TR, _TL), "master seed for every random stream"),
    "workers": (int, 1, (_G, _F, _TL), "worker processes (across matches or trials only)"),
    "verbose": (_bool, False, _ALL, "log progress to stderr"),
    # generator
    "n_matches": (int, _GEN["n_matches"], (_G,), "number of matches"),
    "overround": (float, _GEN["overround"], (_G,), "bookmaker margin: sum(1/odds) - 1"),
    "signal_strength": (float, _GEN["signal_strength"], (_G,), "share of late executed trades placed by informed traders"),
    "base_event_rate": (float, _GEN["base_event_rate"], (_G,), "background events per second"),
    "noise_scale": (float, _GEN["noise_scale"], (_G,), "spread of true probabilities around the public ones"),
    "odds_jitter": (float, _GEN["odds_jitter"], (_G,), "log-scale spread of traded odds around closing odds"),
    "prior": (_prior, _GEN["prior"], (_G,), "Dirichlet prior of public probabilities, comma-separated"),
    "onset_min": (float, _GEN["onset_min"], (_G,), "earliest informed-trading onset, seconds before kickoff"),
    "onset_max": (float, _GEN["onset_max"], (_G,), "latest informed-trading onset, seconds before kickoff"),
    "min_events": (int, _GEN["min_events"], (_G, _F), "matches with fewer events are dropped"),
    # featurize
    "max_odds": (float, market_data.DEFAULT_MAX_ODDS, (_F,), "events with larger odds mark the match invalid"),
    "csv": (_bool, False, (_F,), "also write a per-window CSV export"),
    "features": (str, None, (_TR, _TL, _I), "feature dump (default: data_dir/features.bin)"),
    # training
    "batch_size": (int, _TRAIN["batch_size"], _FIT, "mini-batch size"),
    "learning_rate": (float, _TRAIN["learning_rate"], _FIT, "Adam step size"),
    "decay": (float, _TRAIN["decay"], _FIT, "inverse-time learning-rate decay per update"),
    "patience": (int, _TRAIN["patience"], _FIT, "epochs without validation improvement before stopping"),
    "max_epochs": (int, _TRAIN["max_epochs"], _FIT, "hard epoch limit"),
    "l1": (float, _TRAIN["l1"], _FIT, "L1 weight on all parameters"),
    "l2": (float, _TRAIN["l2"], _FIT, "squared-L2 weight on all parameters"),
    "init": (_choice(*INIT_MODES), _TRAIN["init"], _FIT, "weight initialisation"),
    "calibration_size": (int, _TRAIN["calibration_size"], _FIT, "training matches used by calibrated init"),
    "normalization": (_choice("per_window", "per_column"), "per_window", _FIT, "min-max statistics granularity"),
    # trials
    "trials": (int, evaluation.DEFAULT_TRIALS, (_TL,), "number of random-split trials"),
    "coverage": (_bool, True, (_TL,), "add trials until every match has been tested once"),
    "coverage_cap": (int, evaluation.DEFAULT_COVERAGE_CAP, (_TL,), "maximum extra coverage trials"),
    # inspect
    "checkpoint": (str, None, (_I,), "model checkpoint (default: data_dir/model/model.ckpt)"),
    "top_k": (int, 50, (_I,), "darkest and hottest matches to dump"),
    "matches": (_choice("test", "all"), "test", (_I,), "rank the held-out test matches of the checkpoint or all"),
}  # fmt: skip


def _flag(key):
    return "--" + key.replace("_", "-")


def build_parser():
    parser = argparse.ArgumentParser(prog="darkhorse", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        _G: "write a synthetic market dataset (matches.csv, events.csv)",
        _F: "validate matches and write the 240x60 feature dump",
        _TR: "train one model on a single random split and save it",
        _TL: "run the repeated random-split evaluation",
        _I: "dump recurrent summaries of the darkest and hottest matches",
    }
    for cmd in _ALL:
        p = sub.add_parser(cmd, help=helps[cmd], description=helps[cmd], argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="key = value file; flags override it")
        for key, (typ, default, cmds, text) in OPTIONS.items():
            if cmd not in cmds:
                continue
            shown = ",".join(map(str, default)) if isinstance(default, tuple) else default
            suffix = "" if default is None else f" (default: {shown})"
            extra = {"nargs": "?", "const": True, "metavar": "BOOL"} if typ is _bool else {"metavar": key.upper()}
            p.add_argument(_flag(key), dest=key, type=typ, help=text + suffix, **extra)
    return parser


def read_config_file(path):
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CliConfigError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in OPTIONS:
                raise CliConfigError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = OPTIONS[key][0](value)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise CliConfigError(f"{path}:{lineno}: {key}: {exc}") from None
    return values


def resolve(args):
    """Merge defaults, config file and flags into one dict for ``args.command``."""
    cmd = args.command
    given = vars(args)
    opts = {k: v[1] for k, v in OPTIONS.items() if cmd in v[2]}
    if given.get("config"):
        for key, value in read_config_file(given["config"]).items():
            if key in opts:
                opts[key] = value
    opts.update({k: v for k, v in given.items() if k in opts})
    if opts["data_dir"] is None:
        opts["data_dir"] = os.environ.get(DATA_DIR_ENV) or "data"
    data = opts["data_dir"]
    if "features" in opts and opts["features"] is None:
        opts["features"] = os.path.join(data, "features.bin")
    if "checkpoint" in opts and opts["checkpoint"] is None:
        opts["checkpoint"] = os.path.join(data, "model", "model.ckpt")
    if opts["out"] is None:
        opts["out"] = {
            _G: data,
            _F: data,
            _TR: os.path.join(data, "model"),
            _TL: os.path.join(data, "trials"),
            _I: os.path.join(os.path.dirname(opts.get("checkpoint") or ".") or ".", "indicators.csv"),
        }[cmd]
    for key in ("workers", "trials", "top_k"):
        if key in opts and opts[key] < 1:
            raise CliConfigError(f"{key} must be >= 1, got {opts[key]}")
    if "coverage_cap" in opts and opts["coverage_cap"] < 0:
        raise CliConfigError(f"coverage_cap must be >= 0, got {opts['coverage_cap']}")
    return opts


def _subset(opts, cls):
    names = {f.name for f in dataclasses.fields(cls)}
    return {k: v for k, v in opts.items() if k in names}


def generator_config(opts):
    return synth.GeneratorConfig(**_subset(opts, synth.GeneratorConfig))


def train_config(opts):
    try:
        return TrainConfig(**_subset(opts, TrainConfig))
    except ValueError as exc:
        raise CliConfigError(str(exc)) from None


# ------------------------------------------------------------------ commands


def cmd_generate(opts):
    config = generator_config(opts)
    _, _, summary = synth.generate_dataset(config, opts["out"], workers=opts["workers"])
    print(
        f"{summary['matches']} matches, {summary['events']} events, "
        f"mean overround {summary['mean_overround']:.4f} -> {opts['out']}"
    )


def load_dataset(data_dir):
    match_path = os.path.join(data_dir, "matches.csv")
    event_path = os.path.join(data_dir, "events.csv")
    with open(match_path, encoding="utf-8") as fh:
        try:
            records = market_data.parse_matches(fh)
        except market_data.MarketDataError as exc:
            raise market_data.MarketDataError(f"{match_path}: {exc}") from None
    with open(event_path, encoding="utf-8") as fh:
        try:
            tables = market_data.load_event_tables(fh)
        except market_data.MarketDataError as exc:
            raise market_data.MarketDataError(f"{event_path}: {exc}") from None
    return records, tables


def cmd_featurize(opts):
    records, tables = load_dataset(opts["data_dir"])
    fs, dropped = features.build_feature_set(
        records, tables, workers=opts["workers"], min_events=opts["min_events"], max_odds=opts["max_odds"]
    )
    os.makedirs(opts["out"], exist_ok=True)
    bin_path, csv_path = features.feature_dump_paths(opts["out"])
    features.write_feature_dump(fs, bin_path)
    if opts["csv"]:
        features.write_feature_csv(fs, csv_path)
    for report in dropped:
        print(f"dropped {report.match_id}: {'; '.join(report.reasons())}", file=sys.stderr)
    n, rows, cols = features.read_feature_header(bin_path)
    print(f"kept {len(fs)}, dropped {len(dropped)}; feature dump ({n}, {rows}, {cols}) -> {bin_path}")


def _per_window(opts):
    return opts["normalization"] == "per_window"


def cmd_train(opts):
    dataset = features.read_feature_dump(opts["features"])
    config = train_config(opts)
    out = opts["out"]
    os.makedirs(out, exist_ok=True)
    fitted = evaluation.fit_trial(
        dataset, opts["seed"], config, per_window=_per_window(opts), log_path=os.path.join(out, "train_log.csv")
    )
    fitted.net.save(os.path.join(out, "model.ckpt"))
    with open(os.path.join(out, "normalizer.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(fitted.stats.to_json())
    with open(os.path.join(out, "report.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(fitted.report.to_json())
    with open(os.path.join(out, "test_ids.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("".join(f"{mid}\n" for mid in fitted.report.test_ids))
    card = {k: getattr(config, k) for k in _subset(opts, TrainConfig)}
    card.update(seed=opts["seed"], normalization=opts["normalization"], best_epoch=fitted.history.best_epoch)
    with open(os.path.join(out, "model_card.txt"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(fitted.net.model_card(card))
    g = fitted.report.gains
    print(
        f"trained {fitted.history.convergence_epoch} epochs (best {fitted.history.best_epoch}); "
        f"test G_1bet {g['G_1bet']:.4f} G_min {g['G_min']:.4f} G_rand {g['G_rand']:.4f} -> {out}"
    )


def cmd_trial(opts):
    dataset = features.read_feature_dump(opts["features"])
    config = train_config(opts)
    result = evaluation.run_trials(
        dataset,
        n_trials=opts["trials"],
        base_seed=opts["seed"],
        config=config,
        ensure_coverage=opts["coverage"],
        coverage_cap=opts["coverage_cap"],
        workers=opts["workers"],
        per_window=_per_window(opts),
    )
    os.makedirs(opts["out"], exist_ok=True)
    evaluation.write_reports(result, opts["out"])
    s = result.summary()
    mg = s["mean_gains"]
    dbet = "n/a" if mg["G_dbet"] is None else f"{mg['G_dbet']:.4f}"
    print(
        f"{s['trials']} trials ({s['extra_trials']} for coverage, {s['uncovered_matches']} matches never tested); "
        f"mean G_1bet {mg['G_1bet']:.4f} G_sbet {mg['G_sbet']:.4f} G_dbet {dbet} "
        f"G_min {mg['G_min']:.4f} G_rand {mg['G_rand']:.4f} G_best {mg['G_best']:.4f} -> {opts['out']}"
    )


def cmd_inspect(opts):
    ckpt = opts["checkpoint"]
    if not os.path.exists(ckpt):
        raise FileNotFoundError(2, "checkpoint not found", ckpt)
    net = DarkhorseNet.from_checkpoint(ckpt)
    model_dir = os.path.dirname(ckpt) or "."
    with open(os.path.join(model_dir, "normalizer.json"), encoding="utf-8") as fh:
        try:
            stats = features.NormalizationStats.from_json(fh.read())
        except (ValueError, KeyError) as exc:
            raise features.FeatureError(f"{fh.name}: bad normalizer: {exc}") from None
    dataset = features.read_feature_dump(opts["features"])
    if opts["matches"] == "test":
        with open(os.path.join(model_dir, "test_ids.txt"), encoding="utf-8") as fh:
            wanted = [line.strip() for line in fh if line.strip()]
        pos = {mid: i for i, mid in enumerate(dataset.match_ids)}
        missing = [m for m in wanted if m not in pos]
        if missing:
            raise features.FeatureError(f"{len(missing)} test matches missing from {opts['features']}, e.g. {missing[0]}")
        dataset = dataset.subset([pos[m] for m in wanted])
    rows = evaluation.dump_indicators(net, features.apply_normalizer(stats, dataset), opts["top_k"])
    out = opts["out"]
    if os.path.dirname(out):
        os.makedirs(os.path.dirname(out), exist_ok=True)
    evaluation.write_indicators(rows, out)
    evaluation.write_schema(os.path.dirname(out) or ".")
    print(f"{len(rows)} rows -> {out}")


COMMANDS = {_G: cmd_generate, _F: cmd_featurize, _TR: cmd_train, _TL: cmd_trial, _I: cmd_inspect}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = resolve(args)
        logging.basicConfig(
            level=logging.INFO if opts["verbose"] else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        COMMANDS[args.command](opts)
    except (CliConfigError, synth.ConfigError) as exc:
        print(f"darkhorse {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"darkhorse {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, market_data.MarketDataError, features.FeatureError, CheckpointError, evaluation.EvalError) as exc:
        print(f"darkhorse {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
