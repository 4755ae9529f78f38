"""Command line entry points.

Subcommands cover the full pipeline: ``synth`` writes a labeled WAV corpus,
``features`` warms the spectrogram cache, ``train`` fits the metric network
and writes run artifacts, ``eval`` scores a checkpoint over pair
combinations, ``ablate`` runs the standing experiment protocols, and
``infer`` gives a movement verdict for one clip pair against stored
positive anchors.

Conventions:
  * option defaults can come from a JSON file via ``--config``; explicit
    flags override the file, which overrides built-ins
  * every artifact-producing command echoes its resolved configuration
    into the output directory, so runs are reproducible from disk alone
  * usage errors exit with 2 (argparse), runtime failures print one
    ``error: <Kind>: <message>`` line on stderr and exit with 1
  * ``SENSE_SIAMESE_CACHE`` overrides any ``--cache-dir``
"""

from __future__ import annotations

import argparse
import json
import sys
from contextlib import nullcontext
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .dsp import (
    AUDIO,
    GEOPHONE,
    FeatureConfig,
    cached_features,
    extract_features,
    read_wav,
    resolve_cache_dir,
)
from .errors import ConfigError, SenseSiameseError
from .evaluation import (
    EvalConfig,
    batch_ablation,
    detect_movement,
    evaluate_records,
    low_data_experiment,
    pick_anchors,
    sweep_for_model,
    write_histogram_csv,
    write_sweep_csv,
)
from .synthgen import PRESETS, generate_dataset, load_manifest
from .trainer import (
    FeatureStore,
    TrainConfig,
    load_checkpoint,
    model_from_checkpoint,
    run_training,
    split_records,
)


def _merge_options(args: argparse.Namespace, defaults: dict) -> dict:
    """Built-in defaults, overlaid by the --config file, overlaid by flags."""
    merged = dict(defaults)
    if getattr(args, "config", None):
        try:
            file_opts = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {args.config}: {exc}") from exc
        if not isinstance(file_opts, dict):
            raise ConfigError(f"{args.config}: config must be a JSON object")
        unknown = set(file_opts) - set(defaults)
        if unknown:
            raise ConfigError(
                f"{args.config}: unknown options {sorted(unknown)}; "
                f"valid ones are {sorted(defaults)}"
            )
        merged.update(file_opts)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _parse_triple(text: str) -> tuple[float, float, float]:
    parts = [p for p in str(text).split(",") if p != ""]
    if len(parts) != 3:
        raise ConfigError(f"expected three comma-separated fractions, got {text!r}")
    return tuple(float(p) for p in parts)


def _parse_int_list(text) -> tuple[int, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    try:
        values = tuple(int(p) for p in str(text).split(",") if p != "")
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from exc
    if not values:
        raise ConfigError(f"expected comma-separated integers, got {text!r}")
    return values


def _echo_config(out_dir: Path, name: str, resolved: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / name).write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

_SYNTH_DEFAULTS = {
    "n_pos": 100,
    "n_neg": 100,
    "preset": "easy",
    "seed": 0,
    "snr_db": None,
    "pcm16": False,
}


def _cmd_synth(args) -> int:
    opts = _merge_options(args, _SYNTH_DEFAULTS)
    if opts["preset"] not in PRESETS:
        raise ConfigError(f"preset must be one of {sorted(PRESETS)}, got {opts['preset']!r}")
    params = PRESETS[opts["preset"]]
    if opts["snr_db"] is not None:
        params = replace(params, snr_db=float(opts["snr_db"]))
    out_dir = Path(args.out_dir)
    manifest = generate_dataset(
        out_dir,
        n_pos=int(opts["n_pos"]),
        n_neg=int(opts["n_neg"]),
        seed=int(opts["seed"]),
        params=params,
        pcm16=bool(opts["pcm16"]),
    )
    _echo_config(out_dir, "synth_config.json", {**opts, "params": asdict(params)})
    print(manifest)
    return 0


_FEATURES_DEFAULTS = {"cache_dir": None, "normalize": False}


def _cmd_features(args) -> int:
    opts = _merge_options(args, _FEATURES_DEFAULTS)
    records = load_manifest(args.manifest)
    cfg = FeatureConfig(normalize=bool(opts["normalize"]))
    store = FeatureStore(records, cfg, opts["cache_dir"])
    cache = resolve_cache_dir(opts["cache_dir"])
    print(
        f"{len(records)} records -> audio {store.audio.shape}, "
        f"geophone {store.geo.shape}, cache {cache}"
    )
    return 0


_TRAIN_DEFAULTS = {
    "variant": "cnn",
    "batch_size": 32,
    "max_epochs": 30,
    "lr": 1e-3,
    "warmup_steps": 0,
    "margin": 1.0,
    "threshold": 0.5,
    "patience": 5,
    "seed": 0,
    "epoch_combos": 10_000,
    "val_combos": 20_000,
    "split": "0.6,0.2,0.2",
    "cache_dir": None,
}


def _cmd_train(args) -> int:
    opts = _merge_options(args, _TRAIN_DEFAULTS)
    cfg = TrainConfig(
        variant=opts["variant"],
        batch_size=int(opts["batch_size"]),
        max_epochs=int(opts["max_epochs"]),
        lr=float(opts["lr"]),
        warmup_steps=int(opts["warmup_steps"]),
        margin=float(opts["margin"]),
        threshold=float(opts["threshold"]),
        patience=int(opts["patience"]),
        seed=int(opts["seed"]),
        epoch_combos=int(opts["epoch_combos"]),
        val_combos=int(opts["val_combos"]),
        split=_parse_triple(opts["split"]),
    )
    out_dir = Path(args.out_dir)
    result = run_training(
        cfg, args.manifest, out_dir, cache_dir=opts["cache_dir"], log=print
    )
    print(
        f"best epoch {result.best_epoch} (val_loss {result.best_val_loss:.4f}); "
        f"wrote {out_dir / 'checkpoint.ssck'}, {out_dir / 'metrics.csv'}, "
        f"{out_dir / 'config.json'}"
    )
    return 0


_EVAL_DEFAULTS = {
    "records": "test",
    "threshold": None,  # falls back to the trained threshold
    "seed": None,  # falls back to the training seed, keeping the split identical
    "split": "0.6,0.2,0.2",
    "max_combos": 1_000_000,
    "sweep": None,  # lo:hi:n grid specification
    "cache_dir": None,
}


def _cmd_eval(args) -> int:
    opts = _merge_options(args, _EVAL_DEFAULTS)
    ck = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(ck)
    threshold = opts["threshold"]
    if threshold is None:
        threshold = ck.descriptor.get("threshold", 0.5)
    seed = opts["seed"]
    if seed is None:
        seed = ck.descriptor.get("seed", 0)

    records = load_manifest(args.manifest)
    choice = opts["records"]
    if choice == "all":
        chosen = records
    else:
        train, val, test = split_records(records, _parse_triple(opts["split"]), int(seed))
        try:
            chosen = {"train": train, "val": val, "test": test}[choice]
        except KeyError:
            raise ConfigError(
                f"records must be one of train, val, test, all; got {choice!r}"
            ) from None

    store = FeatureStore(chosen, cache_dir=opts["cache_dir"])
    cfg = EvalConfig(
        threshold=float(threshold),
        margin=float(ck.descriptor["margin"]),
        max_combos=int(opts["max_combos"]),
        seed=int(seed),
    )
    report = evaluate_records(model, store, np.arange(len(chosen)), cfg, choice)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(report.to_json() + "\n")
    write_histogram_csv(out_dir / "histogram.csv", report.histogram)
    _echo_config(out_dir, "eval_config.json", {**opts, "threshold": threshold, "seed": seed,
                                               "checkpoint": str(args.checkpoint),
                                               "manifest": str(args.manifest)})
    if opts["sweep"]:
        lo, hi, n = str(opts["sweep"]).split(":")
        grid = np.linspace(float(lo), float(hi), int(n))
        rows, best = sweep_for_model(model, store, np.arange(len(chosen)), grid, cfg)
        write_sweep_csv(out_dir / "sweep.csv", rows)
        print(f"sweep best threshold {best:.4f}")
    print(
        f"{choice}: accuracy {report.accuracy:.4f} over {report.n_combos} combos "
        f"(tp {report.tp} tn {report.tn} fp {report.fp} fn {report.fn}); "
        f"wrote {out_dir / 'report.json'}"
    )
    return 0


_ABLATE_DEFAULTS = {
    "mode": "batch",
    "variant": "cnn",
    "batch_size": 32,
    "lr": 1e-3,
    "warmup_steps": 0,
    "seed": 0,
    "epoch_combos": 2000,
    "epochs": 6,
    "max_epochs": 30,
    "patience": 5,
    "batch_sizes": "8,64",
    "budgets": "200,500",
    "split": "0.6,0.2,0.2",
    "cache_dir": None,
}


def _cmd_ablate(args) -> int:
    opts = _merge_options(args, _ABLATE_DEFAULTS)
    records = load_manifest(args.manifest)
    train_recs, val_recs, _ = split_records(records, _parse_triple(opts["split"]), int(opts["seed"]))
    ordered = train_recs + val_recs
    store = FeatureStore(ordered, cache_dir=opts["cache_dir"])
    train_idx = np.arange(len(train_recs))
    val_idx = np.arange(len(train_recs), len(ordered))

    cfg = TrainConfig(
        variant=opts["variant"],
        batch_size=int(opts["batch_size"]),
        max_epochs=int(opts["max_epochs"]),
        lr=float(opts["lr"]),
        warmup_steps=int(opts["warmup_steps"]),
        patience=int(opts["patience"]),
        seed=int(opts["seed"]),
        epoch_combos=int(opts["epoch_combos"]),
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    mode = opts["mode"]
    if mode == "batch":
        report = batch_ablation(
            cfg, store, train_idx, val_idx,
            batch_sizes=_parse_int_list(opts["batch_sizes"]),
            epochs=int(opts["epochs"]),
            log=print,
        )
        out_path = out_dir / "ablation_batch.json"
    elif mode == "low-data":
        report = low_data_experiment(
            cfg, store, train_idx, val_idx,
            budgets=_parse_int_list(opts["budgets"]),
            log=print,
        )
        out_path = out_dir / "ablation_lowdata.json"
    else:
        raise ConfigError(f"mode must be batch or low-data, got {mode!r}")
    out_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    _echo_config(out_dir, "ablate_config.json", {**opts, "manifest": str(args.manifest)})
    print(f"wrote {out_path}")
    return 0


_INFER_DEFAULTS = {"k": 5, "threshold": None, "cache_dir": None}


def _cmd_infer(args) -> int:
    opts = _merge_options(args, _INFER_DEFAULTS)
    ck = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(ck)
    threshold = opts["threshold"]
    if threshold is None:
        threshold = ck.descriptor.get("threshold", 0.5)

    cfg = FeatureConfig()
    query_audio = extract_features(read_wav(args.audio, AUDIO), cfg).values
    query_geo = extract_features(read_wav(args.geophone, GEOPHONE), cfg).values

    anchors = pick_anchors(load_manifest(args.anchors), k=int(opts["k"]))
    anchor_feats = [
        (
            cached_features(r.audio, AUDIO, cfg, opts["cache_dir"]),
            cached_features(r.geophone, GEOPHONE, cfg, opts["cache_dir"]),
        )
        for r in anchors
    ]
    verdict, dists = detect_movement(
        model,
        query_audio.astype(np.float32),
        query_geo.astype(np.float32),
        anchor_feats,
        threshold=float(threshold),
        margin=float(ck.descriptor["margin"]),
    )
    print(json.dumps({
        "movement": verdict,
        "votes": int(sum(d < float(threshold) for d in dists)),
        "k": len(dists),
        "threshold": float(threshold),
        "distances": [round(d, 6) for d in dists],
    }))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of option defaults for this subcommand")
    common.add_argument("--threads", type=int, help="cap BLAS/threadpool parallelism")

    parser = argparse.ArgumentParser(
        prog="sense-siamese",
        description="footstep detection from paired audio + geophone clips",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a labeled WAV corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-pos", type=int, dest="n_pos")
    p.add_argument("--n-neg", type=int, dest="n_neg")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--seed", type=int)
    p.add_argument("--snr-db", type=float, dest="snr_db")
    p.add_argument("--pcm16", action="store_const", const=True, default=None)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("features", parents=[common], help="warm the feature cache")
    p.add_argument("--manifest", required=True)
    p.add_argument("--cache-dir", dest="cache_dir")
    p.add_argument("--normalize", action="store_const", const=True, default=None)
    p.set_defaults(func=_cmd_features)

    p = sub.add_parser("train", parents=[common], help="fit the metric network")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--variant", choices=("cnn", "lstm"))
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--max-epochs", type=int, dest="max_epochs")
    p.add_argument("--lr", type=float)
    p.add_argument("--warmup-steps", type=int, dest="warmup_steps")
    p.add_argument("--margin", type=float)
    p.add_argument("--threshold", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--epoch-combos", type=int, dest="epoch_combos")
    p.add_argument("--val-combos", type=int, dest="val_combos")
    p.add_argument("--split", help="train,val,test fractions, e.g. 0.6,0.2,0.2")
    p.add_argument("--cache-dir", dest="cache_dir")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint on pair combos")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--records", choices=("train", "val", "test", "all"))
    p.add_argument("--threshold", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--split")
    p.add_argument("--max-combos", type=int, dest="max_combos")
    p.add_argument("--sweep", help="threshold grid as lo:hi:n")
    p.add_argument("--cache-dir", dest="cache_dir")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", parents=[common], help="run an experiment protocol")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--mode", choices=("batch", "low-data"))
    p.add_argument("--variant", choices=("cnn", "lstm"))
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--warmup-steps", type=int, dest="warmup_steps")
    p.add_argument("--seed", type=int)
    p.add_argument("--epoch-combos", type=int, dest="epoch_combos")
    p.add_argument("--epochs", type=int, help="fixed epochs for the batch protocol")
    p.add_argument("--max-epochs", type=int, dest="max_epochs")
    p.add_argument("--patience", type=int)
    p.add_argument("--batch-sizes", dest="batch_sizes", help="e.g. 8,64")
    p.add_argument("--budgets", help="e.g. 200,500")
    p.add_argument("--split")
    p.add_argument("--cache-dir", dest="cache_dir")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("infer", parents=[common], help="movement verdict for one clip pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--audio", required=True)
    p.add_argument("--geophone", required=True)
    p.add_argument("--anchors", required=True, help="manifest supplying positive anchors")
    p.add_argument("--k", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--cache-dir", dest="cache_dir")
    p.set_defaults(func=_cmd_infer)

    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.threads is not None and args.threads < 1:
        print("error: ConfigError: --threads must be >= 1", file=sys.stderr)
        return 1
    try:
        if args.threads:
            from threadpoolctl import threadpool_limits

            limiter = threadpool_limits(limits=args.threads)
        else:
            limiter = nullcontext()
        with limiter:
            return args.func(args)
    except SenseSiameseError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
