"""Command-line entry point: ``ppgsqa <subcommand> [flags]``.

Exit codes: 0 ok, 2 usage, 3 dataset problem, 4 model/data mismatch.
Every subcommand writes ``<subcommand>.resolved.json`` to ``--out-dir``
with every effective setting.
"""
from __future__ import annotations

import argparse
import itertools
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .accounting import CONVENTIONS, emit_cost_report
from .data.dataset import load_dataset, records_to_dataset
from .data.formats import (load_record, load_unlabeled_record, read_manifest, write_predictions)
from .data.synth import SynthesisConfig, synthesize_corpus
from .data.weights import load_weights_with_header, save_weights
from .dsp import ChannelKind, parse_channels
from .errors import DataError, ModelError, PPGSQAError
from .metrics import accuracy, auc, confusion_matrix, roc_curve, write_roc_csv
from .nn.model import ModelConfig
from .training import (TrainConfig, cross_validate, cv_summary, predict_logits, softmax_good,
                       train_full)

ABLATION_CHANNEL_SETS = (
    "ppg", "fdp", "sdp", "atc",
    "ppg,fdp", "ppg,sdp", "ppg,atc",
    "ppg,fdp,sdp", "ppg,fdp,atc", "ppg,sdp,atc",
    "ppg,fdp,sdp,atc",
)


def _channels_arg(text: str) -> tuple[ChannelKind, ...]:
    try:
        return parse_channels(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _on_off(text: str) -> bool:
    t = text.lower()
    if t in ("on", "true", "1", "yes"):
        return True
    if t in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError("expected on or off")


def _channel_names(kinds) -> str:
    return ",".join(k.cli_name for k in kinds)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _echo_config(args, extra: dict | None = None) -> None:
    resolved = {}
    for key, val in sorted(vars(args).items()):
        if key == "func":
            continue
        if isinstance(val, tuple) and val and isinstance(val[0], ChannelKind):
            val = _channel_names(val)
        elif isinstance(val, Path):
            val = str(val)
        resolved[key] = val
    resolved["version"] = __version__
    resolved.update(extra or {})
    _write_json(args.out_dir / f"{args.command}.resolved.json", resolved)


def _model_config(args) -> ModelConfig:
    return ModelConfig(in_channels=len(args.channels), use_se=args.se)


def _train_config(args) -> TrainConfig:
    return TrainConfig(lr=args.lr, weight_decay=args.weight_decay, step_size=args.step_size,
                       gamma=args.gamma, epochs=args.epochs, batch_size=args.batch_size,
                       global_seed=args.seed, folds=args.folds)


def _need_manifest(args):
    if args.manifest is None:
        raise DataError("--manifest is required")
    return read_manifest(args.manifest)


# -- subcommands -------------------------------------------------------------

def cmd_count(args) -> int:
    sets = ABLATION_CHANNEL_SETS if args.ablation else [_channel_names(args.channels)]
    se_opts = (False, True) if args.ablation else (args.se,)
    reports = []
    for se, names in itertools.product(se_opts, sets):
        kinds = parse_channels(names)
        rep = emit_cost_report(ModelConfig(in_channels=len(kinds), use_se=se), args.input_len,
                               args.convention)
        reports.append((names, se, rep))
    if args.ablation:
        lines = [f"{'input':<18} {'SE':<4} {'params':>8} {'Params (k)':>11} {'MACs':>10} {'MMAC':>6}"]
        for names, se, rep in reports:
            label = "+".join(n.upper() for n in names.split(","))
            lines.append(f"{label:<18} {'on' if se else 'off':<4} {rep.params:>8d} "
                         f"{rep.params_k:>11.2f} {rep.macs:>10d} {rep.mmac:>6.2f}")
        text = "\n".join(lines)
        payload = [{"channels": n, "se": se, "params": r.params, "params_k": round(r.params_k, 2),
                    "macs": r.macs, "mmac": round(r.mmac, 2)} for n, se, r in reports]
        out_name = "ablation_costs.json"
    else:
        names, se, rep = reports[0]
        text = f"channels: {names}  se: {'on' if se else 'off'}\n" + rep.to_table()
        payload = rep.to_dict()
        payload["channels"] = names
        out_name = "cost_report.json"
    print(text)
    _write_json(args.out_dir / out_name, payload)
    (args.out_dir / out_name.replace(".json", ".txt")).write_text(text + "\n")
    _echo_config(args)
    return 0


def cmd_synth(args) -> int:
    cfg = SynthesisConfig(n_subjects=args.n_subjects, minutes_per_subject=args.minutes,
                          heart_rate_range=(args.hr_min, args.hr_max),
                          corruption_prob=args.p_corrupt, n_test_subjects=args.n_test,
                          seed=args.seed)
    manifest = synthesize_corpus(cfg, args.out_dir)
    print(f"wrote {len(manifest.entries)} subjects to {args.out_dir / 'manifest.tsv'}")
    _echo_config(args, {"synthesis": cfg.to_dict()})
    return 0


def cmd_preprocess(args) -> int:
    manifest = _need_manifest(args)
    ds = load_dataset(manifest, args.channels, args.split)
    np.savez(args.out_dir / "segments.npz", X=ds.X, y=ds.y, subjects=ds.subjects, starts=ds.starts)
    summary = {"segments": len(ds), "good": int(ds.y.sum()), "bad": int(len(ds) - ds.y.sum()),
               "degenerate_skipped": ds.n_degenerate, "channels": _channel_names(ds.channels),
               "subjects": ds.subject_ids()}
    _write_json(args.out_dir / "preprocess_summary.json", summary)
    print(f"{len(ds)} segments ({summary['good']} good, {summary['bad']} bad)")
    _echo_config(args)
    return 0


def _metrics_writer(path: Path):
    fh = open(path, "w")

    def write(rec):
        fh.write(rec.to_json() + "\n")
        fh.flush()
    return fh, write


def cmd_train(args) -> int:
    manifest = _need_manifest(args)
    ds = load_dataset(manifest, args.channels, args.split)
    mc, tc = _model_config(args), _train_config(args)
    fh, write = _metrics_writer(args.out_dir / "train_metrics.jsonl")
    with fh:
        store, _ = train_full(ds, mc, tc, on_epoch=write, deterministic=args.deterministic)
    save_weights(store, mc, args.out_dir / "weights.bin", seed=args.seed,
                 extra={"channels": _channel_names(args.channels), "fs": 32.0,
                        "segment_seconds": 30.0})
    print(f"trained on {len(ds)} segments; weights at {args.out_dir / 'weights.bin'}")
    _echo_config(args, {"model_config": mc.to_dict(), "train_config": tc.to_dict()})
    return 0


def cmd_cv(args) -> int:
    manifest = _need_manifest(args)
    ds = load_dataset(manifest, args.channels, args.split)
    mc, tc = _model_config(args), _train_config(args)
    handles = {}

    def on_epoch(fold, rec):
        if fold not in handles:
            handles[fold] = open(args.out_dir / f"fold{fold}_metrics.jsonl", "w")
        handles[fold].write(rec.to_json() + "\n")
        handles[fold].flush()
    try:
        results = cross_validate(ds, mc, tc, on_epoch=on_epoch, deterministic=args.deterministic)
    finally:
        for fh in handles.values():
            fh.close()
    summary = cv_summary(results)
    _write_json(args.out_dir / "cv_summary.json", summary)
    mean, std = summary["mean_val_auc"], summary["std_val_auc"]
    if mean is not None:
        print(f"cv val AUC {mean:.4f} +/- {std:.4f} over {len(results)} folds")
    _echo_config(args, {"model_config": mc.to_dict(), "train_config": tc.to_dict()})
    return 0


def _load_model(path):
    try:
        store, config, header = load_weights_with_header(path)
    except DataError as exc:  # unreadable/malformed weights are a model problem here
        raise ModelError(str(exc)) from exc
    channels = parse_channels(header.get("extra", {}).get("channels", "ppg,fdp,sdp"))
    if len(channels) != config.in_channels:
        raise ModelError("weight header channel list disagrees with in_channels")
    return store, config, channels


def cmd_eval(args) -> int:
    store, config, channels = _load_model(args.weights)
    manifest = _need_manifest(args)
    ds = load_dataset(manifest, channels, args.split)
    scores = softmax_good(predict_logits(store, config, ds.X))
    result = {"segments": len(ds), "channels": _channel_names(channels),
              "accuracy": accuracy(scores, ds.y, args.threshold),
              "confusion": confusion_matrix(scores, ds.y, args.threshold)}
    try:
        curve = roc_curve(scores, ds.y)
        result["auc"] = auc(scores, ds.y)
        write_roc_csv(curve, args.out_dir / "roc.csv")
    except PPGSQAError:
        result["auc"] = None
    write_predictions(ds.sources, scores, args.out_dir / "predictions.csv", ds.y, args.threshold)
    _write_json(args.out_dir / "eval.json", result)
    print(f"AUC {result['auc']}  accuracy {result['accuracy']:.4f} on {len(ds)} segments")
    _echo_config(args)
    return 0


def cmd_predict(args) -> int:
    store, config, channels = _load_model(args.weights)
    if args.labels:
        rec = load_record(args.record, args.labels, args.fs)
    else:
        rec = load_unlabeled_record(args.record, args.fs)
    ds = records_to_dataset([rec], channels)
    print(f"channels: {_channel_names(channels)}")
    if len(ds) == 0:
        raise DataError("no usable segments in record")
    scores = softmax_good(predict_logits(store, config, ds.X))
    write_predictions(ds.sources, scores, args.out_dir / "predictions.csv",
                      ds.y if args.labels else None, args.threshold)
    n_good = int(np.sum(scores >= args.threshold))
    print(f"good: {n_good}  bad: {len(ds) - n_good}")
    _echo_config(args, {"model_channels": _channel_names(channels)})
    return 0


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="global seed (default 0)")
    common.add_argument("--deterministic", action="store_true",
                        help="single-threaded BLAS for bit-reproducible runs")
    common.add_argument("--manifest", type=Path, help="dataset manifest (manifest.tsv)")
    common.add_argument("--out-dir", type=Path, default=Path("."), help="output directory")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--channels", type=_channels_arg, default=parse_channels("ppg,fdp,sdp"),
                       help="comma list from ppg,fdp,sdp,atc (default ppg,fdp,sdp)")
    model.add_argument("--se", type=_on_off, default=True, help="SE blocks on|off (default on)")

    train = argparse.ArgumentParser(add_help=False)
    train.add_argument("--epochs", type=int, default=60)
    train.add_argument("--lr", type=float, default=1e-4)
    train.add_argument("--weight-decay", type=float, default=1e-5)
    train.add_argument("--step-size", type=int, default=20)
    train.add_argument("--gamma", type=float, default=0.1)
    train.add_argument("--batch-size", type=int, default=64)
    train.add_argument("--folds", type=int, default=5)
    train.add_argument("--split", default="train", help="manifest split to use (default train)")

    p = argparse.ArgumentParser(prog="ppgsqa", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("count", parents=[common, model], help="parameter/MAC report")
    s.add_argument("--input-len", type=int, default=960)
    s.add_argument("--convention", choices=CONVENTIONS, default="elementwise")
    s.add_argument("--ablation", action="store_true",
                   help="emit all 11 channel sets x SE on/off")
    s.set_defaults(func=cmd_count)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic corpus")
    s.add_argument("--n-subjects", type=int, default=12)
    s.add_argument("--minutes", type=float, default=30.0)
    s.add_argument("--p-corrupt", type=float, default=0.4)
    s.add_argument("--n-test", type=int, default=3)
    s.add_argument("--hr-min", type=float, default=50.0)
    s.add_argument("--hr-max", type=float, default=110.0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("preprocess", parents=[common, model], help="filter, segment, stack")
    s.add_argument("--split", default=None, help="manifest split (default: all)")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train", parents=[common, model, train], help="full training run")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("cv", parents=[common, model, train], help="subject-level cross-validation")
    s.set_defaults(func=cmd_cv)

    s = sub.add_parser("eval", parents=[common], help="score a manifest split")
    s.add_argument("--weights", type=Path, required=True)
    s.add_argument("--split", default="test")
    s.add_argument("--threshold", type=float, default=0.5)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("predict", parents=[common], help="classify the segments of one record")
    s.add_argument("--weights", type=Path, required=True)
    s.add_argument("--record", type=Path, required=True)
    s.add_argument("--labels", type=Path)
    s.add_argument("--fs", type=float, default=32.0)
    s.add_argument("--threshold", type=float, default=0.5)
    s.set_defaults(func=cmd_predict)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        return args.func(args)
    except PPGSQAError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
