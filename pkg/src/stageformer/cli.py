"""Command-line entry point.

Subcommands: gen-data, train, eval, predict, gradcheck, bench.  Configs are
JSON files; individual fields can be overridden with repeated ``--set
key=value`` flags (dotted keys reach into the model block).  Errors exit
nonzero with a one-line JSON error record on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .data import (GenSpec, generate, read_dataset, split_dataset,
                   write_dataset)
from .training import (TrainConfig, evaluate, full_model_grad_check,
                       load_checkpoint, train)


def _load_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _apply_overrides(cfg: dict, overrides: list[str]) -> dict:
    for item in overrides:
        key, _, raw = item.partition("=")
        if not _:
            raise ValueError(f"--set needs key=value, got '{item}'")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return cfg


def _write_report(path, report_dict: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(report_dict, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_predictions_csv(path, rows: list[dict]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["id", "frame", "true",
                                                "predicted"])
        writer.writeheader()
        writer.writerows(rows)


def cmd_gen_data(args) -> int:
    spec_dict = _apply_overrides(_load_json(args.spec) if args.spec else {},
                                 args.set)
    spec = GenSpec(**spec_dict)
    sequences = generate(spec)
    out = Path(args.out)
    write_dataset(out / "full.jsonl", sequences)
    splits = split_dataset(sequences, spec.seed)
    for name, seqs in splits.items():
        write_dataset(out / f"{name}.jsonl", seqs)
    print(json.dumps({"sequences": len(sequences),
                      "splits": {k: len(v) for k, v in splits.items()},
                      "out": str(out)}))
    return 0


def cmd_train(args) -> int:
    cfg_dict = _apply_overrides(_load_json(args.config), args.set)
    config = TrainConfig.from_dict(cfg_dict)
    train_seqs = read_dataset(config.train_path)
    val_seqs = read_dataset(config.val_path)
    result = train(config, train_seqs, val_seqs, verbose=not args.quiet)
    summary = {
        "best_epoch": result.best_epoch,
        "best_val": result.best_val.to_dict(),
        "checkpoint": config.checkpoint_path,
        "history": result.history,
    }
    if args.report:
        _write_report(args.report, summary)
    print(json.dumps({"best_epoch": result.best_epoch,
                      "best_val_accuracy": result.best_val.global_accuracy}))
    return 0


def _load_model(checkpoint_path):
    state = load_checkpoint(checkpoint_path)
    return state["model"], state["config"]


def cmd_eval(args) -> int:
    model, config = _load_model(args.checkpoint)
    sequences = read_dataset(args.data)
    mode = args.decode or config.decode_mode
    report, rows = evaluate(model, sequences, mode)
    if args.report:
        _write_report(args.report, report.to_dict())
    if args.predictions:
        _write_predictions_csv(args.predictions, rows)
    print(json.dumps(report.to_dict()))
    return 0


def cmd_predict(args) -> int:
    model, config = _load_model(args.checkpoint)
    sequences = read_dataset(args.data)
    mode = args.decode or config.decode_mode
    rows = []
    for seq in sequences:
        out = model.forward(seq.features)
        pred = model.predict_labels(out, mode)
        for i, p in enumerate(pred):
            rows.append({"id": seq.id, "frame": i,
                         "true": None if seq.labels is None else int(seq.labels[i]),
                         "predicted": int(p)})
    _write_predictions_csv(args.out, rows)
    print(json.dumps({"sequences": len(sequences), "out": args.out}))
    return 0


def cmd_gradcheck(args) -> int:
    errors = full_model_grad_check(tol=args.tol,
                                   max_entries_per_group=args.max_entries)
    worst = float(max(errors.values()))
    ok = bool(worst <= args.tol)
    for name in sorted(errors):
        status = "ok" if errors[name] <= args.tol else "FAIL"
        print(f"{status:4s} {name:40s} {errors[name]:.3e}")
    print(json.dumps({"max_rel_error": worst, "tol": args.tol, "passed": ok}))
    return 0 if ok else 1


def cmd_bench(args) -> int:
    model, config = _load_model(args.checkpoint)
    sequences = read_dataset(args.data)
    times = []
    for seq in sequences:
        t0 = time.perf_counter()
        out = model.forward(seq.features)
        model.predict_labels(out, args.decode or config.decode_mode)
        times.append(time.perf_counter() - t0)
    result = {
        "sequences": len(sequences),
        "mean_seconds_per_sequence": float(np.mean(times)),
        "max_seconds_per_sequence": float(np.max(times)),
    }
    print(json.dumps(result))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stageformer",
        description="Monotone stage sequence classifier: data generation, "
                    "training, evaluation, and diagnostics.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--spec", help="JSON generation spec")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", required=True, help="JSON train config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--report", help="write a JSON training report here")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--decode", choices=["collab-argmax", "segments",
                                        "collab-dp", "cls-argmax"])
    p.add_argument("--report", help="write the metrics JSON here")
    p.add_argument("--predictions", help="write the per-frame CSV here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="export per-frame predictions")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--decode", choices=["collab-argmax", "segments",
                                        "collab-dp", "cls-argmax"])
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck",
                       help="full-model finite-difference gradient check")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-entries", type=int, default=None,
                   help="probe at most this many entries per parameter group")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="time per-sequence inference")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--decode", choices=["collab-argmax", "segments",
                                        "collab-dp", "cls-argmax"])
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:  # CLI boundary: emit a machine-readable record
        print(json.dumps({"error": type(e).__name__, "message": str(e)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
