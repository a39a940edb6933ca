"""Command-line front end.

Subcommands: ``gen``, ``train``, ``eval``, ``gradcheck``, ``sweep``. Every
run writes its fully resolved configuration next to its outputs, so any
artifact can be reproduced bit-exactly by re-running from that file.
Training settings resolve in three layers: built-in defaults, then the
``--config`` JSON file (flat keys mirroring the train configuration), then
explicit command-line flags.

Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.
The ``CORRFUSION_THREADS`` environment variable caps evaluation
parallelism (default 1).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .dataset import gen_synthetic, load_dataset, save_dataset, split_dataset
from .errors import ManifestError, TrainingDiverged
from .metrics import param_count
from .model import restore_state
from .serialize import load_model, save_model
from .train import (
    GradCheckSpec,
    TrainConfig,
    config_from_dict,
    config_to_dict,
    evaluate,
    gradcheck,
    train,
)

TRAIN_FLAG_KEYS = ("head", "r", "rho", "seed", "epochs", "lr", "momentum",
                   "batch_size", "l2_weight", "embed_dim", "detach_weights")


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="ascii")


def _parse_hidden(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v != ""]


def _resolve_train_config(args) -> TrainConfig:
    merged = config_to_dict(TrainConfig())
    if args.config is not None:
        cfg_path = Path(args.config)
        if not cfg_path.is_file():
            raise FileNotFoundError(str(cfg_path))
        merged.update(json.loads(cfg_path.read_text(encoding="ascii")))
    for key in TRAIN_FLAG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    if getattr(args, "hidden", None) is not None:
        merged["hidden"] = _parse_hidden(args.hidden)
    return config_from_dict(merged)


def cmd_gen(args) -> int:
    ds = gen_synthetic(args.classes, args.dim, args.pairs, args.p_change,
                       args.noise, args.temporal_corr, args.seed, args.imbalance)
    out = Path(args.out)
    save_dataset(ds, out)
    _write_json(out / "config.json", {"command": "gen", **ds.meta})
    print(f"wrote {ds.n} pairs ({ds.n_classes} classes, d_in={ds.d_in}) to {out}")
    return 0


def cmd_train(args) -> int:
    config = _resolve_train_config(args)
    ds = load_dataset(args.data)
    splits = split_dataset(ds.n, config.ratios, config.seed)
    result = train(config, ds, splits)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json",
                {"command": "train", "data": str(args.data), **config_to_dict(config)})
    with open(out / "history.jsonl", "w", encoding="ascii", newline="\n") as fh:
        for record in result.history:
            fh.write(json.dumps(record) + "\n")
    save_model(result.model, out)
    restore_state(result.model, result.final_state)
    save_model(result.model, out / "final")
    if result.history:
        last = result.history[-1]
        print(f"trained {config.head} for {config.epochs} epochs; "
              f"best epoch {result.best_epoch} "
              f"(val oa_tr {max(h['val_oa_tr'] for h in result.history):.4f}); "
              f"final val oa_t1 {last['val_oa_t1']:.4f}")
    else:
        print("trained for 0 epochs; saved the initialised model")
    return 0


def cmd_eval(args) -> int:
    model_dir = Path(args.model)
    model = load_model(model_dir)
    run_cfg_path = model_dir / "config.json"
    if not run_cfg_path.is_file():
        raise FileNotFoundError(str(run_cfg_path))
    run_cfg = json.loads(run_cfg_path.read_text(encoding="ascii"))
    if "seed" not in run_cfg:
        raise ManifestError(f"{run_cfg_path} lacks the 'seed' key needed to "
                            f"rebuild the splits")
    ds = load_dataset(args.data)
    splits = split_dataset(ds.n, tuple(run_cfg.get("ratios", (0.7, 0.1, 0.2))),
                           run_cfg["seed"])
    indices = getattr(splits, args.split)
    report = evaluate(model, ds, indices)

    report_path = Path(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    _write_json(report_path, report.to_dict())
    _write_json(report_path.with_name(report_path.stem + ".config.json"),
                {"command": "eval", "model": str(args.model), "data": str(args.data),
                 "split": args.split})
    print(f"{args.split}: oa_t1 {report.oa_t1:.4f}  oa_t2 {report.oa_t2:.4f}  "
          f"oa_bi {report.oa_bi:.4f}  oa_tr {report.oa_tr:.4f}  "
          f"(n={len(indices)})")
    return 0


def cmd_gradcheck(args) -> int:
    spec = GradCheckSpec()
    if args.head is not None:
        if args.head == "dcca":
            raise ValueError("the dcca head records a monitored value without a "
                             "gradient path and is excluded from gradient checking")
        spec.head = args.head
    report = gradcheck(spec, seed=args.seed, fd_step=args.step, tol=args.tol)
    status = "PASS" if report.passed else "FAIL"
    print(f"gradcheck[{spec.head}]: max_rel_err={report.max_rel_err:.3e} "
          f"at {report.worst_coordinate} over {report.n_coordinates} coordinates "
          f"-> {status} (tol {report.tol:g})")
    return 0 if report.passed else 1


def cmd_sweep(args) -> int:
    config = _resolve_train_config(args)
    values = [v for v in args.values.split(",") if v != ""]
    if args.param == "r":
        parsed = [int(v) for v in values]
        for v in parsed:
            if v < 1 or config.embed_dim % v != 0:
                raise ValueError(f"r must divide the embedding width: "
                                 f"d={config.embed_dim}, r={v}")
    else:
        parsed = [float(v) for v in values]
        for v in parsed:
            if not (0.0 <= v < 1.0):
                raise ValueError(f"rho must lie in [0, 1), got {v}")
    if args.repeat < 1:
        raise ValueError("repeat must be at least 1")

    ds = load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json",
                {"command": "sweep", "data": str(args.data), "param": args.param,
                 "values": parsed, "repeat": args.repeat, **config_to_dict(config)})

    rows = []
    for value in parsed:
        for rep in range(args.repeat):
            cfg_dict = config_to_dict(config)
            cfg_dict[args.param] = value
            cfg_dict["seed"] = config.seed + rep
            run_cfg = config_from_dict(cfg_dict)
            splits = split_dataset(ds.n, run_cfg.ratios, run_cfg.seed)
            result = train(run_cfg, ds, splits)
            report = evaluate(result.model, ds, splits.val)
            rows.append({
                "param": args.param, "value": value, "seed": run_cfg.seed,
                "oa_t1": report.oa_t1, "oa_t2": report.oa_t2,
                "oa_bi": report.oa_bi, "oa_tr": report.oa_tr,
                "param_count": param_count(run_cfg.embed_dim, run_cfg.r),
            })
            print(f"sweep {args.param}={value} seed={run_cfg.seed}: "
                  f"oa_bi {report.oa_bi:.4f}  oa_tr {report.oa_tr:.4f}")

    with open(out / "sweep.csv", "w", encoding="ascii", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {len(rows)} rows to {out / 'sweep.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="corrfusion",
        description="Bi-temporal scene classification and change detection "
                    "with correlation-gated fusion.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic paired dataset")
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--dim", type=int, default=32, help="feature width per time")
    p.add_argument("--pairs", type=int, default=4000)
    p.add_argument("--p-change", type=float, default=0.1, dest="p_change")
    p.add_argument("--noise", type=float, default=1.0, help="feature noise sigma")
    p.add_argument("--temporal-corr", type=float, default=0.6, dest="temporal_corr")
    p.add_argument("--imbalance", type=float, default=0.0,
                   help="power-law exponent on class frequencies (0 = balanced)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser(
        "train", help="train a model",
        description="Settings resolve as defaults, then --config JSON, then flags.")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON file with flat train-config keys")
    p.add_argument("--head", choices=("corrfusion", "softdcca", "dcca", "nofusion"))
    p.add_argument("--r", type=int)
    p.add_argument("--rho", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--l2-weight", type=float, dest="l2_weight")
    p.add_argument("--embed-dim", type=int, dest="embed_dim")
    p.add_argument("--hidden", help="comma-separated backbone hidden widths")
    p.add_argument("--detach-weights", action="store_const", const=True,
                   default=None, dest="detach_weights",
                   help="treat the fusion gate as a constant in backward")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained model on a split")
    p.add_argument("--model", required=True, help="training output directory")
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--report", required=True, help="path of the JSON report to write")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck",
                       help="compare analytic gradients with finite differences")
    p.add_argument("--seed", type=int, default=17)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--step", type=float, default=1e-5)
    p.add_argument("--head", choices=("corrfusion", "softdcca", "nofusion"))
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("sweep", help="train across a hyperparameter grid")
    p.add_argument("--param", choices=("r", "rho"), required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--repeat", type=int, default=1)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON file with flat train-config keys")
    p.add_argument("--head", choices=("corrfusion", "softdcca", "dcca", "nofusion"))
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--embed-dim", type=int, dest="embed_dim")
    p.add_argument("--hidden", help="comma-separated backbone hidden widths")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse exits 2 on usage errors
        return int(e.code or 0)
    try:
        return args.func(args)
    except ManifestError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (OSError, TrainingDiverged) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
