"""Command-line entry point.

Subcommands: generate-data, train, eval, sweep, reconstruct, uncertainty,
eq9, grad-check. Every run echoes its effective configuration to the output
directory and writes a metrics or report artifact. Exit codes: 0 success,
1 validation/usage error, 2 numeric divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .batch import MODALITIES, MODALITY_INDEX
from .config import Config, ReconConfig, echo_config, load_config
from .data import dataset_splits, generate, load_dataset, ridge_oracle, write_dataset
from .errors import DcerError, DivergenceError
from .evaluate import (
    apply_missing,
    evaluate_cell,
    eq9_experiment,
    sweep,
    uncertainty_report,
    write_sweep_csv,
)
from .gradchecks import run_registered_checks
from .metrics import metric_report
from .model import DcerModel
from .storage import load_checkpoint, save_checkpoint, write_container
from .train import train_loop


def worker_count() -> int:
    env = os.environ.get("DCER_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted config override, e.g. train.lr=1e-3")
    p.add_argument("--seed", type=int, help="override train/data seed")
    p.add_argument("--out", default="out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dcer",
        description="Multimodal fusion with frequency compression and "
        "energy-based reconstruction of missing modalities",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate-data", help="write a synthetic dataset")
    _add_common(p)
    p.add_argument("--n", type=int, help="number of samples")

    p = sub.add_parser("train", help="train on a generated dataset")
    _add_common(p)
    p.add_argument("--data", help="dataset directory (default: generate in memory)")
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("eval", help="evaluate a checkpoint at one condition")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--mr", type=float, default=0.0)
    p.add_argument("--steps", type=int, default=None, help="energy iterations")
    p.add_argument("--protocol", default="zero", choices=["zero", "noise"])

    p = sub.add_parser("sweep", help="cartesian (mr, T, protocol, subset) sweep")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--mrs", help="comma list, e.g. 0,0.5")
    p.add_argument("--Ts", help="comma list, e.g. 0,3")
    p.add_argument("--protocols", help="comma list, e.g. zero,noise")
    p.add_argument("--subsets", help="comma list of modality subsets, e.g. avt,t")
    p.add_argument("--replicates", type=int)

    p = sub.add_parser("reconstruct", help="fill missing modalities; JSONL report")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--mr", type=float, default=0.5)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--save-tensors", action="store_true",
                   help="also write reconstructed encodings as containers")

    p = sub.add_parser("uncertainty", help="energy-error correlation report")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--mr", type=float, default=0.5)

    p = sub.add_parser("eq9", help="frequency- vs time-masking variance")
    _add_common(p)
    p.add_argument("--rate", type=float, default=0.5)
    p.add_argument("--trials", type=int, default=500)

    p = sub.add_parser("grad-check", help="run all registered gradient checks")
    _add_common(p)
    return parser


def _load_cfg(args) -> Config:
    cfg = load_config(args.config, args.set)
    if args.seed is not None:
        cfg.train.seed = args.seed
        cfg.data.seed = args.seed
    return cfg


def _load_data(args, cfg: Config):
    if getattr(args, "data", None):
        batch, data_cfg = load_dataset(args.data)
        cfg.data = data_cfg
        return batch
    return generate(cfg.data)


def _load_model(args, cfg: Config) -> DcerModel:
    model = DcerModel(cfg.model, seed=cfg.train.seed)
    load_checkpoint(args.checkpoint, model)
    return model


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except DivergenceError as exc:
        print(f"error: numeric divergence: {exc}", file=sys.stderr)
        return 2
    except DcerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out)
    echo_config(cfg, out)

    if args.command == "generate-data":
        if args.n:
            cfg.data.n = args.n
        cfg.data.validate()
        batch = generate(cfg.data)
        manifest = write_dataset(batch, cfg.data, out)
        train, _, test = dataset_splits(batch, cfg.data)
        c_star = ridge_oracle(train, test, cfg.data.vocab)
        (out / "oracle.json").write_text(
            json.dumps({"ridge_corr": c_star, "n": cfg.data.n}) + "\n"
        )
        print(f"wrote {manifest} (n={cfg.data.n}, ridge oracle corr {c_star:.4f})")
        return 0

    if args.command == "train":
        if args.epochs:
            cfg.train.epochs = args.epochs
        batch = _load_data(args, cfg)
        train_b, val_b, test_b = dataset_splits(batch, cfg.data)
        model = DcerModel(cfg.model, seed=cfg.train.seed)
        history = train_loop(model, train_b, val_b, cfg, out, log=print)
        from .train import predict_complete

        rep = metric_report(
            predict_complete(model, test_b), test_b.labels,
            (cfg.data.label_low, cfg.data.label_high),
        )
        print(f"test mae {rep.mae:.4f} corr {rep.pearson_corr:.4f}")
        (out / "test_report.json").write_text(
            json.dumps({"mae": rep.mae, "corr": rep.pearson_corr,
                        "acc7": rep.acc7, "acc2": rep.acc2, "f1": rep.f1}) + "\n"
        )
        return 0

    if args.command == "eval":
        batch = _load_data(args, cfg)
        _, _, test_b = dataset_splits(batch, cfg.data)
        model = _load_model(args, cfg)
        steps = cfg.recon.steps if args.steps is None else args.steps
        rep = evaluate_cell(
            model, test_b, args.mr, steps, args.protocol, "avt",
            cfg.train.seed, cfg.recon, (cfg.data.label_low, cfg.data.label_high),
        )
        write_sweep_csv(out / "eval.csv", [rep])
        print(rep.csv_row())
        return 0

    if args.command == "sweep":
        batch = _load_data(args, cfg)
        _, _, test_b = dataset_splits(batch, cfg.data)
        model = _load_model(args, cfg)
        if args.mrs:
            cfg.eval.mrs = [float(v) for v in args.mrs.split(",")]
        if args.Ts:
            cfg.eval.steps = [int(v) for v in args.Ts.split(",")]
        if args.protocols:
            cfg.eval.protocols = args.protocols.split(",")
        if args.subsets:
            cfg.eval.subsets = args.subsets.split(",")
        if args.replicates:
            cfg.eval.replicates = args.replicates
        cfg.eval.validate()
        reports = sweep(
            model, test_b, cfg.eval, cfg.recon,
            (cfg.data.label_low, cfg.data.label_high), out / "sweep.csv",
        )
        print(f"wrote {out / 'sweep.csv'} ({len(reports)} rows)")
        return 0

    if args.command == "reconstruct":
        batch = _load_data(args, cfg)
        _, _, test_b = dataset_splits(batch, cfg.data)
        model = _load_model(args, cfg)
        steps = cfg.recon.steps if args.steps is None else args.steps
        masked = apply_missing(test_b, args.mr, "zero", cfg.train.seed)
        recon = ReconConfig(steps=steps, eta=cfg.recon.eta,
                            rho=cfg.recon.rho, sigma=cfg.recon.sigma)
        rng = np.random.default_rng([cfg.train.seed, 0xE7A1])
        result = model.fill_missing(masked, recon, rng=rng)
        path = out / "reconstruct.jsonl"
        with path.open("w") as fh:
            for i, sid in enumerate(masked.ids):
                missing = [
                    m for m in MODALITIES
                    if not masked.presence[i, MODALITY_INDEX[m]]
                ]
                fh.write(json.dumps({
                    "id": sid,
                    "missing_modalities": missing,
                    "final_energy": float(result.uncertainty[i]),
                    "prediction": float(result.predictions[i]),
                }) + "\n")
        if args.save_tensors:
            write_container(out / "reconstructed_z.dctc", {"z": result.z})
        print(f"wrote {path}")
        return 0

    if args.command == "uncertainty":
        batch = _load_data(args, cfg)
        _, _, test_b = dataset_splits(batch, cfg.data)
        model = _load_model(args, cfg)
        rep = uncertainty_report(model, test_b, args.mr, cfg.train.seed, cfg.recon)
        doc = {k: getattr(rep, k) for k in rep.__dataclass_fields__}
        (out / "uncertainty.json").write_text(json.dumps(doc, indent=2) + "\n")
        print(json.dumps(doc))
        return 0

    if args.command == "eq9":
        var_time, var_freq = eq9_experiment(args.rate, args.trials, seed=cfg.data.seed)
        doc = {"rate": args.rate, "trials": args.trials,
               "var_time": var_time, "var_freq": var_freq}
        (out / "eq9.json").write_text(json.dumps(doc, indent=2) + "\n")
        print(json.dumps(doc))
        return 0

    if args.command == "grad-check":
        results = run_registered_checks()
        failed = 0
        with (out / "grad_check.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["check", "max_rel_err", "tol", "passed"])
            for name, report in results:
                writer.writerow([name, f"{report.max_rel_err:.3e}",
                                 report.tol, report.passed])
                print(f"{name:40s} {report}")
                failed += not report.passed
        return 1 if failed else 0

    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
