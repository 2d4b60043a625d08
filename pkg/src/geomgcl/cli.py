"""Command-line interface for the full pipeline.

Subcommands: pretrain, finetune, eval, featurize. Configuration comes
from an optional JSON file whose keys mirror the EncoderConfig and
TrainConfig fields; command-line flags override file values, and the
effective merged config is echoed into the output directory.

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import geommpnn, objectives, trainer
from .geommpnn import EncoderConfig, featurize
from .molio import (
    CLASSIFICATION,
    REGRESSION,
    DatasetError,
    labels_matrix,
    parse_dataset,
    split_dataset,
)
from .trainer import TrainConfig

log = logging.getLogger("geomgcl")

_ENCODER_KEYS = {f.name for f in fields(EncoderConfig)}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}

_TASKS = {"cls": CLASSIFICATION, "reg": REGRESSION}


class CliError(ValueError):
    pass


def load_run_config(path, overrides=None):
    """Merge defaults, an optional JSON config file, and flag overrides."""
    file_values = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            file_values = json.load(fh)
        if not isinstance(file_values, dict):
            raise CliError("config file must contain a JSON object")
    merged = dict(file_values)
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value
    unknown = set(merged) - _ENCODER_KEYS - _TRAIN_KEYS
    if unknown:
        raise CliError(f"unknown config key: {sorted(unknown)[0]}")
    enc_cfg = EncoderConfig(**{k: v for k, v in merged.items() if k in _ENCODER_KEYS})
    train_cfg = TrainConfig(**{k: v for k, v in merged.items() if k in _TRAIN_KEYS})
    return enc_cfg, train_cfg


def _write_effective_config(out_dir, enc_cfg, train_cfg):
    merged = {**asdict(enc_cfg), **asdict(train_cfg)}
    path = out_dir / "run_config.json"
    path.write_text(json.dumps(merged, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    log.info("effective config: %s", json.dumps(merged, sort_keys=True))


def _write_loss_csv(path, rows, columns):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c]
                             for c in columns])


def cmd_pretrain(args):
    enc_cfg, train_cfg = load_run_config(args.config, {"seed": args.seed})
    dataset = parse_dataset(args.data, _TASKS[args.task])
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_effective_config(out_dir, enc_cfg, train_cfg)

    result = trainer.pretrain(dataset, enc_cfg, train_cfg, run_self_test=args.self_test)
    trainer.write_checkpoint(result.checkpoint, out_dir / "checkpoint.ggcl")
    _write_loss_csv(out_dir / "pretrain_loss.csv", result.history,
                    ["epoch", "contrastive_total", "contrastive_mean",
                     "spatial_reg", "combined_mean"])
    log.info("wrote %s (best epoch %d)", out_dir / "checkpoint.ggcl", result.best_epoch)
    return 0


def cmd_finetune(args):
    enc_cfg, train_cfg = load_run_config(args.config, {"seed": args.seed})
    dataset = parse_dataset(args.data, _TASKS[args.task])
    ckpt = trainer.load_checkpoint(
        args.checkpoint,
        expected_fingerprint=trainer.config_fingerprint(enc_cfg, dataset.feature_dims),
    )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_effective_config(out_dir, enc_cfg, train_cfg)

    result = trainer.finetune(dataset, ckpt, enc_cfg, train_cfg)
    trainer.save_checkpoint(result.params, enc_cfg, dataset.feature_dims,
                            out_dir / "model.ggcl")
    _write_loss_csv(out_dir / "finetune_loss.csv", result.history,
                    ["epoch", "train_loss", "valid_metric"])
    report = {
        "metric": result.metric_name,
        "per_epoch": result.history,
        "best_valid": result.best_valid,
        "best_epoch": result.best_epoch,
        "test": result.test_metric,
    }
    (out_dir / "metrics.json").write_text(json.dumps(report, indent=2) + "\n",
                                          encoding="utf-8")
    log.info("test %s: %s", result.metric_name, result.test_metric)
    return 0


def cmd_eval(args):
    enc_cfg, train_cfg = load_run_config(args.config, {"seed": args.seed})
    dataset = parse_dataset(args.data, _TASKS[args.task])
    ckpt = trainer.load_checkpoint(
        args.model,
        expected_fingerprint=trainer.config_fingerprint(enc_cfg, dataset.feature_dims),
    )
    rng = np.random.default_rng(train_cfg.seed)
    params = geommpnn.init_encoder_params(enc_cfg, dataset.feature_dims, rng)
    geommpnn.init_prediction_params(enc_cfg, dataset.task_count, rng, params)
    params.load_values({name: v.astype(np.float64) for name, v in ckpt.tensors.items()
                        if name in params})

    splits = split_dataset(dataset, (0.8, 0.1, 0.1), train_cfg.seed)
    idxs = dict(zip(("train", "valid", "test"), splits))[args.split]
    inputs = [featurize(m, enc_cfg) for m in dataset.molecules]
    metric = trainer.evaluate_metric(dataset, idxs, inputs, params, enc_cfg)
    report = {
        "split": args.split,
        "metric": "roc_auc" if dataset.task_type == CLASSIFICATION else "rmse",
        "value": metric,
    }
    print(json.dumps(report, indent=2))
    return 0


def cmd_featurize(args):
    enc_cfg, _ = load_run_config(args.config, {})
    try:
        dataset = parse_dataset(args.data, _TASKS[args.task])
        molecules = dataset.molecules
    except DatasetError as e:
        if "no molecules" not in str(e):
            raise
        molecules = []   # empty dataset exports an empty file
    with open(args.out, "w", encoding="utf-8") as fh:
        for mol in molecules:
            inputs = featurize(mol, enc_cfg)
            g2, g3 = inputs.graph2d, inputs.graph3d
            record = {
                "id": mol.id,
                "view2d": {
                    "edges": np.stack([g2.src, g2.dst], axis=1).tolist() if g2.n_edges else [],
                    "distances": g2.edge_distance.tolist(),
                    "neighbor_pairs": np.stack([g2.pair_target, g2.pair_neighbor], axis=1).tolist()
                                      if g2.n_pairs else [],
                    "angles": g2.pair_angle.tolist(),
                    "distance_rbf": inputs.l_emb.tolist(),
                    "angle_rbf": inputs.phi_emb.tolist(),
                },
                "view3d": {
                    "edges": np.stack([g3.src, g3.dst], axis=1).tolist() if g3.n_edges else [],
                    "distances": g3.edge_distance.tolist(),
                    "distance_domains": g3.dist_domain.tolist(),
                    "neighbor_pairs": np.stack([g3.pair_target, g3.pair_neighbor], axis=1).tolist()
                                      if g3.n_pairs else [],
                    "angles": g3.pair_angle.tolist(),
                    "angle_domains": g3.pair_angle_domain.tolist(),
                    "distance_rbf": inputs.r_emb.tolist(),
                    "angle_rbf": inputs.theta_emb.tolist(),
                },
            }
            fh.write(json.dumps(record) + "\n")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="geomgcl",
        description="Dual-view geometric molecular representation learning",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="contrastive pretraining over paired views")
    p.add_argument("--data", required=True, help="JSON-lines molecule dataset")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--task", choices=sorted(_TASKS), default="reg",
                   help="label validation mode (labels are ignored for pretraining)")
    p.add_argument("--self-test", action="store_true",
                   help="run the gradient finite-difference check first")
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("finetune", help="supervised training from a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task", choices=sorted(_TASKS), required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_finetune)

    p = sub.add_parser("eval", help="metrics of a saved model on one split")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--task", choices=sorted(_TASKS), required=True)
    p.add_argument("--split", choices=("train", "valid", "test"), default="test")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("featurize", help="export per-molecule geometric tensors")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--task", choices=sorted(_TASKS), default="reg")
    p.set_defaults(fn=cmd_featurize)

    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (OSError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
