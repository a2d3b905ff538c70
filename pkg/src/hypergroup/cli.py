"""Command-line entry point: train, eval, recommend and synth commands.

Every run is reproducible from its manifest: the config JSON, the dataset
fingerprint, and the seed fully determine the outputs.  Exit codes:
0 success, 1 usage or bad configuration, 2 data problem, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import numeric as nm
from .data import (
    DATA_FILES,
    ID_MAP_FILE,
    SplitSpec,
    SynthConfig,
    generate_synthetic,
    load_dataset,
    save_dataset,
    split_interactions,
)
from .errors import (
    CheckpointError,
    ConfigError,
    ContractViolation,
    DataError,
    DimensionError,
    NumericError,
    SamplingError,
)
from .evaluation import evaluate, rank_items
from .graph import build_hypergraph, build_social_graph
from .model import (
    VARIANT_FLAGS,
    ModelConfig,
    initialize_params,
    load_params,
    save_params,
    score_items_for_embedding,
    transient_group_embedding,
)
from .training import STRATEGY_FLAGS, TrainConfig, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

CHECKPOINT_NAME = "checkpoint.bin"
MANIFEST_NAME = "manifest.json"
LOSS_CSV_NAME = "loss.csv"
TRAIN_REPORT_NAME = "train_report.json"


class _Parser(argparse.ArgumentParser):
    """argparse parser whose usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(self.exit_with(message))

    def exit_with(self, message) -> int:
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        return EXIT_USAGE


def _threads_from(args) -> int:
    if args.threads is not None:
        value = args.threads
    else:
        env = os.environ.get("HYPERGROUP_THREADS")
        try:
            value = int(env) if env else 1
        except ValueError:
            raise ConfigError(f"HYPERGROUP_THREADS must be an integer, got {env!r}") from None
    if value < 1:
        raise ConfigError("threads must be >= 1")
    return value


def _read_json(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"config file not found: {p}")
    try:
        blob = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed JSON in {p}: {exc}") from exc
    if not isinstance(blob, dict):
        raise DataError(f"config root must be a JSON object: {p}")
    return blob


def dataset_fingerprint(data_dir) -> str:
    """Content hash over the four data files plus the ID-map sidecar."""
    digest = hashlib.sha256()
    root = Path(data_dir)
    for name in list(DATA_FILES) + [ID_MAP_FILE]:
        path = root / name
        digest.update(name.encode("utf-8"))
        if path.is_file():
            digest.update(path.read_bytes())
    return digest.hexdigest()


def _split_spec(config: dict, seed: int) -> SplitSpec:
    section = dict(config.get("split", {}))
    section.setdefault("seed", seed)
    try:
        return SplitSpec(**section)
    except TypeError as exc:
        raise ConfigError(f"bad split section: {exc}") from exc


def _model_config(config: dict, variant_flag: str | None) -> ModelConfig:
    section = dict(config.get("model", {}))
    if variant_flag is not None:
        section["variant"] = VARIANT_FLAGS[variant_flag]
    try:
        cfg = ModelConfig.from_dict(section)
    except TypeError as exc:
        raise ConfigError(f"bad model section: {exc}") from exc
    return cfg


def _train_config(config: dict, args) -> TrainConfig:
    section = dict(config.get("train", {}))
    if args.strategy is not None:
        section["strategy"] = STRATEGY_FLAGS[args.strategy]
    if args.seed is not None:
        section["seed"] = args.seed
    section["threads"] = _threads_from(args)
    try:
        cfg = TrainConfig(**section)
    except TypeError as exc:
        raise ConfigError(f"bad train section: {exc}") from exc
    cfg.validate()
    return cfg


def cmd_train(args) -> int:
    config = _read_json(args.config)
    model_cfg = _model_config(config, args.variant)
    train_cfg = _train_config(config, args)
    seed = train_cfg.seed
    split_spec = _split_spec(config, seed)
    split_spec.validate()

    ds = load_dataset(args.data)
    train_split, val_split, test_split = split_interactions(ds, split_spec)
    social = build_social_graph(train_split)
    hyper = build_hypergraph(train_split)

    node_features = None
    feature_file = config.get("node_features_file")
    if feature_file:
        _, tensors = nm.load_checkpoint(feature_file)
        if "node_features" not in tensors:
            raise CheckpointError(f"{feature_file} holds no 'node_features' tensor")
        node_features = tensors["node_features"]

    params = initialize_params(
        model_cfg, ds.num_users, ds.num_items,
        np.random.default_rng([seed, 1]), node_features=node_features,
    )
    report = train(train_split, social, hyper, params, model_cfg, train_cfg, val_ds=val_split)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / CHECKPOINT_NAME
    save_params(
        ckpt_path, params, model_cfg, seed,
        extra_meta={
            "split": {
                "train_ratio": split_spec.train_ratio,
                "val_ratio": split_spec.val_ratio,
                "test_ratio": split_spec.test_ratio,
                "seed": split_spec.seed,
            },
            "strategy": report.strategy,
        },
    )
    report.checkpoint_path = str(ckpt_path)
    report.write_loss_csv(out / LOSS_CSV_NAME)
    report.write_json(out / TRAIN_REPORT_NAME)

    manifest = {
        "tool_version": __version__,
        "seed": seed,
        "dataset": str(Path(args.data)),
        "dataset_fingerprint": dataset_fingerprint(args.data),
        "variant": model_cfg.variant,
        "strategy": report.strategy,
        "threads": train_cfg.threads,
        "config": {
            "model": model_cfg.to_dict(),
            "train": train_cfg.__dict__.copy(),
            "split": {
                "train_ratio": split_spec.train_ratio,
                "val_ratio": split_spec.val_ratio,
                "test_ratio": split_spec.test_ratio,
                "seed": split_spec.seed,
            },
        },
        "artifacts": {
            "checkpoint": CHECKPOINT_NAME,
            "loss_csv": LOSS_CSV_NAME,
            "train_report": TRAIN_REPORT_NAME,
        },
    }
    (out / MANIFEST_NAME).write_text(
        json.dumps(manifest, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )
    final_g = report.final_loss("group")
    final_u = report.final_loss("user")
    print(f"trained {model_cfg.variant} via {report.strategy}: "
          f"loss_g={final_g if final_g is not None else 'n/a'} "
          f"loss_u={final_u if final_u is not None else 'n/a'}")
    print(f"checkpoint: {ckpt_path}")
    return EXIT_OK


def _restore_world(checkpoint, data_dir, split_name: str):
    params, model_cfg, meta = load_params(checkpoint)
    ds = load_dataset(data_dir)
    if params.num_users != ds.num_users or params.num_items != ds.num_items:
        raise CheckpointError(
            f"checkpoint was built for {params.num_users} users / {params.num_items} items, "
            f"dataset has {ds.num_users} / {ds.num_items}"
        )
    split_meta = meta.get("split")
    if split_name == "all" or not split_meta:
        train_split = eval_split = ds
    else:
        spec = SplitSpec(
            train_ratio=float(split_meta["train_ratio"]),
            val_ratio=float(split_meta["val_ratio"]),
            test_ratio=float(split_meta["test_ratio"]),
            seed=int(split_meta["seed"]),
        )
        parts = dict(zip(("train", "val", "test"), split_interactions(ds, spec)))
        train_split = parts["train"]
        eval_split = parts[split_name]
    social = build_social_graph(train_split)
    hyper = build_hypergraph(train_split)
    return params, model_cfg, meta, ds, train_split, eval_split, social, hyper


def cmd_eval(args) -> int:
    cutoffs = tuple(int(tok) for tok in args.topn.split(",") if tok)
    if not cutoffs:
        raise ConfigError("--topn needs at least one cutoff")
    params, model_cfg, meta, ds, train_split, eval_split, social, hyper = _restore_world(
        args.checkpoint, args.data, args.split
    )
    report = evaluate(
        params, model_cfg, social, hyper, eval_split,
        cutoffs=cutoffs,
        eval_seed=args.seed if args.seed is not None else int(meta.get("seed", 0)),
        target=args.target,
        train_ds=train_split,
        exclude_train_positives=args.exclude_train_positives,
        strata=args.strata,
    )
    print(report.to_table())
    print(report.to_json())
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_recommend(args) -> int:
    params, model_cfg, meta, ds, _train_split, _eval_split, social, hyper = _restore_world(
        args.checkpoint, args.data, "all"
    )
    if ds.id_maps is None:
        raise DataError("dataset has no ID map; cannot resolve member names")
    raw_members = [tok for tok in args.members.split(",") if tok]
    if not raw_members:
        raise ConfigError("--members needs at least one member id")
    members = []
    for raw in raw_members:
        if raw not in ds.id_maps.users:
            raise DataError(f"unknown member id {raw!r}")
        members.append(ds.id_maps.users[raw])

    rng = np.random.default_rng(args.seed if args.seed is not None else int(meta.get("seed", 0)))
    emb = transient_group_embedding(members, params, model_cfg, social, hyper, rng)
    scores = score_items_for_embedding(emb, params, params.group_mlp, model_cfg)
    order = rank_items(scores)[: args.topn]
    item_names = ds.id_maps.reverse("items")
    for v in order:
        print(f"{item_names[int(v)]}\t{scores[int(v)]:.6f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    blob = _read_json(args.config)
    try:
        cfg = SynthConfig(**blob)
    except TypeError as exc:
        raise ConfigError(f"bad synthetic config: {exc}") from exc
    ds = generate_synthetic(cfg)
    save_dataset(ds, args.out)
    print(f"wrote {ds.num_users} users / {ds.num_items} items / {ds.num_groups} groups to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hypergroup", description=__doc__)
    parser.add_argument("--version", action="version", version=f"hypergroup {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model on a dataset directory")
    p_train.add_argument("--data", required=True, help="dataset directory")
    p_train.add_argument("--config", required=True, help="run config JSON")
    p_train.add_argument("--out", required=True, help="output directory")
    p_train.add_argument("--variant", choices=sorted(VARIANT_FLAGS), default=None)
    p_train.add_argument("--strategy", choices=sorted(STRATEGY_FLAGS), default=None)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--threads", type=int, default=None)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint with full-item ranking")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--topn", default="5,10", help="comma-separated cutoffs")
    p_eval.add_argument("--target", choices=("groups", "users"), default="groups")
    p_eval.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p_eval.add_argument("--strata", action="store_true")
    p_eval.add_argument("--exclude-train-positives", action="store_true")
    p_eval.add_argument("--seed", type=int, default=None)
    p_eval.add_argument("--out", default=None, help="also write the JSON report here")
    p_eval.add_argument("--threads", type=int, default=None)
    p_eval.set_defaults(func=cmd_eval)

    p_rec = sub.add_parser("recommend", help="rank items for an ad-hoc group of members")
    p_rec.add_argument("--checkpoint", required=True)
    p_rec.add_argument("--data", required=True)
    p_rec.add_argument("--members", required=True, help="comma-separated raw member ids")
    p_rec.add_argument("--topn", type=int, default=10)
    p_rec.add_argument("--seed", type=int, default=None)
    p_rec.add_argument("--threads", type=int, default=None)
    p_rec.set_defaults(func=cmd_recommend)

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset directory")
    p_synth.add_argument("--config", required=True, help="synthetic config JSON")
    p_synth.add_argument("--out", required=True)
    p_synth.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"hypergroup: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError) as exc:
        print(f"hypergroup: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, DimensionError, ContractViolation, SamplingError) as exc:
        print(f"hypergroup: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
