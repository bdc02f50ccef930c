"""Command-line entry point.

Exit codes: 0 success, 1 configuration or data error, 2 missing input file,
3 non-finite training loss, 4 checkpoint/split mismatch, 5 unknown user.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import tempfile
from datetime import datetime, timezone
from typing import Optional

import numpy as np

from . import dataset as ds_mod
from .config import (build_config, config_hash, config_items, dump_config, load_config_file,
                     parse_int_list, parse_str_list)
from .encoder import load_checkpoint, readout, save_checkpoint, score_matrix
from .errors import (CheckpointError, ConfigError, DatasetFormatError, EmptyDatasetError,
                     EvaluationError, QAGCLError, TrainingDivergedError)
from .evaluation import CSV_HEADER, DEFAULT_KS, evaluate_scores, rank_from_scores
from .experiments import markdown_table, rows_csv, run_ablation, run_layer_sweep, run_models
from .graph import build_normalized
from .training import TrainConfig, train

log = logging.getLogger("qagcl")

EXIT_OK, EXIT_ERROR, EXIT_MISSING, EXIT_DIVERGED, EXIT_STALE, EXIT_UNKNOWN_USER = 0, 1, 2, 3, 4, 5

CHECKPOINT_FILE = "checkpoint.bin"
LOSS_FILE = "loss_history.csv"
CONFIG_FILE = "config.txt"


class CLIError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------- helpers

def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _now(args) -> Optional[str]:
    return None if args.deterministic else datetime.now(timezone.utc).isoformat(timespec="seconds")


def _atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_manifest(args, cfg: Optional[TrainConfig], inputs: list[str], outputs: list[str],
                   started: Optional[str]) -> None:
    manifest = {
        "command": args.command,
        "config_path": args.config,
        "config": config_items(cfg) if cfg is not None else None,
        "config_hash": config_hash(cfg) if cfg is not None else None,
        "inputs": {os.path.basename(p): _sha256(p) for p in sorted(inputs) if os.path.isfile(p)},
        "outputs": sorted(os.path.basename(p) for p in outputs),
        "started": started,
        "finished": _now(args),
    }
    path = os.path.join(args.out, f"{args.command}.manifest.json")
    _atomic_write(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _require(path: str) -> str:
    if not os.path.exists(path):
        raise CLIError(f"missing input file: {path}", EXIT_MISSING)
    return path


def resolve_config(args, extra: Optional[dict] = None) -> TrainConfig:
    """Defaults < config file base < plan stanza < command-line flags."""
    try:
        base, plans = load_config_file(args.config)
    except FileNotFoundError:
        raise CLIError(f"missing input file: {args.config}", EXIT_MISSING) from None
    stanza = {}
    if getattr(args, "plan", None):
        if args.plan not in plans:
            raise ConfigError(f"plan {args.plan!r} not found in {args.config}")
        stanza = plans[args.plan]
    flags = {f.name: getattr(args, f.name, None) for f in dataclasses.fields(TrainConfig)}
    flags["seed"] = args.seed
    return build_config(base, stanza, extra or {}, flags)


def _load_prepared(path: str) -> ds_mod.InteractionDataset:
    for name in (ds_mod.SUMMARY_FILE, ds_mod.SPLIT_FILE, ds_mod.USERS_FILE, ds_mod.SERVICES_FILE):
        _require(os.path.join(path, name))
    return ds_mod.load_prepared(path)


def _prepared_inputs(path: str) -> list[str]:
    return [os.path.join(path, n) for n in (ds_mod.SUMMARY_FILE, ds_mod.SPLIT_FILE)]


def _final_from_checkpoint(ckpt_path: str, dataset) -> tuple[np.ndarray, object]:
    state = load_checkpoint(_require(ckpt_path))
    if state.meta.get("split_hash") != ds_mod.split_hash(dataset):
        raise CLIError(f"{ckpt_path} was trained on a different split (stale checkpoint)", EXIT_STALE)
    if state.num_nodes != dataset.num_nodes:
        raise CLIError(f"{ckpt_path} has {state.num_nodes} nodes, dataset has {dataset.num_nodes}", EXIT_STALE)
    g = build_normalized(dataset.num_users, dataset.num_services, dataset.train_edges)
    return readout(g, state.E0, state.layer_weights), state


# --------------------------------------------------------------- commands

def cmd_prepare(args) -> int:
    started = _now(args)
    cfg = resolve_config(args)
    raw = args.raw_dir
    paths = [_require(os.path.join(raw, n)) for n in ("rtMatrix.txt", "userlist.txt", "wslist.txt")]
    q = ds_mod.parse_qos_matrix(paths[0])
    gu = ds_mod.parse_geo_list(paths[1], *args.user_cols)
    gs = ds_mod.parse_geo_list(paths[2], *args.service_cols)
    dataset = ds_mod.prepare_dataset(q, gu, gs, cfg.gamma, cfg.core, cfg.test_ratio, cfg.seed)
    os.makedirs(args.out, exist_ok=True)
    summary = ds_mod.save_prepared(dataset, args.out)
    outputs = [ds_mod.SPLIT_FILE, ds_mod.USERS_FILE, ds_mod.SERVICES_FILE, ds_mod.QOS_FILE, ds_mod.SUMMARY_FILE]
    write_manifest(args, cfg, paths, outputs, started)
    print(f"users={summary['users']} services={summary['services']} "
          f"interactions={summary['interactions']} density={100 * summary['density']:.2f}%")
    return EXIT_OK


def cmd_train(args) -> int:
    started = _now(args)
    cfg = resolve_config(args, {"model": args.model} if args.model else None)
    dataset = _load_prepared(args.prepared_dir)
    os.makedirs(args.out, exist_ok=True)
    try:
        result = train(dataset, cfg)
    except TrainingDivergedError as exc:
        raise CLIError(str(exc), EXIT_DIVERGED) from None
    eff = cfg.effective()
    save_checkpoint(os.path.join(args.out, CHECKPOINT_FILE), result.state,
                    model=cfg.model, config_hash=config_hash(cfg), split_hash=ds_mod.split_hash(dataset),
                    num_users=dataset.num_users, num_services=dataset.num_services)
    lines = ["epoch,bpr,cl,reg,total"]
    lines += [f"{h['epoch']},{h['bpr']:.10g},{h['cl']:.10g},{h['reg']:.10g},{h['total']:.10g}"
              for h in result.history]
    _atomic_write(os.path.join(args.out, LOSS_FILE), "\n".join(lines) + "\n")
    _atomic_write(os.path.join(args.out, CONFIG_FILE), dump_config(cfg))
    write_manifest(args, cfg, _prepared_inputs(args.prepared_dir),
                   [CHECKPOINT_FILE, LOSS_FILE, CONFIG_FILE], started)
    last = result.history[-1]["total"] if result.history else float("nan")
    print(f"trained {cfg.model} (L={eff.layers}, epochs run={len(result.history)}), final loss {last:.6f}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    started = _now(args)
    dataset = _load_prepared(args.prepared_dir)
    ks = args.ks or list(DEFAULT_KS)
    inputs = _prepared_inputs(args.prepared_dir)
    if args.baseline:
        from .evaluation import baseline_scores

        cfg = resolve_config(args)
        scores = baseline_scores(args.baseline, dataset, cfg)
        model, seed, chash = args.baseline.lower(), cfg.seed, config_hash(cfg)
    else:
        if not args.checkpoint:
            raise ConfigError("evaluate needs --checkpoint or --baseline")
        final, state = _final_from_checkpoint(args.checkpoint, dataset)
        scores = score_matrix(final, dataset.num_users)
        model, seed, chash = state.meta.get("model", "qagcl"), state.seed, state.meta.get("config_hash", "")
        inputs.append(args.checkpoint)
    report = evaluate_scores(scores, dataset, ks, chash)
    name = args.dataset_name or os.path.basename(os.path.normpath(args.prepared_dir))
    os.makedirs(args.out, exist_ok=True)
    table = report.table(f"{model} on {name}")
    _atomic_write(os.path.join(args.out, "metrics.txt"), table)
    _atomic_write(os.path.join(args.out, "metrics.csv"),
                  CSV_HEADER + "\n" + "\n".join(report.csv_rows(model, name, seed)) + "\n")
    write_manifest(args, None, inputs, ["metrics.txt", "metrics.csv"], started)
    print(table, end="")
    return EXIT_OK


def cmd_recommend(args) -> int:
    dataset = _load_prepared(args.prepared_dir)
    final, _ = _final_from_checkpoint(args.checkpoint, dataset)
    if not 0 <= args.user < dataset.num_users:
        raise CLIError(f"unknown user {args.user} (dataset has {dataset.num_users})", EXIT_UNKNOWN_USER)
    nu = dataset.num_users
    scores = final[nu:] @ final[args.user]
    ranked = rank_from_scores(scores, dataset.train_positives()[args.user])[: args.k]
    for rank, s in enumerate(ranked, start=1):
        print(f"{rank}\t{int(s)}\t{scores[s]:.6f}")
    return EXIT_OK


def _write_plan_outputs(args, name: str, rows: list[dict], cfg: TrainConfig, started) -> None:
    os.makedirs(args.out, exist_ok=True)
    _atomic_write(os.path.join(args.out, f"{name}.csv"), rows_csv(rows))
    table = markdown_table(rows, name)
    _atomic_write(os.path.join(args.out, f"{name}.md"), table)
    write_manifest(args, cfg, _prepared_inputs(args.prepared_dir), [f"{name}.csv", f"{name}.md"], started)
    print(table, end="")


def _seeds(args, cfg) -> list[int]:
    return parse_int_list(args.seeds) if args.seeds else [cfg.seed]


def cmd_ablate(args) -> int:
    started = _now(args)
    cfg = resolve_config(args)
    dataset = _load_prepared(args.prepared_dir)
    pairs = [tuple(p.split(":")) for p in parse_str_list(args.pairs)]
    if any(len(p) != 2 for p in pairs):
        raise ConfigError("pairs are written OP:OP, e.g. HD:ED")
    rows = run_ablation(dataset, pairs, cfg, _seeds(args, cfg), args.ks or [20])
    _write_plan_outputs(args, "ablation", rows, cfg, started)
    return EXIT_OK


def cmd_sweep_layers(args) -> int:
    started = _now(args)
    cfg = resolve_config(args)
    dataset = _load_prepared(args.prepared_dir)
    rows = run_layer_sweep(dataset, parse_int_list(args.layers_list), cfg, _seeds(args, cfg),
                           args.ks or list(DEFAULT_KS))
    _write_plan_outputs(args, "layers", rows, cfg, started)
    return EXIT_OK


def cmd_compare(args) -> int:
    started = _now(args)
    cfg = resolve_config(args)
    dataset = _load_prepared(args.prepared_dir)
    rows = run_models(dataset, parse_str_list(args.models), cfg, _seeds(args, cfg),
                      args.ks or list(DEFAULT_KS))
    _write_plan_outputs(args, "compare", rows, cfg, started)
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synthetic import write_wsdream_like

    write_wsdream_like(args.out, args.users, args.services, args.seed or 0)
    print(f"wrote synthetic WSDream-format files to {args.out}")
    return EXIT_OK


# ----------------------------------------------------------------- parser

def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("config overrides (flag > plan stanza > file > default)")
    for f in dataclasses.fields(TrainConfig):
        if f.name in ("seed", "model"):
            continue
        g.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, default=None, metavar="V")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="flat key = value config file")
    common.add_argument("--plan", default=None, help="named [plan NAME] stanza of the config file")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--deterministic", action="store_true",
                        help="omit wall-clock timestamps so outputs are byte-identical across runs")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="qagcl", description="QoS-aware graph contrastive recommendation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", parents=[common], help="binarize, filter and split raw WSDream files")
    p.add_argument("raw_dir")
    p.add_argument("--user-cols", type=int, nargs=2, default=[ds_mod.USERLIST_LAT_COL, ds_mod.USERLIST_LON_COL],
                   metavar=("LAT", "LON"))
    p.add_argument("--service-cols", type=int, nargs=2, default=[ds_mod.WSLIST_LAT_COL, ds_mod.WSLIST_LON_COL],
                   metavar=("LAT", "LON"))
    _add_config_flags(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", parents=[common], help="train embeddings on a prepared split")
    p.add_argument("prepared_dir")
    p.add_argument("--model", choices=["qagcl", "lightgcn", "bprmf"], default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common], help="Recall@K / NDCG@K of a checkpoint or baseline")
    p.add_argument("prepared_dir")
    p.add_argument("--checkpoint")
    p.add_argument("--baseline", choices=["umean", "imean", "bprmf", "lightgcn"])
    p.add_argument("--ks", type=int, nargs="+")
    p.add_argument("--dataset-name", default=None)
    _add_config_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("recommend", parents=[common], help="top-K unseen services for one user")
    p.add_argument("prepared_dir")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--user", type=int, required=True)
    p.add_argument("-k", type=int, default=10)
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("ablate", parents=[common], help="augmentation operator ablation")
    p.add_argument("prepared_dir")
    p.add_argument("--pairs", default="HD:ED,HD:ND,ED:ED")
    p.add_argument("--seeds", default=None, help="comma-separated seed list")
    p.add_argument("--ks", type=int, nargs="+")
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep-layers", parents=[common], help="layer-count sensitivity sweep")
    p.add_argument("prepared_dir")
    p.add_argument("--layers-list", default="1,2,3,4")
    p.add_argument("--seeds", default=None)
    p.add_argument("--ks", type=int, nargs="+")
    _add_config_flags(p)
    p.set_defaults(func=cmd_sweep_layers)

    p = sub.add_parser("compare", parents=[common], help="QAGCL against the baselines on one split")
    p.add_argument("prepared_dir")
    p.add_argument("--models", default="qagcl,lightgcn,bprmf,umean,imean")
    p.add_argument("--seeds", default=None)
    p.add_argument("--ks", type=int, nargs="+")
    _add_config_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("synth", parents=[common], help="write synthetic WSDream-format raw files")
    p.add_argument("--users", type=int, default=60)
    p.add_argument("--services", type=int, default=120)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except FileNotFoundError as exc:
        print(f"error: missing input file: {exc.filename}", file=sys.stderr)
        return EXIT_MISSING
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STALE
    except (QAGCLError, DatasetFormatError, EmptyDatasetError, EvaluationError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
