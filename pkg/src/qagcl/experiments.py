"""Named experiment plans: model comparison, augmentation ablation, layer sweep."""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .config import build_config, config_hash, parse_int_list, parse_str_list
from .dataset import InteractionDataset
from .encoder import score_matrix
from .errors import ConfigError
from .evaluation import evaluate_scores, imean_scores, umean_scores
from .training import TrainConfig, final_embeddings, train

log = logging.getLogger(__name__)

MODEL_NAMES = ("qagcl", "lightgcn", "bprmf", "umean", "imean")
ROW_FIELDS = ("plan", "run", "seed", "K", "recall", "ndcg", "config_hash")


@dataclass
class ExperimentPlan:
    name: str
    gamma: float
    core: int
    models: list[str] = field(default_factory=lambda: ["qagcl"])
    overrides: dict = field(default_factory=dict)
    ks: list[int] = field(default_factory=lambda: [20, 40])
    seeds: list[int] = field(default_factory=lambda: [0])

    def config(self, **extra) -> TrainConfig:
        return build_config(self.overrides, {"gamma": self.gamma, "core": self.core}, extra)

    @classmethod
    def from_stanza(cls, name: str, base: dict, stanza: dict) -> "ExperimentPlan":
        merged = {**base, **stanza}
        cfg = build_config(merged)
        models = parse_str_list(merged.get("models", "qagcl"))
        for m in models:
            if m not in MODEL_NAMES:
                raise ConfigError(f"plan {name}: unknown model {m!r}")
        overrides = {k: v for k, v in merged.items() if k not in ("models", "ks", "seeds")}
        return cls(
            name=name,
            gamma=cfg.gamma,
            core=cfg.core,
            models=models,
            overrides=overrides,
            ks=parse_int_list(merged.get("ks", "20 40")),
            seeds=parse_int_list(merged.get("seeds", str(cfg.seed))),
        )


def model_scores(model: str, dataset: InteractionDataset, config: TrainConfig) -> np.ndarray:
    model = model.lower()
    if model == "umean":
        return umean_scores(dataset)
    if model == "imean":
        return imean_scores(dataset)
    if model not in ("qagcl", "lightgcn", "bprmf"):
        raise ConfigError(f"unknown model {model!r}")
    result = train(dataset, config.replace(model=model))
    return score_matrix(final_embeddings(result.state, dataset), dataset.num_users)


def _rows(plan, label, seed, report) -> list[dict]:
    return [{"plan": plan, "run": label, "seed": seed, "K": k, "recall": r, "ndcg": n,
             "config_hash": report.config_hash} for k, (r, n) in sorted(report.per_k.items())]


def run_models(dataset: InteractionDataset, models: Iterable[str], config: TrainConfig,
               seeds: Sequence[int], ks: Sequence[int] = (20, 40), plan: str = "compare") -> list[dict]:
    rows = []
    for model in models:
        for seed in seeds:
            cfg = config.replace(model=model if model in ("qagcl", "lightgcn", "bprmf") else config.model,
                                 seed=seed)
            log.info("plan %s: %s seed %d", plan, model, seed)
            report = evaluate_scores(model_scores(model, dataset, cfg), dataset, ks,
                                     config_hash(cfg.effective()))
            rows += _rows(plan, model, seed, report)
    return rows


def run_ablation(dataset: InteractionDataset, pairs: Sequence[tuple[str, str]], config: TrainConfig,
                 seeds: Sequence[int] = (0,), ks: Sequence[int] = (20,), plan: str = "ablation") -> list[dict]:
    """One QAGCL run per ``(view1, view2)`` operator pair and seed.

    Two random views of the same kind get independent seeds because each
    view draws from its own spawned seed stream.
    """
    for a, b in pairs:
        for op in (a, b):
            if op.upper() not in ("HD", "ED", "ND"):
                raise ConfigError(f"unknown augmentation operator {op!r}")
    rows = []
    for a, b in pairs:
        label = f"{a.upper()} & {b.upper()}"
        for seed in seeds:
            cfg = config.replace(model="qagcl", view1=a.upper(), view2=b.upper(), seed=seed)
            log.info("plan %s: %s seed %d", plan, label, seed)
            result = train(dataset, cfg)
            report = evaluate_scores(score_matrix(final_embeddings(result.state, dataset), dataset.num_users),
                                     dataset, ks, config_hash(cfg))
            rows += _rows(plan, label, seed, report)
    return rows


def run_layer_sweep(dataset: InteractionDataset, layers: Sequence[int], config: TrainConfig,
                    seeds: Sequence[int] = (0,), ks: Sequence[int] = (20, 40),
                    plan: str = "layers") -> list[dict]:
    if not layers:
        raise ConfigError("layer sweep needs at least one layer count")
    rows = []
    for n in layers:
        if n < 1:
            raise ConfigError("layer counts must be >= 1")
        for seed in seeds:
            cfg = config.replace(layers=int(n), seed=seed)
            log.info("plan %s: L=%d seed %d", plan, n, seed)
            result = train(dataset, cfg)
            report = evaluate_scores(score_matrix(final_embeddings(result.state, dataset), dataset.num_users),
                                     dataset, ks, config_hash(cfg.effective()))
            rows += _rows(plan, f"L={n}", seed, report)
    return rows


def mean_by_run(rows: list[dict]) -> dict[str, dict[int, tuple[float, float]]]:
    """Seed-averaged ``{run: {K: (recall, ndcg)}}``, preserving run order."""
    acc: dict = defaultdict(lambda: defaultdict(list))
    for r in rows:
        acc[r["run"]][r["K"]].append((r["recall"], r["ndcg"]))
    return {run: {k: tuple(np.mean(v, axis=0)) for k, v in per_k.items()} for run, per_k in acc.items()}


def rows_csv(rows: list[dict]) -> str:
    lines = [",".join(ROW_FIELDS)]
    for r in rows:
        lines.append(f"{r['plan']},{r['run']},{r['seed']},{r['K']},{r['recall']:.6f},"
                     f"{r['ndcg']:.6f},{r['config_hash']}")
    return "\n".join(lines) + "\n"


def markdown_table(rows: list[dict], title: str = "") -> str:
    means = mean_by_run(rows)
    ks = sorted({r["K"] for r in rows})
    cols = [f"Recall@{k} | NDCG@{k}" for k in ks]
    out = [f"### {title}\n"] if title else []
    out.append("| Run | " + " | ".join(cols) + " |")
    out.append("|---" * (1 + 2 * len(ks)) + "|")
    for run, per_k in means.items():
        cells = " | ".join(f"{per_k[k][0]:.4f} | {per_k[k][1]:.4f}" for k in ks)
        out.append(f"| {run} | {cells} |")
    return "\n".join(out) + "\n"
