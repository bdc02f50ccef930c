"""Full-ranking top-K evaluation and the non-contrastive baselines."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .dataset import InteractionDataset
from .encoder import score_matrix
from .errors import ConfigError, EvaluationError

DEFAULT_KS = (20, 40)
BASELINES = ("UMEAN", "IMEAN", "BPRMF", "LIGHTGCN")


def rank_from_scores(scores: np.ndarray, exclude: Iterable[int] = ()) -> np.ndarray:
    """Service ids by descending score, ties by ascending id, ``exclude`` removed."""
    order = np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")
    excl = np.fromiter(exclude, dtype=np.int64)
    if len(excl):
        order = order[~np.isin(order, excl)]
    return order


def rank_services(final: np.ndarray, u: int, train_positives: Iterable[int], num_users: int) -> np.ndarray:
    if not 0 <= u < num_users:
        raise IndexError(f"user {u} out of range [0, {num_users})")
    scores = final[num_users:] @ final[u]
    return rank_from_scores(scores, train_positives)


def recall_at_k(ranked: Sequence[int], test_positives: set[int], k: int) -> float:
    if k < 1:
        raise ValueError("K must be >= 1")
    if not test_positives:
        raise ValueError("recall is undefined without test positives")
    hits = sum(1 for s in ranked[:k] if int(s) in test_positives)
    return hits / min(k, len(test_positives))


def _idcg(n: int) -> float:
    return float(np.sum(1.0 / np.log2(np.arange(2, n + 2))))


def ndcg_at_k(ranked: Sequence[int], test_positives: set[int], k: int) -> float:
    if k < 1:
        raise ValueError("K must be >= 1")
    if not test_positives:
        raise ValueError("NDCG is undefined without test positives")
    dcg = sum(1.0 / math.log2(i + 2) for i, s in enumerate(ranked[:k]) if int(s) in test_positives)
    return dcg / _idcg(min(k, len(test_positives)))


@dataclass
class MetricsReport:
    per_k: dict[int, tuple[float, float]]
    per_user: list[dict] = field(default_factory=list)
    config_hash: str = ""
    seconds: float = 0.0

    def recall(self, k: int) -> float:
        return self.per_k[k][0]

    def ndcg(self, k: int) -> float:
        return self.per_k[k][1]

    def table(self, title: str = "") -> str:
        head = f"{'K':>4}  {'Recall@K':>9}  {'NDCG@K':>9}"
        lines = [title] if title else []
        lines += [head, "-" * len(head)]
        for k in sorted(self.per_k):
            r, n = self.per_k[k]
            lines.append(f"{k:>4}  {r:>9.4f}  {n:>9.4f}")
        return "\n".join(lines) + "\n"

    def csv_rows(self, model: str, dataset: str, seed) -> list[str]:
        return [f"{model},{dataset},{k},{r:.6f},{n:.6f},{seed},{self.config_hash}"
                for k, (r, n) in sorted(self.per_k.items())]


CSV_HEADER = "model,dataset,K,recall,ndcg,seed,config_hash"


def evaluate_scores(scores: np.ndarray, dataset: InteractionDataset, ks: Sequence[int] = DEFAULT_KS,
                    config_hash: str = "") -> MetricsReport:
    """Macro-averaged Recall@K/NDCG@K from a users-by-services score matrix."""
    t0 = time.perf_counter()
    ks = sorted(set(int(k) for k in ks))
    train_pos = dataset.train_positives()
    test_pos = dataset.test_positives()
    kmax = max(ks)
    sums = {k: [0.0, 0.0] for k in ks}
    per_user = []
    n_eval = 0
    for u in range(dataset.num_users):
        if not test_pos[u]:
            continue
        ranked = rank_from_scores(scores[u], train_pos[u])[:kmax]
        row = {"user": u}
        for k in ks:
            r, n = recall_at_k(ranked, test_pos[u], k), ndcg_at_k(ranked, test_pos[u], k)
            sums[k][0] += r
            sums[k][1] += n
            row[f"recall@{k}"], row[f"ndcg@{k}"] = r, n
        per_user.append(row)
        n_eval += 1
    if n_eval == 0:
        raise EvaluationError("no user has test positives")
    per_k = {k: (sums[k][0] / n_eval, sums[k][1] / n_eval) for k in ks}
    return MetricsReport(per_k, per_user, config_hash, time.perf_counter() - t0)


def evaluate(final: np.ndarray, dataset: InteractionDataset, ks: Sequence[int] = DEFAULT_KS,
             config_hash: str = "") -> MetricsReport:
    return evaluate_scores(score_matrix(final, dataset.num_users), dataset, ks, config_hash)


# -------------------------------------------------------------- baselines

def _observed_train_qos(dataset: InteractionDataset) -> np.ma.MaskedArray:
    if dataset.qos is None:
        raise ConfigError("mean baselines need the QoS submatrix of the prepared dataset")
    q = np.array(dataset.qos, dtype=np.float64)
    missing = q < 0
    # held-out interactions must not leak into the means
    if len(dataset.test_edges):
        missing[dataset.test_edges[:, 0], dataset.test_edges[:, 1]] = True
    return np.ma.masked_array(q, mask=missing)


def umean_scores(dataset: InteractionDataset) -> np.ndarray:
    """Negative per-user mean response time, constant across services."""
    q = _observed_train_qos(dataset)
    glob = float(q.mean())
    m = q.mean(axis=1).filled(glob)
    return np.repeat(-m[:, None], dataset.num_services, axis=1)


def imean_scores(dataset: InteractionDataset) -> np.ndarray:
    """Negative per-service mean response time; unobserved services get the global mean."""
    q = _observed_train_qos(dataset)
    glob = float(q.mean())
    m = q.mean(axis=0).filled(glob)
    return np.repeat(-m[None, :], dataset.num_users, axis=0)


def baseline_scores(kind: str, dataset: InteractionDataset, config=None) -> np.ndarray:
    """Users-by-services scores of a baseline model."""
    kind = kind.upper()
    if kind == "UMEAN":
        return umean_scores(dataset)
    if kind == "IMEAN":
        return imean_scores(dataset)
    if kind in ("BPRMF", "LIGHTGCN"):
        from .training import TrainConfig, final_embeddings, train

        cfg = (config or TrainConfig()).replace(model=kind.lower())
        result = train(dataset, cfg)
        return score_matrix(final_embeddings(result.state, dataset), dataset.num_users)
    raise ConfigError(f"unknown baseline {kind!r}; expected one of {BASELINES}")
