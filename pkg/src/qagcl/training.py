"""Joint BPR + InfoNCE training of the initial embeddings.

Gradients are derived by hand. Every view's readout is a fixed linear map
``sum_i w_i Ã_v^i`` applied to the shared ``E0``. Since each Ã_v is
symmetric, the gradient reaching ``E0`` from view ``v`` is that same map
applied to the gradient with respect to the view's final embeddings.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .augment import apply_mask, make_mask
from .dataset import InteractionDataset
from .encoder import EmbeddingState, ViewEmbeddings, forward, init_embeddings, readout
from .errors import ConfigError, SamplingError, TrainingDivergedError
from .graph import NormalizedGraph, build_normalized

log = logging.getLogger(__name__)

NORM_EPS = 1e-12
MODELS = ("qagcl", "lightgcn", "bprmf")
CL_MODES = ("per_type", "mixed")


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.05
    core: int = 10
    test_ratio: float = 0.2
    layers: int = 3
    dim: int = 64
    lr: float = 1e-3
    epochs: int = 100
    batch_size: int = 2048
    tau: float = 0.2
    lambda1: float = 0.5
    lambda2: float = 1e-6
    kappa: float = 0.3
    rho: float = 0.2
    seed: int = 0
    resample_ed_per_epoch: bool = False
    cl_mode: str = "per_type"
    view1: str = "HD"
    view2: str = "ED"
    model: str = "qagcl"
    early_stop_tol: float = 1e-5

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError("tau must be positive")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("lambda1 and lambda2 must be non-negative")
        if self.layers < 0 or self.dim <= 0 or self.batch_size <= 0 or self.epochs < 0:
            raise ConfigError("layers, dim, batch_size and epochs must be non-negative (dim, batch_size positive)")
        if self.cl_mode not in CL_MODES:
            raise ConfigError(f"cl_mode must be one of {CL_MODES}")
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}")
        for op in (self.view1, self.view2):
            if op.upper() not in ("HD", "ED", "ND"):
                raise ConfigError(f"unknown augmentation operator {op!r}")

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)

    def effective(self) -> "TrainConfig":
        """Apply the baseline reductions implied by ``model``."""
        if self.model == "lightgcn":
            return self.replace(lambda1=0.0, kappa=1.0, rho=0.0)
        if self.model == "bprmf":
            return self.replace(layers=0, lambda1=0.0)
        return self


@dataclass(frozen=True)
class TripletBatch:
    users: np.ndarray
    pos: np.ndarray
    neg: np.ndarray

    def __len__(self) -> int:
        return len(self.users)

    @property
    def triples(self) -> list[tuple[int, int, int]]:
        return [(int(u), int(i), int(j)) for u, i, j in zip(self.users, self.pos, self.neg)]


# -------------------------------------------------------------- sampling

class TripletSampler:
    """Uniform positive edges with rejection-sampled negatives."""

    def __init__(self, train_edges: np.ndarray, num_users: int, num_services: int):
        if len(train_edges) == 0:
            raise SamplingError("no training edges to sample from")
        self.edges = train_edges
        self.num_services = num_services
        self.keys = np.sort(train_edges[:, 0] * num_services + train_edges[:, 1])
        self.degree = np.bincount(train_edges[:, 0], minlength=num_users)

    def _is_positive(self, users, services):
        k = users * self.num_services + services
        idx = np.searchsorted(self.keys, k)
        idx[idx == len(self.keys)] = 0
        return self.keys[idx] == k

    def sample(self, batch_size: int, rng: np.random.Generator) -> TripletBatch:
        pick = rng.integers(len(self.edges), size=batch_size)
        users = self.edges[pick, 0]
        pos = self.edges[pick, 1]
        full = self.degree[users] >= self.num_services
        if full.any():
            raise SamplingError(f"user {int(users[full][0])} interacts with every service")
        neg = rng.integers(self.num_services, size=batch_size)
        bad = self._is_positive(users, neg)
        while bad.any():
            neg[bad] = rng.integers(self.num_services, size=int(bad.sum()))
            bad = self._is_positive(users, neg)
        return TripletBatch(users.copy(), pos.copy(), neg)


def sample_batch(dataset: InteractionDataset, batch_size: int, rng: np.random.Generator) -> TripletBatch:
    return TripletSampler(dataset.train_edges, dataset.num_users, dataset.num_services).sample(batch_size, rng)


# ---------------------------------------------------------------- losses

def _bpr_margins(final, batch, num_users):
    eu = final[batch.users]
    ei = final[num_users + batch.pos]
    ej = final[num_users + batch.neg]
    return eu, ei, ej, np.einsum("bd,bd->b", eu, ei - ej)


def bpr_loss(final: np.ndarray, batch: TripletBatch, num_users: int) -> float:
    """Summed ``-log sigmoid(r_ui - r_uj)`` over the batch."""
    *_, x = _bpr_margins(final, batch, num_users)
    return float(np.logaddexp(0.0, -x).sum())


def _normalize(z):
    r = np.linalg.norm(z, axis=1, keepdims=True)
    return z / np.maximum(r, NORM_EPS), r


def _normalize_backward(z, r, grad_hat):
    # d(z/|z|) = (I - ẑẑᵀ)/|z|; below the guard the map is z/eps
    r_safe = np.maximum(r, NORM_EPS)
    zh = z / r_safe
    proj = grad_hat - zh * np.sum(zh * grad_hat, axis=1, keepdims=True)
    return np.where(r > NORM_EPS, proj, grad_hat) / r_safe


def infonce_block(z1: np.ndarray, z2: np.ndarray, tau: float, with_grad: bool = False):
    """InfoNCE over one node set: row ``i`` of ``z1`` is paired with row ``i`` of ``z2``.

    Returns the summed loss, plus gradients for both inputs when requested.
    """
    h1, r1 = _normalize(z1)
    h2, r2 = _normalize(z2)
    logits = h1 @ h2.T / tau
    mx = logits.max(axis=1, keepdims=True)
    lse = mx[:, 0] + np.log(np.exp(logits - mx).sum(axis=1))
    loss = float(np.sum(lse - np.diag(logits)))
    if not with_grad:
        return loss
    p = np.exp(logits - lse[:, None])
    p[np.diag_indices_from(p)] -= 1.0
    g1 = _normalize_backward(z1, r1, p @ h2 / tau)
    g2 = _normalize_backward(z2, r2, p.T @ h1 / tau)
    return loss, g1, g2


def cl_node_sets(batch: TripletBatch, num_users: int, mode: str = "per_type") -> list[np.ndarray]:
    """Joint-space node indices contrasted with each other.

    Services are the batch's distinct positive services.
    """
    users = np.unique(batch.users)
    services = np.unique(batch.pos) + num_users
    if mode == "mixed":
        return [np.concatenate([users, services])]
    return [users, services]


def infonce_loss(hd_final: np.ndarray, ed_final: np.ndarray, batch: TripletBatch, tau: float,
                 num_users: int, mode: str = "per_type") -> float:
    if not tau > 0:
        raise ValueError("tau must be positive")
    return sum(infonce_block(hd_final[idx], ed_final[idx], tau)
               for idx in cl_node_sets(batch, num_users, mode))


def touched_rows(batch: TripletBatch, num_users: int) -> np.ndarray:
    return np.unique(np.concatenate([batch.users, batch.pos + num_users, batch.neg + num_users]))


def joint_loss(E0: np.ndarray, views: ViewEmbeddings, batch: TripletBatch, config: TrainConfig,
               num_users: int) -> dict[str, float]:
    """Loss components ``bpr``, ``cl``, ``reg`` and their weighted ``total``."""
    bpr = bpr_loss(views.main_final, batch, num_users)
    cl = 0.0
    if config.lambda1 > 0:
        cl = infonce_loss(views.hd_final, views.ed_final, batch, config.tau, num_users, config.cl_mode)
    rows = touched_rows(batch, num_users)
    reg = float(np.sum(E0[rows] ** 2))
    total = bpr + config.lambda1 * cl + config.lambda2 * reg
    return {"bpr": bpr, "cl": cl, "reg": reg, "total": total}


# -------------------------------------------------------------- gradient

@dataclass
class ViewGraphs:
    main: NormalizedGraph
    view1: Optional[NormalizedGraph] = None
    view2: Optional[NormalizedGraph] = None


def loss_and_gradient(state: EmbeddingState, graphs: ViewGraphs, batch: TripletBatch,
                      config: TrainConfig) -> tuple[dict[str, float], np.ndarray]:
    nu = graphs.main.num_users
    w = state.layer_weights
    use_cl = config.lambda1 > 0
    views = forward(state, graphs.main,
                    graphs.view1 if use_cl else None,
                    graphs.view2 if use_cl else None)
    parts = joint_loss(state.E0, views, batch, config, nu)

    # BPR: d/dx softplus(-x) = -sigmoid(-x)
    eu, ei, ej, x = _bpr_margins(views.main_final, batch, nu)
    c = -0.5 * (1.0 - np.tanh(0.5 * x))
    g_main = np.zeros_like(state.E0)
    np.add.at(g_main, batch.users, c[:, None] * (ei - ej))
    np.add.at(g_main, nu + batch.pos, c[:, None] * eu)
    np.add.at(g_main, nu + batch.neg, -c[:, None] * eu)
    grad = readout(graphs.main, g_main, w)

    if use_cl:
        g1 = np.zeros_like(state.E0)
        g2 = np.zeros_like(state.E0)
        for idx in cl_node_sets(batch, nu, config.cl_mode):
            _, d1, d2 = infonce_block(views.hd_final[idx], views.ed_final[idx], config.tau, with_grad=True)
            g1[idx] += config.lambda1 * d1
            g2[idx] += config.lambda1 * d2
        grad += readout(graphs.view1, g1, w) + readout(graphs.view2, g2, w)

    if config.lambda2 > 0:
        rows = touched_rows(batch, nu)
        grad[rows] += 2.0 * config.lambda2 * state.E0[rows]
    return parts, grad


def gradient(state: EmbeddingState, graphs: ViewGraphs, batch: TripletBatch,
             config: TrainConfig) -> np.ndarray:
    """Exact gradient of the joint loss with respect to ``E0``."""
    return loss_and_gradient(state, graphs, batch, config)[1]


# ------------------------------------------------------------- optimizer

class Adam:
    def __init__(self, shape, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, param: np.ndarray, grad: np.ndarray) -> None:
        """Update ``param`` in place."""
        self.t += 1
        self.m *= self.beta1
        self.m += (1 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        param -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# --------------------------------------------------------------- driving

def _view_seeds(seed: int) -> list[int]:
    children = np.random.SeedSequence(seed).spawn(4)
    return [int(c.generate_state(1)[0]) for c in children]


def augmented_graph(dataset: InteractionDataset, operator: str, config: TrainConfig,
                    seed: int) -> NormalizedGraph:
    mask = make_mask(operator, dataset.train_edges, num_users=dataset.num_users,
                     num_services=dataset.num_services, geo_users=dataset.geo_users,
                     geo_services=dataset.geo_services, kappa=config.kappa, rho=config.rho, seed=seed)
    kept = apply_mask(dataset.train_edges, mask)
    return build_normalized(dataset.num_users, dataset.num_services, kept)


def build_graphs(dataset: InteractionDataset, config: TrainConfig, epoch: Optional[int] = None) -> ViewGraphs:
    """Main graph plus the two augmented views named by ``config.view1/view2``.

    ``epoch`` perturbs the seeds of the random operators (per-epoch resampling).
    """
    main = build_normalized(dataset.num_users, dataset.num_services, dataset.train_edges)
    if config.lambda1 <= 0:
        return ViewGraphs(main)
    _, s1, s2, _ = _view_seeds(config.seed)
    if epoch is not None:
        s1, s2 = s1 + 7919 * (epoch + 1), s2 + 7919 * (epoch + 1)
    return ViewGraphs(main,
                      augmented_graph(dataset, config.view1, config, s1),
                      augmented_graph(dataset, config.view2, config, s2))


@dataclass
class TrainResult:
    state: EmbeddingState
    history: list[dict] = field(default_factory=list)
    graphs: Optional[ViewGraphs] = None


def train(dataset: InteractionDataset, config: TrainConfig,
          on_epoch: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Mini-batch Adam on ``E0`` for ``config.epochs`` epochs.

    Stops early when the mean epoch loss changes by less than
    ``early_stop_tol`` relative to the previous epoch.
    """
    cfg = config.effective()
    init_seed, _, _, sample_seed = _view_seeds(cfg.seed)
    state = init_embeddings(dataset.num_nodes, cfg.dim, init_seed, num_layers=cfg.layers)
    state.seed = cfg.seed
    graphs = build_graphs(dataset, cfg)
    result = TrainResult(state, [], graphs)
    if cfg.epochs == 0:
        return result

    sampler = TripletSampler(dataset.train_edges, dataset.num_users, dataset.num_services)
    rng = np.random.default_rng(sample_seed)
    opt = Adam(state.E0.shape, lr=cfg.lr)
    n_batches = math.ceil(len(dataset.train_edges) / cfg.batch_size)
    resample = cfg.resample_ed_per_epoch and cfg.lambda1 > 0
    prev = None
    for epoch in range(cfg.epochs):
        if resample and epoch > 0:
            graphs = _resample_random_views(dataset, cfg, graphs, epoch)
        sums = {"bpr": 0.0, "cl": 0.0, "reg": 0.0, "total": 0.0}
        for b in range(n_batches):
            batch = sampler.sample(cfg.batch_size, rng)
            parts, grad = loss_and_gradient(state, graphs, batch, cfg)
            if not all(math.isfinite(v) for v in parts.values()) or not np.isfinite(grad).all():
                raise TrainingDivergedError(epoch, b, parts)
            opt.step(state.E0, grad)
            for k in sums:
                sums[k] += parts[k]
        row = {"epoch": epoch, **{k: v / n_batches for k, v in sums.items()}}
        result.history.append(row)
        log.debug("epoch %d total=%.6f bpr=%.6f cl=%.6f", epoch, row["total"], row["bpr"], row["cl"])
        if on_epoch is not None:
            on_epoch(row)
        cur = row["total"]
        if prev is not None and abs(prev - cur) <= cfg.early_stop_tol * max(abs(prev), 1e-300):
            log.info("converged after %d epochs", epoch + 1)
            break
        prev = cur
    result.graphs = graphs
    return result


def _resample_random_views(dataset, cfg, graphs, epoch):
    fresh = build_graphs(dataset, cfg, epoch=epoch)
    return ViewGraphs(
        graphs.main,
        graphs.view1 if cfg.view1.upper() == "HD" else fresh.view1,
        graphs.view2 if cfg.view2.upper() == "HD" else fresh.view2,
    )


def final_embeddings(state: EmbeddingState, dataset: InteractionDataset) -> np.ndarray:
    """Main-view final embeddings used for scoring."""
    g = build_normalized(dataset.num_users, dataset.num_services, dataset.train_edges)
    return readout(g, state.E0, state.layer_weights)
