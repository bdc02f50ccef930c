"""Learnable embeddings, multi-view propagation and dot-product scoring."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import CheckpointError
from .graph import NormalizedGraph, propagate

INIT_SCALE = 0.1


def uniform_weights(num_layers: int) -> np.ndarray:
    return np.full(num_layers + 1, 1.0 / (num_layers + 1))


@dataclass
class EmbeddingState:
    E0: np.ndarray
    num_layers: int
    layer_weights: np.ndarray = None
    seed: Optional[int] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.layer_weights is None:
            self.layer_weights = uniform_weights(self.num_layers)
        self.layer_weights = np.asarray(self.layer_weights, dtype=np.float64)
        if len(self.layer_weights) != self.num_layers + 1:
            raise ValueError("layer_weights must have num_layers + 1 entries")
        if abs(self.layer_weights.sum() - 1.0) > 1e-12:
            raise ValueError("layer_weights must sum to 1")

    @property
    def dim(self) -> int:
        return self.E0.shape[1]

    @property
    def num_nodes(self) -> int:
        return self.E0.shape[0]


@dataclass
class ViewEmbeddings:
    main_final: np.ndarray
    hd_final: Optional[np.ndarray] = None
    ed_final: Optional[np.ndarray] = None


def init_embeddings(num_nodes: int, dim: int, seed: int, num_layers: int = 3,
                    scale: float = INIT_SCALE) -> EmbeddingState:
    """Zero-mean normal initialisation with standard deviation ``scale``."""
    if num_nodes <= 0 or dim <= 0:
        raise ValueError("num_nodes and dim must be positive")
    rng = np.random.default_rng(seed)
    E0 = rng.normal(0.0, scale, size=(num_nodes, dim))
    return EmbeddingState(E0, num_layers, seed=seed)


def readout(g: NormalizedGraph, E0: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """``sum_i w_i Ã^i E0`` for ``i = 0..L``.

    Because Ã is symmetric this map is self-adjoint, so the same function
    pulls a gradient with respect to the readout back onto ``E0``.
    """
    x = E0
    out = weights[0] * x
    for w in weights[1:]:
        x = propagate(g, x)
        out = out + w * x
    return out


def forward(state: EmbeddingState, g_main: NormalizedGraph,
            g_hd: Optional[NormalizedGraph] = None,
            g_ed: Optional[NormalizedGraph] = None) -> ViewEmbeddings:
    """Final embeddings of the main view and, when given, the two augmented views."""
    for g in (g_main, g_hd, g_ed):
        if g is not None and g.num_nodes != state.num_nodes:
            raise ValueError(f"graph has {g.num_nodes} nodes, embeddings have {state.num_nodes}")
    w = state.layer_weights
    return ViewEmbeddings(
        main_final=readout(g_main, state.E0, w),
        hd_final=None if g_hd is None else readout(g_hd, state.E0, w),
        ed_final=None if g_ed is None else readout(g_ed, state.E0, w),
    )


def score(final: np.ndarray, u: int, s: int, num_users: int) -> float:
    num_services = final.shape[0] - num_users
    if not 0 <= u < num_users:
        raise IndexError(f"user {u} out of range [0, {num_users})")
    if not 0 <= s < num_services:
        raise IndexError(f"service {s} out of range [0, {num_services})")
    return float(final[u] @ final[num_users + s])


def score_matrix(final: np.ndarray, num_users: int) -> np.ndarray:
    """All user-by-service scores."""
    return final[:num_users] @ final[num_users:].T


# ------------------------------------------------------------ checkpoints
#
# Layout: the magic line, one line of JSON header (sorted keys), then N*D
# little-endian float64 values in row-major order.

CKPT_MAGIC = b"QAGCL-CKPT 1\n"


def save_checkpoint(path, state: EmbeddingState, **header) -> None:
    meta = dict(state.meta)
    meta.update(header)
    meta.update(
        N=int(state.num_nodes), D=int(state.dim), L=int(state.num_layers),
        seed=state.seed, layer_weights=[float(x) for x in state.layer_weights],
    )
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(json.dumps(meta, sort_keys=True).encode() + b"\n")
        fh.write(np.ascontiguousarray(state.E0, dtype="<f8").tobytes())


def load_checkpoint(path) -> EmbeddingState:
    with open(path, "rb") as fh:
        if fh.readline() != CKPT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        try:
            meta = json.loads(fh.readline())
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"{path}: corrupt header") from exc
        raw = fh.read()
    n, d = meta["N"], meta["D"]
    if len(raw) != n * d * 8:
        raise CheckpointError(f"{path}: expected {n * d * 8} payload bytes, found {len(raw)}")
    E0 = np.frombuffer(raw, dtype="<f8").reshape(n, d).astype(np.float64)
    extra = {k: v for k, v in meta.items() if k not in ("N", "D", "L", "seed", "layer_weights")}
    return EmbeddingState(E0, meta["L"], np.array(meta["layer_weights"]), meta["seed"], extra)
