"""QoS-aware graph contrastive learning for web service recommendation."""

from .augment import AugmentationMask, apply_mask, ed_mask, haversine, hd_mask, nd_mask
from .dataset import (GeoRecord, InteractionDataset, QoSMatrix, binarize, core_filter,
                      parse_geo_list, parse_qos_matrix, prepare_dataset, split)
from .encoder import EmbeddingState, ViewEmbeddings, forward, init_embeddings, score
from .evaluation import MetricsReport, evaluate, ndcg_at_k, rank_services, recall_at_k
from .graph import NormalizedGraph, build_normalized, propagate
from .training import TrainConfig, TripletBatch, bpr_loss, gradient, infonce_loss, joint_loss, train

__all__ = [
    "AugmentationMask", "apply_mask", "ed_mask", "haversine", "hd_mask", "nd_mask",
    "GeoRecord", "InteractionDataset", "QoSMatrix", "binarize", "core_filter",
    "parse_geo_list", "parse_qos_matrix", "prepare_dataset", "split",
    "EmbeddingState", "ViewEmbeddings", "forward", "init_embeddings", "score",
    "MetricsReport", "evaluate", "ndcg_at_k", "rank_services", "recall_at_k",
    "NormalizedGraph", "build_normalized", "propagate",
    "TrainConfig", "TripletBatch", "bpr_loss", "gradient", "infonce_loss", "joint_loss", "train",
]

__version__ = "0.1.0"
