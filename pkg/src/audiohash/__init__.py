"""Supervised deep hashing for similar-audio-event retrieval."""

from ._accel import HAS_NUMBA, backend
from .codec import HashCode, balanced_sign, balanced_sign_array, hamming, inner_product
from .encoder import encode_batch, init_params, load_checkpoint, save_checkpoint
from .features import extract_manifest, load_archive, multi_window_features, save_archive
from .index import RetrievalIndex, build_index, load_index, save_index, search_radius, search_topk
from .loss import LossConfig, total_loss
from .metrics import average_precision, evaluate, mean_average_precision, precision_at_k
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "HAS_NUMBA",
    "backend",
    "HashCode",
    "balanced_sign",
    "balanced_sign_array",
    "hamming",
    "inner_product",
    "encode_batch",
    "init_params",
    "load_checkpoint",
    "save_checkpoint",
    "extract_manifest",
    "load_archive",
    "multi_window_features",
    "save_archive",
    "RetrievalIndex",
    "build_index",
    "load_index",
    "save_index",
    "search_radius",
    "search_topk",
    "LossConfig",
    "total_loss",
    "average_precision",
    "evaluate",
    "mean_average_precision",
    "precision_at_k",
    "TrainConfig",
    "train",
]
