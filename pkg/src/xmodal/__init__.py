"""Multilingual cross-modal embeddings: one unit-norm vector space for
sentences in several languages and images, trained with mined triplet terms
and served through an exact cosine retrieval index."""

from .embeddings import (
    AlignmentMap,
    EmbeddingTable,
    SeedDictionary,
    WordSpace,
    apply_alignment,
    build_word_space,
    compose_via_pivot,
    load_table,
    procrustes_align,
)
from .errors import XmodalError
from .image_encoder import FeatureMap, ImageEncoderParams, encode_image, heatmap, weldon_pool
from .loss import batch_loss, triplet_loss
from .retrieval import RetrievalIndex, evaluate_recall, search
from .text_encoder import TextEncoderParams, TokenSequence, encode_sentence, tokenize
from .trainer import JointModel, TrainConfig, gradient_check, train

__all__ = [
    "AlignmentMap",
    "EmbeddingTable",
    "FeatureMap",
    "ImageEncoderParams",
    "JointModel",
    "RetrievalIndex",
    "SeedDictionary",
    "TextEncoderParams",
    "TokenSequence",
    "TrainConfig",
    "WordSpace",
    "XmodalError",
    "apply_alignment",
    "batch_loss",
    "build_word_space",
    "compose_via_pivot",
    "encode_image",
    "encode_sentence",
    "evaluate_recall",
    "gradient_check",
    "heatmap",
    "load_table",
    "procrustes_align",
    "search",
    "tokenize",
    "train",
    "triplet_loss",
    "weldon_pool",
]

__version__ = "0.1.0"
