"""Glue between corpora, encoders and retrieval indexes.

Caption ids are "<image_id>#<lang>#<n>" so multiple captions per image and
language stay distinct.
"""

from __future__ import annotations

import numpy as np

from .corpus import Manifest, load_features
from .embeddings import (
    AlignmentMap,
    EmbeddingTable,
    SeedDictionary,
    WordSpace,
    build_word_space,
    procrustes_align,
)
from .image_encoder import FeatureMap, encode_image
from .retrieval import CAPTION, IMAGE, RetrievalIndex
from .text_encoder import tokenize, encode_sentence
from .trainer import JointModel


def align_tables(
    tables: dict[str, EmbeddingTable],
    dictionaries: dict[str, SeedDictionary],
    pivot: str,
) -> dict[str, AlignmentMap]:
    """Procrustes-align every non-pivot table onto the pivot language."""
    return {
        lang: procrustes_align(tables[lang], tables[pivot], dictionaries[lang])
        for lang in tables
        if lang != pivot
    }


def make_space(
    tables: dict[str, EmbeddingTable],
    dictionaries: dict[str, SeedDictionary],
    pivot: str,
) -> WordSpace:
    return build_word_space(tables, align_tables(tables, dictionaries, pivot), pivot)


def embed_manifest(
    manifest: Manifest,
    space: WordSpace,
    model: JointModel,
    languages: tuple[str, ...] | None = None,
    features: dict[str, FeatureMap] | None = None,
) -> tuple[RetrievalIndex, RetrievalIndex, dict[str, str]]:
    """Encode a manifest into image and caption indexes plus caption ground truth."""
    if features is None:
        features = load_features(manifest)
    dim = model.text.joint_dim
    image_index = RetrievalIndex(dim)
    caption_index = RetrievalIndex(dim)
    ground_truth: dict[str, str] = {}
    for rec in manifest.records:
        image_index.add(rec.image_id, encode_image(features[rec.image_id], model.image), IMAGE)
        counter: dict[str, int] = {}
        for cap in rec.captions:
            if languages is not None and cap.lang not in languages:
                continue
            n = counter.get(cap.lang, 0)
            counter[cap.lang] = n + 1
            cap_id = f"{rec.image_id}#{cap.lang}#{n}"
            vector = encode_sentence(tokenize(cap.text, cap.lang), space, model.text)
            caption_index.add(cap_id, vector, CAPTION, lang=cap.lang, text=cap.text)
            ground_truth[cap_id] = rec.image_id
    return image_index, caption_index, ground_truth
