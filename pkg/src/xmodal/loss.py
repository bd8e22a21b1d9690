"""Margin (triplet) loss and in-batch hardest-negative mining.

Per anchor pair the batch objective adds two hinge terms: one against the
hardest unrelated caption, one against the hardest unrelated image. Hardest
means highest similarity to the anchor, which is exactly the candidate that
maximizes the hinge at fixed margin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import PairBatch
from .embeddings import WordSpace
from .errors import BatchError, TrainingError
from .image_encoder import ImageEncoderParams, encode_image
from .text_encoder import TextEncoderParams, encode_sentence

DEFAULT_MARGIN = 0.2

CAPTION_NEGATIVE = "caption_negative"  # anchor image, hardest unrelated caption
IMAGE_NEGATIVE = "image_negative"      # anchor caption, hardest unrelated image


def triplet_loss(x: np.ndarray, y: np.ndarray, z: np.ndarray, alpha: float = DEFAULT_MARGIN) -> float:
    """max(0, alpha - x.y + x.z) for anchor x, positive y, negative z."""
    if alpha <= 0:
        raise TrainingError(f"margin must be positive, got {alpha}")
    if not (np.isfinite(x).all() and np.isfinite(y).all() and np.isfinite(z).all()):
        raise TrainingError("non-finite input to triplet loss")
    return max(0.0, alpha - float(x @ y) + float(x @ z))


@dataclass(frozen=True)
class TripletTerm:
    """One mined hinge term. `negative` indexes entries for caption negatives
    and distinct-image slots for image negatives."""

    kind: str
    anchor: int
    negative: int
    value: float

    @property
    def active(self) -> bool:
        return self.value > 0.0


def mine_batch(
    cap_embs: np.ndarray,
    img_embs: np.ndarray,
    img_slot: np.ndarray,
    alpha: float = DEFAULT_MARGIN,
) -> tuple[float, list[TripletTerm]]:
    """Hardest-negative hinge terms for every (image, caption) anchor pair.

    cap_embs is (N, d) per entry, img_embs (M, d) per distinct image, and
    img_slot maps entries to their image row. Candidates never share the
    anchor's image; ties go to the lowest batch index.
    """
    n = cap_embs.shape[0]
    m = img_embs.shape[0]
    if m < 2:
        raise BatchError("mining needs at least 2 distinct images in the batch")
    # catch divergence here: max(0, nan) would silently come out as 0
    if not (np.isfinite(cap_embs).all() and np.isfinite(img_embs).all()):
        raise TrainingError("non-finite embeddings reached the batch objective")
    sim = img_embs @ cap_embs.T  # (M, N): image-caption similarities
    slot_ids = np.arange(m)
    terms: list[TripletTerm] = []
    total = 0.0
    for a in range(n):
        slot_a = int(img_slot[a])
        pos_sim = sim[slot_a, a]

        cap_cand = np.where(img_slot != slot_a, sim[slot_a], -np.inf)
        b = int(np.argmax(cap_cand))  # first max = lowest index on ties
        assert img_slot[b] != slot_a, "mined caption negative shares the anchor image"
        cap_term = TripletTerm(
            CAPTION_NEGATIVE, a, b, max(0.0, alpha - pos_sim + sim[slot_a, b])
        )

        img_cand = np.where(slot_ids != slot_a, sim[:, a], -np.inf)
        s = int(np.argmax(img_cand))
        assert s != slot_a, "mined image negative shares the anchor image"
        img_term = TripletTerm(IMAGE_NEGATIVE, a, s, max(0.0, alpha - pos_sim + sim[s, a]))

        terms.extend((cap_term, img_term))
        total += cap_term.value + img_term.value
    return total, terms


def mining_backward(
    terms: list[TripletTerm],
    cap_embs: np.ndarray,
    img_embs: np.ndarray,
    img_slot: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the summed hinge terms w.r.t. caption and image embeddings.

    Inactive terms (hinge at or below zero) contribute nothing; the kink at
    exactly zero takes the zero branch.
    """
    d_cap = np.zeros_like(cap_embs)
    d_img = np.zeros_like(img_embs)
    for term in terms:
        if not term.active:
            continue
        a = term.anchor
        slot_a = int(img_slot[a])
        img_a = img_embs[slot_a]
        cap_a = cap_embs[a]
        if term.kind == CAPTION_NEGATIVE:
            z = cap_embs[term.negative]
            d_img[slot_a] += z - cap_a
            d_cap[a] += -img_a
            d_cap[term.negative] += img_a
        else:
            z = img_embs[term.negative]
            d_cap[a] += z - img_a
            d_img[slot_a] += -cap_a
            d_img[term.negative] += cap_a
    return d_cap, d_img


def batch_loss(
    batch: PairBatch,
    space: WordSpace,
    text_params: TextEncoderParams,
    image_params: ImageEncoderParams,
    alpha: float = DEFAULT_MARGIN,
) -> float:
    """Eval-mode batch objective: encode everything, mine, sum the hinge terms."""
    image_ids, img_slot = batch.image_slots()
    first_entry = {e.image_id: e for e in reversed(batch.entries)}
    img_embs = np.array(
        [encode_image(first_entry[iid].features, image_params) for iid in image_ids]
    )
    cap_embs = np.array(
        [encode_sentence(e.caption, space, text_params) for e in batch.entries]
    )
    total, _ = mine_batch(cap_embs, img_embs, img_slot, alpha)
    return total
