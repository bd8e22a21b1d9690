"""Exact cosine-similarity index and the recall@k evaluation protocol.

Search is brute force on purpose: every stored vector is unit-norm, so the
inner product IS the cosine, and exactness is what the oracle tests lean on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import RetrievalError

UNIT_NORM_TOL = 1e-4

IMAGE = "image"
CAPTION = "caption"
MODALITIES = (IMAGE, CAPTION)


@dataclass
class IndexItem:
    item_id: str
    vector: np.ndarray
    modality: str
    lang: str | None = None
    text: str | None = None


class RetrievalIndex:
    """id -> unit vector store with modality/language tags."""

    def __init__(self, dim: int):
        if dim < 1:
            raise RetrievalError(f"dim must be >= 1, got {dim}")
        self.dim = dim
        self._items: list[IndexItem] = []
        self._by_id: dict[str, int] = {}
        self._matrix: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self._items)

    def __contains__(self, item_id: str) -> bool:
        return item_id in self._by_id

    @property
    def items(self) -> tuple[IndexItem, ...]:
        return tuple(self._items)

    def add(
        self,
        item_id: str,
        vector: np.ndarray,
        modality: str,
        lang: str | None = None,
        text: str | None = None,
    ) -> None:
        if item_id in self._by_id:
            raise RetrievalError(f"duplicate id {item_id!r}")
        if modality not in MODALITIES:
            raise RetrievalError(f"modality must be one of {MODALITIES}, got {modality!r}")
        vec = np.asarray(vector, dtype=np.float64)
        if vec.shape != (self.dim,):
            raise RetrievalError(f"vector shape {vec.shape} does not match index dim {self.dim}")
        norm = float(np.linalg.norm(vec))
        if abs(norm - 1.0) > UNIT_NORM_TOL:
            raise RetrievalError(
                f"vector for {item_id!r} has norm {norm:.6f}; index stores unit vectors only"
            )
        self._by_id[item_id] = len(self._items)
        self._items.append(IndexItem(item_id, vec, modality, lang, text))
        self._matrix = None

    def get(self, item_id: str) -> IndexItem:
        try:
            return self._items[self._by_id[item_id]]
        except KeyError:
            raise RetrievalError(f"unknown id {item_id!r}") from None

    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            self._matrix = (
                np.vstack([it.vector for it in self._items])
                if self._items
                else np.empty((0, self.dim))
            )
        return self._matrix

    def copy(self) -> "RetrievalIndex":
        clone = RetrievalIndex(self.dim)
        for it in self._items:
            clone.add(it.item_id, it.vector, it.modality, it.lang, it.text)
        return clone


def build_index(items: list[IndexItem] | list[tuple], dim: int | None = None) -> RetrievalIndex:
    if not items:
        raise RetrievalError("cannot build an index from zero items")
    first = items[0]
    vec = first.vector if isinstance(first, IndexItem) else first[1]
    index = RetrievalIndex(dim if dim is not None else np.asarray(vec).shape[0])
    for it in items:
        if isinstance(it, IndexItem):
            index.add(it.item_id, it.vector, it.modality, it.lang, it.text)
        else:
            index.add(*it)
    return index


def search(
    index: RetrievalIndex,
    query: np.ndarray,
    k: int,
    modality: str | None = None,
    lang: str | None = None,
) -> list[tuple[str, float]]:
    """Exact top-k by inner product among items passing the filter.

    Descending score, exact ties broken by id order; k beyond the filtered
    size returns the full ranking.
    """
    if k < 1:
        raise RetrievalError(f"k must be >= 1, got {k}")
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (index.dim,):
        raise RetrievalError(f"query shape {query.shape} does not match index dim {index.dim}")
    keep = [
        i
        for i, it in enumerate(index.items)
        if (modality is None or it.modality == modality)
        and (lang is None or it.lang == lang)
    ]
    if not keep:
        raise RetrievalError("no indexed items pass the search filter")
    items = index.items
    # per-row dots, not a matrix product: keeps every score bit-identical to
    # the plain inner-product definition the oracle tests recompute
    scores = np.array([items[j].vector @ query for j in keep])
    order = sorted(range(len(keep)), key=lambda j: (-scores[j], items[keep[j]].item_id))
    return [(items[keep[j]].item_id, float(scores[j])) for j in order[:k]]


def _rank_of(scores: np.ndarray, ids: list[str], true_pos: int) -> int:
    """1-based rank under descending score with id-order tie breaks."""
    s = scores[true_pos]
    tid = ids[true_pos]
    better = int(np.sum(scores > s))
    tied_before = sum(
        1 for j in np.flatnonzero(scores == s) if j != true_pos and ids[j] < tid
    )
    return 1 + better + tied_before


@dataclass(frozen=True)
class RecallReport:
    """recall@k per direction and language; "all" pools caption queries/pools
    across languages."""

    ks: tuple[int, ...]
    image_retrieval: dict[str, dict[int, float]]    # text query -> image pool
    caption_retrieval: dict[str, dict[int, float]]  # image query -> caption pool
    query_counts: dict[str, dict[str, int]] = field(default_factory=dict)

    def languages(self) -> list[str]:
        langs = sorted(set(self.image_retrieval) - {"all"})
        return langs + ["all"]

    def to_dict(self) -> dict:
        return {
            "ks": list(self.ks),
            "image_retrieval": {
                lang: {str(k): v for k, v in cells.items()}
                for lang, cells in self.image_retrieval.items()
            },
            "caption_retrieval": {
                lang: {str(k): v for k, v in cells.items()}
                for lang, cells in self.caption_retrieval.items()
            },
            "query_counts": self.query_counts,
        }

    def format_table(self) -> str:
        header = ["direction", "lang"] + [f"r@{k}" for k in self.ks] + ["queries"]
        rows = []
        for direction, cells in (
            ("image-retrieval", self.image_retrieval),
            ("caption-retrieval", self.caption_retrieval),
        ):
            for lang in self.languages():
                if lang not in cells:
                    continue
                count = self.query_counts.get(direction, {}).get(lang, 0)
                rows.append(
                    [direction, lang]
                    + [f"{cells[lang][k]:.4f}" for k in self.ks]
                    + [str(count)]
                )
        widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
        lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
        for r in rows:
            lines.append("  ".join(v.ljust(w) for v, w in zip(r, widths)))
        return "\n".join(lines)


def evaluate_recall(
    image_index: RetrievalIndex,
    caption_index: RetrievalIndex,
    ground_truth: dict[str, str],
    eval_batch_size: int = 1000,
    ks: tuple[int, ...] = (1, 5, 10),
) -> RecallReport:
    """The batched recall protocol over caption -> image ground truth.

    Images are partitioned (in index order) into evaluation batches; within
    a batch every caption queries the batch's images and every image queries
    the batch's captions. Caption retrieval counts a hit when ANY true
    caption ranks inside the cutoff. Per-language cells restrict captions to
    one language; "all" pools every language.
    """
    if not ground_truth:
        raise RetrievalError("empty ground truth")
    if eval_batch_size < 1:
        raise RetrievalError("eval_batch_size must be >= 1")
    for cap_id, img_id in ground_truth.items():
        if cap_id not in caption_index:
            raise RetrievalError(f"ground-truth caption {cap_id!r} is not indexed")
        if img_id not in image_index:
            raise RetrievalError(f"ground-truth image {img_id!r} is not indexed")

    captions_of: dict[str, list[str]] = {}
    for cap_id, img_id in ground_truth.items():
        captions_of.setdefault(img_id, []).append(cap_id)

    image_ids = [it.item_id for it in image_index.items if it.item_id in captions_of]
    langs = sorted({caption_index.get(c).lang or "all" for c in ground_truth})

    img_hits = {lang: {k: 0 for k in ks} for lang in langs + ["all"]}
    img_total = {lang: 0 for lang in langs + ["all"]}
    cap_hits = {lang: {k: 0 for k in ks} for lang in langs + ["all"]}
    cap_total = {lang: 0 for lang in langs + ["all"]}

    for start in range(0, len(image_ids), eval_batch_size):
        batch_ids = image_ids[start : start + eval_batch_size]
        img_vecs = [image_index.get(i).vector for i in batch_ids]
        batch_caps = [
            (cap_id, caption_index.get(cap_id))
            for img_id in batch_ids
            for cap_id in sorted(captions_of[img_id])
        ]
        img_pos = {img_id: j for j, img_id in enumerate(batch_ids)}

        # text query -> image pool (per-row dots: see search)
        for cap_id, item in batch_caps:
            scores = np.array([v @ item.vector for v in img_vecs])
            rank = _rank_of(scores, batch_ids, img_pos[ground_truth[cap_id]])
            lang = item.lang or "all"
            for pool in (lang, "all"):
                img_total[pool] += 1
                for k in ks:
                    if rank <= k:
                        img_hits[pool][k] += 1

        # image query -> caption pool, restricted per language
        for pool in langs + ["all"]:
            pool_caps = [
                (cap_id, item)
                for cap_id, item in batch_caps
                if pool == "all" or (item.lang or "all") == pool
            ]
            if not pool_caps:
                continue
            cap_vecs = [item.vector for _, item in pool_caps]
            cap_ids = [cap_id for cap_id, _ in pool_caps]
            for img_id in batch_ids:
                true_pos = [j for j, cid in enumerate(cap_ids) if ground_truth[cid] == img_id]
                if not true_pos:
                    continue
                ivec = image_index.get(img_id).vector
                scores = np.array([v @ ivec for v in cap_vecs])
                best = min(_rank_of(scores, cap_ids, j) for j in true_pos)
                cap_total[pool] += 1
                for k in ks:
                    if best <= k:
                        cap_hits[pool][k] += 1

    def rates(hits, totals):
        return {
            lang: {k: (hits[lang][k] / totals[lang] if totals[lang] else 0.0) for k in ks}
            for lang in hits
            if totals[lang] or lang == "all"
        }

    return RecallReport(
        ks=ks,
        image_retrieval=rates(img_hits, img_total),
        caption_retrieval=rates(cap_hits, cap_total),
        query_counts={
            "image-retrieval": dict(img_total),
            "caption-retrieval": dict(cap_total),
        },
    )


# --- snapshot serialization --------------------------------------------------


def save_index(path, index: RetrievalIndex) -> None:
    """Single file: JSON header line, raw little-endian float32 vectors, then
    one JSONL metadata line per item."""
    header = json.dumps({"count": len(index), "dim": index.dim})
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8") + b"\n")
        fh.write(index.matrix().astype("<f4").tobytes(order="C"))
        for it in index.items:
            meta = {"id": it.item_id, "modality": it.modality, "lang": it.lang, "text": it.text}
            fh.write(json.dumps(meta).encode("utf-8") + b"\n")


def load_index(path) -> RetrievalIndex:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        count, dim = header["count"], header["dim"]
        raw = fh.read(count * dim * 4)
        if len(raw) != count * dim * 4:
            raise RetrievalError(f"{path}: truncated vector block")
        vectors = np.frombuffer(raw, dtype="<f4").reshape(count, dim).astype(np.float64)
        # float32 round-trip can leave norms a hair off; renormalize exactly
        norms = np.linalg.norm(vectors, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        vectors = vectors / norms
        index = RetrievalIndex(dim)
        for row in range(count):
            line = fh.readline()
            if not line:
                raise RetrievalError(f"{path}: missing metadata line for row {row}")
            meta = json.loads(line.decode("utf-8"))
            index.add(meta["id"], vectors[row], meta["modality"], meta.get("lang"), meta.get("text"))
    return index
