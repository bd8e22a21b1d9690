"""Independent brute-force oracles the test suite checks the library against.

Everything here is deliberately written from the definitions (full sorts,
double loops, grid enumeration) and shares no code with the package.
"""

import numpy as np


def weldon_oracle(data: np.ndarray, k_pos: int, k_neg: int) -> np.ndarray:
    """Full-sort pooling: per channel, mean of k+ largest plus mean of k- smallest."""
    c = data.shape[0]
    flat = data.reshape(c, -1)
    out = np.empty(c)
    for ch in range(c):
        ordered = np.sort(flat[ch])
        out[ch] = ordered[-k_pos:].mean() + ordered[:k_neg].mean()
    return out


def hinge(x, y, z, alpha):
    return max(0.0, alpha - float(x @ y) + float(x @ z))


def batch_loss_oracle(cap_embs, img_embs, img_slot, alpha) -> float:
    """Exhaustive two-loop mining: try every candidate negative for every anchor."""
    n = cap_embs.shape[0]
    m = img_embs.shape[0]
    total = 0.0
    for a in range(n):
        i = img_embs[img_slot[a]]
        s = cap_embs[a]
        worst_cap = -np.inf
        for b in range(n):
            if img_slot[b] == img_slot[a]:
                continue
            worst_cap = max(worst_cap, hinge(i, s, cap_embs[b], alpha))
        worst_img = -np.inf
        for j in range(m):
            if j == img_slot[a]:
                continue
            worst_img = max(worst_img, hinge(s, i, img_embs[j], alpha))
        total += worst_cap + worst_img
    return total


def rotation_objective(w: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.linalg.norm(w @ x - y))


def best_planar_map_by_grid(x: np.ndarray, y: np.ndarray, step_deg: float = 1.0) -> float:
    """Best Frobenius objective over a 1-degree grid of 2-D rotations and
    reflections; x, y are 2 x n column stacks."""
    best = np.inf
    for deg in np.arange(0.0, 360.0, step_deg):
        t = np.deg2rad(deg)
        c, s = np.cos(t), np.sin(t)
        rot = np.array([[c, -s], [s, c]])
        refl = np.array([[c, s], [s, -c]])
        best = min(best, rotation_objective(rot, x, y), rotation_objective(refl, x, y))
    return best


def search_oracle(ids, vectors, query, k):
    """Exhaustive sort by (-score, id)."""
    scores = [float(v @ query) for v in vectors]
    order = sorted(range(len(ids)), key=lambda j: (-scores[j], ids[j]))
    return [(ids[j], scores[j]) for j in order[:k]]


def recall_oracle(image_items, caption_items, ground_truth, ks):
    """Exhaustive-sort recall over one evaluation batch.

    image_items: list of (image_id, vector); caption_items: list of
    (caption_id, lang, vector). Returns (image_retrieval, caption_retrieval)
    dicts lang -> k -> recall, with language "all" pooled.
    """
    img_ids = [i for i, _ in image_items]
    langs = sorted({lang for _, lang, _ in caption_items})

    def caption_pool(pool_lang):
        return [
            (cid, vec)
            for cid, lang, vec in caption_items
            if pool_lang == "all" or lang == pool_lang
        ]

    image_retrieval = {}
    for pool_lang in langs + ["all"]:
        queries = caption_pool(pool_lang)
        hits = {k: 0 for k in ks}
        for cid, qvec in queries:
            ranked = search_oracle(img_ids, [v for _, v in image_items], qvec, len(img_ids))
            rank = 1 + [rid for rid, _ in ranked].index(ground_truth[cid])
            for k in ks:
                if rank <= k:
                    hits[k] += 1
        image_retrieval[pool_lang] = {k: hits[k] / len(queries) for k in ks}

    caption_retrieval = {}
    for pool_lang in langs + ["all"]:
        pool = caption_pool(pool_lang)
        pool_ids = [cid for cid, _ in pool]
        hits = {k: 0 for k in ks}
        total = 0
        for img_id, ivec in image_items:
            true = [cid for cid in pool_ids if ground_truth[cid] == img_id]
            if not true:
                continue
            total += 1
            ranked = search_oracle(pool_ids, [v for _, v in pool], ivec, len(pool))
            best = min(1 + [cid for cid, _ in ranked].index(t) for t in true)
            for k in ks:
                if best <= k:
                    hits[k] += 1
        caption_retrieval[pool_lang] = {k: hits[k] / total for k in ks}
    return image_retrieval, caption_retrieval


def linear_probe_accuracy(features: np.ndarray, labels: np.ndarray) -> float:
    """Closed-form least squares from features to one-hot labels, argmax readout."""
    n = features.shape[0]
    x = np.hstack([features, np.ones((n, 1))])
    onehot = np.eye(int(labels.max()) + 1)[labels]
    coef, *_ = np.linalg.lstsq(x, onehot, rcond=None)
    return float((np.argmax(x @ coef, axis=1) == labels).mean())
