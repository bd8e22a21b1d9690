"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines as they
complete. The end-to-end experiment (criteria 7-9) trains the desk-scale
corpus twice to establish both quality and bitwise determinism.
"""

import time
from contextlib import contextmanager

import numpy as np
import pytest

from conftest import make_table, random_orthogonal, unit
from oracles import (
    batch_loss_oracle,
    best_planar_map_by_grid,
    linear_probe_accuracy,
    recall_oracle,
    rotation_objective,
    search_oracle,
    weldon_oracle,
)
from xmodal.corpus import PairBatch, PairEntry, ToySpec, load_features, make_toy_dataset
from xmodal.embeddings import (
    AlignmentMap,
    SeedDictionary,
    build_word_space,
    compose_via_pivot,
    procrustes_align,
)
from xmodal.image_encoder import FeatureMap, weldon_pool
from xmodal.loss import mine_batch, triplet_loss
from xmodal.pipeline import align_tables, embed_manifest
from xmodal.retrieval import (
    CAPTION,
    IMAGE,
    RetrievalIndex,
    evaluate_recall,
    search,
)
from xmodal.text_encoder import TokenSequence
from xmodal.trainer import ModelDims, TrainConfig, gradient_check, named_parameters, train


@contextmanager
def criterion(number: int, description: str):
    start = time.monotonic()
    try:
        yield
    except BaseException:
        print(f"[FAIL] criterion {number}: {description}")
        raise
    elapsed = time.monotonic() - start
    print(f"[PASS] criterion {number}: {description} ({elapsed:.1f}s)")


def random_units(rng, n, d):
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def test_criterion_1_loss_unit_suite():
    with criterion(1, "triplet loss exact cases and non-negativity on 1e5 triples"):
        start = time.monotonic()
        x = np.array([1.0, 0.0])
        assert triplet_loss(x, np.array([1.0, 0.0]), np.array([0.0, 1.0]), 0.2) == 0.0

        rng = np.random.default_rng(0)
        a, b = random_units(rng, 2, 8)
        assert triplet_loss(a, b, b, 0.2) == 0.2  # terms cancel exactly in float64

        x3 = np.array([1.0, 0.0, 0.0])
        y3 = np.array([0.3, np.sqrt(1 - 0.09), 0.0])
        z3 = np.array([0.4, 0.0, np.sqrt(1 - 0.16)])
        assert triplet_loss(x3, y3, z3, 0.2) == pytest.approx(0.3, abs=1e-15)

        triples = random_units(rng, 3 * 10**5, 16).reshape(10**5, 3, 16)
        sims_pos = np.einsum("nd,nd->n", triples[:, 0], triples[:, 1])
        sims_neg = np.einsum("nd,nd->n", triples[:, 0], triples[:, 2])
        losses = np.maximum(0.0, 0.2 - sims_pos + sims_neg)
        spot = [triplet_loss(*triples[i], 0.2) for i in range(0, 10**5, 9973)]
        assert np.all(losses >= 0.0) and all(v >= 0.0 for v in spot)
        assert time.monotonic() - start < 10.0


def test_criterion_2_mining_oracle():
    with criterion(2, "batch loss equals exhaustive two-loop oracle on 100 batches"):
        start = time.monotonic()
        rng = np.random.default_rng(11)
        for _ in range(100):
            n_img = int(rng.integers(2, 8))
            n_ent = int(rng.integers(n_img, 17))
            cap = random_units(rng, n_ent, 8)
            img = random_units(rng, n_img, 8)
            slots = np.concatenate([
                np.arange(n_img), rng.integers(0, n_img, size=n_ent - n_img)
            ])
            total, terms = mine_batch(cap, img, slots, 0.2)
            assert total == batch_loss_oracle(cap, img, slots, 0.2)
            for t in terms:
                if t.kind == "caption_negative":
                    assert slots[t.negative] != slots[t.anchor]
                else:
                    assert t.negative != slots[t.anchor]
        assert time.monotonic() - start < 60.0


def test_criterion_3_gradient_checks():
    with criterion(3, "finite-difference gradient checks (text, image, composed, loss)"):
        start = time.monotonic()
        loss_report = gradient_check("loss", tolerance=1e-6)
        assert loss_report.passed, str(loss_report)
        for component in ("text", "image", "composed"):
            report = gradient_check(component, tolerance=1e-4)
            assert report.passed, str(report)
        assert time.monotonic() - start < 120.0


def test_criterion_4_weldon_oracle():
    with criterion(4, "Weldon pooling equals full-sort oracle on 1000 random maps"):
        hand = weldon_pool(
            FeatureMap(np.array([5.0, 3.0, 1.0, -2.0, -4.0]).reshape(1, 1, 5)), 2, 2
        )
        assert hand[0] == 1.0

        rng = np.random.default_rng(4)
        for _ in range(1000):
            c = int(rng.integers(1, 9))
            h = int(rng.integers(1, 9))
            w = int(rng.integers(1, 65 // h + 1))
            data = rng.standard_normal((c, h, w))
            k_pos = int(rng.integers(1, h * w + 1))
            k_neg = int(rng.integers(1, h * w + 1))
            assert np.array_equal(
                weldon_pool(FeatureMap(data), k_pos, k_neg),
                weldon_oracle(data, k_pos, k_neg),
            )

        data = rng.standard_normal((4, 4, 4))
        perm = rng.permutation(16)
        permuted = data.reshape(4, 16)[:, perm].reshape(4, 4, 4)
        assert np.array_equal(
            weldon_pool(FeatureMap(data), 3, 2), weldon_pool(FeatureMap(permuted), 3, 2)
        )


def test_criterion_5_procrustes():
    with criterion(5, "Procrustes identity/rotation recovery, 2-D optimality, pivot"):
        rng = np.random.default_rng(5)

        tokens = [f"w{i}" for i in range(50)]
        base = rng.standard_normal((50, 16))
        base /= np.linalg.norm(base, axis=1, keepdims=True)
        table = make_table("en", tokens, base)
        ident = procrustes_align(table, table, SeedDictionary(tuple((t, t) for t in tokens)))
        assert np.abs(ident.matrix - np.eye(16)).max() <= 1e-8

        q = random_orthogonal(16, rng)
        rotated = make_table("fr", tokens, base @ q.T)
        rec = procrustes_align(table, rotated, SeedDictionary(tuple((t, t) for t in tokens)))
        assert np.abs(rec.matrix - q).max() < 1e-6

        for _ in range(10):
            x = rng.standard_normal((2, 3))
            y = rng.standard_normal((2, 3))
            names = ["a", "b", "c"]
            src = make_table("s", names, x.T)
            tgt = make_table("t", names, y.T)
            amap = procrustes_align(src, tgt, SeedDictionary((("a", "a"), ("b", "b"), ("c", "c"))))
            assert rotation_objective(amap.matrix, x, y) <= best_planar_map_by_grid(x, y) + 1e-9

        w1 = random_orthogonal(16, rng)
        w2 = random_orthogonal(16, rng)
        comp = compose_via_pivot(AlignmentMap("a", "p", w1), AlignmentMap("b", "p", w2))
        assert np.abs(comp.matrix.T @ comp.matrix - np.eye(16)).max() <= 1e-8


def test_criterion_6_retrieval_oracle():
    with criterion(6, "search and recall match exhaustive oracles on 200-pair instances"):
        rng = np.random.default_rng(6)
        n = 200
        langs = ("en", "fr")
        img_vecs = random_units(rng, n, 16)
        image_index = RetrievalIndex(16)
        caption_index = RetrievalIndex(16)
        gt, image_items, caption_items = {}, [], []
        for i in range(n):
            image_index.add(f"img{i:03d}", img_vecs[i], IMAGE)
            image_items.append((f"img{i:03d}", img_vecs[i]))
            for lang in langs:
                v = unit(img_vecs[i] + 0.9 * rng.standard_normal(16))
                cid = f"img{i:03d}#{lang}"
                caption_index.add(cid, v, CAPTION, lang=lang)
                caption_items.append((cid, lang, v))
                gt[cid] = f"img{i:03d}"

        for _ in range(20):
            q = unit(rng.standard_normal(16))
            k = int(rng.integers(1, 25))
            ours = search(image_index, q, k, modality=IMAGE)
            ids = [iid for iid, _ in image_items]
            vecs = [v for _, v in image_items]
            assert ours == search_oracle(ids, vecs, q, k)

        report = evaluate_recall(image_index, caption_index, gt, eval_batch_size=1000)
        img_oracle, cap_oracle = recall_oracle(image_items, caption_items, gt, (1, 5, 10))
        for lang in ("en", "fr", "all"):
            for k in (1, 5, 10):
                assert report.image_retrieval[lang][k] == img_oracle[lang][k]
                assert report.caption_retrieval[lang][k] == cap_oracle[lang][k]
                assert 0.0 <= report.image_retrieval[lang][1] <= report.image_retrieval[lang][5]
                assert report.image_retrieval[lang][5] <= report.image_retrieval[lang][10] <= 1.0

        perfect_imgs = RetrievalIndex(32)
        perfect_caps = RetrievalIndex(32)
        eye = np.eye(32)
        pgt = {}
        for i in range(20):
            perfect_imgs.add(f"p{i}", eye[i], IMAGE)
            perfect_caps.add(f"c{i}", eye[i], CAPTION, lang="en")
            pgt[f"c{i}"] = f"p{i}"
        perfect = evaluate_recall(perfect_imgs, perfect_caps, pgt)
        for lang in ("en", "all"):
            for k in (1, 5, 10):
                assert perfect.image_retrieval[lang][k] == 1.0
                assert perfect.caption_retrieval[lang][k] == 1.0


# --- end-to-end experiment (criteria 7-9) ------------------------------------

TOY_SPEC = ToySpec(
    concepts=20,
    languages=("en", "fr"),
    zero_shot_languages=("cs",),
    train_images_per_concept=25,
    test_images_per_concept=5,
    channels=8,
    height=4,
    width=4,
    noise=0.05,
    seed=7,
    embed_dim=32,
)

TOY_TRAIN = TrainConfig(
    epochs=30,
    batch_size=32,
    learning_rate=1e-2,
    lr_halving_epochs=6,
    seed=7,
    languages=TOY_SPEC.languages,
)

TOY_DIMS = ModelDims(hidden_dim=64, joint_dim=64)


def run_toy_experiment(ds, spaces):
    train_space, full_space = spaces
    result = train(ds.train_manifest, train_space, TOY_TRAIN, dims=TOY_DIMS)
    image_index, caption_index, gt = embed_manifest(ds.test_manifest, full_space, result.model)
    report = evaluate_recall(image_index, caption_index, gt, eval_batch_size=200)
    return result, report


@pytest.fixture(scope="module")
def toy_experiment(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance_toy")
    ds = make_toy_dataset(TOY_SPEC, out)
    maps = align_tables(ds.tables, ds.dictionaries, TOY_SPEC.pivot)
    train_space = build_word_space(
        {lang: ds.tables[lang] for lang in TOY_SPEC.languages},
        {lang: maps[lang] for lang in TOY_SPEC.languages if lang != TOY_SPEC.pivot},
        TOY_SPEC.pivot,
    )
    full_space = build_word_space(dict(ds.tables), maps, TOY_SPEC.pivot)
    start = time.monotonic()
    result, report = run_toy_experiment(ds, (train_space, full_space))
    elapsed = time.monotonic() - start
    return ds, (train_space, full_space), result, report, elapsed


def test_criterion_7_end_to_end_toy_experiment(toy_experiment):
    with criterion(7, "toy experiment: r@10 >= 0.90 per language and pooled, loss decreasing"):
        ds, _, result, report, elapsed = toy_experiment

        # learnability guard: the pooled features must support a linear probe,
        # otherwise the recall threshold below would be testing noise
        feats = load_features(ds.train_manifest)
        k = max(1, (TOY_SPEC.height * TOY_SPEC.width) // 10)
        xs, ys = [], []
        for idx, name in enumerate(ds.concepts):
            for j in range(TOY_SPEC.train_images_per_concept):
                xs.append(weldon_oracle(feats[f"{name}_{j:03d}"].data, k, k))
                ys.append(idx)
        assert linear_probe_accuracy(np.array(xs), np.array(ys)) >= 0.95

        for lang in ("en", "fr", "all"):
            r10 = report.image_retrieval[lang][10]
            assert r10 >= 0.90, f"{lang}: r@10 = {r10}"
        curve = np.asarray(result.loss_curve)
        moving = np.convolve(curve, np.ones(5) / 5, mode="valid")
        assert np.all(np.diff(moving) < 0.0), "5-epoch moving average must strictly decrease"
        assert elapsed < 600.0, f"experiment took {elapsed:.0f}s"
        print(
            "         r@10:",
            {lang: report.image_retrieval[lang][10] for lang in ("en", "fr", "all")},
            f"in {elapsed:.0f}s",
        )


def test_criterion_8_zero_shot_language(toy_experiment):
    with criterion(8, "zero-shot language: image-retrieval r@10 >= 0.50 (5x chance)"):
        _, _, _, report, _ = toy_experiment
        assert "cs" not in (TOY_TRAIN.languages or ())
        r10 = report.image_retrieval["cs"][10]
        assert r10 >= 0.50, f"zero-shot r@10 = {r10}"
        print(f"         zero-shot cs r@10: {r10}")


def test_criterion_9_determinism(toy_experiment):
    with criterion(9, "re-running the experiment reproduces losses and recalls bitwise"):
        ds, spaces, first_result, first_report, _ = toy_experiment
        second_result, second_report = run_toy_experiment(ds, spaces)
        assert second_result.loss_curve == first_result.loss_curve
        assert second_report.to_dict() == first_report.to_dict()
        p1 = named_parameters(first_result.model)
        p2 = named_parameters(second_result.model)
        for name in p1:
            assert np.array_equal(p1[name], p2[name]), name
