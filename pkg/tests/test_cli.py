import json

import numpy as np
import pytest

from xmodal.cli import main
from xmodal.corpus import ToySpec, toy_spec_to_dict
from xmodal.embeddings import load_alignment
from xmodal.service import build_state, load_service_config


@pytest.fixture(scope="module")
def toy_run(tmp_path_factory):
    """Full CLI pipeline on a miniature corpus: generate, align, train, index."""
    root = tmp_path_factory.mktemp("cli")
    data_dir = root / "data"
    spec = ToySpec(
        concepts=3, languages=("en", "fr"), train_images_per_concept=6,
        test_images_per_concept=2, noise=0.05, seed=33, embed_dim=12,
    )
    spec_path = root / "toy.json"
    spec_path.write_text(json.dumps(toy_spec_to_dict(spec)))
    assert main(["make-toy-data", "--spec", str(spec_path), "--out", str(data_dir)]) == 0

    fr_map = root / "fr-en.json"
    assert main([
        "align",
        "--src", str(data_dir / "tables" / "fr.vec"),
        "--tgt", str(data_dir / "tables" / "en.vec"),
        "--dict", str(data_dir / "dicts" / "fr-en.tsv"),
        "--out", str(fr_map),
    ]) == 0

    run_config = {
        "train": {
            "epochs": 10, "batch_size": 8, "learning_rate": 1e-2, "seed": 33,
            "languages": ["en", "fr"],
        },
        "model": {"hidden_dim": 16, "joint_dim": 16},
        "data": {
            "pivot": "en",
            "tables": {
                "en": str(data_dir / "tables" / "en.vec"),
                "fr": str(data_dir / "tables" / "fr.vec"),
            },
            "alignments": {"fr": str(fr_map)},
        },
    }
    config_path = root / "run.json"
    config_path.write_text(json.dumps(run_config))
    ckpt_dir = root / "ckpt"
    assert main([
        "train", "--corpus", str(data_dir / "train.jsonl"),
        "--config", str(config_path), "--out", str(ckpt_dir),
    ]) == 0

    index_dir = root / "index"
    assert main([
        "index", "--checkpoint", str(ckpt_dir / "checkpoint.json"),
        "--manifest", str(data_dir / "test.jsonl"), "--out", str(index_dir),
    ]) == 0
    return root, data_dir, ckpt_dir, index_dir


def test_align_output_is_orthogonal(toy_run):
    root, *_ = toy_run
    amap = load_alignment(root / "fr-en.json")
    assert np.abs(amap.matrix.T @ amap.matrix - np.eye(amap.dim)).max() <= 1e-8
    assert amap.source_lang == "fr" and amap.target_lang == "en"


def test_eval_prints_table_and_writes_json(toy_run, tmp_path, capsys):
    root, data_dir, ckpt_dir, _ = toy_run
    report_path = tmp_path / "report.json"
    code = main([
        "eval", "--checkpoint", str(ckpt_dir / "checkpoint.json"),
        "--manifest", str(data_dir / "test.jsonl"),
        "--batch", "200", "--json", str(report_path),
    ])
    assert code == 0
    out = capsys.readouterr().out
    assert "image-retrieval" in out and "r@10" in out
    report = json.loads(report_path.read_text())
    assert "image_retrieval" in report
    assert set(report["image_retrieval"]) == {"en", "fr", "all"}


def test_query_prints_k_results(toy_run, capsys):
    root, data_dir, ckpt_dir, index_dir = toy_run
    code = main([
        "query", "--checkpoint", str(ckpt_dir / "checkpoint.json"),
        "--index", str(index_dir / "images.idx"),
        "--text", "alpha_fr", "--lang", "fr", "-k", "5",
    ])
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 5
    top_id, top_score = lines[0].split("\t")
    assert top_id.startswith("alpha")
    float(top_score)


def test_heatmap_pgm_output(toy_run, tmp_path):
    root, data_dir, ckpt_dir, _ = toy_run
    fmap_file = next((data_dir / "features").glob("*.fmap"))
    out = tmp_path / "map.pgm"
    code = main([
        "heatmap", "--checkpoint", str(ckpt_dir / "checkpoint.json"),
        "--word", "beta_en", "--lang", "en",
        "--fmap", str(fmap_file), "--out", str(out),
    ])
    assert code == 0
    assert out.read_text().startswith("P2\n")


def test_gradcheck_all_components(capsys):
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    for comp in ("loss", "text", "image", "composed"):
        assert comp in out
    assert "FAIL" not in out


def test_validation_error_exit_code_1(tmp_path, capsys):
    code = main(["train", "--corpus", str(tmp_path / "nope.jsonl"),
                 "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_bad_usage_exit_code_1(capsys):
    assert main(["align", "--src", "x"]) == 1


def test_unknown_subcommand_exit_code_1(capsys):
    assert main(["frobnicate"]) == 1


def test_serve_respects_port_env(toy_run, tmp_path, monkeypatch):
    root, data_dir, ckpt_dir, index_dir = toy_run
    cfg = {
        "checkpoint": str(ckpt_dir / "checkpoint.json"),
        "tables": {
            "en": str(data_dir / "tables" / "en.vec"),
            "fr": str(data_dir / "tables" / "fr.vec"),
        },
        "alignments": {"fr": str(root / "fr-en.json")},
        "pivot": "en",
        "image_index": str(index_dir / "images.idx"),
        "port": 8000,
    }
    cfg_path = tmp_path / "svc.json"
    cfg_path.write_text(json.dumps(cfg))

    seen = {}

    def fake_run(app, host, port, log_level):
        seen.update(host=host, port=port)

    import uvicorn

    monkeypatch.setattr(uvicorn, "run", fake_run)
    monkeypatch.setenv("PORT", "9191")
    assert main(["serve", "--config", str(cfg_path)]) == 0
    assert seen["port"] == 9191


def test_service_config_round_trip(toy_run, tmp_path):
    root, data_dir, ckpt_dir, index_dir = toy_run
    cfg = {
        "checkpoint": str(ckpt_dir / "checkpoint.json"),
        "tables": {
            "en": str(data_dir / "tables" / "en.vec"),
            "fr": str(data_dir / "tables" / "fr.vec"),
        },
        "alignments": {"fr": str(root / "fr-en.json")},
        "pivot": "en",
        "image_index": str(index_dir / "images.idx"),
        "caption_index": str(index_dir / "captions.idx"),
        "feature_dir": str(data_dir / "features"),
        "default_k": 7,
    }
    cfg_path = tmp_path / "service.json"
    cfg_path.write_text(json.dumps(cfg))
    state = build_state(load_service_config(cfg_path))
    assert state.default_k == 7
    assert len(state.image_index) == 6  # 3 concepts x 2 test images
    assert state.space.languages == ("en", "fr")
    # feature_dir fallback: heatmap features load lazily from disk
    some_image = state.image_index.items[0].item_id
    assert state.lookup_features(some_image) is not None
