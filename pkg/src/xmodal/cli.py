"""Command-line entry points wrapping the library operations.

Exit codes: 0 success, 1 validation error (bad input, bad usage), 2
internal error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from . import corpus, pipeline, retrieval, trainer
from .embeddings import (
    SeedDictionary,
    build_word_space,
    load_alignment,
    load_dictionary,
    load_table,
    procrustes_align,
    save_alignment,
)
from .errors import XmodalError
from .image_encoder import heatmap, heatmap_to_json, read_fmap, write_heatmap_pgm
from .retrieval import evaluate_recall, load_index, save_index, search
from .text_encoder import encode_sentence, tokenize
from .trainer import ModelDims, TrainConfig, gradient_check, load_checkpoint


class CliUsageError(XmodalError):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); usage problems are exit 1
        raise CliUsageError(message)


def _space_from_data(data: dict, base: Path):
    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    pivot = data["pivot"]
    tables = {lang: load_table(resolve(path), lang) for lang, path in data["tables"].items()}
    maps = {lang: load_alignment(resolve(path)) for lang, path in data.get("alignments", {}).items()}
    for lang, path in data.get("dictionaries", {}).items():
        if lang not in maps:
            maps[lang] = procrustes_align(tables[lang], tables[pivot], load_dictionary(resolve(path)))
    return build_word_space(tables, maps, pivot)


def _resolved_data(data: dict, base: Path) -> dict:
    out = {"pivot": data["pivot"]}
    for key in ("tables", "alignments", "dictionaries"):
        if key in data:
            out[key] = {
                lang: str(p if Path(p).is_absolute() else base / p)
                for lang, p in data[key].items()
            }
    return out


def cmd_make_toy_data(args) -> int:
    with open(args.spec, encoding="utf-8") as fh:
        spec = corpus.toy_spec_from_dict(json.load(fh))
    ds = corpus.make_toy_dataset(spec, args.out)
    print(f"wrote toy dataset under {ds.out_dir}")
    print(f"  train manifest: {ds.train_manifest_path} ({len(ds.train_manifest)} images)")
    print(f"  test manifest:  {ds.test_manifest_path} ({len(ds.test_manifest)} images)")
    print(f"  languages: {', '.join(spec.all_languages)} (zero-shot: {', '.join(spec.zero_shot_languages) or '-'})")
    return 0


def cmd_align(args) -> int:
    src_lang = args.src_lang or Path(args.src).stem
    tgt_lang = args.tgt_lang or Path(args.tgt).stem
    source = load_table(args.src, src_lang)
    target = load_table(args.tgt, tgt_lang)
    amap = procrustes_align(source, target, load_dictionary(args.dict))
    save_alignment(args.out, amap)
    print(f"aligned {src_lang} -> {tgt_lang} (dim {amap.dim}); wrote {args.out}")
    return 0


def cmd_train(args) -> int:
    with open(args.config, encoding="utf-8") as fh:
        cfg = json.load(fh)
    base = Path(args.config).parent
    data = cfg.get("data")
    if not data:
        raise CliUsageError("config needs a 'data' section with tables and pivot")
    space = _space_from_data(data, base)
    train_cfg_dict = dict(cfg.get("train", {}))
    if "languages" in train_cfg_dict and train_cfg_dict["languages"] is not None:
        train_cfg_dict["languages"] = tuple(train_cfg_dict["languages"])
    config = TrainConfig(**train_cfg_dict)
    dims = ModelDims(**cfg.get("model", {}))
    manifest = corpus.load_manifest(args.corpus)
    result = trainer.train(
        manifest,
        space,
        config,
        dims=dims,
        out_dir=args.out,
        extra_config=_resolved_data(data, base),
    )
    print(f"trained {config.epochs} epochs; final mean batch loss {result.loss_curve[-1]:.4f}")
    print(f"checkpoint: {Path(args.out) / 'checkpoint.json'}")
    return 0


def _load_checkpoint_space(checkpoint_path):
    ckpt = load_checkpoint(checkpoint_path)
    if not ckpt.data:
        raise CliUsageError(
            f"{checkpoint_path}: checkpoint has no embedded data paths; cannot rebuild word space"
        )
    return ckpt, _space_from_data(ckpt.data, Path("."))


def cmd_eval(args) -> int:
    ckpt, space = _load_checkpoint_space(args.checkpoint)
    manifest = corpus.load_manifest(args.manifest, split="test")
    languages = tuple(args.languages) if args.languages else None
    image_index, caption_index, gt = pipeline.embed_manifest(
        manifest, space, ckpt.model, languages=languages
    )
    report = evaluate_recall(image_index, caption_index, gt, eval_batch_size=args.batch)
    print(report.format_table())
    with open(args.json, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    print(f"wrote {args.json}")
    return 0


def cmd_index(args) -> int:
    ckpt, space = _load_checkpoint_space(args.checkpoint)
    manifest = corpus.load_manifest(args.manifest)
    image_index, caption_index, _ = pipeline.embed_manifest(manifest, space, ckpt.model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_index(out / "images.idx", image_index)
    save_index(out / "captions.idx", caption_index)
    print(f"indexed {len(image_index)} images and {len(caption_index)} captions under {out}")
    return 0


def cmd_query(args) -> int:
    ckpt, space = _load_checkpoint_space(args.checkpoint)
    index = load_index(args.index)
    vector = encode_sentence(tokenize(args.text, args.lang), space, ckpt.model.text)
    for item_id, score in search(index, vector, args.k):
        print(f"{item_id}\t{score:.6f}")
    return 0


def cmd_heatmap(args) -> int:
    ckpt, space = _load_checkpoint_space(args.checkpoint)
    fm = read_fmap(args.fmap)
    hm = heatmap(args.word, args.lang, fm, space, ckpt.model.text, ckpt.model.image)
    if args.out.endswith(".pgm"):
        write_heatmap_pgm(args.out, hm)
    else:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(heatmap_to_json(hm))
    print(f"wrote {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    components = ["loss", "text", "image", "composed"] if args.component == "all" else [args.component]
    ok = True
    for comp in components:
        report = gradient_check(comp, tolerance=args.tolerance, seed=args.seed)
        print(report)
        ok = ok and report.passed
    return 0 if ok else 1


def cmd_serve(args) -> int:
    import uvicorn

    from .service import build_state, create_app, load_service_config

    config = load_service_config(args.config)
    port = int(os.environ.get("PORT", config.port))
    app = create_app(build_state(config))
    uvicorn.run(app, host=config.host, port=port, log_level="info")
    return 0


def build_parser() -> Parser:
    parser = Parser(prog="xmodal", description="multilingual cross-modal embedding toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-toy-data", help="generate a synthetic toy corpus")
    p.add_argument("--spec", required=True, help="toy spec JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_make_toy_data)

    p = sub.add_parser("align", help="fit an orthogonal map between two embedding tables")
    p.add_argument("--src", required=True, help="source .vec file")
    p.add_argument("--tgt", required=True, help="target .vec file")
    p.add_argument("--dict", required=True, help="TSV seed dictionary source<TAB>target")
    p.add_argument("--out", required=True, help="output alignment JSON")
    p.add_argument("--src-lang", help="source language code (default: file stem)")
    p.add_argument("--tgt-lang", help="target language code (default: file stem)")
    p.set_defaults(fn=cmd_align)

    p = sub.add_parser("train", help="train the joint embedding on a manifest")
    p.add_argument("--corpus", required=True, help="training manifest (JSONL)")
    p.add_argument("--config", required=True, help="run config JSON")
    p.add_argument("--out", required=True, help="checkpoint output directory")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="recall@k evaluation of a checkpoint on a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--batch", type=int, default=1000, help="evaluation batch size")
    p.add_argument("--json", default="recall_report.json", help="report JSON output path")
    p.add_argument("--languages", nargs="*", help="restrict caption languages")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("index", help="embed a manifest into index snapshots")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="directory for images.idx / captions.idx")
    p.set_defaults(fn=cmd_index)

    p = sub.add_parser("query", help="text query against an image index snapshot")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--index", required=True, help="index snapshot file")
    p.add_argument("--text", required=True)
    p.add_argument("--lang", required=True)
    p.add_argument("-k", type=int, default=5)
    p.set_defaults(fn=cmd_query)

    p = sub.add_parser("heatmap", help="per-word spatial activation map for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--word", required=True)
    p.add_argument("--lang", required=True)
    p.add_argument("--fmap", required=True, help="feature map file")
    p.add_argument("--out", required=True, help=".pgm or .json output path")
    p.set_defaults(fn=cmd_heatmap)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--component", default="all", choices=["all", "loss", "text", "image", "composed"])
    p.add_argument("--tolerance", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("serve", help="run the HTTP API")
    p.add_argument("--config", required=True, help="service config JSON")
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except XmodalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
