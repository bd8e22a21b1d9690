"""Dataset ingestion and batching, plus a synthetic toy corpus generator.

The toy generator builds a miniature image-caption world with known ground
truth: per-concept prototype feature maps, per-language vocabularies whose
embedding tables are random rotations of one shared base table, and seed
dictionaries pairing words across languages. Learning and alignment are
therefore verifiable at desk scale.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embeddings import EmbeddingTable, SeedDictionary, save_dictionary, save_table
from .errors import BatchError, ManifestError
from .image_encoder import FeatureMap, read_fmap, write_fmap
from .text_encoder import TokenSequence, tokenize

GREEK = (
    "alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta",
    "iota", "kappa", "lambda", "mu", "nu", "xi", "omicron", "pi", "rho",
    "sigma", "tau", "upsilon", "phi", "chi", "psi", "omega",
)


@dataclass(frozen=True)
class Caption:
    lang: str
    text: str


@dataclass(frozen=True)
class ManifestRecord:
    image_id: str
    feature_path: str
    captions: tuple[Caption, ...]


@dataclass(frozen=True)
class Manifest:
    records: tuple[ManifestRecord, ...]
    split: str = "train"

    def __len__(self) -> int:
        return len(self.records)

    @property
    def languages(self) -> tuple[str, ...]:
        return tuple(sorted({c.lang for r in self.records for c in r.captions}))


def load_manifest(path, split: str = "train", check_features: bool = True) -> Manifest:
    """Read a JSONL manifest; feature paths are resolved relative to the file."""
    base = Path(path).parent
    records = []
    seen: set[str] = set()
    missing: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}: line {lineno}: invalid JSON ({exc})") from None
            try:
                image_id = obj["image_id"]
                feature_path = obj["feature_path"]
                captions = obj["captions"]
            except KeyError as exc:
                raise ManifestError(f"{path}: line {lineno}: missing field {exc}") from None
            if image_id in seen:
                raise ManifestError(f"{path}: line {lineno}: duplicate image_id {image_id!r}")
            seen.add(image_id)
            if not captions:
                raise ManifestError(f"{path}: line {lineno}: record {image_id!r} has no captions")
            resolved = str(feature_path) if os.path.isabs(feature_path) else str(base / feature_path)
            if check_features and not os.path.exists(resolved):
                missing.append(resolved)
            records.append(
                ManifestRecord(
                    image_id=image_id,
                    feature_path=resolved,
                    captions=tuple(Caption(lang=c["lang"], text=c["text"]) for c in captions),
                )
            )
    if missing:
        raise ManifestError(f"{path}: missing feature files: {', '.join(missing)}")
    return Manifest(records=tuple(records), split=split)


def save_manifest(path, manifest: Manifest, relative_to: Path | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in manifest.records:
            feature_path = rec.feature_path
            if relative_to is not None:
                feature_path = os.path.relpath(feature_path, relative_to)
            fh.write(
                json.dumps(
                    {
                        "image_id": rec.image_id,
                        "feature_path": feature_path,
                        "captions": [{"lang": c.lang, "text": c.text} for c in rec.captions],
                    }
                )
                + "\n"
            )


def load_features(manifest: Manifest) -> dict[str, FeatureMap]:
    return {rec.image_id: read_fmap(rec.feature_path) for rec in manifest.records}


@dataclass(frozen=True)
class PairEntry:
    """One (image, caption) training pair; several entries may share an image."""

    image_id: str
    features: FeatureMap
    caption: TokenSequence


@dataclass(frozen=True)
class PairBatch:
    entries: tuple[PairEntry, ...]

    def __post_init__(self):
        distinct = {e.image_id for e in self.entries}
        if len(distinct) < 2:
            raise BatchError(
                f"batch needs >= 2 distinct images for negative mining, got {len(distinct)}"
            )

    def __len__(self) -> int:
        return len(self.entries)

    def image_slots(self) -> tuple[list[str], np.ndarray]:
        """Distinct image ids in first-appearance order plus per-entry slot indices."""
        order: list[str] = []
        index: dict[str, int] = {}
        slots = np.empty(len(self.entries), dtype=np.intp)
        for i, entry in enumerate(self.entries):
            if entry.image_id not in index:
                index[entry.image_id] = len(order)
                order.append(entry.image_id)
            slots[i] = index[entry.image_id]
        return order, slots


def make_batches(
    manifest: Manifest,
    features: dict[str, FeatureMap],
    batch_size: int,
    seed,
    languages: tuple[str, ...] | None = None,
) -> list[PairBatch]:
    """One epoch of batches: a seed-determined shuffle of every (image, caption) pair.

    Each pair with a caption language in `languages` appears exactly once. A
    short final chunk is kept when it still has two distinct images and is
    merged into the previous batch otherwise.
    """
    if batch_size < 2:
        raise BatchError(f"batch_size must be >= 2, got {batch_size}")
    pairs: list[PairEntry] = []
    for rec in manifest.records:
        for cap in rec.captions:
            if languages is not None and cap.lang not in languages:
                continue
            pairs.append(
                PairEntry(
                    image_id=rec.image_id,
                    features=features[rec.image_id],
                    caption=tokenize(cap.text, cap.lang),
                )
            )
    if not pairs:
        raise ManifestError(
            f"no (image, caption) pairs match language filter {sorted(languages or ())}"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pairs))
    shuffled = [pairs[i] for i in order]

    chunks = [shuffled[i : i + batch_size] for i in range(0, len(shuffled), batch_size)]
    if len(chunks) > 1 and len({e.image_id for e in chunks[-1]}) < 2:
        tail = chunks.pop()
        chunks[-1] = chunks[-1] + tail
    return [PairBatch(entries=tuple(chunk)) for chunk in chunks]


@dataclass(frozen=True)
class ToySpec:
    """Miniature corpus layout: concepts x languages x images, with known rotations."""

    concepts: int
    languages: tuple[str, ...]
    train_images_per_concept: int
    test_images_per_concept: int = 0
    channels: int = 8
    height: int = 4
    width: int = 4
    noise: float = 0.05
    seed: int = 0
    embed_dim: int = 32
    fillers_per_language: int = 50
    caption_min_len: int = 3
    caption_max_len: int = 6
    zero_shot_languages: tuple[str, ...] = ()

    def __post_init__(self):
        if self.concepts < 2:
            raise ManifestError("toy spec needs at least 2 concepts")
        if not self.languages:
            raise ManifestError("toy spec needs at least 1 training language")
        if set(self.languages) & set(self.zero_shot_languages):
            raise ManifestError("zero-shot languages must be disjoint from training languages")
        if self.train_images_per_concept < 1:
            raise ManifestError("toy spec needs at least 1 training image per concept")
        if not (1 <= self.caption_min_len <= self.caption_max_len):
            raise ManifestError("caption length bounds must satisfy 1 <= min <= max")
        if self.noise < 0:
            raise ManifestError("noise level must be non-negative")

    @property
    def all_languages(self) -> tuple[str, ...]:
        return self.languages + self.zero_shot_languages

    @property
    def pivot(self) -> str:
        return self.languages[0]


def concept_names(count: int) -> tuple[str, ...]:
    names = list(GREEK[:count])
    for i in range(len(names), count):
        names.append(f"concept{i}")
    return tuple(names)


def _random_rotation(dim: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def _spread_points(count: int, dim: int, rng: np.random.Generator, iters: int = 400) -> np.ndarray:
    """Unit vectors pushed apart on the sphere by greedy nearest-neighbor repulsion.

    Plain i.i.d. cluster centers are not reliably linearly separable once
    count exceeds dim; spreading them keeps the least-squares probe
    guarantee independent of the seed.
    """
    pts = rng.standard_normal((count, dim))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    for it in range(iters):
        step = 0.08 * (1.0 - it / iters) + 0.005
        gram = pts @ pts.T
        np.fill_diagonal(gram, -2.0)
        nearest = np.argmax(gram, axis=1)
        pts -= step * pts[nearest]
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return pts


@dataclass(frozen=True)
class ToyDataset:
    spec: ToySpec
    out_dir: Path
    train_manifest: Manifest
    test_manifest: Manifest
    tables: dict[str, EmbeddingTable]
    dictionaries: dict[str, SeedDictionary]  # lang -> pairs into the pivot language
    rotations: dict[str, np.ndarray]
    concepts: tuple[str, ...]

    @property
    def train_manifest_path(self) -> Path:
        return self.out_dir / "train.jsonl"

    @property
    def test_manifest_path(self) -> Path:
        return self.out_dir / "test.jsonl"

    def table_path(self, lang: str) -> Path:
        return self.out_dir / "tables" / f"{lang}.vec"

    def dictionary_path(self, lang: str) -> Path:
        return self.out_dir / "dicts" / f"{lang}-{self.spec.pivot}.tsv"


def make_toy_dataset(spec: ToySpec, out_dir) -> ToyDataset:
    """Generate feature maps, manifests, embedding tables and seed dictionaries.

    Images of concept k are one shared random prototype plus per-image
    Gaussian noise. Every language's table is a random rotation of one base
    table, so alignments have a known ground truth; captions are short
    filler sentences containing the concept word. Zero-shot languages get
    tables, dictionaries and test captions but never appear in the train
    manifest.
    """
    out_dir = Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    (out_dir / "tables").mkdir(exist_ok=True)
    (out_dir / "dicts").mkdir(exist_ok=True)

    rng = np.random.default_rng(spec.seed)
    names = concept_names(spec.concepts)

    # One base table shared by all languages: concept rows then filler rows,
    # each row unit-norm. Rotating it per language keeps all pairwise
    # geometry identical across languages.
    vocab_size = spec.concepts + spec.fillers_per_language
    base = rng.standard_normal((vocab_size, spec.embed_dim))
    base /= np.linalg.norm(base, axis=1, keepdims=True)

    tables: dict[str, EmbeddingTable] = {}
    rotations: dict[str, np.ndarray] = {}
    dictionaries: dict[str, SeedDictionary] = {}
    base_tokens = list(names) + [f"w{j}" for j in range(spec.fillers_per_language)]
    for lang in spec.all_languages:
        rot = _random_rotation(spec.embed_dim, rng)
        rotations[lang] = rot
        vocab = {f"{tok}_{lang}": i for i, tok in enumerate(base_tokens)}
        table = EmbeddingTable(lang=lang, dim=spec.embed_dim, vocab=vocab, matrix=base @ rot.T)
        tables[lang] = table
        save_table(out_dir / "tables" / f"{lang}.vec", table)

    pivot = spec.pivot
    for lang in spec.all_languages:
        if lang == pivot:
            continue
        pairs = tuple((f"{tok}_{lang}", f"{tok}_{pivot}") for tok in base_tokens)
        dictionaries[lang] = SeedDictionary(pairs)
        save_dictionary(out_dir / "dicts" / f"{lang}-{pivot}.tsv", dictionaries[lang])

    def caption_for(concept_idx: int, lang: str) -> str:
        length = int(rng.integers(spec.caption_min_len, spec.caption_max_len + 1))
        slot = int(rng.integers(length))
        words = []
        for pos in range(length):
            if pos == slot:
                words.append(f"{names[concept_idx]}_{lang}")
            else:
                filler = int(rng.integers(spec.fillers_per_language))
                words.append(f"w{filler}_{lang}")
        return " ".join(words)

    # Prototype = per-concept channel center (spread on the sphere, broadcast
    # over the grid) plus fixed spatial texture. Centers dominate the pooled
    # signature, so concepts stay linearly separable after pooling; texture
    # keeps the spatial extremes informative.
    centers = 1.5 * _spread_points(spec.concepts, spec.channels, rng)
    texture = 0.6 * rng.standard_normal(
        (spec.concepts, spec.channels, spec.height, spec.width)
    )
    prototypes = centers[:, :, None, None] + texture

    train_records: list[ManifestRecord] = []
    test_records: list[ManifestRecord] = []
    per_concept = spec.train_images_per_concept + spec.test_images_per_concept
    for k in range(spec.concepts):
        for j in range(per_concept):
            image_id = f"{names[k]}_{j:03d}"
            noise = rng.standard_normal(prototypes[k].shape)
            fm = FeatureMap(prototypes[k] + spec.noise * noise)
            fpath = out_dir / "features" / f"{image_id}.fmap"
            write_fmap(fpath, fm)
            is_train = j < spec.train_images_per_concept
            langs = spec.languages if is_train else spec.all_languages
            captions = tuple(Caption(lang=lang, text=caption_for(k, lang)) for lang in langs)
            record = ManifestRecord(image_id=image_id, feature_path=str(fpath), captions=captions)
            (train_records if is_train else test_records).append(record)

    train_manifest = Manifest(records=tuple(train_records), split="train")
    test_manifest = Manifest(records=tuple(test_records), split="test")
    save_manifest(out_dir / "train.jsonl", train_manifest, relative_to=out_dir)
    save_manifest(out_dir / "test.jsonl", test_manifest, relative_to=out_dir)

    with open(out_dir / "toy_spec.json", "w", encoding="utf-8") as fh:
        json.dump(toy_spec_to_dict(spec), fh, indent=2)

    return ToyDataset(
        spec=spec,
        out_dir=out_dir,
        train_manifest=train_manifest,
        test_manifest=test_manifest,
        tables=tables,
        dictionaries=dictionaries,
        rotations=rotations,
        concepts=names,
    )


def toy_spec_to_dict(spec: ToySpec) -> dict:
    return {
        "concepts": spec.concepts,
        "languages": list(spec.languages),
        "train_images_per_concept": spec.train_images_per_concept,
        "test_images_per_concept": spec.test_images_per_concept,
        "channels": spec.channels,
        "height": spec.height,
        "width": spec.width,
        "noise": spec.noise,
        "seed": spec.seed,
        "embed_dim": spec.embed_dim,
        "fillers_per_language": spec.fillers_per_language,
        "caption_min_len": spec.caption_min_len,
        "caption_max_len": spec.caption_max_len,
        "zero_shot_languages": list(spec.zero_shot_languages),
    }


def toy_spec_from_dict(obj: dict) -> ToySpec:
    known = {
        "concepts", "languages", "train_images_per_concept", "test_images_per_concept",
        "channels", "height", "width", "noise", "seed", "embed_dim",
        "fillers_per_language", "caption_min_len", "caption_max_len", "zero_shot_languages",
    }
    unknown = set(obj) - known
    if unknown:
        raise ManifestError(f"unknown toy spec fields: {sorted(unknown)}")
    obj = dict(obj)
    for key in ("languages", "zero_shot_languages"):
        if key in obj:
            obj[key] = tuple(obj[key])
    return ToySpec(**obj)
