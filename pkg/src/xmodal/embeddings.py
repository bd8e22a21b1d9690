"""Per-language word embedding tables and orthogonal cross-lingual alignment.

Tables are loaded from word2vec text files, aligned into a single shared
word space with a supervised orthogonal Procrustes solve on a seed
dictionary, and optionally composed through a pivot language. Tables and
maps are immutable after construction.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError, EmbeddingFormatError

logger = logging.getLogger(__name__)

ORTHOGONALITY_TOL = 1e-8


@dataclass(frozen=True)
class EmbeddingTable:
    """token -> row mapping over a V x E matrix of word vectors."""

    lang: str
    dim: int
    vocab: dict[str, int]
    matrix: np.ndarray

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=np.float64)
        object.__setattr__(self, "matrix", mat)
        if mat.ndim != 2 or mat.shape[1] != self.dim:
            raise EmbeddingFormatError(
                f"matrix shape {mat.shape} does not match dim {self.dim}"
            )
        if not np.isfinite(mat).all():
            raise EmbeddingFormatError(f"non-finite values in '{self.lang}' table")
        rows = sorted(self.vocab.values())
        if rows != list(range(len(self.vocab))) or len(self.vocab) != mat.shape[0]:
            raise EmbeddingFormatError(
                f"vocab rows must be a bijection onto 0..{mat.shape[0] - 1}"
            )

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def __contains__(self, token: str) -> bool:
        return token.lower() in self.vocab

    def lookup(self, token: str) -> np.ndarray | None:
        """Stored row for an in-vocabulary token, None when out of vocabulary.

        Tokens are case-normalized (lowercased) to match the load policy.
        """
        row = self.vocab.get(token.lower())
        if row is None:
            return None
        return self.matrix[row]


@dataclass(frozen=True)
class AlignmentMap:
    """Orthogonal E x E matrix carrying source_lang vectors into target_lang space."""

    source_lang: str
    target_lang: str
    matrix: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.matrix, dtype=np.float64)
        object.__setattr__(self, "matrix", w)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise AlignmentError(f"alignment matrix must be square, got {w.shape}")
        gram_err = np.abs(w.T @ w - np.eye(w.shape[0])).max()
        if gram_err > ORTHOGONALITY_TOL:
            raise AlignmentError(
                f"matrix is not orthogonal: max |W^T W - I| = {gram_err:.3e}"
            )

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def apply(self, vec: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(vec, dtype=np.float64)


@dataclass(frozen=True)
class SeedDictionary:
    """Paired (source_token, target_token) anchors supervising an alignment."""

    pairs: tuple[tuple[str, str], ...]

    def __post_init__(self):
        if not self.pairs:
            raise AlignmentError("seed dictionary is empty")
        object.__setattr__(
            self,
            "pairs",
            tuple((s.lower(), t.lower()) for s, t in self.pairs),
        )

    def __len__(self) -> int:
        return len(self.pairs)


def identity_map(lang: str, dim: int) -> AlignmentMap:
    return AlignmentMap(lang, lang, np.eye(dim))


def load_table(path, lang: str) -> EmbeddingTable:
    """Parse a word2vec text file: header "V E", then one "token v1 .. vE" line per word.

    Tokens are lowercased. Malformed headers, wrong per-line arity, duplicate
    tokens and bad floats all raise EmbeddingFormatError naming the line.
    """
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        parts = header.split()
        if len(parts) != 2:
            raise EmbeddingFormatError(f"{path}: line 1: malformed header {header!r}")
        try:
            n_rows, dim = int(parts[0]), int(parts[1])
        except ValueError:
            raise EmbeddingFormatError(
                f"{path}: line 1: header fields must be integers, got {header!r}"
            ) from None
        if n_rows < 0 or dim <= 0:
            raise EmbeddingFormatError(f"{path}: line 1: bad dimensions V={n_rows} E={dim}")

        vocab: dict[str, int] = {}
        matrix = np.empty((n_rows, dim), dtype=np.float64)
        row = 0
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != dim + 1:
                raise EmbeddingFormatError(
                    f"{path}: line {lineno}: expected {dim + 1} fields, got {len(fields)}"
                )
            token = fields[0].lower()
            if token in vocab:
                raise EmbeddingFormatError(
                    f"{path}: line {lineno}: duplicate token {token!r}"
                )
            if row >= n_rows:
                raise EmbeddingFormatError(
                    f"{path}: line {lineno}: more rows than header declares ({n_rows})"
                )
            try:
                matrix[row] = [float(v) for v in fields[1:]]
            except ValueError:
                raise EmbeddingFormatError(
                    f"{path}: line {lineno}: unparseable float value"
                ) from None
            vocab[token] = row
            row += 1
        if row != n_rows:
            raise EmbeddingFormatError(
                f"{path}: header declares {n_rows} rows but file has {row}"
            )
    return EmbeddingTable(lang=lang, dim=dim, vocab=vocab, matrix=matrix)


def save_table(path, table: EmbeddingTable) -> None:
    """Write a table back out in word2vec text format."""
    tokens = sorted(table.vocab, key=table.vocab.get)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{table.size} {table.dim}\n")
        for token in tokens:
            values = " ".join(repr(float(v)) for v in table.matrix[table.vocab[token]])
            fh.write(f"{token} {values}\n")


def load_dictionary(path) -> SeedDictionary:
    """Read a TSV of source_token <tab> target_token pairs."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t")
            if len(fields) != 2:
                raise AlignmentError(f"{path}: line {lineno}: expected 2 tab-separated fields")
            pairs.append((fields[0], fields[1]))
    return SeedDictionary(tuple(pairs))


def save_dictionary(path, dictionary: SeedDictionary) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for src, tgt in dictionary.pairs:
            fh.write(f"{src}\t{tgt}\n")


def procrustes_align(
    source: EmbeddingTable, target: EmbeddingTable, dictionary: SeedDictionary
) -> AlignmentMap:
    """Solve for the orthogonal W minimizing ||W X - Y||_F over the dictionary pairs.

    X holds source dictionary vectors as columns, Y the target ones; the
    optimum is W = U V^T from the SVD U S V^T of Y X^T. Dictionary rows whose
    token is missing on either side are dropped with a warning.
    """
    if source.dim != target.dim:
        raise AlignmentError(
            f"dimension mismatch: source E={source.dim}, target E={target.dim}"
        )
    xs, ys = [], []
    dropped = 0
    for src_tok, tgt_tok in dictionary.pairs:
        sv = source.lookup(src_tok)
        tv = target.lookup(tgt_tok)
        if sv is None or tv is None:
            dropped += 1
            continue
        xs.append(sv)
        ys.append(tv)
    if dropped:
        logger.warning(
            "dropped %d/%d dictionary pairs with out-of-vocabulary tokens",
            dropped,
            len(dictionary),
        )
    if not xs:
        raise AlignmentError("no usable dictionary pairs (all tokens out of vocabulary)")
    if len(xs) < source.dim:
        logger.warning(
            "dictionary has %d usable pairs, fewer than dim %d; alignment may be underdetermined",
            len(xs),
            source.dim,
        )
    x = np.array(xs, dtype=np.float64).T
    y = np.array(ys, dtype=np.float64).T
    u, _, vt = np.linalg.svd(y @ x.T)
    w = u @ vt
    return AlignmentMap(source_lang=source.lang, target_lang=target.lang, matrix=w)


def compose_via_pivot(a_to_pivot: AlignmentMap, b_to_pivot: AlignmentMap) -> AlignmentMap:
    """Compose two maps sharing a pivot target into a direct a -> b map.

    Going a -> pivot -> b uses the transpose (inverse) of the b -> pivot map,
    so the result is W_b^T W_a.
    """
    if a_to_pivot.target_lang != b_to_pivot.target_lang:
        raise AlignmentError(
            f"pivot mismatch: {a_to_pivot.target_lang!r} vs {b_to_pivot.target_lang!r}"
        )
    if a_to_pivot.dim != b_to_pivot.dim:
        raise AlignmentError(
            f"dimension mismatch: {a_to_pivot.dim} vs {b_to_pivot.dim}"
        )
    return AlignmentMap(
        source_lang=a_to_pivot.source_lang,
        target_lang=b_to_pivot.source_lang,
        matrix=b_to_pivot.matrix.T @ a_to_pivot.matrix,
    )


def apply_alignment(amap: AlignmentMap, table: EmbeddingTable) -> EmbeddingTable:
    """Map every row of the table into the target space; vocab is unchanged."""
    if amap.source_lang != table.lang:
        raise AlignmentError(
            f"map source {amap.source_lang!r} does not match table lang {table.lang!r}"
        )
    if amap.dim != table.dim:
        raise AlignmentError(f"dimension mismatch: map {amap.dim}, table {table.dim}")
    return EmbeddingTable(
        lang=amap.target_lang,
        dim=table.dim,
        vocab=dict(table.vocab),
        matrix=table.matrix @ amap.matrix.T,
    )


def save_alignment(path, amap: AlignmentMap) -> None:
    payload = {
        "source": amap.source_lang,
        "target": amap.target_lang,
        "dim": amap.dim,
        "rows": amap.matrix.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_alignment(path) -> AlignmentMap:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    try:
        return AlignmentMap(
            source_lang=payload["source"],
            target_lang=payload["target"],
            matrix=np.array(payload["rows"], dtype=np.float64),
        )
    except KeyError as exc:
        raise AlignmentError(f"{path}: missing field {exc}") from None


@dataclass(frozen=True)
class WordSpace:
    """All languages' vectors after alignment into one shared word space.

    Keys are the language a lookup arrives in; the stored tables hold rows
    already mapped into the shared (pivot) space.
    """

    pivot: str
    tables: dict[str, EmbeddingTable] = field(default_factory=dict)

    def __post_init__(self):
        dims = {t.dim for t in self.tables.values()}
        if len(dims) > 1:
            raise AlignmentError(f"inconsistent table dims in word space: {dims}")

    @property
    def dim(self) -> int:
        return next(iter(self.tables.values())).dim

    @property
    def languages(self) -> tuple[str, ...]:
        return tuple(sorted(self.tables))

    def lookup(self, lang: str, token: str) -> np.ndarray | None:
        table = self.tables.get(lang)
        if table is None:
            raise AlignmentError(
                f"language {lang!r} not loaded (have: {', '.join(self.languages)})"
            )
        return table.lookup(token)


def build_word_space(
    tables: dict[str, EmbeddingTable],
    maps: dict[str, AlignmentMap],
    pivot: str,
) -> WordSpace:
    """Align every non-pivot table into the pivot language's space.

    `maps` holds lang -> pivot alignments for every non-pivot language.
    """
    if pivot not in tables:
        raise AlignmentError(f"pivot language {pivot!r} missing from tables")
    aligned: dict[str, EmbeddingTable] = {}
    for lang, table in tables.items():
        if lang == pivot:
            aligned[lang] = table
            continue
        amap = maps.get(lang)
        if amap is None:
            raise AlignmentError(f"no alignment map for language {lang!r}")
        if amap.target_lang != pivot:
            raise AlignmentError(
                f"map for {lang!r} targets {amap.target_lang!r}, expected pivot {pivot!r}"
            )
        aligned[lang] = apply_alignment(amap, table)
    return WordSpace(pivot=pivot, tables=aligned)
