import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from xmodal.embeddings import EmbeddingTable, WordSpace


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def random_orthogonal(dim: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q * np.sign(np.diag(r))


def unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def make_table(lang: str, tokens, matrix) -> EmbeddingTable:
    matrix = np.asarray(matrix, dtype=np.float64)
    return EmbeddingTable(
        lang=lang,
        dim=matrix.shape[1],
        vocab={t: i for i, t in enumerate(tokens)},
        matrix=matrix,
    )


@pytest.fixture
def tiny_space(rng):
    """Single-language word space with 8 unit-norm words in 6 dimensions."""
    tokens = [f"t{i}" for i in range(8)]
    matrix = rng.standard_normal((8, 6))
    matrix /= np.linalg.norm(matrix, axis=1, keepdims=True)
    table = make_table("xx", tokens, matrix)
    return WordSpace(pivot="xx", tables={"xx": table})
