"""Frozen pretrained word vectors with an out-of-vocabulary fallback.

Tables are loaded once from whitespace-separated text (``token v1 .. vD``
per line), lowercased at lookup time, and never updated: the stored
arrays are marked read-only and the per-token tensors handed to the
models are non-trainable tape leaves, so no gradient can reach them.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .autodiff import Tape, Tensor
from .errors import DataError

__all__ = ["EmbeddingTable", "load_table", "embed_token", "embed_sentence"]


class EmbeddingTable:
    """Lowercased token -> vector map plus one shared unknown-word vector."""

    def __init__(self, vectors: dict[str, np.ndarray], unk: np.ndarray, dim: int):
        self.dim = int(dim)
        unk = np.asarray(unk, dtype=np.float64)
        if unk.shape != (self.dim,):
            raise DataError(f"unk vector has shape {unk.shape}, expected ({self.dim},)")
        if np.any(np.abs(unk) > 1.0):
            raise DataError("unk vector entries must lie in [-1, 1]")
        self.unk = unk
        self.unk.setflags(write=False)
        self.vectors: dict[str, np.ndarray] = {}
        for token, vec in vectors.items():
            key = token.lower()
            if key in self.vectors:
                continue
            arr = np.asarray(vec, dtype=np.float64)
            if arr.shape != (self.dim,):
                raise DataError(
                    f"vector for {token!r} has shape {arr.shape}, expected ({self.dim},)"
                )
            arr.setflags(write=False)
            self.vectors[key] = arr

    def __len__(self):
        return len(self.vectors)

    def __contains__(self, token: str) -> bool:
        return token.lower() in self.vectors

    def lookup(self, token: str) -> np.ndarray:
        """Vector for ``token`` (uncased); the shared unk vector if absent."""
        return self.vectors.get(token.lower(), self.unk)

    @classmethod
    def random(cls, tokens: Iterable[str], dim: int, seed: int) -> "EmbeddingTable":
        """Uniform[-1,1] vectors for a fixed vocabulary (synthetic tasks)."""
        rng = np.random.default_rng(seed)
        vectors = {t.lower(): rng.uniform(-1.0, 1.0, dim) for t in sorted(set(tokens))}
        return cls(vectors, rng.uniform(-1.0, 1.0, dim), dim)


def load_table(path, dim: int = 300, seed: int = 0) -> EmbeddingTable:
    """Parse a text embedding file; duplicates keep their first occurrence.

    The unknown-word vector is sampled iid from Uniform[-1, 1] under
    ``seed``, so reloading with the same seed is deterministic.
    """
    vectors: dict[str, np.ndarray] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(" ")
            if len(parts) != dim + 1:
                raise DataError(
                    f"{path}:{lineno}: expected token plus {dim} floats, "
                    f"got {len(parts)} fields"
                )
            token = parts[0].lower()
            if token in vectors:
                continue
            try:
                vec = np.array(parts[1:], dtype=np.float64)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: unparseable float ({exc})") from None
            vectors[token] = vec
    unk = np.random.default_rng(seed).uniform(-1.0, 1.0, dim)
    return EmbeddingTable(vectors, unk, dim)


def embed_token(
    table: EmbeddingTable, token: str, features: np.ndarray | None = None
) -> np.ndarray:
    """Input vector for one token: embedding, plus features when given."""
    if not token:
        raise ValueError("embed_token: token must be non-empty")
    vec = table.lookup(token)
    if features is None:
        return vec
    return np.concatenate([vec, np.asarray(features, dtype=np.float64)])


FeatureFn = Callable[[str], np.ndarray]


def embed_sentence(
    table: EmbeddingTable,
    sentence,
    tape: Tape,
    feature_fn: FeatureFn | None = None,
) -> list[Tensor]:
    """Rows of the token-embedding matrix as non-trainable tape leaves.

    ``feature_fn`` maps a lemma to its lexical-feature vector; when set,
    each row is the embedding with the features concatenated.
    """
    tokens: Sequence[str] = sentence.tokens
    if len(tokens) == 0:
        raise DataError(f"embed_sentence: sentence {sentence.sent_id!r} has no tokens")
    rows = []
    for t, token in enumerate(tokens):
        feats = feature_fn(sentence.lemmas[t]) if feature_fn is not None else None
        vec = embed_token(table, token, feats)
        rows.append(tape.leaf(vec, trainable=False, name=f"emb[{t}]"))
    return rows
