"""Synthetic negation-parity task for end-to-end learning checks.

Template sentences of the form ``<det> <noun> <verb> <det> <noun>`` where
each determiner slot is filled with "some" or "no". The annotated
predicate is the verb; its gold label is +2.25 when the number of "no"
determiners is even and -2.25 when it is odd, so a model must combine
both argument positions to score well. Parses are gold by construction:
the verb is the root, both nouns attach to it, and each determiner
attaches to its noun.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import ROOT, AnnotatedPredicate, Sentence
from .embeddings import EmbeddingTable

__all__ = ["ParityData", "negation_parity_dataset", "POSITIVE_LABEL", "NEGATIVE_LABEL"]

POSITIVE_LABEL = 2.25
NEGATIVE_LABEL = -2.25

DETERMINERS = ("some", "no")
SUBJECTS = ("girl", "boy", "dog", "cat", "student", "teacher", "chef", "farmer")
OBJECTS = ("dessert", "apple", "book", "song", "cake", "letter", "movie", "garden")
VERBS = ("ate", "saw", "found", "wrote", "took", "bought", "praised", "painted")


@dataclass
class ParityData:
    sentences: dict[str, Sentence]
    train: dict[str, list[AnnotatedPredicate]]
    dev: dict[str, list[AnnotatedPredicate]]
    embeddings: EmbeddingTable


def _make_sentence(sid: str, det1: str, subj: str, verb: str, det2: str, obj: str) -> Sentence:
    return Sentence(
        sent_id=sid,
        tokens=(det1, subj, verb, det2, obj),
        lemmas=(det1, subj, verb, det2, obj),
        upos=("DET", "NOUN", "VERB", "DET", "NOUN"),
        heads=(1, 2, ROOT, 4, 2),
        deprels=("det", "nsubj", "root", "det", "dobj"),
    )


def negation_parity_dataset(
    n_train: int = 2000,
    n_dev: int = 500,
    seed: int = 0,
    embedding_dim: int = 50,
    dataset: str = "parity",
) -> ParityData:
    """Sample a train/dev corpus plus random embeddings for its vocabulary."""
    rng = np.random.default_rng(seed)
    sentences: dict[str, Sentence] = {}
    splits = {"train": [], "dev": []}
    for split, count in (("train", n_train), ("dev", n_dev)):
        for i in range(count):
            det1, det2 = rng.choice(DETERMINERS, size=2)
            subj = rng.choice(SUBJECTS)
            obj = rng.choice(OBJECTS)
            verb = rng.choice(VERBS)
            sid = f"parity-{split}-{i}"
            sentences[sid] = _make_sentence(sid, det1, subj, verb, det2, obj)
            n_no = (det1 == "no") + (det2 == "no")
            label = POSITIVE_LABEL if n_no % 2 == 0 else NEGATIVE_LABEL
            splits[split].append(AnnotatedPredicate(sid, 2, label, dataset, split))
    vocab = set(DETERMINERS) | set(SUBJECTS) | set(OBJECTS) | set(VERBS)
    table = EmbeddingTable.random(vocab, embedding_dim, seed)
    return ParityData(
        sentences=sentences,
        train={dataset: splits["train"]},
        dev={dataset: splits["dev"]},
        embeddings=table,
    )
