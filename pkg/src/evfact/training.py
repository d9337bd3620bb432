"""Training regimes, sampling schedules, and dev-based checkpoint selection.

One optimizer step per sentence: the scheduling unit is a sentence batch,
i.e. one sentence together with all of its annotated predicates from one
dataset. Five regimes control how batches from multiple datasets are
interleaved within an epoch:

* ``S``: a shuffle of the single dataset.
* ``G``: a shuffle of the concatenation, one shared regression head.
* ``MultiSimp``: the concatenation with one head per dataset.
* ``MultiBal``: smaller datasets are resampled with replacement up to the
  largest dataset's batch count, so every dataset contributes equally.
* ``MultiFoc``: the focus dataset fills exactly half of each epoch; the
  rest is split evenly across the remaining datasets.

All randomness flows from (seed, epoch), so a run replays exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .autodiff import AdamState, Tape, adam_step, backward
from .corpus import AnnotatedPredicate, Sentence
from .embeddings import EmbeddingTable, embed_sentence
from .errors import ConfigError, DataError, NumericError
from .evaluation import mae, pearson
from .models import (
    ModelBundle,
    load_checkpoint,
    predict_tokens,
    save_checkpoint,
    sentence_loss,
)

__all__ = [
    "REGIME_KINDS",
    "Regime",
    "TrainerConfig",
    "SentenceBatch",
    "Checkpoint",
    "DevScore",
    "TrainingData",
    "group_batches",
    "make_schedule",
    "train",
    "select_best",
    "apply_checkpoint",
    "predict_split",
]

REGIME_KINDS = ("S", "G", "MultiSimp", "MultiBal", "MultiFoc")

_KIND_ALIASES = {
    "s": "S",
    "g": "G",
    "multisimp": "MultiSimp",
    "multibal": "MultiBal",
    "multifoc": "MultiFoc",
}


@dataclass(frozen=True)
class Regime:
    kind: str
    focus: str | None = None
    include_uds_ih2: bool = False

    def __post_init__(self):
        if self.kind not in REGIME_KINDS:
            raise ConfigError(f"unknown regime kind {self.kind!r}")
        if (self.kind == "MultiFoc") != (self.focus is not None):
            raise ConfigError("a focus dataset is required exactly for MultiFoc")

    @classmethod
    def parse(cls, kind: str, focus: str | None = None,
              include_uds_ih2: bool = False) -> "Regime":
        canonical = _KIND_ALIASES.get(kind.strip().lower())
        if canonical is None:
            raise ConfigError(f"unknown regime {kind!r}")
        return cls(canonical, focus, include_uds_ih2)


@dataclass(frozen=True)
class TrainerConfig:
    epochs: int = 20
    learning_rate: float = 1e-3
    seed: int = 0
    batch_size: int = 1  # sentences per optimizer step

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.batch_size != 1:
            raise ConfigError("only single-sentence batches are supported")


@dataclass(frozen=True)
class SentenceBatch:
    """One sentence's annotated predicates within one dataset."""

    sentence_id: str
    predicates: tuple[AnnotatedPredicate, ...]


@dataclass(frozen=True)
class DevScore:
    pearson: float | None
    mae: float
    n: int


@dataclass
class Checkpoint:
    """Post-epoch parameter snapshot plus per-dataset dev metrics."""

    epoch: int
    dev: dict[str, DevScore]
    params: dict[str, np.ndarray] | None = None
    path: str | None = None


@dataclass
class TrainingData:
    """Everything the loop needs: corpus, records per split, embeddings."""

    sentences: Mapping[str, Sentence]
    train: Mapping[str, Sequence[AnnotatedPredicate]]
    dev: Mapping[str, Sequence[AnnotatedPredicate]]
    embeddings: EmbeddingTable
    feature_fn: object | None = None


def group_batches(records: Sequence[AnnotatedPredicate]) -> list[SentenceBatch]:
    """Group a dataset's predicates by sentence, keeping first-seen order."""
    grouped: dict[str, list[AnnotatedPredicate]] = {}
    for rec in records:
        grouped.setdefault(rec.sentence_id, []).append(rec)
    return [
        SentenceBatch(sid, tuple(sorted(preds, key=lambda p: p.token)))
        for sid, preds in grouped.items()
    ]


def _resample(rng, batches: list[SentenceBatch], quota: int) -> list[SentenceBatch]:
    if quota == len(batches):
        idx = rng.permutation(len(batches))
    else:
        idx = rng.integers(0, len(batches), size=quota)
    return [batches[i] for i in idx]


def make_schedule(
    regime: Regime,
    train_batches: Mapping[str, list[SentenceBatch]],
    epoch: int,
    seed: int,
) -> list[tuple[str, SentenceBatch]]:
    """Ordered (dataset, batch) pairs for one epoch; deterministic in (seed, epoch)."""
    names = sorted(train_batches)
    if not names or any(not train_batches[d] for d in names):
        raise ConfigError("make_schedule: every scheduled dataset needs training data")
    rng = np.random.default_rng([int(seed), int(epoch), 0x5EED])

    if regime.kind == "S":
        if len(names) != 1:
            raise ConfigError("regime S trains on exactly one dataset")
        pool = [(names[0], b) for b in train_batches[names[0]]]
    elif regime.kind in ("G", "MultiSimp"):
        if len(names) < 2:
            raise ConfigError(f"regime {regime.kind} needs at least two datasets")
        pool = [(d, b) for d in names for b in train_batches[d]]
    elif regime.kind == "MultiBal":
        if len(names) < 2:
            raise ConfigError("regime MultiBal needs at least two datasets")
        quota = max(len(train_batches[d]) for d in names)
        pool = []
        for d in names:
            pool.extend((d, b) for b in _resample(rng, train_batches[d], quota))
    else:  # MultiFoc
        if len(names) < 2:
            raise ConfigError("regime MultiFoc needs at least two datasets")
        if regime.focus not in train_batches:
            raise ConfigError(f"focus dataset {regime.focus!r} is not scheduled")
        others = [d for d in names if d != regime.focus]
        per_other = max(
            max(len(train_batches[d]) for d in others),
            math.ceil(len(train_batches[regime.focus]) / len(others)),
        )
        pool = [
            (regime.focus, b)
            for b in _resample(rng, train_batches[regime.focus], per_other * len(others))
        ]
        for d in others:
            pool.extend((d, b) for b in _resample(rng, train_batches[d], per_other))

    order = rng.permutation(len(pool))
    return [pool[i] for i in order]


# ---------------------------------------------------------------------------
# scoring and the epoch loop
# ---------------------------------------------------------------------------

def predict_split(
    bundle: ModelBundle,
    data: TrainingData,
    records: Sequence[AnnotatedPredicate],
    dataset: str,
) -> dict[tuple[str, int], float]:
    """Raw predictions keyed by (sentence id, token), one forward per sentence."""
    out: dict[tuple[str, int], float] = {}
    for batch in group_batches(records):
        sentence = data.sentences.get(batch.sentence_id)
        if sentence is None:
            raise DataError(f"unknown sentence id {batch.sentence_id!r}")
        tape = Tape()
        rows = embed_sentence(data.embeddings, sentence, tape, data.feature_fn)
        preds = predict_tokens(
            bundle, tape, rows, sentence, [p.token for p in batch.predicates], dataset
        )
        for p in batch.predicates:
            out[(batch.sentence_id, p.token)] = preds[p.token]
    return out


def _score_dev(bundle, data, dataset) -> DevScore | None:
    records = data.dev.get(dataset)
    if not records:
        return None
    preds_map = predict_split(bundle, data, records, dataset)
    preds = [preds_map[(r.sentence_id, r.token)] for r in records]
    golds = [r.label for r in records]
    return DevScore(pearson(preds, golds), mae(preds, golds), len(records))


def train(
    bundle: ModelBundle,
    regime: Regime,
    config: TrainerConfig,
    data: TrainingData,
    out_dir=None,
    keep_params: bool = True,
) -> list[Checkpoint]:
    """Run the epoch loop; snapshot and dev-score after every epoch.

    With ``out_dir`` set, each epoch's parameters are also written to
    ``epoch-NNN.npz`` inside it. A non-finite loss aborts the run with
    the epoch and sentence identified.
    """
    for dataset in data.train:
        bundle.head_for(dataset)  # fail fast on a missing head
    batches = {d: group_batches(r) for d, r in data.train.items()}
    adam = AdamState(lr=config.learning_rate)
    checkpoints: list[Checkpoint] = []

    for epoch in range(1, config.epochs + 1):
        for dataset, batch in make_schedule(regime, batches, epoch, config.seed):
            sentence = data.sentences.get(batch.sentence_id)
            if sentence is None:
                raise DataError(f"unknown sentence id {batch.sentence_id!r}")
            tape = Tape()
            rows = embed_sentence(data.embeddings, sentence, tape, data.feature_fn)
            loss = sentence_loss(
                bundle, tape, rows, sentence,
                [(p.token, p.label) for p in batch.predicates], dataset,
            )
            if not np.isfinite(loss.values).all():
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, sentence {batch.sentence_id!r}"
                )
            backward(tape, loss)
            adam_step(tape.trainable_leaves(), adam)

        dev_scores = {}
        for dataset in sorted(data.dev):
            score = _score_dev(bundle, data, dataset)
            if score is not None:
                dev_scores[dataset] = score
        checkpoint = Checkpoint(epoch=epoch, dev=dev_scores)
        if keep_params:
            checkpoint.params = bundle.snapshot()
        if out_dir is not None:
            path = str(out_dir) + f"/epoch-{epoch:03d}.npz"
            save_checkpoint(path, bundle, extra={"epoch": epoch})
            checkpoint.path = path
        checkpoints.append(checkpoint)
    return checkpoints


def select_best(checkpoints: Sequence[Checkpoint], dataset: str) -> Checkpoint:
    """The earliest checkpoint maximizing dev Pearson for ``dataset``."""
    scored = [c for c in checkpoints if dataset in c.dev]
    if not scored:
        raise ConfigError(f"dataset {dataset!r} was never scored on dev")
    defined = [c for c in scored if c.dev[dataset].pearson is not None]
    if not defined:
        raise ConfigError(f"dataset {dataset!r} has no defined dev Pearson")
    best = defined[0]
    for c in defined[1:]:
        if c.dev[dataset].pearson > best.dev[dataset].pearson:
            best = c
    return best


def apply_checkpoint(bundle: ModelBundle, checkpoint: Checkpoint) -> None:
    """Restore a snapshot into the bundle (from memory or from disk)."""
    if checkpoint.params is not None:
        bundle.load_values(checkpoint.params)
        return
    if checkpoint.path is None:
        raise ConfigError("checkpoint has neither in-memory parameters nor a path")
    saved, _ = load_checkpoint(checkpoint.path)
    bundle.load_values(saved.snapshot())
