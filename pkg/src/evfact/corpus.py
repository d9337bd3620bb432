"""Treebank and annotation ingestion.

Covers four concerns: parsing CoNLL-U treebanks into immutable
:class:`Sentence` objects, exposing chain and tree neighborhoods over
them, turning raw crowd responses into scalar factuality labels on the
[-3, 3] scale, and a per-annotator agreement filter that drops outlier
workers before aggregation.

Everything here is immutable after load; concurrent read access is safe.
"""

from __future__ import annotations

import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .errors import DataError

__all__ = [
    "ROOT",
    "DATASETS",
    "SPLITS",
    "Sentence",
    "AnnotatedPredicate",
    "RawAnnotation",
    "parse_conllu",
    "load_conllu",
    "serialize_sentence",
    "children",
    "parents",
    "uds_label",
    "aggregate_predicate",
    "aggregate_records",
    "ridit_scores",
    "filter_annotators",
    "load_factuality_records",
    "load_raw_annotations",
]

log = logging.getLogger(__name__)

#: head index marking a root token
ROOT = -1

#: the four factuality datasets on the unified scale
DATASETS = ("FactBank", "UW", "MEANTIME", "UDS-IH2")

SPLITS = ("train", "dev", "test")


@dataclass(frozen=True)
class Sentence:
    """One dependency-parsed sentence; parallel per-token tuples.

    ``heads`` are 0-based with :data:`ROOT` marking root tokens. The
    constructor enforces well-formedness: equal lengths, in-range heads,
    no self-heads, at least one root, and acyclicity.
    """

    sent_id: str
    tokens: tuple[str, ...]
    lemmas: tuple[str, ...]
    upos: tuple[str, ...]
    heads: tuple[int, ...]
    deprels: tuple[str, ...]

    def __post_init__(self):
        n = len(self.tokens)
        if n < 1:
            raise DataError(f"sentence {self.sent_id!r}: empty sentence")
        for name in ("lemmas", "upos", "heads", "deprels"):
            if len(getattr(self, name)) != n:
                raise DataError(
                    f"sentence {self.sent_id!r}: {name} has length "
                    f"{len(getattr(self, name))}, expected {n}"
                )
        roots = 0
        for t, head in enumerate(self.heads):
            if head == ROOT:
                roots += 1
                continue
            if not 0 <= head < n:
                raise DataError(
                    f"sentence {self.sent_id!r}: head {head} of token {t} out of range"
                )
            if head == t:
                raise DataError(f"sentence {self.sent_id!r}: token {t} is its own head")
        if roots == 0:
            raise DataError(f"sentence {self.sent_id!r}: no root token")
        for t in range(n):
            seen = 0
            cur = t
            while self.heads[cur] != ROOT:
                cur = self.heads[cur]
                seen += 1
                if seen > n:
                    raise DataError(f"sentence {self.sent_id!r}: cyclic heads at token {t}")

    def __len__(self):
        return len(self.tokens)


def children(sentence: Sentence, t: int) -> list[int]:
    """Indices whose head is ``t``, ascending."""
    if not 0 <= t < len(sentence):
        raise IndexError(f"token {t} out of range for sentence {sentence.sent_id!r}")
    return [k for k, head in enumerate(sentence.heads) if head == t]


def parents(sentence: Sentence, t: int) -> list[int]:
    """The head of ``t`` as a (possibly empty) ascending list."""
    if not 0 <= t < len(sentence):
        raise IndexError(f"token {t} out of range for sentence {sentence.sent_id!r}")
    head = sentence.heads[t]
    return [] if head == ROOT else [head]


# ---------------------------------------------------------------------------
# CoNLL-U
# ---------------------------------------------------------------------------

def parse_conllu(lines: Iterable[str]) -> list[Sentence]:
    """Parse CoNLL-U text into sentences.

    Multiword-token ranges (``1-2``) and empty nodes (``1.1``) are
    skipped; ID and HEAD become 0-based with roots marked. Errors carry
    the offending line number.
    """
    sentences: list[Sentence] = []
    rows: list[tuple[int, list[str]]] = []
    sent_id = None
    start_line = None

    def flush(end_line):
        nonlocal rows, sent_id, start_line
        if rows:
            sentences.append(_build_sentence(rows, sent_id, len(sentences)))
        rows = []
        sent_id = None
        start_line = None

    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            flush(lineno)
            continue
        if line.startswith("#"):
            comment = line[1:].strip()
            if comment.startswith("sent_id"):
                _, _, value = comment.partition("=")
                sent_id = value.strip()
            continue
        if start_line is None:
            start_line = lineno
        cols = line.split("\t")
        if len(cols) != 10:
            raise DataError(f"line {lineno}: expected 10 tab-separated columns, got {len(cols)}")
        ident = cols[0]
        if "-" in ident or "." in ident:
            continue  # multiword range or empty node
        rows.append((lineno, cols))
    flush(None)
    return sentences


def _build_sentence(rows, sent_id, index) -> Sentence:
    sid = sent_id if sent_id is not None else f"sentence-{index}"
    tokens, lemmas, upos, heads, deprels = [], [], [], [], []
    for expected, (lineno, cols) in enumerate(rows, start=1):
        try:
            ident = int(cols[0])
        except ValueError:
            raise DataError(f"line {lineno}: non-integer token id {cols[0]!r}") from None
        if ident != expected:
            raise DataError(
                f"line {lineno}: token ids not consecutive (got {ident}, expected {expected})"
            )
        try:
            head = int(cols[6])
        except ValueError:
            raise DataError(f"line {lineno}: non-integer head {cols[6]!r}") from None
        if not 0 <= head <= len(rows):
            raise DataError(f"line {lineno}: head {head} out of range")
        tokens.append(cols[1])
        lemmas.append(cols[2])
        upos.append(cols[3])
        heads.append(ROOT if head == 0 else head - 1)
        deprels.append(cols[7])
    try:
        return Sentence(
            sent_id=sid,
            tokens=tuple(tokens),
            lemmas=tuple(lemmas),
            upos=tuple(upos),
            heads=tuple(heads),
            deprels=tuple(deprels),
        )
    except DataError as exc:
        raise DataError(f"near line {rows[0][0]}: {exc}") from None


def load_conllu(path) -> dict[str, Sentence]:
    """Load a treebank file into a sent_id -> Sentence map."""
    with open(path, "r", encoding="utf-8") as fh:
        parsed = parse_conllu(fh)
    out: dict[str, Sentence] = {}
    for sent in parsed:
        if sent.sent_id in out:
            raise DataError(f"{path}: duplicate sentence id {sent.sent_id!r}")
        out[sent.sent_id] = sent
    return out


def serialize_sentence(sentence: Sentence) -> str:
    """Emit the retained CoNLL-U columns (others become ``_``)."""
    lines = [f"# sent_id = {sentence.sent_id}"]
    for t in range(len(sentence)):
        head = sentence.heads[t]
        lines.append(
            "\t".join(
                [
                    str(t + 1),
                    sentence.tokens[t],
                    sentence.lemmas[t],
                    sentence.upos[t],
                    "_",
                    "_",
                    str(0 if head == ROOT else head + 1),
                    sentence.deprels[t],
                    "_",
                    "_",
                ]
            )
        )
    return "\n".join(lines) + "\n\n"


# ---------------------------------------------------------------------------
# factuality labels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AnnotatedPredicate:
    """A token-level factuality judgment on the [-3, 3] scale."""

    sentence_id: str
    token: int
    label: float
    dataset: str
    split: str

    def __post_init__(self):
        if not -3.0 <= self.label <= 3.0:
            raise DataError(
                f"label {self.label} outside [-3, 3] "
                f"({self.dataset}/{self.split} {self.sentence_id}:{self.token})"
            )
        if self.token < 0:
            raise DataError(f"negative token index {self.token}")


@dataclass(frozen=True)
class RawAnnotation:
    """One crowd response to the four-question protocol.

    ``happened`` and ``confidence`` are present exactly when the worker
    judged the sentence understandable and the word a predicate.
    """

    worker: str
    sentence_id: str
    token: int
    understandable: bool
    predicate: bool
    happened: bool | None = None
    confidence: int | None = None

    def __post_init__(self):
        usable = self.understandable and self.predicate
        present = self.happened is not None and self.confidence is not None
        if usable != present:
            raise DataError(
                f"annotation by {self.worker!r} on {self.sentence_id}:{self.token}: "
                "happened/confidence must be present iff understandable and predicate"
            )
        if self.confidence is not None and self.confidence not in (0, 1, 2, 3, 4):
            raise DataError(f"confidence {self.confidence} not in 0..4")

    @property
    def usable(self) -> bool:
        return self.understandable and self.predicate


def uds_label(happened: bool, mean_confidence: float) -> float:
    """Map a happened judgment plus 0-4 confidence onto [-3, 3].

    Three quarters of the confidence, signed by whether the event
    happened.
    """
    if not 0.0 <= mean_confidence <= 4.0:
        raise ValueError(f"mean confidence {mean_confidence} outside [0, 4]")
    value = 0.75 * mean_confidence
    return value if happened else -value


def aggregate_predicate(
    annotations: Sequence[RawAnnotation],
    dataset: str = "UDS-IH2",
    split: str = "train",
) -> AnnotatedPredicate:
    """Collapse one predicate's responses into a single scalar label.

    Each usable response contributes its signed value (plus or minus
    three quarters of its confidence) and the label is the arithmetic
    mean, clipped to [-3, 3]. Signing before averaging matches the
    mean-confidence rule whenever annotators agree on ``happened`` and
    degrades gracefully when they do not.
    """
    usable = [a for a in annotations if a.usable]
    if not usable:
        raise ValueError("no usable annotations for this predicate")
    key = (usable[0].sentence_id, usable[0].token)
    for a in usable:
        if (a.sentence_id, a.token) != key:
            raise ValueError("annotations span multiple predicates")
    mean = sum(uds_label(a.happened, float(a.confidence)) for a in usable) / len(usable)
    label = min(3.0, max(-3.0, mean))
    return AnnotatedPredicate(key[0], key[1], label, dataset, split)


def ridit_scores(ratings: Sequence[int]) -> dict[int, float]:
    """Rank-based rescaling of one annotator's ratings into (0, 1)."""
    if not ratings:
        raise ValueError("ridit_scores: need at least one rating")
    n = len(ratings)
    return {
        r: (sum(1 for x in ratings if x < r) + 0.5 * ratings.count(r)) / n
        for r in set(ratings)
    }


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def _zscores(stats: Mapping[str, float]) -> dict[str, float]:
    values = list(stats.values())
    mean = sum(values) / len(values)
    var = sum((v - mean) ** 2 for v in values) / len(values)
    sd = math.sqrt(var)
    if sd == 0.0:
        return {w: 0.0 for w in stats}
    return {w: (v - mean) / sd for w, v in stats.items()}


def filter_annotators(annotations: Sequence[RawAnnotation]) -> set[str]:
    """Workers retained after the agreement screen.

    Two per-worker statistics over shared items: mean response equality
    on the happened question, and (sign-flipped) mean absolute difference
    of logit-transformed ridit confidence scores. Each is z-scored across
    workers; a worker is dropped when either z falls below -2. Workers
    with no overlapping items are retained.
    """
    all_workers = {a.worker for a in annotations}
    by_item: dict[tuple[str, int], list[RawAnnotation]] = defaultdict(list)
    for a in annotations:
        if a.usable:
            by_item[(a.sentence_id, a.token)].append(a)

    ratings_by_worker: dict[str, list[int]] = defaultdict(list)
    for a in annotations:
        if a.usable:
            ratings_by_worker[a.worker].append(a.confidence)
    ridit_by_worker = {w: ridit_scores(r) for w, r in ratings_by_worker.items()}

    happened_obs: dict[str, list[float]] = defaultdict(list)
    conf_obs: dict[str, list[float]] = defaultdict(list)
    for item_annotations in by_item.values():
        for i, a in enumerate(item_annotations):
            for b in item_annotations[i + 1 :]:
                if a.worker == b.worker:
                    continue
                eq = 1.0 if a.happened == b.happened else 0.0
                happened_obs[a.worker].append(eq)
                happened_obs[b.worker].append(eq)
                diff = abs(
                    _logit(ridit_by_worker[a.worker][a.confidence])
                    - _logit(ridit_by_worker[b.worker][b.confidence])
                )
                conf_obs[a.worker].append(diff)
                conf_obs[b.worker].append(diff)

    dropped: set[str] = set()
    if happened_obs:
        stats = {w: sum(v) / len(v) for w, v in happened_obs.items()}
        dropped |= {w for w, z in _zscores(stats).items() if z < -2.0}
    if conf_obs:
        stats = {w: -sum(v) / len(v) for w, v in conf_obs.items()}
        dropped |= {w for w, z in _zscores(stats).items() if z < -2.0}
    return all_workers - dropped


def aggregate_records(
    annotations: Sequence[RawAnnotation],
    dataset: str = "UDS-IH2",
    split: str = "train",
    split_map: Mapping[str, str] | None = None,
    apply_filter: bool = True,
) -> list[AnnotatedPredicate]:
    """Filter annotators, then aggregate every predicate with usable data.

    Predicates left without usable annotations are dropped and logged.
    ``split_map`` assigns splits by sentence id; unmapped sentences fall
    back to ``split``.
    """
    retained = filter_annotators(annotations) if apply_filter else None
    groups: dict[tuple[str, int], list[RawAnnotation]] = {}
    for a in annotations:
        if retained is not None and a.worker not in retained:
            continue
        groups.setdefault((a.sentence_id, a.token), []).append(a)

    records = []
    for (sid, token), group in groups.items():
        target_split = split_map.get(sid, split) if split_map else split
        try:
            records.append(aggregate_predicate(group, dataset, target_split))
        except ValueError as exc:
            log.warning("dropping predicate %s:%d: %s", sid, token, exc)
    return records


# ---------------------------------------------------------------------------
# record files
# ---------------------------------------------------------------------------

def load_factuality_records(
    path, sentences: Mapping[str, Sentence] | None = None
) -> dict[tuple[str, str], list[AnnotatedPredicate]]:
    """Load JSON-lines factuality records grouped by (dataset, split).

    When ``sentences`` is given, sentence ids are resolved against it and
    token indices are bounds-checked.
    """
    out: dict[tuple[str, str], list[AnnotatedPredicate]] = defaultdict(list)
    count = 0
    with open(path, "r", encoding="utf-8") as fh:
        for recno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                rec = AnnotatedPredicate(
                    sentence_id=str(obj["sentence_id"]),
                    token=int(obj["token"]),
                    label=float(obj["label"]),
                    dataset=str(obj["dataset"]),
                    split=str(obj["split"]),
                )
            except (KeyError, TypeError, ValueError, json.JSONDecodeError, DataError) as exc:
                raise DataError(f"{path}: record {recno}: {exc}") from None
            if sentences is not None:
                sent = sentences.get(rec.sentence_id)
                if sent is None:
                    raise DataError(
                        f"{path}: record {recno}: unknown sentence id {rec.sentence_id!r}"
                    )
                if rec.token >= len(sent):
                    raise DataError(
                        f"{path}: record {recno}: token {rec.token} out of range "
                        f"for sentence {rec.sentence_id!r} (length {len(sent)})"
                    )
            out[(rec.dataset, rec.split)].append(rec)
            count += 1
    if count == 0:
        log.warning("%s: no factuality records found", path)
    return dict(out)


def load_raw_annotations(path) -> list[RawAnnotation]:
    """Load JSON-lines raw protocol responses."""
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for recno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                out.append(
                    RawAnnotation(
                        worker=str(obj["worker"]),
                        sentence_id=str(obj["sentence_id"]),
                        token=int(obj["token"]),
                        understandable=bool(obj["understandable"]),
                        predicate=bool(obj["predicate"]),
                        happened=obj.get("happened"),
                        confidence=obj.get("confidence"),
                    )
                )
            except (KeyError, TypeError, ValueError, json.JSONDecodeError, DataError) as exc:
                raise DataError(f"{path}: record {recno}: {exc}") from None
    return out
