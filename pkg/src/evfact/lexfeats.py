"""Per-token lexical features for clause-embedding verbs.

Two sources: a curated lexicon of implication signatures (one indicator
per signature type), and tense-agreement scores mined from raw text by
matching ``I <verb form> to <gap> <time phrase>`` with a one-to-three
token gap. A verb form in the past or future tense agrees with the time
phrase when their tenses coincide; present-progressive forms fill the
verb slot but are left out of the ratio, which is only defined against
past or future time phrases.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Mapping

import numpy as np

from .errors import ConfigError, DataError

__all__ = [
    "PAST_PHRASES",
    "FUTURE_PHRASES",
    "FEATURE_MODES",
    "SignatureLexicon",
    "ConjugationTable",
    "TenseAgreementTable",
    "mine_tense_agreement",
    "token_features",
    "feature_dim",
    "make_feature_fn",
]

log = logging.getLogger(__name__)

PAST_PHRASES = ("earlier today", "yesterday", "last week", "last month", "last year")
FUTURE_PHRASES = ("later today", "tomorrow", "next week", "next month", "next year")

FEATURE_MODES = ("none", "sign", "mine", "both")

_SIGNATURE_RE = re.compile(r"^[+\-o]\|[+\-o]$")


def _stock_path(name: str):
    return resources.files("evfact").joinpath("data").joinpath(name)


@dataclass(frozen=True)
class SignatureLexicon:
    """Lemma -> implication signature, e.g. ``+|-`` for manage-type verbs.

    The left side is the complement implication under positive matrix
    polarity, the right side under negation; ``o`` means neither. The
    distinct signatures present define the indicator dimension.
    """

    entries: Mapping[str, str]
    signatures: tuple[str, ...]

    @classmethod
    def from_entries(cls, entries: Mapping[str, str]) -> "SignatureLexicon":
        for lemma, sig in entries.items():
            if not _SIGNATURE_RE.match(sig):
                raise DataError(f"bad signature {sig!r} for lemma {lemma!r}")
        return cls(dict(entries), tuple(sorted(set(entries.values()))))

    @classmethod
    def load(cls, path) -> "SignatureLexicon":
        entries: dict[str, str] = {}
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise DataError(f"{path}:{lineno}: expected lemma<TAB>signature")
                lemma, sig = parts[0].strip().lower(), parts[1].strip()
                if not _SIGNATURE_RE.match(sig):
                    raise DataError(f"{path}:{lineno}: bad signature {sig!r}")
                entries[lemma] = sig
        return cls.from_entries(entries)

    @classmethod
    def stock(cls) -> "SignatureLexicon":
        with resources.as_file(_stock_path("signatures.tsv")) as p:
            return cls.load(p)

    def signature_vector(self, lemma: str) -> np.ndarray:
        """One-hot over the signature set; all zeros for unlisted lemmas."""
        vec = np.zeros(len(self.signatures))
        sig = self.entries.get(lemma.lower())
        if sig is not None:
            vec[self.signatures.index(sig)] = 1.0
        return vec


@dataclass(frozen=True)
class ConjugationTable:
    """First-person-singular forms per lemma: past, present progressive, future."""

    forms: Mapping[str, tuple[str, str, str]]

    @classmethod
    def load(cls, path) -> "ConjugationTable":
        forms: dict[str, tuple[str, str, str]] = {}
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) != 4 or not all(p.strip() for p in parts):
                    raise DataError(
                        f"{path}:{lineno}: expected lemma<TAB>past<TAB>presprog<TAB>future"
                    )
                lemma = parts[0].strip().lower()
                forms[lemma] = tuple(p.strip().lower() for p in parts[1:])
        return cls(forms)

    @classmethod
    def stock(cls) -> "ConjugationTable":
        with resources.as_file(_stock_path("conjugations.tsv")) as p:
            return cls.load(p)


class TenseAgreementTable:
    """Per-verb agreement counters; score = agreements / decidable matches.

    Verbs with fewer decidable matches than ``min_count`` carry no score.
    Counters merge by summation, so sharded mining is exact.
    """

    def __init__(self, min_count: int = 10):
        self.min_count = min_count
        self.agree: dict[str, int] = {}
        self.decidable: dict[str, int] = {}
        self.progressive: dict[str, int] = {}

    def record(self, lemma: str, decidable: bool, agreed: bool) -> None:
        if decidable:
            self.decidable[lemma] = self.decidable.get(lemma, 0) + 1
            if agreed:
                self.agree[lemma] = self.agree.get(lemma, 0) + 1
        else:
            self.progressive[lemma] = self.progressive.get(lemma, 0) + 1

    def score(self, lemma: str) -> float | None:
        n = self.decidable.get(lemma.lower(), 0)
        if n < self.min_count:
            return None
        return self.agree.get(lemma.lower(), 0) / n

    def scores(self) -> dict[str, float]:
        return {
            lemma: self.agree.get(lemma, 0) / n
            for lemma, n in sorted(self.decidable.items())
            if n >= self.min_count
        }

    def merge(self, other: "TenseAgreementTable") -> "TenseAgreementTable":
        merged = TenseAgreementTable(self.min_count)
        for src in (self, other):
            for field in ("agree", "decidable", "progressive"):
                dst = getattr(merged, field)
                for lemma, n in getattr(src, field).items():
                    dst[lemma] = dst.get(lemma, 0) + n
        return merged

    def save(self, path) -> None:
        """Write ``lemma<TAB>score<TAB>matches`` for every scored verb."""
        with open(path, "w", encoding="utf-8") as fh:
            for lemma, score in self.scores().items():
                fh.write(f"{lemma}\t{score:.6f}\t{self.decidable[lemma]}\n")

    @classmethod
    def load(cls, path, min_count: int = 10) -> "TenseAgreementTable":
        table = cls(min_count)
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise DataError(f"{path}:{lineno}: expected lemma<TAB>score<TAB>matches")
                try:
                    lemma, score, matches = parts[0], float(parts[1]), int(parts[2])
                except ValueError as exc:
                    raise DataError(f"{path}:{lineno}: {exc}") from None
                table.decidable[lemma] = matches
                table.agree[lemma] = round(score * matches)
        return table


# ---------------------------------------------------------------------------
# mining
# ---------------------------------------------------------------------------

_TRAILING_PUNCT = '.!?,;:"\')'


def _tokenize(line: str) -> list[str]:
    line = line.strip().lower()
    while line and line[-1] in _TRAILING_PUNCT:
        line = line[:-1]
    return line.split()


def _form_index(conjugations: ConjugationTable):
    """first token -> [(form tokens, lemma, tense)], longest forms first."""
    tenses = ("past", "progressive", "future")
    index: dict[str, list[tuple[tuple[str, ...], str, str]]] = {}
    for lemma, forms in conjugations.forms.items():
        for form, tense in zip(forms, tenses):
            toks = tuple(form.split())
            index.setdefault(toks[0], []).append((toks, lemma, tense))
    for options in index.values():
        options.sort(key=lambda item: -len(item[0]))
    return index


def _phrase_index(past: Iterable[str], future: Iterable[str]):
    phrases = [(tuple(p.lower().split()), "past") for p in past]
    phrases += [(tuple(p.lower().split()), "future") for p in future]
    index: dict[str, list[tuple[tuple[str, ...], str]]] = {}
    for toks, tense in phrases:
        index.setdefault(toks[0], []).append((toks, tense))
    for options in index.values():
        options.sort(key=lambda item: -len(item[0]))
    return index


def mine_tense_agreement(
    lines: Iterable[str],
    conjugations: ConjugationTable,
    past_phrases: Iterable[str] = PAST_PHRASES,
    future_phrases: Iterable[str] = FUTURE_PHRASES,
    min_count: int = 10,
) -> TenseAgreementTable:
    """Scan raw sentences for ``I <form> to <1-3 tokens> <time phrase>``.

    Case-insensitive over whitespace tokens. Line order does not affect
    the resulting counts.
    """
    forms = _form_index(conjugations)
    phrases = _phrase_index(past_phrases, future_phrases)
    table = TenseAgreementTable(min_count)
    saw_any = False

    for line in lines:
        saw_any = True
        toks = _tokenize(line)
        for i, tok in enumerate(toks):
            if tok != "i":
                continue
            for form_toks, lemma, tense in forms.get(toks[i + 1] if i + 1 < len(toks) else "", ()):
                end = i + 1 + len(form_toks)
                if tuple(toks[i + 1 : end]) != form_toks:
                    continue
                if end >= len(toks) or toks[end] != "to":
                    continue
                match = _match_time_phrase(toks, end + 1, phrases)
                if match is None:
                    continue
                phrase_tense = match
                if tense == "progressive":
                    table.record(lemma, decidable=False, agreed=False)
                else:
                    table.record(lemma, decidable=True, agreed=tense == phrase_tense)
                break
    if not saw_any:
        log.warning("mine_tense_agreement: empty corpus, returning empty table")
    return table


def _match_time_phrase(toks, start, phrases) -> str | None:
    # the wildcard gap spans one to three tokens
    for gap in (1, 2, 3):
        pos = start + gap
        if pos >= len(toks):
            break
        for phrase_toks, tense in phrases.get(toks[pos], ()):
            if tuple(toks[pos : pos + len(phrase_toks)]) == phrase_toks:
                return tense
    return None


# ---------------------------------------------------------------------------
# feature vectors
# ---------------------------------------------------------------------------

def feature_dim(lexicon: SignatureLexicon | None, mode: str) -> int:
    if mode not in FEATURE_MODES:
        raise ConfigError(f"unknown feature mode {mode!r}")
    dim = 0
    if mode in ("sign", "both"):
        if lexicon is None:
            raise ConfigError(f"feature mode {mode!r} requires a signature lexicon")
        dim += len(lexicon.signatures)
    if mode in ("mine", "both"):
        dim += 1
    return dim


def token_features(
    lemma: str,
    lexicon: SignatureLexicon | None,
    table: TenseAgreementTable | None,
    mode: str,
) -> np.ndarray:
    """Feature vector for one lemma; width is fixed by (lexicon, mode)."""
    if mode not in FEATURE_MODES:
        raise ConfigError(f"unknown feature mode {mode!r}")
    parts = []
    if mode in ("sign", "both"):
        if lexicon is None:
            raise ConfigError(f"feature mode {mode!r} requires a signature lexicon")
        parts.append(lexicon.signature_vector(lemma))
    if mode in ("mine", "both"):
        score = table.score(lemma) if table is not None else None
        parts.append(np.array([0.0 if score is None else score]))
    if not parts:
        return np.zeros(0)
    return np.concatenate(parts)


def make_feature_fn(lexicon, table, mode: str):
    """Lemma -> feature vector closure for the embedding layer; None for mode 'none'."""
    if mode == "none":
        return None
    feature_dim(lexicon, mode)  # validate early
    return lambda lemma: token_features(lemma, lexicon, table, mode)
