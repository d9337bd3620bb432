"""Metrics and analysis breakdowns over factuality predictions.

Mean absolute error and sample Pearson correlation are the two headline
numbers; Pearson is reported as undefined (never as 0) when either side
has no variance, which is what a constant baseline produces. The
breakdowns mirror the standard analyses: grouping by modal auxiliary and
negation, by the annotated token's governing dependency relation, by the
infinitival-taking verb governing an open clausal complement, and a
worst-errors listing.

Predictions are passed as a ``(sentence_id, token) -> float`` mapping.
Everything here is a pure function over immutable inputs.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .corpus import AnnotatedPredicate, Sentence, children

__all__ = [
    "mae",
    "pearson",
    "EvalReport",
    "constant_baseline",
    "breakdown_modal_negation",
    "breakdown_relation",
    "top_errors",
    "xcomp_verb_means",
    "MODAL_FORMS",
    "INFINITIVAL_VERBS",
    "render_table",
    "rows_to_csv",
]

#: auxiliary surface forms treated as modals ("ca" and "'ll" come from
#: contracted "can't" / "will" and are reported as their own groups)
MODAL_FORMS = ("may", "would", "can", "could", "might", "should", "will", "'ll", "ca")

AUX_RELATIONS = frozenset({"aux", "auxpass", "aux:pass"})
NEGATION_RELATIONS = frozenset({"neg"})
NEGATION_ADVERBS = frozenset({"not", "n't", "never"})

#: the fifteen infinitival-complement-taking verbs tracked in the analyses
INFINITIVAL_VERBS = (
    "agree", "bother", "dare", "decide", "forget", "get", "happen", "hope",
    "intend", "manage", "plan", "promise", "try", "venture", "want",
)

PredMap = Mapping[tuple[str, int], float]


def mae(preds: Sequence[float], golds: Sequence[float]) -> float:
    if len(preds) != len(golds):
        raise ValueError(f"mae: length mismatch {len(preds)} vs {len(golds)}")
    if not preds:
        raise ValueError("mae: empty inputs")
    return sum(abs(p - g) for p, g in zip(preds, golds)) / len(preds)


def pearson(preds: Sequence[float], golds: Sequence[float]) -> float | None:
    """Sample correlation; None when either side has zero variance."""
    if len(preds) != len(golds):
        raise ValueError(f"pearson: length mismatch {len(preds)} vs {len(golds)}")
    if not preds:
        raise ValueError("pearson: empty inputs")
    n = len(preds)
    mp = sum(preds) / n
    mg = sum(golds) / n
    cov = sum((p - mp) * (g - mg) for p, g in zip(preds, golds))
    vp = sum((p - mp) ** 2 for p in preds)
    vg = sum((g - mg) ** 2 for g in golds)
    if vp == 0.0 or vg == 0.0:
        return None
    return cov / math.sqrt(vp * vg)


@dataclass
class EvalReport:
    dataset: str
    split: str
    mae: float
    pearson: float | None
    n: int
    breakdowns: dict = field(default_factory=dict)
    top_errors: list = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "split": self.split,
            "mae": self.mae,
            "pearson": self.pearson,  # null when undefined
            "pearson_defined": self.pearson is not None,
            "n": self.n,
            "breakdowns": self.breakdowns,
            "top_errors": self.top_errors,
        }

    def summary_line(self) -> str:
        r = "NAN" if self.pearson is None else f"{self.pearson:.3f}"
        return (
            f"{self.dataset:<10} {self.split:<6} n={self.n:<6} "
            f"MAE={self.mae:.3f} r={r}"
        )


def score_records(
    records: Sequence[AnnotatedPredicate],
    preds: PredMap,
    dataset: str,
    split: str,
) -> EvalReport:
    """MAE and Pearson of ``preds`` against the records' gold labels."""
    pred_list = [preds[(r.sentence_id, r.token)] for r in records]
    gold_list = [r.label for r in records]
    return EvalReport(
        dataset=dataset,
        split=split,
        mae=mae(pred_list, gold_list),
        pearson=pearson(pred_list, gold_list),
        n=len(records),
    )


def constant_baseline(
    records: Sequence[AnnotatedPredicate],
    value: float = 3.0,
    dataset: str = "",
    split: str = "",
) -> EvalReport:
    """Report for the constant predictor (Pearson undefined by construction)."""
    preds = {(r.sentence_id, r.token): value for r in records}
    return score_records(records, preds, dataset, split)


# ---------------------------------------------------------------------------
# breakdowns
# ---------------------------------------------------------------------------

def _modal_of(sentence: Sentence, t: int) -> str:
    for k in children(sentence, t):
        if sentence.deprels[k] in AUX_RELATIONS:
            form = sentence.tokens[k].lower()
            if form in MODAL_FORMS:
                return form
    return "none"


def _negated(sentence: Sentence, t: int) -> bool:
    for k in children(sentence, t):
        if sentence.deprels[k] in NEGATION_RELATIONS:
            return True
        if (
            sentence.deprels[k] == "advmod"
            and sentence.tokens[k].lower() in NEGATION_ADVERBS
        ):
            return True
    return False


def breakdown_modal_negation(
    records: Sequence[AnnotatedPredicate],
    sentences: Mapping[str, Sentence],
    preds: PredMap | None = None,
) -> list[dict]:
    """Rows of (modal, negated, mean gold, MAE, n), sorted by count."""
    groups: dict[tuple[str, bool], list[AnnotatedPredicate]] = {}
    for rec in records:
        sent = sentences[rec.sentence_id]
        key = (_modal_of(sent, rec.token), _negated(sent, rec.token))
        groups.setdefault(key, []).append(rec)
    rows = []
    for (modal, negated), recs in groups.items():
        row = {
            "modal": modal,
            "negated": negated,
            "mean_gold": sum(r.label for r in recs) / len(recs),
            "n": len(recs),
        }
        if preds is not None:
            row["mae"] = mae(
                [preds[(r.sentence_id, r.token)] for r in recs],
                [r.label for r in recs],
            )
        rows.append(row)
    rows.sort(key=lambda r: (-r["n"], r["modal"], r["negated"]))
    return rows


def breakdown_relation(
    records: Sequence[AnnotatedPredicate],
    sentences: Mapping[str, Sentence],
    preds: PredMap | None = None,
    top: int = 10,
) -> list[dict]:
    """Group by the annotated token's own relation to its head."""
    groups: dict[str, list[AnnotatedPredicate]] = {}
    for rec in records:
        rel = sentences[rec.sentence_id].deprels[rec.token]
        groups.setdefault(rel, []).append(rec)
    rows = []
    for rel, recs in groups.items():
        row = {
            "relation": rel,
            "mean_gold": sum(r.label for r in recs) / len(recs),
            "n": len(recs),
        }
        if preds is not None:
            row["mean_pred"] = sum(
                preds[(r.sentence_id, r.token)] for r in recs
            ) / len(recs)
        rows.append(row)
    rows.sort(key=lambda r: (-r["n"], r["relation"]))
    return rows[:top]


def top_errors(
    records: Sequence[AnnotatedPredicate],
    preds: PredMap,
    n: int = 50,
) -> list[dict]:
    """The n predicates with the largest absolute error, descending."""
    rows = []
    for rec in records:
        pred = preds[(rec.sentence_id, rec.token)]
        rows.append(
            {
                "sentence_id": rec.sentence_id,
                "token": rec.token,
                "pred": pred,
                "gold": rec.label,
                "abs_error": abs(pred - rec.label),
            }
        )
    rows.sort(key=lambda r: (-r["abs_error"], r["sentence_id"], r["token"]))
    return rows[:n]


def xcomp_verb_means(
    records: Sequence[AnnotatedPredicate],
    sentences: Mapping[str, Sentence],
    preds: PredMap | None = None,
    verbs: Sequence[str] = INFINITIVAL_VERBS,
) -> list[dict]:
    """Stats for predicates governed as open clausal complements.

    Selects annotated tokens whose relation to their head is ``xcomp``
    and whose governing verb lemma is in ``verbs``. Without predictions
    the rows give mean gold labels with directly negated instances
    (negation on governor or complement) excluded; with predictions they
    give per-verb MAE over all selected instances.
    """
    verbset = {v.lower() for v in verbs}
    groups: dict[str, list[AnnotatedPredicate]] = {}
    for rec in records:
        sent = sentences[rec.sentence_id]
        if sent.deprels[rec.token] != "xcomp":
            continue
        head = sent.heads[rec.token]
        if head < 0 or sent.lemmas[head].lower() not in verbset:
            continue
        if preds is None and (_negated(sent, rec.token) or _negated(sent, head)):
            continue
        groups.setdefault(sent.lemmas[head].lower(), []).append(rec)

    rows = []
    for verb, recs in groups.items():
        row = {"verb": f"{verb} to", "n": len(recs)}
        if preds is None:
            row["mean_gold"] = sum(r.label for r in recs) / len(recs)
        else:
            row["mae"] = mae(
                [preds[(r.sentence_id, r.token)] for r in recs],
                [r.label for r in recs],
            )
        rows.append(row)
    key = "mean_gold" if preds is None else "mae"
    rows.sort(key=lambda r: (-r.get(key, 0.0), r["verb"]))
    return rows


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def render_table(rows: Sequence[dict], columns: Sequence[str] | None = None) -> str:
    """Aligned text table for a list of uniform dict rows."""
    if not rows:
        return "(empty)\n"
    columns = list(columns) if columns else list(rows[0].keys())

    def fmt(value):
        if isinstance(value, bool):
            return "yes" if value else "no"
        if value is None:
            return "NAN"
        if isinstance(value, float):
            return f"{value:.3f}"
        return str(value)

    cells = [[fmt(r.get(c)) for c in columns] for r in rows]
    widths = [
        max(len(col), max(len(row[i]) for row in cells))
        for i, col in enumerate(columns)
    ]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths)).rstrip()]
    for row in cells:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"


def rows_to_csv(rows: Sequence[dict], columns: Sequence[str] | None = None) -> str:
    if not rows:
        return ""
    columns = list(columns) if columns else list(rows[0].keys())
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def report_to_json(report: EvalReport) -> str:
    return json.dumps(report.to_json_dict(), indent=2, sort_keys=True)
