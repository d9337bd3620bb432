import numpy as np
import pytest

from evfact.corpus import ROOT, AnnotatedPredicate, Sentence
from evfact.evaluation import (
    breakdown_modal_negation,
    breakdown_relation,
    constant_baseline,
    mae,
    pearson,
    render_table,
    rows_to_csv,
    score_records,
    top_errors,
    xcomp_verb_means,
)

from conftest import FAILED_TREE


def rec(sid, token, label, dataset="UDS-IH2", split="dev"):
    return AnnotatedPredicate(sid, token, label, dataset, split)


class TestMetrics:
    def test_perfect_predictions(self):
        preds = [1.0, -2.0, 0.5]
        assert mae(preds, preds) == 0.0
        assert pearson(preds, preds) == pytest.approx(1.0)

    def test_mae_is_symmetric(self, rng):
        a = list(rng.uniform(-3, 3, 20))
        b = list(rng.uniform(-3, 3, 20))
        assert mae(a, b) == pytest.approx(mae(b, a))

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            mae([1.0], [1.0, 2.0])
        with pytest.raises(ValueError):
            pearson([1.0], [1.0, 2.0])

    def test_pearson_undefined_for_constant_side(self):
        assert pearson([3.0, 3.0, 3.0], [1.0, 2.0, 3.0]) is None
        assert pearson([1.0, 2.0, 3.0], [0.0, 0.0, 0.0]) is None

    def test_pearson_invariant_to_positive_affine_rescaling(self, rng):
        for _ in range(20):
            a = list(rng.uniform(-3, 3, 30))
            b = list(rng.uniform(-3, 3, 30))
            base = pearson(a, b)
            scaled = pearson([2.5 * x + 1.0 for x in a], [0.3 * y - 7.0 for y in b])
            assert scaled == pytest.approx(base, abs=1e-12)

    def test_pearson_flips_sign_under_negation(self, rng):
        a = list(rng.uniform(-3, 3, 30))
        b = list(rng.uniform(-3, 3, 30))
        assert pearson([-x for x in a], b) == pytest.approx(-pearson(a, b), abs=1e-12)


class TestConstantBaseline:
    def test_constant_predictor_has_undefined_pearson(self):
        records = [rec("s1", 0, 1.0), rec("s2", 0, -2.0), rec("s3", 0, 3.0)]
        report = constant_baseline(records, 3.0, "UDS-IH2", "test")
        assert report.pearson is None
        assert report.mae == pytest.approx((2.0 + 5.0 + 0.0) / 3)
        assert report.n == 3

    def test_summary_line_prints_nan(self):
        report = constant_baseline([rec("s1", 0, 0.0)], 3.0, "UW", "test")
        assert "NAN" in report.summary_line()


WILL_LEAVE = Sentence(
    "will-leave", ("Jo", "will", "leave"), ("Jo", "will", "leave"),
    ("PROPN", "AUX", "VERB"), (2, 2, ROOT), ("nsubj", "aux", "root"),
)

DIDNT_LEAVE = Sentence(
    "didnt-leave", ("Jo", "did", "n't", "leave"), ("Jo", "do", "not", "leave"),
    ("PROPN", "AUX", "PART", "VERB"), (3, 3, 3, ROOT),
    ("nsubj", "aux", "neg", "root"),
)

CANT_GO = Sentence(
    "cant-go", ("Jo", "ca", "n't", "go"), ("Jo", "can", "not", "go"),
    ("PROPN", "AUX", "PART", "VERB"), (3, 3, 3, ROOT),
    ("nsubj", "aux", "neg", "root"),
)

SENTS = {
    s.sent_id: s
    for s in (WILL_LEAVE, DIDNT_LEAVE, CANT_GO, FAILED_TREE)
}


class TestModalNegationBreakdown:
    def test_modal_will_not_negated(self):
        rows = breakdown_modal_negation([rec("will-leave", 2, -1.9)], SENTS)
        assert rows == [{"modal": "will", "negated": False, "mean_gold": -1.9, "n": 1}]

    def test_negated_without_modal(self):
        rows = breakdown_modal_negation([rec("didnt-leave", 3, -2.0)], SENTS)
        assert rows[0]["modal"] == "none"
        assert rows[0]["negated"] is True

    def test_contracted_can_is_its_own_group(self):
        rows = breakdown_modal_negation([rec("cant-go", 3, -0.7)], SENTS)
        assert rows[0]["modal"] == "ca"
        assert rows[0]["negated"] is True

    def test_group_sizes_sum_to_record_count(self, rng):
        records = [
            rec(sid, int(np.flatnonzero([h == ROOT for h in SENTS[sid].heads])[0]),
                float(rng.uniform(-3, 3)))
            for sid in SENTS
            for _ in range(3)
        ]
        rows = breakdown_modal_negation(records, SENTS)
        assert sum(r["n"] for r in rows) == len(records)

    def test_mae_column_with_predictions(self):
        records = [rec("will-leave", 2, -1.0)]
        preds = {("will-leave", 2): 1.0}
        rows = breakdown_modal_negation(records, SENTS, preds)
        assert rows[0]["mae"] == 2.0


class TestRelationBreakdown:
    def test_root_predicate_lands_in_root_row(self):
        rows = breakdown_relation([rec("will-leave", 2, 1.0)], SENTS)
        assert rows[0]["relation"] == "root"

    def test_top_k_by_frequency(self):
        records = [rec("failed-tree", 3, 0.0)] * 3 + [rec("failed-tree", 1, 1.0)]
        rows = breakdown_relation(records, SENTS, top=1)
        assert len(rows) == 1
        assert rows[0]["relation"] == "xcomp"
        assert rows[0]["n"] == 3

    def test_mean_pred_with_predictions(self):
        records = [rec("will-leave", 2, 1.0)]
        rows = breakdown_relation(records, SENTS, {("will-leave", 2): 0.25})
        assert rows[0]["mean_pred"] == 0.25


class TestTopErrors:
    def test_planted_outlier_ranks_first(self):
        records = [rec("s1", 0, 0.0), rec("s2", 0, 0.0), rec("s3", 0, 0.0)]
        preds = {("s1", 0): 0.1, ("s2", 0): 6.0, ("s3", 0): -0.2}
        rows = top_errors(records, preds, n=50)
        assert rows[0]["sentence_id"] == "s2"
        assert rows[0]["abs_error"] == 6.0

    def test_n_larger_than_dataset_returns_all(self):
        records = [rec("s1", 0, 0.0)]
        rows = top_errors(records, {("s1", 0): 0.0}, n=50)
        assert len(rows) == 1

    def test_ties_break_by_sentence_id(self):
        records = [rec("zz", 0, 0.0), rec("aa", 0, 0.0)]
        preds = {("zz", 0): 1.0, ("aa", 0): 1.0}
        rows = top_errors(records, preds, n=2)
        assert [r["sentence_id"] for r in rows] == ["aa", "zz"]


def make_xcomp_sentence(sid, verb, negated=False):
    # "Jo <verb> (not) to leave"
    if negated:
        tokens = ("Jo", verb, "not", "to", "leave")
        lemmas = ("Jo", verb, "not", "to", "leave")
        heads = (1, ROOT, 1, 4, 1)
        deprels = ("nsubj", "root", "neg", "mark", "xcomp")
        upos = ("PROPN", "VERB", "PART", "PART", "VERB")
    else:
        tokens = ("Jo", verb, "to", "leave")
        lemmas = ("Jo", verb, "to", "leave")
        heads = (1, ROOT, 3, 1)
        deprels = ("nsubj", "root", "mark", "xcomp")
        upos = ("PROPN", "VERB", "PART", "VERB")
    return Sentence(sid, tokens, lemmas, upos, heads, deprels)


class TestXcompMeans:
    def test_mean_labels_per_governing_verb(self):
        sents = {
            "m1": make_xcomp_sentence("m1", "manage"),
            "m2": make_xcomp_sentence("m2", "manage"),
            "h1": make_xcomp_sentence("h1", "hope"),
        }
        records = [
            rec("m1", 3, 3.0), rec("m2", 3, 2.5), rec("h1", 3, -2.5),
        ]
        rows = xcomp_verb_means(records, sents)
        as_map = {r["verb"]: r for r in rows}
        assert as_map["manage to"]["mean_gold"] == pytest.approx(2.75)
        assert as_map["hope to"]["mean_gold"] == -2.5

    def test_directly_negated_instances_excluded_from_means(self):
        sents = {
            "m1": make_xcomp_sentence("m1", "manage"),
            "m2": make_xcomp_sentence("m2", "manage", negated=True),
        }
        records = [rec("m1", 3, 3.0), rec("m2", 4, -3.0)]
        rows = xcomp_verb_means(records, sents)
        assert rows == [{"verb": "manage to", "n": 1, "mean_gold": 3.0}]

    def test_empty_selection_gives_empty_table(self):
        rows = xcomp_verb_means([rec("will-leave", 2, 1.0)], SENTS)
        assert rows == []

    def test_unlisted_governor_ignored(self):
        sents = {"x": make_xcomp_sentence("x", "refuse")}
        assert xcomp_verb_means([rec("x", 3, 1.0)], sents) == []

    def test_mae_table_with_predictions(self):
        sents = {"w1": make_xcomp_sentence("w1", "want")}
        records = [rec("w1", 3, 1.0)]
        rows = xcomp_verb_means(records, sents, {("w1", 3): 0.0})
        assert rows == [{"verb": "want to", "n": 1, "mae": 1.0}]


class TestRendering:
    def test_score_records_roundtrip(self):
        records = [rec("s1", 0, 1.0), rec("s2", 0, -1.0)]
        preds = {("s1", 0): 1.0, ("s2", 0): 1.0}
        report = score_records(records, preds, "UW", "dev")
        assert report.mae == 1.0
        payload = report.to_json_dict()
        assert payload["pearson_defined"] is False

    def test_table_alignment_and_nan(self):
        rows = [{"a": 1.0, "b": None}, {"a": 20.5, "b": 0.125}]
        text = render_table(rows)
        assert "NAN" in text
        assert text.splitlines()[0].startswith("a")

    def test_csv_export(self):
        rows = [{"a": 1, "b": "x"}]
        out = rows_to_csv(rows)
        assert out.splitlines() == ["a,b", "1,x"]
