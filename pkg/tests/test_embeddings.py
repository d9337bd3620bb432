import numpy as np
import pytest

from evfact.autodiff import AdamState, Tape, adam_step, backward
from evfact.embeddings import EmbeddingTable, embed_sentence, embed_token, load_table
from evfact.errors import DataError

from conftest import FAILED_TREE


def _write(tmp_path, text):
    path = tmp_path / "vectors.txt"
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadTable:
    def test_parses_rows_and_samples_unk(self, tmp_path):
        path = _write(tmp_path, "the 1 2 3\ncat 4 5 6\n")
        table = load_table(path, dim=3, seed=7)
        assert len(table) == 2
        np.testing.assert_array_equal(table.lookup("cat"), [4.0, 5.0, 6.0])
        assert table.unk.shape == (3,)
        assert np.all(np.abs(table.unk) <= 1.0)

    def test_unknown_token_gets_exactly_the_unk_vector(self, tmp_path):
        path = _write(tmp_path, "the 1 2 3\n")
        table = load_table(path, dim=3, seed=7)
        np.testing.assert_array_equal(table.lookup("zzz"), table.unk)

    def test_same_seed_same_unk(self, tmp_path):
        path = _write(tmp_path, "the 1 2 3\n")
        t1 = load_table(path, dim=3, seed=42)
        t2 = load_table(path, dim=3, seed=42)
        np.testing.assert_array_equal(t1.unk, t2.unk)

    def test_duplicate_tokens_first_wins(self, tmp_path):
        path = _write(tmp_path, "the 1 2 3\nthe 9 9 9\n")
        table = load_table(path, dim=3)
        np.testing.assert_array_equal(table.lookup("the"), [1.0, 2.0, 3.0])

    def test_wrong_field_count_reports_line(self, tmp_path):
        path = _write(tmp_path, "the 1 2 3\ncat 4 5\n")
        with pytest.raises(DataError, match=":2"):
            load_table(path, dim=3)

    def test_unparseable_float_reports_line(self, tmp_path):
        path = _write(tmp_path, "the 1 x 3\n")
        with pytest.raises(DataError, match=":1"):
            load_table(path, dim=3)


class TestEmbedToken:
    @pytest.fixture
    def table(self, tmp_path):
        return load_table(_write(tmp_path, "the 1 2 3\nleave 4 5 6\n"), dim=3)

    def test_lookup_is_uncased(self, table):
        np.testing.assert_array_equal(
            embed_token(table, "The"), embed_token(table, "the")
        )

    def test_feature_concatenation_widens_output(self, table):
        feats = np.arange(7, dtype=float)
        assert embed_token(table, "the", feats).shape == (10,)

    def test_empty_token_rejected(self, table):
        with pytest.raises(ValueError):
            embed_token(table, "")

    def test_pure_function_of_inputs(self, table):
        a = embed_token(table, "leave", np.ones(2))
        b = embed_token(table, "leave", np.ones(2))
        np.testing.assert_array_equal(a, b)


class TestEmbedSentence:
    @pytest.fixture
    def table(self):
        return EmbeddingTable.random(FAILED_TREE.tokens, dim=4, seed=3)

    def test_row_per_token(self, table):
        tape = Tape()
        rows = embed_sentence(table, FAILED_TREE, tape)
        assert len(rows) == len(FAILED_TREE)
        assert all(r.values.shape == (4,) for r in rows)
        assert all(not r.trainable for r in rows)

    def test_feature_dim_adds_up(self, table):
        tape = Tape()
        rows = embed_sentence(table, FAILED_TREE, tape, lambda lemma: np.zeros(5))
        assert all(r.values.shape == (9,) for r in rows)

    def test_rows_are_rowwise_independent(self, table):
        from evfact.corpus import Sentence, ROOT

        n = len(FAILED_TREE)
        flipped = tuple(
            ROOT if FAILED_TREE.heads[n - 1 - j] == ROOT
            else n - 1 - FAILED_TREE.heads[n - 1 - j]
            for j in range(n)
        )
        permuted = Sentence(
            sent_id="perm",
            tokens=tuple(reversed(FAILED_TREE.tokens)),
            lemmas=tuple(reversed(FAILED_TREE.lemmas)),
            upos=tuple(reversed(FAILED_TREE.upos)),
            heads=flipped,
            deprels=tuple(reversed(FAILED_TREE.deprels)),
        )
        tape = Tape()
        rows = embed_sentence(table, FAILED_TREE, tape)
        rows_perm = embed_sentence(table, permuted, tape)
        for t in range(len(FAILED_TREE)):
            np.testing.assert_array_equal(
                rows[t].values, rows_perm[len(FAILED_TREE) - 1 - t].values
            )

    def test_no_gradient_reaches_table_storage_after_a_train_step(self, table):
        # full step: forward, backward, optimizer update
        stored_before = {t: v.copy() for t, v in table.vectors.items()}
        tape = Tape()
        rows = embed_sentence(table, FAILED_TREE, tape)
        w = tape.leaf(np.full(4, 0.5), trainable=True)
        losses = [tape.sum(tape.hadamard(w, r)) for r in rows]
        backward(tape, tape.add_n(losses))
        adam_step(tape.trainable_leaves(), AdamState())
        assert all(r.grad is None for r in rows)
        for token, before in stored_before.items():
            np.testing.assert_array_equal(table.vectors[token], before)

    def test_table_vectors_are_read_only(self, table):
        with pytest.raises(ValueError):
            table.lookup("jo")[0] = 1.0
