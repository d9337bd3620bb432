import json

import pytest

from evfact.cli import main
from evfact.corpus import serialize_sentence
from evfact.synthetic import negation_parity_dataset

from conftest import write_embeddings


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Tiny but complete data directory: treebank, records, embeddings."""
    root = tmp_path_factory.mktemp("cli-data")
    data = negation_parity_dataset(n_train=24, n_dev=8, seed=3, embedding_dim=8,
                                   dataset="parity")
    with open(root / "treebank.conllu", "w", encoding="utf-8") as fh:
        for sentence in data.sentences.values():
            fh.write(serialize_sentence(sentence))
    with open(root / "records.jsonl", "w", encoding="utf-8") as fh:
        for split, recs in (("train", data.train["parity"]),
                            ("dev", data.dev["parity"])):
            for rec in recs:
                row = {"sentence_id": rec.sentence_id, "token": rec.token,
                       "label": rec.label, "dataset": "parity", "split": split}
                fh.write(json.dumps(row) + "\n")
        # reuse the dev sentences as a pretend test split
        for rec in data.dev["parity"]:
            row = {"sentence_id": rec.sentence_id, "token": rec.token,
                   "label": rec.label, "dataset": "parity", "split": "test"}
            fh.write(json.dumps(row) + "\n")
    vocab = sorted({t.lower() for s in data.sentences.values() for t in s.tokens})
    write_embeddings(root / "vectors.txt", vocab, dim=8)
    config = {
        "treebanks": ["treebank.conllu"],
        "records": "records.jsonl",
        "embeddings": "vectors.txt",
        "embedding_dim": 8,
        "arch": "linear",
        "layers": 1,
        "datasets": ["parity"],
        "regime": "S",
        "epochs": 2,
        "seed": 4,
    }
    with open(root / "config.json", "w", encoding="utf-8") as fh:
        json.dump(config, fh)
    return root


@pytest.fixture(scope="module")
def trained_run(workdir, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli-run")
    code = main([
        "train", "--config", str(workdir / "config.json"),
        "--data-root", str(workdir), "--out", str(out),
    ])
    assert code == 0
    return out


class TestTrain:
    def test_writes_checkpoints_and_manifest(self, trained_run):
        manifest = json.loads((trained_run / "manifest.json").read_text())
        assert manifest["command"] == "train"
        assert len(manifest["epochs"]) == 2
        assert all(v["digest"].startswith("sha256:")
                   for v in manifest["inputs"].values())
        for entry in manifest["epochs"]:
            assert (trained_run / entry["checkpoint"]).exists()
            assert "parity" in entry["dev"]

    def test_flags_override_config(self, workdir, tmp_path):
        out = tmp_path / "run-override"
        code = main([
            "train", "--config", str(workdir / "config.json"),
            "--data-root", str(workdir), "--out", str(out), "--epochs", "1",
        ])
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert len(manifest["epochs"]) == 1
        assert manifest["config"]["epochs"] == 1


class TestEvaluate:
    def test_reports_test_split(self, workdir, trained_run, tmp_path, capsys):
        out = tmp_path / "eval"
        code = main([
            "evaluate", "--config", str(workdir / "config.json"),
            "--data-root", str(workdir), "--run-dir", str(trained_run),
            "--out", str(out),
        ])
        assert code == 0
        (report,) = json.loads((out / "eval-test.json").read_text())
        assert report["dataset"] == "parity"
        assert report["n"] == 8
        assert 0.0 <= report["calibrated"]["mae"] <= 6.0
        assert report["calibration_map"]


class TestPredict:
    def test_emits_raw_and_calibrated(self, workdir, trained_run, tmp_path):
        out = tmp_path / "pred"
        code = main([
            "predict", "--config", str(workdir / "config.json"),
            "--data-root", str(workdir), "--run-dir", str(trained_run),
            "--out", str(out), "--dataset", "parity", "--split", "dev",
        ])
        assert code == 0
        lines = (out / "predictions-parity-dev.jsonl").read_text().splitlines()
        assert len(lines) == 8
        row = json.loads(lines[0])
        assert set(row) == {"sentence_id", "token", "dataset", "split", "raw",
                            "calibrated"}
        assert -3.0 <= row["calibrated"] <= 3.0


class TestCalibrate:
    def test_writes_maps(self, workdir, trained_run, tmp_path):
        out = tmp_path / "cal"
        code = main([
            "calibrate", "--config", str(workdir / "config.json"),
            "--data-root", str(workdir), "--run-dir", str(trained_run),
            "--out", str(out),
        ])
        assert code == 0
        maps = json.loads((out / "calibration.json").read_text())
        pairs = maps["parity"]["pairs"]
        values = [v for _, v in pairs]
        assert values == sorted(values)


class TestReport:
    def test_breakdowns_from_predictions(self, workdir, trained_run, tmp_path):
        pred_dir = tmp_path / "pred"
        assert main([
            "predict", "--config", str(workdir / "config.json"),
            "--data-root", str(workdir), "--run-dir", str(trained_run),
            "--out", str(pred_dir), "--dataset", "parity", "--split", "dev",
        ]) == 0
        out = tmp_path / "report"
        code = main([
            "report", "--config", str(workdir / "config.json"),
            "--data-root", str(workdir), "--out", str(out),
            "--dataset", "parity", "--split", "dev",
            "--predictions", str(pred_dir / "predictions-parity-dev.jsonl"),
        ])
        assert code == 0
        for name in ("modal_negation", "relations", "xcomp_means", "top_errors"):
            assert (out / f"{name}.json").exists()
            assert (out / f"{name}.csv").exists()
            assert (out / f"{name}.txt").exists()
        relations = json.loads((out / "relations.json").read_text())
        assert relations[0]["relation"] == "root"
        assert sum(r["n"] for r in relations) == 8


class TestMine:
    def test_four_line_corpus_scores_manage(self, tmp_path):
        corpus = tmp_path / "corpus.txt"
        corpus.write_text(
            "I managed to call her yesterday.\n"
            "I will manage to call her tomorrow.\n"
            "I hoped to win the game tomorrow.\n"
            "Nothing to see here.\n"
        )
        out = tmp_path / "mine"
        code = main([
            "mine", "--corpus", str(corpus), "--out", str(out),
            "--min-count", "1",
        ])
        assert code == 0
        rows = dict()
        for line in (out / "tense_agreement.tsv").read_text().splitlines():
            lemma, score, matches = line.split("\t")
            rows[lemma] = (float(score), int(matches))
        assert rows["manage"] == (1.0, 2)
        assert rows["hope"] == (0.0, 1)


class TestAggregate:
    def test_two_annotation_examples(self, tmp_path):
        raw = tmp_path / "raw.jsonl"
        rows = [
            {"worker": "w1", "sentence_id": "s1", "token": 0,
             "understandable": True, "predicate": True,
             "happened": True, "confidence": 4},
            {"worker": "w2", "sentence_id": "s1", "token": 0,
             "understandable": True, "predicate": True,
             "happened": True, "confidence": 4},
            {"worker": "w1", "sentence_id": "s2", "token": 1,
             "understandable": True, "predicate": True,
             "happened": False, "confidence": 4},
            {"worker": "w2", "sentence_id": "s2", "token": 1,
             "understandable": True, "predicate": True,
             "happened": True, "confidence": 4},
        ]
        raw.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        out = tmp_path / "agg"
        code = main(["aggregate", "--raw", str(raw), "--out", str(out),
                     "--no-filter"])
        assert code == 0
        labels = {}
        for line in (out / "records.jsonl").read_text().splitlines():
            obj = json.loads(line)
            labels[(obj["sentence_id"], obj["token"])] = obj["label"]
        assert labels[("s1", 0)] == 3.0
        assert labels[("s2", 1)] == 0.0


class TestSelftest:
    def test_passes_on_fresh_checkout(self, capsys):
        assert main(["selftest"]) == 0
        out = capsys.readouterr().out
        assert "[PASS]" in out and "[FAIL]" not in out


class TestExitCodes:
    def test_usage_error_is_one(self):
        assert main(["train", "--bogus-flag"]) == 1
        assert main([]) == 1

    def test_config_error_is_one(self, tmp_path):
        assert main(["train", "--out", str(tmp_path / "x")]) == 1

    def test_missing_data_is_two(self, workdir, tmp_path):
        code = main([
            "train", "--config", str(workdir / "config.json"),
            "--data-root", str(tmp_path), "--out", str(tmp_path / "x"),
        ])
        assert code == 2

    def test_unknown_config_field_is_one(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"no_such_field": 1}')
        assert main(["train", "--config", str(bad)]) == 1
