"""Batch command-line entry points.

Eight subcommands: ``train``, ``evaluate``, ``predict``, ``calibrate``,
``mine``, ``aggregate``, ``report``, ``selftest``. Options come from an
optional JSON config file plus flags; flags win. Relative data paths
resolve against ``--data-root`` or the ``EVFACT_DATA_ROOT`` environment
variable. Every artifact-producing command writes a ``manifest.json``
(resolved config, seed, input digests) into its output directory, and
nothing outside that directory is touched.

Exit codes: 0 ok, 1 usage/config, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from . import __version__, calibration, corpus, evaluation, lexfeats
from .embeddings import load_table
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    EvfactError,
    NumericError,
    ShapeError,
)
from .models import ModelConfig, init_model, load_checkpoint
from .selftest import run_selftest
from .training import (
    Regime,
    TrainerConfig,
    TrainingData,
    predict_split,
    train,
)

DEFAULTS = {
    "data_root": None,
    "treebanks": [],
    "records": None,
    "embeddings": None,
    "embedding_dim": 300,
    "embedding_seed": 0,
    "signature_lexicon": None,
    "conjugations": None,
    "tense_table": None,
    "corpus": None,
    "min_count": 10,
    "arch": "linear",
    "layers": 2,
    "lexfeats": "none",
    "regime": "S",
    "focus": None,
    "datasets": None,
    "include_uds_ih2": False,
    "epochs": 20,
    "learning_rate": 1e-3,
    "seed": 1,
    "out": "run",
    "checkpoint": None,
    "dataset": None,
    "split": None,  # commands default this: test for scoring, train for aggregate
    "raw_annotations": None,
    "split_map": None,
    "no_filter": False,
    "predictions": None,
    "run_dir": None,
}


class _Parser(argparse.ArgumentParser):
    # usage problems exit 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _build_parser() -> _Parser:
    parser = _Parser(prog="evfact", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"evfact {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", metavar="PATH", help="JSON config file")
        p.add_argument("--data-root", dest="data_root")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", metavar="DIR")

    def model_flags(p):
        p.add_argument("--arch", choices=["linear", "tree", "hybrid"])
        p.add_argument("--layers", type=int, choices=[1, 2])
        p.add_argument("--lexfeats", choices=["none", "sign", "mine", "both"])

    def data_flags(p):
        p.add_argument("--treebank", action="append", dest="treebanks", metavar="PATH")
        p.add_argument("--records", metavar="PATH")
        p.add_argument("--embeddings", metavar="PATH")
        p.add_argument("--embedding-dim", type=int, dest="embedding_dim")

    p = sub.add_parser("train", help="train a model, one checkpoint per epoch")
    common(p)
    model_flags(p)
    data_flags(p)
    p.add_argument("--regime", choices=["S", "G", "multisimp", "multibal", "multifoc"])
    p.add_argument("--focus", metavar="DATASET")
    p.add_argument("--dataset", action="append", dest="datasets", metavar="NAME")
    p.add_argument("--include-uds-ih2", action="store_true", dest="include_uds_ih2",
                   default=None)
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--tense-table", dest="tense_table", metavar="PATH")
    p.add_argument("--signature-lexicon", dest="signature_lexicon", metavar="PATH")

    p = sub.add_parser("evaluate", help="score the test split with the best checkpoints")
    common(p)
    data_flags(p)
    p.add_argument("--run-dir", dest="run_dir", metavar="DIR",
                   help="training output directory (defaults to --out)")
    p.add_argument("--checkpoint", metavar="PATH", help="pin one checkpoint file")
    p.add_argument("--split")

    p = sub.add_parser("predict", help="emit raw and calibrated predictions")
    common(p)
    data_flags(p)
    p.add_argument("--run-dir", dest="run_dir", metavar="DIR")
    p.add_argument("--checkpoint", metavar="PATH")
    p.add_argument("--dataset", metavar="NAME")
    p.add_argument("--split")

    p = sub.add_parser("calibrate", help="fit per-dataset isotonic maps on train")
    common(p)
    data_flags(p)
    p.add_argument("--run-dir", dest="run_dir", metavar="DIR")
    p.add_argument("--checkpoint", metavar="PATH")

    p = sub.add_parser("mine", help="mine tense-agreement scores from raw text")
    common(p)
    p.add_argument("--corpus", metavar="PATH")
    p.add_argument("--conjugations", metavar="PATH")
    p.add_argument("--min-count", type=int, dest="min_count")

    p = sub.add_parser("aggregate", help="aggregate raw annotations into records")
    common(p)
    p.add_argument("--raw", dest="raw_annotations", metavar="PATH")
    p.add_argument("--dataset", metavar="NAME")
    p.add_argument("--split")
    p.add_argument("--split-map", dest="split_map", metavar="PATH")
    p.add_argument("--no-filter", action="store_true", dest="no_filter", default=None)

    p = sub.add_parser("report", help="analysis breakdowns over predictions")
    common(p)
    data_flags(p)
    p.add_argument("--predictions", metavar="PATH")
    p.add_argument("--dataset", metavar="NAME")
    p.add_argument("--split")

    p = sub.add_parser("selftest", help="run the built-in correctness battery")
    common(p)
    return parser


def _resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                loaded = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {args.config}: {exc}")
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        cfg.update(loaded)
    for key, value in vars(args).items():
        if key in cfg and value is not None:
            cfg[key] = value
    if cfg["data_root"] is None:
        cfg["data_root"] = os.environ.get("EVFACT_DATA_ROOT", ".")
    return cfg


def _resolve_path(cfg: dict, value, field: str) -> Path:
    if value is None:
        raise ConfigError(f"missing required path: {field}")
    path = Path(value)
    if not path.is_absolute():
        path = Path(cfg["data_root"]) / path
    if not path.exists():
        raise DataError(f"{field}: no such file {path}")
    return path


def _digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()


def _write_manifest(out: Path, command: str, cfg: dict, inputs: dict[str, Path],
                    extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "package_version": __version__,
        "config": {k: (str(v) if isinstance(v, Path) else v) for k, v in cfg.items()},
        "inputs": {name: {"path": str(p), "digest": _digest(p)}
                   for name, p in inputs.items()},
    }
    if extra:
        manifest.update(extra)
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out_dir(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# shared data loading
# ---------------------------------------------------------------------------

def _load_sentences(cfg: dict, inputs: dict) -> dict[str, corpus.Sentence]:
    if not cfg["treebanks"]:
        raise ConfigError("missing required path: treebanks")
    sentences: dict[str, corpus.Sentence] = {}
    for i, tb in enumerate(cfg["treebanks"]):
        path = _resolve_path(cfg, tb, f"treebanks[{i}]")
        inputs[f"treebank:{Path(tb).name}"] = path
        for sid, sent in corpus.load_conllu(path).items():
            if sid in sentences:
                raise DataError(f"{path}: duplicate sentence id {sid!r} across treebanks")
            sentences[sid] = sent
    return sentences


def _load_feature_fn(cfg: dict, inputs: dict):
    mode = cfg["lexfeats"]
    lexicon = None
    table = None
    if mode in ("sign", "both"):
        if cfg["signature_lexicon"]:
            path = _resolve_path(cfg, cfg["signature_lexicon"], "signature_lexicon")
            inputs["signature_lexicon"] = path
            lexicon = lexfeats.SignatureLexicon.load(path)
        else:
            lexicon = lexfeats.SignatureLexicon.stock()
    if mode in ("mine", "both"):
        path = _resolve_path(cfg, cfg["tense_table"], "tense_table")
        inputs["tense_table"] = path
        table = lexfeats.TenseAgreementTable.load(path, cfg["min_count"])
    fn = lexfeats.make_feature_fn(lexicon, table, mode)
    return fn, lexfeats.feature_dim(lexicon, mode)


def _load_training_data(cfg: dict, inputs: dict, datasets: list[str]):
    sentences = _load_sentences(cfg, inputs)
    records_path = _resolve_path(cfg, cfg["records"], "records")
    inputs["records"] = records_path
    records = corpus.load_factuality_records(records_path, sentences)
    emb_path = _resolve_path(cfg, cfg["embeddings"], "embeddings")
    inputs["embeddings"] = emb_path
    table = load_table(emb_path, cfg["embedding_dim"], cfg["embedding_seed"])
    feature_fn, feat_dim = _load_feature_fn(cfg, inputs)

    def split_of(name):
        out = {}
        for dataset in datasets:
            recs = records.get((dataset, name))
            if recs:
                out[dataset] = recs
        return out

    train_split = split_of("train")
    missing = [d for d in datasets if d not in train_split]
    if missing:
        raise DataError(f"no train records for datasets: {missing}")
    data = TrainingData(
        sentences=sentences,
        train=train_split,
        dev=split_of("dev"),
        embeddings=table,
        feature_fn=feature_fn,
    )
    return data, records, feat_dim


def _dataset_list(cfg: dict) -> list[str]:
    datasets = list(cfg["datasets"] or [])
    if not datasets:
        raise ConfigError("missing required field: datasets")
    if cfg["include_uds_ih2"] and "UDS-IH2" not in datasets:
        datasets.append("UDS-IH2")
    return datasets


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_train(cfg: dict) -> int:
    out = _out_dir(cfg)
    inputs: dict[str, Path] = {}
    datasets = _dataset_list(cfg)
    regime = Regime.parse(cfg["regime"], cfg["focus"], cfg["include_uds_ih2"])
    data, _, feat_dim = _load_training_data(cfg, inputs, datasets)
    model_config = ModelConfig(
        topology=cfg["arch"],
        layers=cfg["layers"],
        embedding_dim=cfg["embedding_dim"],
        feature_dim=feat_dim,
        datasets=tuple(datasets),
        shared_head=regime.kind == "G",
    )
    bundle = init_model(model_config, cfg["seed"])
    trainer = TrainerConfig(
        epochs=cfg["epochs"], learning_rate=cfg["learning_rate"], seed=cfg["seed"]
    )
    checkpoints = train(bundle, regime, trainer, data, out_dir=out, keep_params=False)
    epochs = [
        {
            "epoch": c.epoch,
            "checkpoint": Path(c.path).name,
            "dev": {
                d: {"pearson": s.pearson, "mae": s.mae, "n": s.n}
                for d, s in c.dev.items()
            },
        }
        for c in checkpoints
    ]
    _write_manifest(out, "train", cfg, inputs, {"epochs": epochs})
    for entry in epochs:
        line = " ".join(
            f"{d}: r={'NAN' if s['pearson'] is None else format(s['pearson'], '.3f')} "
            f"mae={s['mae']:.3f}"
            for d, s in sorted(entry["dev"].items())
        )
        print(f"epoch {entry['epoch']:3d}  {line}")
    print(f"wrote {len(epochs)} checkpoints to {out}")
    return 0


def _best_checkpoints(cfg: dict, datasets: list[str]) -> dict[str, Path]:
    """Per-dataset checkpoint paths: pinned, or argmax dev Pearson from a run."""
    if cfg["checkpoint"]:
        path = _resolve_path(cfg, cfg["checkpoint"], "checkpoint")
        return {d: path for d in datasets}
    run_dir = Path(cfg["run_dir"] or cfg["out"])
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"no manifest.json in {run_dir}; train first or pin --checkpoint")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    chosen: dict[str, Path] = {}
    for dataset in datasets:
        best = None
        for entry in manifest.get("epochs", []):
            score = entry["dev"].get(dataset)
            if score is None or score["pearson"] is None:
                continue
            if best is None or score["pearson"] > best[0]:
                best = (score["pearson"], entry["checkpoint"])
        if best is None:
            raise DataError(f"dataset {dataset!r} has no dev Pearson in {manifest_path}")
        chosen[dataset] = run_dir / best[1]
    return chosen


def _predictions_for(bundle, data, records, dataset, split):
    recs = records.get((dataset, split))
    if not recs:
        raise DataError(f"no records for {dataset}/{split}")
    return recs, predict_split(bundle, data, recs, dataset)


def cmd_evaluate(cfg: dict) -> int:
    out = _out_dir(cfg)
    inputs: dict[str, Path] = {}
    datasets = _dataset_list(cfg)
    split = cfg["split"] or "test"
    chosen = _best_checkpoints(cfg, datasets)
    data, records, _ = _load_training_data(cfg, inputs, datasets)
    reports = []
    for dataset in datasets:
        bundle, _ = load_checkpoint(chosen[dataset])
        train_recs, train_preds = _predictions_for(bundle, data, records, dataset, "train")
        iso = calibration.fit_isotonic(
            [train_preds[(r.sentence_id, r.token)] for r in train_recs],
            [r.label for r in train_recs],
        )
        eval_recs, eval_preds = _predictions_for(bundle, data, records, dataset, split)
        raw = evaluation.score_records(eval_recs, eval_preds, dataset, split)
        calibrated_preds = {
            k: calibration.apply_calibration(iso, v) for k, v in eval_preds.items()
        }
        cal = evaluation.score_records(eval_recs, calibrated_preds, dataset, split)
        report = {
            "dataset": dataset,
            "split": split,
            "checkpoint": str(chosen[dataset]),
            "n": raw.n,
            "raw": {"mae": raw.mae, "pearson": raw.pearson},
            "calibrated": {"mae": cal.mae, "pearson": cal.pearson},
            "calibration_map": iso.to_pairs(),
        }
        reports.append(report)
        print(cal.summary_line() + f"  (raw MAE={raw.mae:.3f})")
    with open(out / f"eval-{split}.json", "w", encoding="utf-8") as fh:
        json.dump(reports, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(out, "evaluate", cfg, inputs)
    return 0


def cmd_predict(cfg: dict) -> int:
    out = _out_dir(cfg)
    inputs: dict[str, Path] = {}
    dataset = cfg["dataset"]
    if not dataset:
        raise ConfigError("predict needs --dataset")
    split = cfg["split"] or "test"
    chosen = _best_checkpoints(cfg, [dataset])
    bundle, _ = load_checkpoint(chosen[dataset])
    data, records, _ = _load_training_data(cfg, inputs, [dataset])
    train_recs, train_preds = _predictions_for(bundle, data, records, dataset, "train")
    iso = calibration.fit_isotonic(
        [train_preds[(r.sentence_id, r.token)] for r in train_recs],
        [r.label for r in train_recs],
    )
    recs, preds = _predictions_for(bundle, data, records, dataset, split)
    path = out / f"predictions-{dataset}-{split}.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        for rec in recs:
            raw = preds[(rec.sentence_id, rec.token)]
            fh.write(
                json.dumps(
                    {
                        "sentence_id": rec.sentence_id,
                        "token": rec.token,
                        "dataset": dataset,
                        "split": split,
                        "raw": raw,
                        "calibrated": calibration.apply_calibration(iso, raw),
                    }
                )
                + "\n"
            )
    _write_manifest(out, "predict", cfg, inputs)
    print(f"wrote {len(recs)} predictions to {path}")
    return 0


def cmd_calibrate(cfg: dict) -> int:
    out = _out_dir(cfg)
    inputs: dict[str, Path] = {}
    datasets = _dataset_list(cfg)
    chosen = _best_checkpoints(cfg, datasets)
    data, records, _ = _load_training_data(cfg, inputs, datasets)
    maps = {}
    for dataset in datasets:
        bundle, _ = load_checkpoint(chosen[dataset])
        recs, preds = _predictions_for(bundle, data, records, dataset, "train")
        iso = calibration.fit_isotonic(
            [preds[(r.sentence_id, r.token)] for r in recs],
            [r.label for r in recs],
        )
        maps[dataset] = {
            "checkpoint": str(chosen[dataset]),
            "pairs": iso.to_pairs(),
        }
    with open(out / "calibration.json", "w", encoding="utf-8") as fh:
        json.dump(maps, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(out, "calibrate", cfg, inputs)
    print(f"wrote calibration maps for {sorted(maps)} to {out}")
    return 0


def cmd_mine(cfg: dict) -> int:
    out = _out_dir(cfg)
    inputs: dict[str, Path] = {}
    corpus_path = _resolve_path(cfg, cfg["corpus"], "corpus")
    inputs["corpus"] = corpus_path
    if cfg["conjugations"]:
        conj_path = _resolve_path(cfg, cfg["conjugations"], "conjugations")
        inputs["conjugations"] = conj_path
        conjugations = lexfeats.ConjugationTable.load(conj_path)
    else:
        conjugations = lexfeats.ConjugationTable.stock()
    with open(corpus_path, "r", encoding="utf-8") as fh:
        table = lexfeats.mine_tense_agreement(fh, conjugations, min_count=cfg["min_count"])
    path = out / "tense_agreement.tsv"
    table.save(path)
    _write_manifest(out, "mine", cfg, inputs)
    print(f"scored {len(table.scores())} verbs "
          f"({sum(table.decidable.values())} decidable matches) -> {path}")
    return 0


def cmd_aggregate(cfg: dict) -> int:
    out = _out_dir(cfg)
    inputs: dict[str, Path] = {}
    raw_path = _resolve_path(cfg, cfg["raw_annotations"], "raw_annotations")
    inputs["raw_annotations"] = raw_path
    annotations = corpus.load_raw_annotations(raw_path)
    split_map = None
    if cfg["split_map"]:
        sm_path = _resolve_path(cfg, cfg["split_map"], "split_map")
        inputs["split_map"] = sm_path
        with open(sm_path, "r", encoding="utf-8") as fh:
            split_map = json.load(fh)
    records = corpus.aggregate_records(
        annotations,
        dataset=cfg["dataset"] or "UDS-IH2",
        split=cfg["split"] or "train",
        split_map=split_map,
        apply_filter=not cfg["no_filter"],
    )
    path = out / "records.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(
                json.dumps(
                    {
                        "sentence_id": rec.sentence_id,
                        "token": rec.token,
                        "label": rec.label,
                        "dataset": rec.dataset,
                        "split": rec.split,
                    }
                )
                + "\n"
            )
    _write_manifest(out, "aggregate", cfg, inputs)
    print(f"aggregated {len(records)} predicates from "
          f"{len(annotations)} annotations -> {path}")
    return 0


def _load_predictions(path) -> dict[tuple[str, int], float]:
    preds = {}
    with open(path, "r", encoding="utf-8") as fh:
        for recno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                preds[(str(obj["sentence_id"]), int(obj["token"]))] = float(obj["raw"])
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise DataError(f"{path}: record {recno}: {exc}") from None
    return preds


def cmd_report(cfg: dict) -> int:
    out = _out_dir(cfg)
    inputs: dict[str, Path] = {}
    dataset = cfg["dataset"]
    if not dataset:
        raise ConfigError("report needs --dataset")
    split = cfg["split"] or "test"
    sentences = _load_sentences(cfg, inputs)
    records_path = _resolve_path(cfg, cfg["records"], "records")
    inputs["records"] = records_path
    records = corpus.load_factuality_records(records_path, sentences)
    recs = records.get((dataset, split))
    if not recs:
        raise DataError(f"no records for {dataset}/{split}")
    preds = None
    if cfg["predictions"]:
        pred_path = _resolve_path(cfg, cfg["predictions"], "predictions")
        inputs["predictions"] = pred_path
        preds = _load_predictions(pred_path)

    tables = {
        "modal_negation": evaluation.breakdown_modal_negation(recs, sentences, preds),
        "relations": evaluation.breakdown_relation(recs, sentences, preds),
        "xcomp_means": evaluation.xcomp_verb_means(recs, sentences, preds),
    }
    if preds is not None:
        tables["top_errors"] = evaluation.top_errors(recs, preds)
    for name, rows in tables.items():
        with open(out / f"{name}.json", "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)
            fh.write("\n")
        with open(out / f"{name}.csv", "w", encoding="utf-8") as fh:
            fh.write(evaluation.rows_to_csv(rows))
        with open(out / f"{name}.txt", "w", encoding="utf-8") as fh:
            fh.write(evaluation.render_table(rows))
        print(f"-- {name} --")
        print(evaluation.render_table(rows), end="")
    _write_manifest(out, "report", cfg, inputs)
    return 0


def cmd_selftest(cfg: dict) -> int:
    results = run_selftest()
    failed = 0
    for name, passed, detail in results:
        status = "PASS" if passed else "FAIL"
        print(f"[{status}] {name}: {detail}")
        failed += 0 if passed else 1
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 0 if failed == 0 else 3


_COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "calibrate": cmd_calibrate,
    "mine": cmd_mine,
    "aggregate": cmd_aggregate,
    "report": cmd_report,
    "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _resolve_config(args)
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, ShapeError, ContractError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except EvfactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
