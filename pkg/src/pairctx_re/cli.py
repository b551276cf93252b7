"""``pairctx-re``: one command per pipeline stage, file artifacts in between.

Stages read the previous stage's artifacts from the output directory and
write their own, so any stage can be re-run or inspected in isolation:

    ingest -> prepare -> split -> encode -> train -> evaluate
                                        \\-> baseline

Option precedence: command-line flags override config-file keys, which
override built-in defaults. The environment variable ``PAIRCTX_SEED``
overrides the training master seed from any source.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import corpus as corpus_mod
from . import encoder_input as enc
from . import metrics as metrics_mod
from . import ner_align
from . import net
from . import splitter
from . import trainer as trainer_mod
from .corpus import Label
from .trainer import StoppingCriterion

ARTIFACTS = {
    "corpus.jsonl": "ingest",
    "annotations.jsonl": "ingest",
    "dataset.jsonl": "prepare",
    "split.tsv": "split",
    "encoded_train.jsonl": "encode",
    "encoded_dev.jsonl": "encode",
    "model.ckpt": "train",
}

DEFAULTS = {
    "ingest": {"include_title": True},
    "split": {"ratio": 0.8, "max_seed_trials": 10_000, "kl_threshold_bits": 0.02},
    "encode": {"max_len": 350, "lowercase": False},
    "model": {
        "num_layers": 2,
        "num_heads": 2,
        "hidden_dim": 16,
        "ffn_dim": 32,
        "max_positions": 350,
        "dropout": 0.0,
    },
    "train": {
        "batch_size": 32,
        "max_epochs": 40,
        "patience": 10,
        "num_restarts": 20,
        "criterion": "macro_f1_pos",
        "learning_rate": 1e-3,
        "master_seed": 0,
    },
    "baseline": {"runs": 1000},
}


class CliError(Exception):
    def __init__(self, message: str, exit_code: int = 1):
        super().__init__(message)
        self.exit_code = exit_code


class _Settings:
    """Effective option values after merging flags, config file, defaults."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.config: dict = {}
        if args.config:
            path = Path(args.config)
            if not path.exists():
                raise CliError(f"config file not found: {path}", exit_code=2)
            with path.open("r", encoding="utf-8") as fh:
                self.config = json.load(fh)

    def get(self, section: str, key: str):
        flag = getattr(self.args, key, None)
        if flag is not None:
            return flag
        if key in self.config.get(section, {}):
            return self.config[section][key]
        return DEFAULTS.get(section, {}).get(key)

    def path(self, key: str, required: bool = True) -> Path | None:
        value = getattr(self.args, key, None)
        if value is None:
            value = self.config.get("paths", {}).get(key)
        if value is None:
            if required:
                raise CliError(f"no --{key.replace('_', '-')} given and none in config", 2)
            return None
        return Path(value)

    def out_dir(self) -> Path:
        out = self.path("out_dir", required=False) or Path("pairctx_out")
        out.mkdir(parents=True, exist_ok=True)
        return out

    def master_seed(self) -> int:
        env = os.environ.get("PAIRCTX_SEED")
        if env is not None:
            try:
                return int(env)
            except ValueError:
                raise CliError(f"PAIRCTX_SEED must be an integer, got {env!r}") from None
        return int(self.get("train", "master_seed"))


def _artifact(out_dir: Path, name: str) -> Path:
    path = out_dir / name
    if not path.exists():
        stage = ARTIFACTS.get(name)
        hint = f" (run `pairctx-re {stage}` first)" if stage else ""
        raise CliError(f"missing artifact {path}{hint}", exit_code=2)
    return path


def _write_stage_log(out_dir: Path, stage: str, effective: dict) -> None:
    lines = [f"{k}={effective[k]}" for k in sorted(effective)]
    (out_dir / f"{stage}.log").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _load_store(out_dir: Path) -> corpus_mod.CorpusStore:
    return corpus_mod.load_corpus(
        _artifact(out_dir, "corpus.jsonl"), _artifact(out_dir, "annotations.jsonl")
    )


# ---------------------------------------------------------------------------
# Stage implementations

def cmd_ingest(s: _Settings) -> int:
    out_dir = s.out_dir()
    corpus_path = s.path("corpus")
    annotations_path = s.path("annotations")
    include_title = bool(s.get("ingest", "include_title"))
    if not corpus_path.exists():
        raise CliError(f"corpus file not found: {corpus_path}", exit_code=2)
    if not annotations_path.exists():
        raise CliError(f"annotations file not found: {annotations_path}", exit_code=2)
    store = corpus_mod.load_corpus(corpus_path, annotations_path, include_title=include_title)
    corpus_mod.write_corpus(store, out_dir / "corpus.jsonl", out_dir / "annotations.jsonl")
    _write_stage_log(out_dir, "ingest", {
        "corpus": corpus_path, "annotations": annotations_path,
        "include_title": include_title, "out_dir": out_dir,
    })
    print(f"{len(store.documents)} documents")
    print(f"{len(store.gold_mentions)} gold mentions, {len(store.gold_relations)} gold relations")
    return 0


def cmd_prepare(s: _Settings) -> int:
    out_dir = s.out_dir()
    ner_path = s.path("ner")
    if not ner_path.exists():
        raise CliError(f"NER file not found: {ner_path}", exit_code=2)
    store = _load_store(out_dir)
    mentions = ner_align.load_ner_mentions(ner_path, store)
    labeled = ner_align.build_instances(store, mentions)
    report = ner_align.alignment_report(store, mentions)

    corpus_mod.write_instances(labeled.instances, out_dir / "dataset.jsonl")
    corpus_mod.write_instances(labeled.unrecoverable, out_dir / "unrecoverable.jsonl")
    ner_align.write_alignment_report(report, out_dir / "alignment_report.json")
    _write_stage_log(out_dir, "prepare", {"ner": ner_path, "out_dir": out_dir})

    n_pos = sum(1 for i in labeled.instances if i.label is not Label.NO_REL)
    print(f"{len(labeled.instances)} instances ({n_pos} positive, "
          f"{len(labeled.instances) - n_pos} negative)")
    print(f"alignment: total={report.total_positive_pairs} both_exact={report.both_exact} "
          f"aligned_not_exact={report.aligned_not_exact} entity_missing={report.entity_missing}")
    print(f"{len(labeled.unrecoverable)} gold triples unrecoverable from NER output")
    return 0


def cmd_split(s: _Settings) -> int:
    out_dir = s.out_dir()
    ratio = float(s.get("split", "ratio"))
    max_trials = int(s.get("split", "max_seed_trials"))
    threshold = float(s.get("split", "kl_threshold_bits"))
    store = corpus_mod.load_corpus(_artifact(out_dir, "corpus.jsonl"))
    instances = corpus_mod.load_instances(_artifact(out_dir, "dataset.jsonl"))
    doc_labels = splitter.labels_by_doc(instances, all_doc_ids=sorted(store.documents))
    split = splitter.split_corpus(
        doc_labels, ratio=ratio, max_seed_trials=max_trials, kl_threshold_bits=threshold
    )
    splitter.write_split(split, out_dir / "split.tsv")
    _write_stage_log(out_dir, "split", {
        "ratio": ratio, "max_seed_trials": max_trials,
        "kl_threshold_bits": threshold, "out_dir": out_dir,
    })
    print(f"train={len(split.train_doc_ids)} dev={len(split.dev_doc_ids)} "
          f"seed_used={split.seed_used} kl_bits={split.kl_bits:.6f}")
    return 0


def cmd_encode(s: _Settings) -> int:
    out_dir = s.out_dir()
    vocab_path = s.path("vocab")
    if not vocab_path.exists():
        raise CliError(f"vocabulary file not found: {vocab_path}", exit_code=2)
    max_len = int(s.get("encode", "max_len"))
    lowercase = bool(s.get("encode", "lowercase"))
    vocab = enc.load_vocab(vocab_path)
    store = corpus_mod.load_corpus(_artifact(out_dir, "corpus.jsonl"))
    instances = corpus_mod.load_instances(_artifact(out_dir, "dataset.jsonl"))
    split = splitter.read_split(_artifact(out_dir, "split.tsv"))

    train_insts = [i for i in instances if i.doc_id in split.train_doc_ids]
    dev_insts = [i for i in instances if i.doc_id in split.dev_doc_ids]
    enc.write_encoded(
        enc.encode_instances(train_insts, store, vocab, max_len=max_len, lowercase=lowercase),
        out_dir / "encoded_train.jsonl",
    )
    enc.write_encoded(
        enc.encode_instances(dev_insts, store, vocab, max_len=max_len, lowercase=lowercase),
        out_dir / "encoded_dev.jsonl",
    )
    _write_stage_log(out_dir, "encode", {
        "vocab": vocab_path, "max_len": max_len, "lowercase": lowercase, "out_dir": out_dir,
    })
    print(f"encoded {len(train_insts)} train / {len(dev_insts)} dev examples")
    return 0


def _model_config(s: _Settings, vocab_size: int) -> net.ModelConfig:
    return net.ModelConfig(
        num_layers=int(s.get("model", "num_layers")),
        num_heads=int(s.get("model", "num_heads")),
        hidden_dim=int(s.get("model", "hidden_dim")),
        ffn_dim=int(s.get("model", "ffn_dim")),
        vocab_size=vocab_size,
        max_positions=int(s.get("model", "max_positions")),
        dropout=float(s.get("model", "dropout")),
    )


def _train_config(s: _Settings) -> trainer_mod.TrainConfig:
    return trainer_mod.TrainConfig(
        batch_size=int(s.get("train", "batch_size")),
        max_epochs=int(s.get("train", "max_epochs")),
        patience=int(s.get("train", "patience")),
        num_restarts=int(s.get("train", "num_restarts")),
        stopping_criterion=StoppingCriterion(s.get("train", "criterion")),
        learning_rate=float(s.get("train", "learning_rate")),
        master_seed=s.master_seed(),
    )


def cmd_train(s: _Settings) -> int:
    out_dir = s.out_dir()
    vocab_path = s.path("vocab")
    vocab = enc.load_vocab(vocab_path)
    train_data = enc.load_encoded(_artifact(out_dir, "encoded_train.jsonl"))
    dev_data = enc.load_encoded(_artifact(out_dir, "encoded_dev.jsonl"))
    model_cfg = _model_config(s, vocab_size=len(vocab))
    train_cfg = _train_config(s)

    result = trainer_mod.run_restarts(
        train_cfg, model_cfg, train_data, dev_data, pad_id=vocab.pad_id
    )
    net.save_checkpoint(result.params, out_dir / "model.ckpt")
    trainer_mod.write_train_log(result.history, out_dir / "train_log.txt", result.restart_index)
    history_record = {
        "criterion": train_cfg.stopping_criterion.value,
        "restart_index": result.restart_index,
        "restart_scores": result.all_scores,
        "best_epoch": result.history.best_epoch,
        "stop_epoch": result.history.stop_epoch,
        "epochs": [
            {
                "epoch": r.epoch,
                "train_loss": r.train_loss,
                "criterion_score": r.criterion_score,
                "report": metrics_mod.report_to_dict(r.dev_report),
            }
            for r in result.history.records
        ],
    }
    with (out_dir / "history.json").open("w", encoding="utf-8") as fh:
        json.dump(history_record, fh, sort_keys=True, indent=2)
        fh.write("\n")

    effective = {f"model.{k}": s.get("model", k) for k in DEFAULTS["model"]}
    effective.update({f"train.{k}": s.get("train", k) for k in DEFAULTS["train"]})
    effective["train.master_seed"] = train_cfg.master_seed
    effective["vocab"] = vocab_path
    _write_stage_log(out_dir, "train", effective)
    print(f"best restart {result.restart_index}: criterion "
          f"{train_cfg.stopping_criterion.value} score {result.history.best_score:.6f} "
          f"at epoch {result.history.best_epoch} (stopped at {result.history.stop_epoch})")
    return 0


def _read_predictions(path: Path, expected: int) -> list[Label]:
    preds = []
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            preds.append(Label.from_token(line.split("\t")[-1]))
    if len(preds) != expected:
        raise CliError(
            f"{path}: {len(preds)} predictions for {expected} dev examples", exit_code=1
        )
    return preds


def cmd_evaluate(s: _Settings) -> int:
    out_dir = s.out_dir()
    dev_data = enc.load_encoded(_artifact(out_dir, "encoded_dev.jsonl"))
    golds = [ex.label for ex in dev_data]
    if any(g is None for g in golds):
        raise CliError("encoded dev data is unlabeled; cannot evaluate")

    predictions_path = getattr(s.args, "predictions", None)
    if predictions_path is not None:
        preds = _read_predictions(Path(predictions_path), len(dev_data))
        source = f"predictions file {predictions_path}"
    else:
        ckpt = getattr(s.args, "checkpoint", None)
        ckpt_path = Path(ckpt) if ckpt else _artifact(out_dir, "model.ckpt")
        params = net.load_checkpoint(ckpt_path)
        vocab_path = s.path("vocab", required=False)
        pad_id = enc.load_vocab(vocab_path).pad_id if vocab_path else 0
        batch = int(s.get("train", "batch_size"))
        preds = []
        for lo in range(0, len(dev_data), batch):
            preds.extend(net.predict(params, dev_data[lo : lo + batch], pad_id=pad_id))
        source = f"checkpoint {ckpt_path}"

    report = metrics_mod.metrics_report(preds, golds)
    metrics_mod.write_report(report, out_dir / "report.tsv", out_dir / "report.json")
    with (out_dir / "predictions.tsv").open("w", encoding="utf-8") as fh:
        for ex, pred in zip(dev_data, preds):
            fh.write(f"{ex.doc_id}\t{ex.gene_id}\t{ex.disease_id}"
                     f"\t{ex.label.token}\t{pred.token}\n")
    _write_stage_log(out_dir, "evaluate", {"source": source, "out_dir": out_dir})
    print(f"evaluated {len(dev_data)} dev examples from {source}")
    print(metrics_mod.format_report_table(report), end="")
    return 0


def cmd_baseline(s: _Settings) -> int:
    out_dir = s.out_dir()
    runs = int(s.get("baseline", "runs"))
    instances = corpus_mod.load_instances(_artifact(out_dir, "dataset.jsonl"))
    split = splitter.read_split(_artifact(out_dir, "split.tsv"))
    train_labels = [i.label for i in instances if i.doc_id in split.train_doc_ids]
    dev_labels = [i.label for i in instances if i.doc_id in split.dev_doc_ids]
    if not train_labels or not dev_labels:
        raise CliError("empty train or dev side; cannot compute the baseline")
    dist = splitter.label_distribution(train_labels)
    report = metrics_mod.random_baseline(dist, dev_labels, n_runs=runs, seed=s.master_seed())
    metrics_mod.write_report(report, out_dir / "baseline_report.tsv",
                             out_dir / "baseline_report.json")
    _write_stage_log(out_dir, "baseline", {"runs": runs, "seed": s.master_seed(),
                                           "out_dir": out_dir})
    print(f"baseline over {runs} runs, {len(dev_labels)} dev instances")
    print(metrics_mod.format_report_table(report), end="")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pairctx-re",
        description="Gene / function-change / disease relation extraction pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--out-dir", dest="out_dir", help="artifact directory")
        return p

    p = add("ingest", cmd_ingest, "validate and canonicalize corpus + annotations")
    p.add_argument("--corpus", help="corpus JSONL (doc_id, text)")
    p.add_argument("--annotations", help="annotation JSONL")
    p.add_argument("--include-title", dest="include_title",
                   action=argparse.BooleanOptionalAction, default=None,
                   help="concatenate title into the abstract text (default: yes)")

    p = add("prepare", cmd_prepare, "align NER output, build the labeled pair dataset")
    p.add_argument("--ner", help="tagger mentions TSV")

    p = add("split", cmd_split, "KL-constrained 80/20 document split")
    p.add_argument("--ratio", type=float)
    p.add_argument("--max-seed-trials", dest="max_seed_trials", type=int)
    p.add_argument("--kl-threshold-bits", dest="kl_threshold_bits", type=float)

    p = add("encode", cmd_encode, "build capped pair-context subword sequences")
    p.add_argument("--vocab", help="one subword per line")
    p.add_argument("--max-len", dest="max_len", type=int)
    p.add_argument("--lowercase", action=argparse.BooleanOptionalAction, default=None)

    p = add("train", cmd_train, "train with balanced batches, restarts, early stopping")
    p.add_argument("--vocab")
    p.add_argument("--criterion", choices=[c.value for c in StoppingCriterion])
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--restarts", dest="num_restarts", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--master-seed", dest="master_seed", type=int)
    p.add_argument("--num-layers", dest="num_layers", type=int)
    p.add_argument("--num-heads", dest="num_heads", type=int)
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    p.add_argument("--ffn-dim", dest="ffn_dim", type=int)
    p.add_argument("--max-positions", dest="max_positions", type=int)
    p.add_argument("--dropout", type=float)

    p = add("evaluate", cmd_evaluate, "score a checkpoint or prediction file on dev")
    p.add_argument("--checkpoint")
    p.add_argument("--predictions", help="one gold-format label token per line")
    p.add_argument("--vocab")
    p.add_argument("--batch-size", dest="batch_size", type=int)

    p = add("baseline", cmd_baseline, "categorical-sampling baseline averaged over runs")
    p.add_argument("--runs", type=int)
    p.add_argument("--master-seed", dest="master_seed", type=int)
    return p


_KNOWN_ERRORS = (
    corpus_mod.CorpusFormatError,
    corpus_mod.CorpusValidationError,
    ner_align.NerFormatError,
    ner_align.LabelConflictError,
    splitter.SplitError,
    enc.VocabError,
    enc.PairTooLongError,
    ValueError,
    RuntimeError,
)


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        settings = _Settings(args)
        return args.func(settings)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except _KNOWN_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
