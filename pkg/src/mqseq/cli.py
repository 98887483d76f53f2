"""Command-line pipeline: ingest, embed, train, eval, predict, project.

Every subcommand is reproducible: identical inputs and seed give
byte-identical output files. Setting precedence is command-line flag >
config file > environment variable > built-in default; the only environment
override is MQSEQ_CACHE_DIR for the cache directory.

Exit codes: 0 ok, 2 ingest/parse, 3 embed/backend, 4 shape/train,
5 numerical.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from contextlib import contextmanager
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import classifier, dataset, embedding, encoder, evaluation, tsne
from .dataset import Split
from .errors import MqseqError, NumericalDivergence, ShapeHeaderMismatch, ShapeMismatch

EXIT_OK = 0
EXIT_INGEST = 2
EXIT_BACKEND = 3
EXIT_SHAPE = 4
EXIT_NUMERICAL = 5

CACHE_ENV_VAR = "MQSEQ_CACHE_DIR"
DEFAULT_OUT_DIR = "out"
DEFAULT_SEED = 42

STRATEGIES = ("train_only", "train_plus_dev")


# --- configuration resolution -------------------------------------------------

def read_config_file(path: str | Path) -> dict[str, str]:
    """Flat key=value text; blank lines and #-comments ignored."""
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for raw in f:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"config line is not key=value: {line!r}")
            values[key.strip()] = value.strip()
    return values


class SettingResolver:
    """Applies flag > config file > environment > default, with casting."""

    def __init__(self, args: argparse.Namespace, file_config: dict[str, str]):
        self._args = args
        self._file = file_config

    def get(self, name: str, default, cast=None, env: str | None = None):
        flag = getattr(self._args, name, None)
        if flag is not None:
            return flag
        if name in self._file:
            raw = self._file[name]
        elif env is not None and env in os.environ:
            raw = os.environ[env]
        else:
            return default
        if cast is None:
            return raw
        return cast(raw)

    def out_dir(self) -> Path:
        return Path(self.get("out_dir", DEFAULT_OUT_DIR))

    def cache_dir(self) -> Path:
        default = self.out_dir() / "cache"
        return Path(self.get("cache_dir", default, env=CACHE_ENV_VAR))

    def seed(self) -> int:
        return int(self.get("seed", DEFAULT_SEED, cast=int))


# --- shared file layout ---------------------------------------------------------

def records_path(out_dir: Path, split: Split) -> Path:
    return out_dir / f"records_{split.value}.jsonl"


def cache_path(cache_dir: Path, split: Split) -> Path:
    return cache_dir / f"embeddings_{split.value}.mqsb"


def checkpoint_path(out_dir: Path, strategy: str) -> Path:
    return out_dir / f"checkpoint_{strategy}.mqck"


@contextmanager
def _cache_lock(cache_dir: Path, timeout: float = 30.0):
    """Single-writer guard for the cache directory."""
    lock = cache_dir / ".lock"
    deadline = time.monotonic() + timeout
    while True:
        try:
            fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            break
        except FileExistsError:
            if time.monotonic() > deadline:
                raise TimeoutError(f"cache directory is locked: {lock}")
            time.sleep(0.05)
    try:
        yield
    finally:
        os.close(fd)
        lock.unlink(missing_ok=True)


def _load_vocab(out_dir: Path) -> dataset.SubjectVocabulary:
    return dataset.read_vocabulary(out_dir / "vocabulary.txt")


def _labels_for(matrix: embedding.EmbeddingMatrix, records: list[dataset.QuestionRecord],
                vocab: dataset.SubjectVocabulary) -> tuple[np.ndarray, np.ndarray]:
    """Gold labels aligned to cache rows; rows with unknown subjects are masked out."""
    by_id = {r.id: r.subject_name for r in records}
    index_of = vocab.index_of
    labels = np.full(matrix.n, -1, dtype=np.int64)
    for i, rec_id in enumerate(matrix.ids):
        if rec_id not in by_id:
            raise ShapeMismatch(f"cache row {rec_id!r} has no matching record; re-run embed")
        subject = by_id[rec_id]
        if subject in index_of:
            labels[i] = index_of[subject]
    keep = labels >= 0
    return labels, keep


# --- subcommands ----------------------------------------------------------------

def cmd_ingest(args: argparse.Namespace, resolver: SettingResolver) -> int:
    out_dir = resolver.out_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    sources = {Split.TRAIN: args.train, Split.DEV: args.dev, Split.TEST: args.test}
    records: dict[Split, list[dataset.QuestionRecord]] = {}
    for split, path in sources.items():
        if path is None:
            print(f"[ingest] missing --{split.value} file", file=sys.stderr)
            return EXIT_INGEST
        try:
            records[split] = dataset.load_split(path, split)
        except MqseqError as e:
            print(f"[ingest] {path}: {e}", file=sys.stderr)
            return EXIT_INGEST
        except OSError as e:
            print(f"[ingest] cannot read {path}: {e}", file=sys.stderr)
            return EXIT_INGEST

    vocab = dataset.build_vocabulary(records[Split.TRAIN])
    everything = [r for split in Split for r in records[split]]
    summary = dataset.summarize_splits(everything, vocab)

    for split in Split:
        dataset.write_records(records[split], records_path(out_dir, split))
    dataset.write_vocabulary(vocab, out_dir / "vocabulary.txt")
    table = dataset.format_summary(summary, vocab)
    (out_dir / "summary.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    print(f"[ingest] {vocab.K} subjects; record store under {out_dir}")
    return EXIT_OK


def _embed_digest(records_file: Path, backend_desc: str, batch_size: int,
                  spec_text: str) -> str:
    h = hashlib.sha256()
    h.update(records_file.read_bytes())
    h.update(backend_desc.encode())
    h.update(str(batch_size).encode())
    h.update(spec_text.encode())
    return h.hexdigest()


def cmd_embed(args: argparse.Namespace, resolver: SettingResolver) -> int:
    out_dir = resolver.out_dir()
    cache_dir = resolver.cache_dir()
    cache_dir.mkdir(parents=True, exist_ok=True)
    seed = resolver.seed()
    backend_kind = resolver.get("backend", "reference")
    batch_size = int(resolver.get("batch_size", embedding.DEFAULT_BATCH_SIZE, cast=int))
    dim = int(resolver.get("dim", 384, cast=int))
    splits = list(Split) if args.split == "all" else [Split(args.split)]

    try:
        if backend_kind == "loaded":
            model_dir = resolver.get("model", None)
            if model_dir is None:
                print("[embed] --model is required with --backend loaded", file=sys.stderr)
                return EXIT_BACKEND
            backend = encoder.load_backend(model_dir)
            spec = encoder.load_artifact_tokenizer(model_dir)
            backend_desc = f"loaded:{Path(model_dir).resolve()}:{backend.dim}"
        else:
            train_records = dataset.load_split(records_path(out_dir, Split.TRAIN), Split.TRAIN)
            backend = encoder.reference_backend(dim=dim, seed=seed)
            spec = encoder.build_whitespace_spec([r.question_text for r in train_records])
            backend_desc = f"reference:{dim}:{seed}"

        spec_file = cache_dir / "tokenizer.spec"
        with _cache_lock(cache_dir):
            encoder.write_tokenizer_spec(spec, spec_file)
            for split in splits:
                rec_file = records_path(out_dir, split)
                records = dataset.load_split(rec_file, split)
                digest = _embed_digest(rec_file, backend_desc, batch_size,
                                       spec_file.read_text(encoding="utf-8"))
                target = cache_path(cache_dir, split)
                meta = target.with_suffix(".mqsb.meta")
                if target.exists() and meta.exists() and not args.force \
                        and meta.read_text().strip() == digest:
                    print(f"[embed] {split.value}: cache up to date")
                    continue
                matrix = embedding.embed_corpus(records, backend, spec, batch_size)
                embedding.write_cache(matrix, target)
                meta.write_text(digest + "\n")
                print(f"[embed] {split.value}: N={matrix.n} D={matrix.dim} -> {target}")
    except MqseqError as e:
        print(f"[embed] {e}", file=sys.stderr)
        return EXIT_BACKEND
    except OSError as e:
        print(f"[embed] {e}", file=sys.stderr)
        return EXIT_BACKEND
    return EXIT_OK


def _train_config(resolver: SettingResolver) -> classifier.TrainConfig:
    return classifier.TrainConfig(
        learning_rate=float(resolver.get("learning_rate", 1e-5, cast=float)),
        epsilon=float(resolver.get("epsilon", 1e-8, cast=float)),
        weight_decay=float(resolver.get("weight_decay", 0.0, cast=float)),
        beta1=float(resolver.get("beta1", 0.9, cast=float)),
        beta2=float(resolver.get("beta2", 0.999, cast=float)),
        epochs=int(resolver.get("epochs", 10, cast=int)),
        steps_per_epoch=int(resolver.get("steps_per_epoch", 100, cast=int)),
        batch_size=int(resolver.get("batch_size", 8, cast=int)),
        seed=resolver.seed(),
    )


def _training_rows(out_dir: Path, cache_dir: Path, strategy: str,
                   vocab: dataset.SubjectVocabulary) -> tuple[np.ndarray, np.ndarray]:
    splits = [Split.TRAIN] if strategy == "train_only" else [Split.TRAIN, Split.DEV]
    blocks, label_blocks, dims = [], [], set()
    for split in splits:
        matrix = embedding.read_cache(cache_path(cache_dir, split))
        records = dataset.load_split(records_path(out_dir, split), split)
        labels, keep = _labels_for(matrix, records, vocab)
        dims.add(matrix.dim)
        blocks.append(matrix.data[keep])
        label_blocks.append(labels[keep])
    if len(dims) != 1:
        raise ShapeMismatch(f"split caches disagree on embedding width: {sorted(dims)}")
    return np.vstack(blocks), np.concatenate(label_blocks)


def _append_run_log(out_dir: Path, entry: dict) -> None:
    """Run log keyed by (config hash, strategy); repeated identical runs no-op."""
    log = out_dir / "runs.log"
    key = (entry["config_hash"], entry["strategy"])
    if log.exists():
        for line in log.read_text(encoding="utf-8").splitlines():
            existing = json.loads(line)
            if (existing.get("config_hash"), existing.get("strategy")) == key:
                return
    with open(log, "a", encoding="utf-8") as f:
        f.write(json.dumps(entry, sort_keys=True) + "\n")


def cmd_train(args: argparse.Namespace, resolver: SettingResolver) -> int:
    out_dir = resolver.out_dir()
    cache_dir = resolver.cache_dir()
    strategy = resolver.get("strategy", "train_only")
    config = _train_config(resolver)
    try:
        vocab = _load_vocab(out_dir)
        X, labels = _training_rows(out_dir, cache_dir, strategy, vocab)
        state, history = classifier.train(X, labels, config, num_classes=vocab.K)
    except MqseqError as e:
        print(f"[train] {e}", file=sys.stderr)
        return EXIT_SHAPE
    except OSError as e:
        print(f"[train] {e}", file=sys.stderr)
        return EXIT_SHAPE

    target = checkpoint_path(out_dir, strategy)
    classifier.save_checkpoint(state, target, config)
    history_file = out_dir / f"history_{strategy}.json"
    history_file.write_text(json.dumps({
        "config": asdict(config),
        "strategy": strategy,
        "step_losses": history.step_losses,
        "epoch_losses": history.epoch_losses,
    }, sort_keys=True), encoding="utf-8")
    _append_run_log(out_dir, {
        "config_hash": f"{config.stable_hash():016x}",
        "strategy": strategy,
        "steps": len(history.step_losses),
        "final_epoch_loss": history.epoch_losses[-1],
    })
    print(f"[train] {strategy}: {len(history.step_losses)} steps, "
          f"final epoch loss {history.epoch_losses[-1]:.6f} -> {target}")
    return EXIT_OK


def _predictions_for(out_dir: Path, cache_dir: Path, split: Split, strategy: str,
                     vocab: dataset.SubjectVocabulary):
    matrix = embedding.read_cache(cache_path(cache_dir, split))
    state, _ = classifier.load_checkpoint(checkpoint_path(out_dir, strategy),
                                          expected_dim=matrix.dim)
    if state.num_classes != vocab.K:
        raise ShapeHeaderMismatch(f"checkpoint has {state.num_classes} classes, "
                                  f"vocabulary has {vocab.K}")
    records = dataset.load_split(records_path(out_dir, split), split)
    labels, keep = _labels_for(matrix, records, vocab)
    predictions = classifier.predict(state, matrix.data)
    return matrix, predictions, labels, keep


def _write_predictions_csv(path: Path, matrix, predictions, labels,
                           vocab: dataset.SubjectVocabulary) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "gold", "predicted"])
        for rec_id, gold, pred in zip(matrix.ids, labels, predictions):
            gold_name = vocab.names[gold] if gold >= 0 else ""
            writer.writerow([rec_id, gold_name, vocab.names[pred]])


def cmd_eval(args: argparse.Namespace, resolver: SettingResolver) -> int:
    out_dir = resolver.out_dir()
    cache_dir = resolver.cache_dir()
    split = Split(args.split)
    strategies = list(STRATEGIES) if args.compare_strategies \
        else [resolver.get("strategy", "train_only")]
    try:
        vocab = _load_vocab(out_dir)
        for strategy in strategies:
            matrix, predictions, labels, keep = _predictions_for(
                out_dir, cache_dir, split, strategy, vocab)
            if not keep.all():
                print(f"[eval] {int((~keep).sum())} records with unknown subjects "
                      f"excluded from scoring", file=sys.stderr)
            report = evaluation.build_report(predictions[keep], labels[keep], vocab)
            print(f"== {split.value} / {strategy} ==")
            print(evaluation.format_report(report))
            suffix = f"{split.value}_{strategy}"
            evaluation.write_report_kv(report, out_dir / f"report_{suffix}.kv")
            evaluation.write_confusion_csv(report, vocab, out_dir / f"confusion_{suffix}.csv")
            _write_predictions_csv(out_dir / f"predictions_{suffix}.csv",
                                   matrix, predictions, labels, vocab)
    except MqseqError as e:
        print(f"[eval] {e}", file=sys.stderr)
        return EXIT_SHAPE
    except OSError as e:
        print(f"[eval] {e}", file=sys.stderr)
        return EXIT_SHAPE
    return EXIT_OK


def cmd_predict(args: argparse.Namespace, resolver: SettingResolver) -> int:
    out_dir = resolver.out_dir()
    cache_dir = resolver.cache_dir()
    split = Split(args.split)
    strategy = resolver.get("strategy", "train_only")
    try:
        vocab = _load_vocab(out_dir)
        matrix, predictions, labels, _ = _predictions_for(
            out_dir, cache_dir, split, strategy, vocab)
        target = out_dir / f"predictions_{split.value}_{strategy}.csv"
        _write_predictions_csv(target, matrix, predictions, labels, vocab)
        print(f"[predict] {matrix.n} predictions -> {target}")
    except MqseqError as e:
        print(f"[predict] {e}", file=sys.stderr)
        return EXIT_SHAPE
    except OSError as e:
        print(f"[predict] {e}", file=sys.stderr)
        return EXIT_SHAPE
    return EXIT_OK


def cmd_project(args: argparse.Namespace, resolver: SettingResolver) -> int:
    out_dir = resolver.out_dir()
    cache_dir = resolver.cache_dir()
    split = Split(args.split)
    config = tsne.TsneConfig(
        perplexity=float(resolver.get("perplexity", 30.0, cast=float)),
        iterations=int(resolver.get("iterations", 1000, cast=int)),
        learning_rate=float(resolver.get("tsne_learning_rate", 200.0, cast=float)),
        early_exaggeration=float(resolver.get("early_exaggeration", 12.0, cast=float)),
        seed=resolver.seed(),
        max_points=resolver.get("max_points", None, cast=int),
    )
    try:
        vocab = _load_vocab(out_dir)
        matrix = embedding.read_cache(cache_path(cache_dir, split))
        records = dataset.load_split(records_path(out_dir, split), split)
        labels, keep = _labels_for(matrix, records, vocab)
        if not keep.all():
            print(f"[project] {int((~keep).sum())} records with unknown subjects "
                  f"dropped", file=sys.stderr)
        ids = [rec_id for rec_id, k in zip(matrix.ids, keep) if k]
        projection = tsne.project_embeddings(matrix.data[keep], ids, labels[keep], config)
        coords_file = out_dir / f"tsne_{split.value}.csv"
        tsne.write_projection_csv(projection, list(vocab.names), coords_file)
        tsne.write_kl_history(projection, out_dir / f"tsne_{split.value}_kl.txt")
        print(f"[project] {len(projection.ids)} points, "
              f"final KL {projection.kl_history[-1]:.6f} -> {coords_file}")
    except (NumericalDivergence, ValueError) as e:
        print(f"[project] {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (MqseqError, OSError) as e:
        print(f"[project] {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


# --- argument parsing -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mqseq",
        description="Classify exam questions into medical subjects via sentence embeddings.")
    parser.add_argument("--config", help="flat key=value configuration file")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out-dir", dest="out_dir")
        p.add_argument("--cache-dir", dest="cache_dir")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("ingest", help="parse split files and build the record store")
    common(p)
    p.add_argument("--train", required=False)
    p.add_argument("--dev", required=False)
    p.add_argument("--test", required=False)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("embed", help="encode records into per-split embedding caches")
    common(p)
    p.add_argument("--split", choices=["all", "train", "dev", "test"], default="all")
    p.add_argument("--backend", choices=["reference", "loaded"])
    p.add_argument("--model", help="exported encoder artifact directory")
    p.add_argument("--dim", type=int, help="embedding width for the reference backend")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("train", help="train the softmax head on cached embeddings")
    common(p)
    p.add_argument("--strategy", choices=list(STRATEGIES))
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--steps-per-epoch", dest="steps_per_epoch", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a split against gold subjects")
    common(p)
    p.add_argument("--split", choices=["train", "dev", "test"], default="dev")
    p.add_argument("--strategy", choices=list(STRATEGIES))
    p.add_argument("--compare-strategies", action="store_true",
                   help="report both training strategies side by side")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write per-question predictions")
    common(p)
    p.add_argument("--split", choices=["train", "dev", "test"], default="test")
    p.add_argument("--strategy", choices=list(STRATEGIES))
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("project", help="2-D t-SNE coordinates for a split")
    common(p)
    p.add_argument("--split", choices=["train", "dev", "test"], default="dev")
    p.add_argument("--perplexity", type=float)
    p.add_argument("--iterations", type=int)
    p.add_argument("--tsne-learning-rate", dest="tsne_learning_rate", type=float)
    p.add_argument("--early-exaggeration", dest="early_exaggeration", type=float)
    p.add_argument("--max-points", dest="max_points", type=int)
    p.set_defaults(func=cmd_project)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    file_config = read_config_file(args.config) if args.config else {}
    resolver = SettingResolver(args, file_config)
    return args.func(args, resolver)


if __name__ == "__main__":
    sys.exit(main())
