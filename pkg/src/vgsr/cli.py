"""Command-line pipeline: featurize, synthesize, train, score, evaluate,
search, simulate-asr.

One binary with subcommands; every output embeds the run seed and the
model config hash where one applies, and a rerun with the same seed
reproduces each artifact byte for byte.  Exit codes: 0 success, 1 usage
error, 2 data/format error, 3 numerical failure.  Errors print a single
"error: ..." line on stderr.  VGSR_THREADS caps internal parallelism.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import baselines, corpus as corpus_mod, features as features_mod
from .errors import DataFormatError, NumericalError, UsageError, VgsrError
from .model import (
    ModelConfig,
    SpeechModel,
    fit,
    load_checkpoint,
    save_checkpoint,
)
from .features import add_deltas, mfcc, pad_or_truncate, read_wav, write_features
from .retrieval import ScoreMatrix, evaluate_all, rank_utterances
from .stopwords import DEFAULT_STOPWORDS, load_stopwords
from .synth import synth_corpus

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class _CliUsage(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _CliUsage(message)


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# synthesize
# ---------------------------------------------------------------------------

def cmd_synthesize(args) -> int:
    sc = synth_corpus(
        vocab_size=args.vocab_size,
        n_train=args.train,
        n_dev=args.dev,
        n_test=args.test,
        seed=args.seed,
        tag_noise=args.tag_noise,
        n_synonym_pairs=args.synonym_pairs,
    )
    out = args.out
    feat_dir = os.path.join(out, "features")
    os.makedirs(feat_dir, exist_ok=True)
    for rec in sc.corpus.records:
        rel = os.path.join("features", f"{rec.utt_id}.vgsf")
        write_features(os.path.join(out, rel), rec.features)
        rec.features_path = rel
        rec.features = None
    corpus_mod.save_manifest(sc.corpus, os.path.join(out, "manifest.jsonl"))
    corpus_mod.save_annotations(sc.annotations, os.path.join(out, "annotations.csv"))
    sc.vocab.save(os.path.join(out, "vocab.txt"))
    baselines.save_embeddings(sc.embeddings, os.path.join(out, "embeddings.txt"))
    baselines.save_taxonomy(sc.taxonomy_edges, os.path.join(out, "taxonomy.tsv"))
    _write_json(
        os.path.join(out, "meta.json"),
        {
            "seed": sc.seed,
            "tag_noise": sc.tag_noise,
            "synonym_pairs": [list(p) for p in sc.synonym_pairs],
            "params": sc.params,
        },
    )
    print(f"wrote {len(sc.corpus)} utterances to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# featurize
# ---------------------------------------------------------------------------

def cmd_featurize(args) -> int:
    wav_names = sorted(n for n in os.listdir(args.wav_dir) if n.lower().endswith(".wav"))
    carried = {}
    if os.path.exists(args.manifest):
        for rec in corpus_mod.load_manifest(args.manifest).records:
            carried[rec.utt_id] = rec
    os.makedirs(args.out, exist_ok=True)
    manifest_dir = os.path.dirname(os.path.abspath(args.manifest)) or "."
    records = []
    failures = 0
    for name in wav_names:
        utt_id = os.path.splitext(name)[0]
        try:
            waveform = read_wav(os.path.join(args.wav_dir, name))
            feats = add_deltas(mfcc(waveform))
        except VgsrError as exc:
            print(f"error: {name}: {exc}", file=sys.stderr)
            failures += 1
            continue
        feat_path = os.path.join(args.out, f"{utt_id}.vgsf")
        write_features(feat_path, feats)
        old = carried.get(utt_id)
        records.append(
            corpus_mod.UtteranceRecord(
                utt_id=utt_id,
                split=old.split if old else args.split,
                features_path=os.path.relpath(feat_path, manifest_dir),
                transcription=old.transcription if old else None,
                tags=old.tags if old else None,
            )
        )
    corpus_mod.save_manifest(corpus_mod.Corpus(records, base_dir=manifest_dir), args.manifest)
    print(f"featurized {len(records)} of {len(wav_names)} files")
    return EXIT_DATA if failures else EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _load_model_config(args) -> ModelConfig:
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{args.config}: invalid JSON ({exc})") from exc
        config = ModelConfig.from_dict(raw)
    else:
        config = ModelConfig()
    if args.seed is not None:
        d = config.to_dict()
        d["seed"] = args.seed
        config = ModelConfig.from_dict(d)
    return config


def cmd_train(args) -> int:
    config = _load_model_config(args)
    cset = corpus_mod.load_manifest(args.manifest)
    vocab = None
    if args.targets == "bow":
        if args.vocab:
            vocab = corpus_mod.Vocabulary.load(args.vocab)
        else:
            texts = [r.transcription for r in cset.split("train") if r.transcription]
            vocab = corpus_mod.build_vocabulary(texts, config.vocab_size, DEFAULT_STOPWORDS)
        if len(vocab) != config.vocab_size:
            raise UsageError(
                f"vocabulary has {len(vocab)} words, model config expects {config.vocab_size}"
            )
    model = SpeechModel(config)
    log = fit(model, cset, targets=args.targets, vocab=vocab)
    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(model, os.path.join(args.out, "checkpoint.vgsr"))
    if vocab is not None and not args.vocab:
        vocab.save(os.path.join(args.out, "vocab.txt"))
    payload = log.to_dict()
    payload["config"] = config.to_dict()
    payload["config_hash"] = config.config_hash()
    payload["learning_rate"] = config.adam.learning_rate
    payload["batch_size"] = config.batch_size
    _write_json(os.path.join(args.out, "train_log.json"), payload)
    print(
        f"trained {log.stopped_epoch} epochs (best {log.best_epoch}), "
        f"final train loss {log.final_train_loss:.4f}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# score
# ---------------------------------------------------------------------------

def _select_keywords(args, vocab) -> list[str]:
    if not args.keywords:
        return list(vocab.words)
    with open(args.keywords, "r", encoding="utf-8") as fh:
        requested = [line.strip() for line in fh if line.strip()]
    missing = [kw for kw in requested if kw not in vocab]
    if missing:
        raise UsageError(f"keywords missing from the vocabulary: {missing}")
    return requested


def cmd_score(args) -> int:
    cset = corpus_mod.load_manifest(args.manifest)
    records = cset.split(args.split)
    if not records:
        raise UsageError(f"manifest has no records in split {args.split!r}")
    vocab = corpus_mod.Vocabulary.load(args.vocab)
    keywords = _select_keywords(args, vocab)
    kw_idx = [vocab.index[kw] for kw in keywords]
    utt_ids = [r.utt_id for r in records]
    if args.tags_as_scores:
        rows = []
        for rec in records:
            if rec.tags is None:
                raise UsageError(f"record {rec.utt_id!r} has no tags to use as scores")
            if rec.tags.size != len(vocab):
                raise UsageError(
                    f"record {rec.utt_id!r} tags have length {rec.tags.size}, "
                    f"vocabulary has {len(vocab)}"
                )
            rows.append(np.asarray(rec.tags)[kw_idx])
        meta = {"source": "tags"}
    else:
        if not args.checkpoint:
            raise UsageError("either --checkpoint or --tags-as-scores is required")
        model = load_checkpoint(args.checkpoint)
        if model.config.vocab_size != len(vocab):
            raise UsageError(
                f"model predicts {model.config.vocab_size} keywords, "
                f"vocabulary has {len(vocab)}"
            )
        rows = []
        for rec in records:
            feats = pad_or_truncate(cset.load_features(rec), model.config.max_frames)
            rows.append(model.forward(feats)[kw_idx])
        meta = {
            "source": "model",
            "seed": model.config.seed,
            "config_hash": model.config.config_hash(),
        }
    matrix = ScoreMatrix(utt_ids, keywords, np.vstack(rows), meta=meta)
    matrix.save(args.out)
    print(f"scored {len(utt_ids)} utterances x {len(keywords)} keywords")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

def cmd_evaluate(args) -> int:
    matrix = ScoreMatrix.load(args.scores)
    annotations = corpus_mod.load_annotations(args.annotations, annotators=args.annotators)
    labels = corpus_mod.aggregate_annotations(annotations, threshold=args.threshold)
    transcriptions = corpus_mod.load_manifest(args.transcriptions).transcriptions()
    meta = dict(matrix.meta)
    meta.update({"mode": args.mode, "threshold": args.threshold})
    report = evaluate_all(
        matrix, labels, annotations, transcriptions, mode=args.mode, meta=meta
    )
    report.save(args.report)
    if args.per_keyword:
        report.save_per_keyword_csv(args.per_keyword)
    print(
        f"{args.mode}: P@10={report.p_at_10:.3f} P@N={report.p_at_n:.3f} "
        f"EER={report.eer:.3f} AP={report.ap:.3f}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# search
# ---------------------------------------------------------------------------

def cmd_search(args) -> int:
    cset = corpus_mod.load_manifest(args.manifest)
    records = cset.split(args.split) if args.split else cset.records
    if not records:
        raise UsageError("no records to search")
    vocab = corpus_mod.Vocabulary.load(args.vocab)
    if args.keyword not in vocab:
        raise UsageError(f"keyword {args.keyword!r} is not in the vocabulary")
    model = load_checkpoint(args.checkpoint)
    rows = []
    for rec in records:
        feats = pad_or_truncate(cset.load_features(rec), model.config.max_frames)
        rows.append(model.forward(feats))
    matrix = ScoreMatrix([r.utt_id for r in records], list(vocab.words), np.vstack(rows))
    ranked = rank_utterances(matrix, args.keyword)[: args.top]
    col = {u: matrix.column(args.keyword)[i] for i, u in enumerate(matrix.utt_ids)}
    for rank, utt in enumerate(ranked, start=1):
        rec = cset.by_id[utt]
        text = rec.transcription if rec.transcription is not None else ""
        print(f"{rank}\t{utt}\t{col[utt]:.6f}\t{text}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate-asr
# ---------------------------------------------------------------------------

def cmd_simulate_asr(args) -> int:
    if not 0.0 <= args.wer <= 1.0:
        raise UsageError(f"--wer must lie in [0, 1], got {args.wer}")
    cset = corpus_mod.load_manifest(args.manifest)
    train_texts = [r.transcription for r in cset.split("train") if r.transcription]
    texts = train_texts or [r.transcription for r in cset.records if r.transcription]
    if not texts:
        raise UsageError("manifest has no transcriptions to corrupt")
    tokens = sorted({t for text in texts for t in corpus_mod.tokenize(text)})
    unigram = baselines.fit_unigram(texts, corpus_mod.Vocabulary(tokens))
    rng = np.random.default_rng(args.seed)
    references = {}
    hypotheses = {}
    out_records = []
    for rec in cset.records:
        new = corpus_mod.UtteranceRecord(
            utt_id=rec.utt_id,
            split=rec.split,
            features_path=rec.features_path,
            transcription=rec.transcription,
            tags=rec.tags,
        )
        if rec.transcription is not None:
            corrupted = baselines.simulate_asr_errors(rec.transcription, args.wer, unigram, rng)
            references[rec.utt_id] = rec.transcription
            hypotheses[rec.utt_id] = corrupted
            new.transcription = corrupted
        out_records.append(new)
    out_corpus = corpus_mod.Corpus(out_records)
    with open(args.out, "w", encoding="utf-8") as fh:
        for rec in out_corpus.records:
            d = rec.to_json_dict()
            d["wer_target"] = args.wer
            fh.write(json.dumps(d, sort_keys=True) + "\n")
    measured = baselines.measure_corpus_wer(hypotheses, references)
    _write_json(
        args.out + ".wer.json",
        {
            "target_wer": args.wer,
            "measured_wer": measured,
            "seed": args.seed,
            "reference_words": sum(len(corpus_mod.tokenize(t)) for t in references.values()),
        },
    )
    print(f"target WER {args.wer:.2f}, measured {measured:.3f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument wiring
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="vgsr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthesize", help="generate a seeded synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--vocab-size", type=int, default=20)
    p.add_argument("--train", type=int, default=500)
    p.add_argument("--dev", type=int, default=100)
    p.add_argument("--test", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tag-noise", type=float, default=0.1)
    p.add_argument("--synonym-pairs", type=int, default=None)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("featurize", help="extract MFCC+delta features from WAV files")
    p.add_argument("--wav-dir", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="train", choices=corpus_mod.SPLITS)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train the keyword prediction model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--targets", required=True, choices=("vision", "bow"))
    p.add_argument("--config", default=None, help="JSON model config (defaults to full scale)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--vocab", default=None, help="vocabulary file for bow targets")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score utterances against every keyword")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--manifest", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--split", default="test", choices=corpus_mod.SPLITS)
    p.add_argument("--keywords", default=None, help="file restricting scored keywords")
    p.add_argument("--tags-as-scores", action="store_true",
                   help="use the records' tag vectors as the score matrix")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("evaluate", help="compute the retrieval metric report")
    p.add_argument("--scores", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--transcriptions", required=True, help="manifest carrying transcriptions")
    p.add_argument("--mode", required=True, choices=("exact", "semantic"))
    p.add_argument("--threshold", type=int, default=3)
    p.add_argument("--annotators", type=int, default=5)
    p.add_argument("--report", required=True)
    p.add_argument("--per-keyword", default=None, help="optional per-keyword CSV")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("search", help="rank utterances for one keyword")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--keyword", required=True)
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--split", default=None, choices=corpus_mod.SPLITS)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("simulate-asr", help="corrupt transcriptions at a target WER")
    p.add_argument("--manifest", required=True)
    p.add_argument("--wer", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate_asr)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _CliUsage as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except VgsrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
