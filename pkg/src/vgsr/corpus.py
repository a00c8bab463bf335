"""Corpus data model and ingestion.

Covers the JSONL utterance manifest, vocabulary construction, bag-of-words
targets, per-keyword annotator counts with their hard majority labels, and
the small file formats (annotations CSV, vocabulary word list) that tie
the CLI stages together.
"""

from __future__ import annotations

import csv
import json
import os
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import DataFormatError, UsageError
from .features import read_features

SPLITS = ("train", "dev", "test")

_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")


def tokenize(text: str) -> list[str]:
    """Lowercases and splits on runs of non-alphanumeric characters."""
    return [t for t in _TOKEN_SPLIT.split(text.lower()) if t]


@dataclass
class UtteranceRecord:
    utt_id: str
    split: str
    features_path: str | None = None
    features: np.ndarray | None = None
    transcription: str | None = None
    tags: np.ndarray | None = None

    def to_json_dict(self) -> dict:
        d: dict = {"utt_id": self.utt_id, "split": self.split}
        if self.features_path is not None:
            d["features"] = self.features_path
        if self.transcription is not None:
            d["transcription"] = self.transcription
        if self.tags is not None:
            d["tags"] = [float(v) for v in self.tags]
        return d


class Corpus:
    """An immutable-by-convention collection of utterance records."""

    def __init__(self, records, base_dir="."):
        self.records = list(records)
        self.base_dir = str(base_dir)
        self.by_id = {}
        for rec in self.records:
            if rec.utt_id in self.by_id:
                raise DataFormatError(f"duplicate utt_id {rec.utt_id!r}")
            self.by_id[rec.utt_id] = rec

    def __len__(self):
        return len(self.records)

    def split(self, name: str) -> list[UtteranceRecord]:
        if name not in SPLITS:
            raise UsageError(f"unknown split {name!r}, expected one of {SPLITS}")
        return [r for r in self.records if r.split == name]

    def load_features(self, rec: UtteranceRecord) -> np.ndarray:
        if rec.features is not None:
            return rec.features
        if rec.features_path is None:
            raise UsageError(f"record {rec.utt_id!r} has no feature source")
        path = rec.features_path
        if not os.path.isabs(path):
            path = os.path.join(self.base_dir, path)
        return read_features(path)

    def transcriptions(self) -> dict[str, str]:
        return {r.utt_id: r.transcription for r in self.records if r.transcription is not None}


def load_manifest(path, expected_tag_len: int | None = None) -> Corpus:
    """Parses a JSONL manifest, one utterance per line.

    Validates id uniqueness, split names, tag ranges and tag-length
    consistency; parse errors carry the offending line number.  Relative
    feature paths resolve against the manifest's directory.
    """
    base_dir = os.path.dirname(os.path.abspath(str(path)))
    records = []
    seen = set()
    tag_len = expected_tag_len
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}: line {lineno}: invalid JSON ({exc})") from exc
            if not isinstance(obj, dict) or "utt_id" not in obj:
                raise DataFormatError(f"{path}: line {lineno}: record needs an utt_id")
            utt_id = str(obj["utt_id"])
            if utt_id in seen:
                raise DataFormatError(f"{path}: line {lineno}: duplicate utt_id {utt_id!r}")
            seen.add(utt_id)
            split = obj.get("split", "train")
            if split not in SPLITS:
                raise DataFormatError(
                    f"{path}: line {lineno}: bad split {split!r}, expected one of {SPLITS}"
                )
            tags = obj.get("tags")
            if tags is not None:
                if isinstance(tags, str):
                    tag_path = tags if os.path.isabs(tags) else os.path.join(base_dir, tags)
                    tags = read_features(tag_path).reshape(-1)
                else:
                    tags = np.asarray(tags, dtype=np.float64).reshape(-1)
                if tag_len is None:
                    tag_len = tags.size
                if tags.size != tag_len:
                    raise DataFormatError(
                        f"{path}: line {lineno}: tag vector has length {tags.size}, expected {tag_len}"
                    )
                if np.any(tags < 0) or np.any(tags > 1):
                    raise DataFormatError(
                        f"{path}: line {lineno}: tag values must lie in [0, 1]"
                    )
            records.append(
                UtteranceRecord(
                    utt_id=utt_id,
                    split=split,
                    features_path=obj.get("features"),
                    transcription=obj.get("transcription"),
                    tags=tags,
                )
            )
    return Corpus(records, base_dir=base_dir)


def save_manifest(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in corpus.records:
            fh.write(json.dumps(rec.to_json_dict(), sort_keys=True) + "\n")


@dataclass
class Vocabulary:
    words: list[str]
    stopwords: frozenset = frozenset()

    def __post_init__(self):
        if len(set(self.words)) != len(self.words):
            raise DataFormatError("vocabulary contains duplicate words")
        overlap = set(self.words) & self.stopwords
        if overlap:
            raise DataFormatError(f"vocabulary contains stopwords: {sorted(overlap)[:5]}")
        self.index = {w: i for i, w in enumerate(self.words)}

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word in self.index

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for w in self.words:
                fh.write(w + "\n")

    @classmethod
    def load(cls, path, stopwords: frozenset = frozenset()) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as fh:
            words = [line.strip() for line in fh if line.strip()]
        return cls(words, stopwords)


def build_vocabulary(transcriptions, size: int, stopwords: frozenset) -> Vocabulary:
    """Top-`size` content words by frequency, ties broken lexicographically."""
    counts = Counter()
    for text in transcriptions:
        counts.update(t for t in tokenize(text) if t not in stopwords)
    if len(counts) < size:
        raise UsageError(
            f"requested a {size}-word vocabulary but only {len(counts)} distinct "
            "content words occur"
        )
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary([w for w, _ in ranked[:size]], stopwords)


def bow_targets(transcription: str, vocab: Vocabulary) -> np.ndarray:
    """Multi-hot occurrence vector; order, count and out-of-vocabulary words
    are discarded."""
    y = np.zeros(len(vocab))
    for tok in tokenize(transcription):
        idx = vocab.index.get(tok)
        if idx is not None:
            y[idx] = 1.0
    return y


# ---------------------------------------------------------------------------
# Annotations
# ---------------------------------------------------------------------------

@dataclass
class AnnotationSet:
    """Per-(utterance, keyword) annotator selection counts."""

    counts: dict
    annotators: int = 5
    keywords: tuple = ()

    def __post_init__(self):
        for (utt, kw), c in self.counts.items():
            if not 0 <= c <= self.annotators:
                raise DataFormatError(
                    f"count {c} for ({utt!r}, {kw!r}) outside [0, {self.annotators}]"
                )
        if not self.keywords:
            self.keywords = tuple(sorted({kw for _, kw in self.counts}))
        else:
            declared = set(self.keywords)
            stray = {kw for _, kw in self.counts if kw not in declared}
            if stray:
                raise DataFormatError(f"counts reference undeclared keywords: {sorted(stray)[:5]}")

    def count(self, utt_id: str, keyword: str) -> int:
        return self.counts.get((utt_id, keyword), 0)


@dataclass
class RelevanceLabels:
    """Hard relevance decisions derived from annotator counts."""

    hard: dict
    threshold: int = 3

    def is_relevant(self, utt_id: str, keyword: str) -> bool:
        return self.hard.get((utt_id, keyword), False)


def aggregate_annotations(annotations: AnnotationSet, threshold: int = 3) -> RelevanceLabels:
    """Majority labelling: relevant when at least `threshold` annotators
    selected the keyword."""
    hard = {pair: c >= threshold for pair, c in annotations.counts.items()}
    return RelevanceLabels(hard=hard, threshold=threshold)


def annotator_agreement(annotations: AnnotationSet, labels: RelevanceLabels) -> float:
    """Mean fraction of annotators that agree with the hard decision."""
    a = annotations.annotators
    total = 0.0
    for pair, c in annotations.counts.items():
        total += (c if labels.hard[pair] else a - c) / a
    return total / len(annotations.counts)


def count_distribution(annotations: AnnotationSet) -> np.ndarray:
    """Proportion of pairs selected by 0..A annotators, normalised to 1."""
    hist = np.zeros(annotations.annotators + 1)
    for c in annotations.counts.values():
        hist[c] += 1
    return hist / hist.sum()


def verbatim_labels(transcriptions: dict, keywords) -> RelevanceLabels:
    """Exact-occurrence labels: relevant iff the keyword token appears in
    the tokenized transcription."""
    hard = {}
    for utt_id, text in transcriptions.items():
        toks = set(tokenize(text))
        for kw in keywords:
            hard[(utt_id, kw)] = kw in toks
    return RelevanceLabels(hard=hard, threshold=1)


ANNOTATION_FIELDS = ("utt_id", "keyword", "count")


def load_annotations(path, annotators: int = 5) -> AnnotationSet:
    counts = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != ANNOTATION_FIELDS:
            raise DataFormatError(
                f"{path}: expected header {','.join(ANNOTATION_FIELDS)}, got {reader.fieldnames}"
            )
        for lineno, row in enumerate(reader, start=2):
            try:
                c = int(row["count"])
            except (TypeError, ValueError):
                raise DataFormatError(f"{path}: line {lineno}: count is not an integer")
            key = (row["utt_id"], row["keyword"])
            if key in counts:
                raise DataFormatError(f"{path}: line {lineno}: duplicate pair {key}")
            counts[key] = c
    return AnnotationSet(counts=counts, annotators=annotators)


def save_annotations(annotations: AnnotationSet, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ANNOTATION_FIELDS)
        for (utt_id, kw), c in sorted(annotations.counts.items()):
            writer.writerow([utt_id, kw, c])
