"""Seeded synthetic corpus generator for desk-scale experiments.

Each vocabulary word gets a fixed random acoustic template; a synthetic
caption concatenates the templates of its words and adds Gaussian noise,
so a small convolutional model can genuinely learn the word acoustics.
A subset of the vocabulary forms declared synonym pairs, which drive all
three places where "semantics" enters:

  * soft tag vectors activate a present word at 1.0 and its synonym at
    the pair's co-tag strength (mimicking an image tagger that names the
    same concept either way), then mix with uniform noise at rate
    `tag_noise`; by default the first pair is fully co-tagged (the tagger
    cannot tell the concept's two names apart at all) and later pairs are
    partially co-tagged;
  * synthetic annotator counts are high for verbatim occurrences, middling
    for synonym-only occurrences, and near zero otherwise;
  * the bundled word embeddings and taxonomy place synonyms close together.

With `n_synonym_pairs=0` and `tag_noise=0` the tag vectors reduce exactly
to the bag-of-words targets.  Everything is drawn from one seeded
generator in a fixed order, so a seed pins the corpus byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import AnnotationSet, Corpus, UtteranceRecord, Vocabulary
from .errors import UsageError

# Annotator-count sampling tables: verbatim occurrences are always
# majority-relevant, synonym-only occurrences are relevant ~30% of the
# time, everything else concentrates at zero.
_VERBATIM_COUNTS = ([3, 4, 5], [0.2, 0.3, 0.5])
_SYNONYM_COUNTS = ([1, 2, 3, 4, 5], [0.30, 0.40, 0.15, 0.10, 0.05])
_OTHER_COUNTS = ([0, 1, 2], [0.90, 0.08, 0.02])

# Words in the first (fully co-tagged) synonym pair are sampled this much
# more often than the rest of the vocabulary, mirroring how frequent
# concepts dominate caption text.
_STRONG_PAIR_WEIGHT = 2.5


@dataclass
class SynthCorpus:
    corpus: Corpus
    annotations: AnnotationSet
    vocab: Vocabulary
    synonym_pairs: list
    embeddings: dict
    taxonomy_edges: list
    seed: int
    tag_noise: float
    params: dict = field(default_factory=dict)


def synth_corpus(vocab_size: int, n_train: int, n_dev: int, n_test: int,
                 seed: int = 0, tag_noise: float = 0.0, *,
                 n_synonym_pairs: int | None = None,
                 feature_dim: int = 13,
                 frames_per_word: int = 12,
                 words_per_utt: tuple = (4, 7),
                 noise_scale: float = 0.1,
                 synonym_tag_strength=(1.0, 0.8),
                 annotators: int = 5,
                 embedding_dim: int = 32) -> SynthCorpus:
    """Builds a fully in-memory synthetic corpus with annotations,
    embeddings and a toy taxonomy."""
    if min(vocab_size, n_train, n_dev, n_test) <= 0:
        raise UsageError("vocab_size and all split sizes must be positive")
    if not 0.0 <= tag_noise <= 1.0:
        raise UsageError(f"tag_noise must lie in [0, 1], got {tag_noise}")
    if n_synonym_pairs is None:
        n_synonym_pairs = vocab_size // 5
    if 2 * n_synonym_pairs > vocab_size:
        raise UsageError(
            f"{n_synonym_pairs} synonym pairs need {2 * n_synonym_pairs} words, "
            f"vocabulary has {vocab_size}"
        )

    rng = np.random.default_rng(seed)
    words = [f"w{i:02d}" for i in range(vocab_size)]
    vocab = Vocabulary(list(words))

    # The first 2P words pair up: (w00,w01), (w02,w03), ...  Each pair has
    # a co-tag strength; a scalar applies to all pairs, a sequence applies
    # its first entry to the first pair and its last entry to the rest.
    pairs = [(words[2 * i], words[2 * i + 1]) for i in range(n_synonym_pairs)]
    if np.isscalar(synonym_tag_strength):
        strengths = [float(synonym_tag_strength)] * n_synonym_pairs
    else:
        seq = [float(s) for s in synonym_tag_strength]
        strengths = [seq[min(i, len(seq) - 1)] for i in range(n_synonym_pairs)]
    synonym_of = {}
    cotag = {}
    for (a, b), s in zip(pairs, strengths):
        synonym_of[a] = b
        synonym_of[b] = a
        cotag[a] = cotag[b] = s

    templates = rng.normal(0.0, 1.0, size=(vocab_size, frames_per_word, feature_dim))

    word_weights = np.ones(vocab_size)
    if strengths and strengths[0] >= 1.0:
        word_weights[0] = word_weights[1] = _STRONG_PAIR_WEIGHT
    word_probs = word_weights / word_weights.sum()

    lo, hi = words_per_utt
    records = []
    counts = {}
    split_plan = [("train", n_train), ("dev", n_dev), ("test", n_test)]
    for split, n in split_plan:
        for i in range(n):
            n_words = int(rng.integers(lo, hi + 1))
            word_idx = rng.choice(vocab_size, size=n_words, p=word_probs)
            caption = [words[j] for j in word_idx]
            feats = np.concatenate(templates[word_idx], axis=0)
            feats = feats + rng.normal(0.0, noise_scale, size=feats.shape)

            present = set(caption)
            tags = np.zeros(vocab_size)
            for w in present:
                tags[vocab.index[w]] = 1.0
            for w in present:
                s = synonym_of.get(w)
                if s is not None and s not in present:
                    tags[vocab.index[s]] = max(tags[vocab.index[s]], cotag[w])
            if tag_noise > 0.0:
                tags = (1.0 - tag_noise) * tags + tag_noise * rng.uniform(0.0, 1.0, vocab_size)

            utt_id = f"{split}_{i:04d}"
            records.append(
                UtteranceRecord(
                    utt_id=utt_id,
                    split=split,
                    features=feats,
                    transcription=" ".join(caption),
                    tags=tags,
                )
            )
            for kw in words:
                if kw in present:
                    choices, probs = _VERBATIM_COUNTS
                elif synonym_of.get(kw) in present:
                    choices, probs = _SYNONYM_COUNTS
                else:
                    choices, probs = _OTHER_COUNTS
                counts[(utt_id, kw)] = int(rng.choice(choices, p=probs))

    annotations = AnnotationSet(counts=counts, annotators=annotators, keywords=tuple(words))

    # Unit embeddings: synonym pairs share a concept direction.
    concept_of = {}
    n_concepts = 0
    for a, b in pairs:
        concept_of[a] = concept_of[b] = n_concepts
        n_concepts += 1
    for w in words:
        if w not in concept_of:
            concept_of[w] = n_concepts
            n_concepts += 1
    concept_vecs = rng.normal(size=(n_concepts, embedding_dim))
    concept_vecs /= np.linalg.norm(concept_vecs, axis=1, keepdims=True)
    embeddings = {}
    for w in words:
        vec = concept_vecs[concept_of[w]] + 0.2 * rng.normal(size=embedding_dim)
        embeddings[w] = vec / np.linalg.norm(vec)

    # Toy taxonomy: root -> one node per concept -> words.
    taxonomy_edges = [("root", "ROOT")]
    for c in range(n_concepts):
        taxonomy_edges.append((f"c{c:02d}", "root"))
    for w in words:
        taxonomy_edges.append((w, f"c{concept_of[w]:02d}"))

    return SynthCorpus(
        corpus=Corpus(records),
        annotations=annotations,
        vocab=vocab,
        synonym_pairs=pairs,
        embeddings=embeddings,
        taxonomy_edges=taxonomy_edges,
        seed=seed,
        tag_noise=tag_noise,
        params={
            "vocab_size": vocab_size,
            "n_train": n_train,
            "n_dev": n_dev,
            "n_test": n_test,
            "n_synonym_pairs": n_synonym_pairs,
            "feature_dim": feature_dim,
            "frames_per_word": frames_per_word,
            "words_per_utt": list(words_per_utt),
            "noise_scale": noise_scale,
            "synonym_tag_strength": strengths,
            "annotators": annotators,
            "embedding_dim": embedding_dim,
        },
    )
