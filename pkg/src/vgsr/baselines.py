"""Non-neural comparison systems.

Prior baselines score every utterance identically per keyword; the
text-side systems score transcriptions through taxonomy similarity or
word-embedding cosine; a seeded corruption pass simulates ASR errors at a
target word error rate, enabling cascaded text retrieval under degraded
transcripts; word error rate itself comes from a Levenshtein alignment.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .corpus import Vocabulary, tokenize
from .errors import DataFormatError, UsageError
from .retrieval import ScoreMatrix

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Prior baselines
# ---------------------------------------------------------------------------

@dataclass
class UnigramModel:
    """Relative frequency of each vocabulary word in the training text.
    Probabilities sum to 1 over the vocabulary; anything else has
    probability zero."""

    probs: dict

    def probability(self, word: str) -> float:
        return self.probs.get(word, 0.0)

    def sample(self, rng: np.random.Generator) -> str:
        words = sorted(self.probs)
        p = np.array([self.probs[w] for w in words])
        return words[int(rng.choice(len(words), p=p))]


def fit_unigram(transcriptions, vocab: Vocabulary) -> UnigramModel:
    counts = {w: 0 for w in vocab.words}
    total = 0
    for text in transcriptions:
        for tok in tokenize(text):
            if tok in vocab:
                counts[tok] += 1
                total += 1
    if total == 0:
        raise UsageError("no vocabulary tokens occur in the training text")
    return UnigramModel({w: c / total for w, c in counts.items() if c > 0})


def text_prior_scores(unigram: UnigramModel, keywords, utt_ids) -> ScoreMatrix:
    """Every utterance gets the keyword's training unigram probability."""
    row = np.array([unigram.probability(kw) for kw in keywords])
    return ScoreMatrix(utt_ids, keywords, np.tile(row, (len(utt_ids), 1)))


def vision_tag_prior_scores(tag_vectors, vocab: Vocabulary, keywords, utt_ids) -> ScoreMatrix:
    """Every utterance gets the keyword's mean tag value over the training
    set."""
    tag_vectors = [np.asarray(t, dtype=np.float64) for t in tag_vectors]
    if not tag_vectors:
        raise UsageError("at least one training tag vector is required")
    for t in tag_vectors:
        if t.size != len(vocab):
            raise DataFormatError(
                f"tag vector has length {t.size}, vocabulary has {len(vocab)}"
            )
    mean = np.mean(np.vstack(tag_vectors), axis=0)
    missing = [kw for kw in keywords if kw not in vocab]
    if missing:
        raise UsageError(f"keywords not in the vocabulary: {missing[:5]}")
    row = np.array([mean[vocab.index[kw]] for kw in keywords])
    return ScoreMatrix(utt_ids, keywords, np.tile(row, (len(utt_ids), 1)))


# ---------------------------------------------------------------------------
# Taxonomy similarity
# ---------------------------------------------------------------------------

class Taxonomy:
    """A rooted tree of words; the root has depth 1."""

    def __init__(self, edges):
        parent = {}
        roots = []
        for child, par in edges:
            if child in parent:
                raise DataFormatError(f"taxonomy node {child!r} has two parents")
            if par == "ROOT":
                roots.append(child)
                parent[child] = None
            else:
                parent[child] = par
        if len(roots) != 1:
            raise DataFormatError(f"taxonomy must have exactly one root, found {len(roots)}")
        self.root = roots[0]
        self.parent = parent
        missing = {p for p in parent.values() if p is not None and p not in parent}
        if missing:
            raise DataFormatError(f"taxonomy references undefined parents: {sorted(missing)[:5]}")
        self.depth = {}
        for node in parent:
            self._resolve_depth(node)

    def _resolve_depth(self, node):
        chain = []
        cur = node
        while cur is not None and cur not in self.depth:
            chain.append(cur)
            cur = self.parent[cur]
            if len(chain) > len(self.parent):
                raise DataFormatError("taxonomy contains a cycle")
        base = 0 if cur is None else self.depth[cur]
        for i, n in enumerate(reversed(chain)):
            self.depth[n] = base + i + 1

    def __contains__(self, word):
        return word in self.parent

    def ancestors(self, node) -> list:
        """node and its ancestors up to the root, nearest first."""
        out = []
        cur = node
        while cur is not None:
            out.append(cur)
            cur = self.parent[cur]
        return out


def load_taxonomy(path) -> Taxonomy:
    """Edge file: one 'child<TAB>parent' per line, root's parent is ROOT."""
    edges = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataFormatError(f"{path}: line {lineno}: expected 'child<TAB>parent'")
            edges.append((parts[0], parts[1]))
    return Taxonomy(edges)


def save_taxonomy(edges, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for child, parent in edges:
            fh.write(f"{child}\t{parent}\n")


def wup_similarity(taxonomy: Taxonomy, u: str, v: str) -> float:
    """Wu-Palmer similarity 2*depth(lcs) / (depth(u) + depth(v))."""
    for w in (u, v):
        if w not in taxonomy:
            raise UsageError(f"word {w!r} is not in the taxonomy")
    ancestors_u = taxonomy.ancestors(u)
    ancestors_v = set(taxonomy.ancestors(v))
    lcs = next(a for a in ancestors_u if a in ancestors_v)
    return 2.0 * taxonomy.depth[lcs] / (taxonomy.depth[u] + taxonomy.depth[v])


def text_wup_scores(taxonomy: Taxonomy, transcriptions: dict, keywords) -> ScoreMatrix:
    """score(utt, kw) = best Wu-Palmer match between the keyword and any
    in-taxonomy transcription word; 0 when nothing matches."""
    utt_ids = list(transcriptions)
    scores = np.zeros((len(utt_ids), len(keywords)))
    for j, kw in enumerate(keywords):
        if kw not in taxonomy:
            logger.warning("text_wup_scores: keyword %r missing from taxonomy, scoring 0", kw)
            continue
        for i, utt in enumerate(utt_ids):
            best = 0.0
            for tok in set(tokenize(transcriptions[utt])):
                if tok in taxonomy:
                    best = max(best, wup_similarity(taxonomy, kw, tok))
            scores[i, j] = best
    return ScoreMatrix(utt_ids, keywords, scores)


# ---------------------------------------------------------------------------
# Word embeddings
# ---------------------------------------------------------------------------

class WordEmbeddings:
    """word -> unit-normalized vector, all of one dimension."""

    def __init__(self, vectors: dict):
        if not vectors:
            raise DataFormatError("embedding table is empty")
        dims = {np.asarray(v).size for v in vectors.values()}
        if len(dims) != 1:
            raise DataFormatError(f"inconsistent embedding dimensions: {sorted(dims)}")
        self.dim = dims.pop()
        self.vectors = {}
        for w, v in vectors.items():
            v = np.asarray(v, dtype=np.float64).reshape(-1)
            norm = np.linalg.norm(v)
            if not np.isfinite(norm) or norm == 0.0:
                raise DataFormatError(f"embedding for {w!r} cannot be normalized")
            self.vectors[w] = v / norm

    def __contains__(self, word):
        return word in self.vectors

    def __getitem__(self, word) -> np.ndarray:
        return self.vectors[word]


def load_embeddings(path) -> WordEmbeddings:
    """Text table: 'word v1 v2 ... vD' per line, space separated."""
    vectors = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) < 2:
                raise DataFormatError(f"{path}: line {lineno}: no vector components")
            try:
                vectors[parts[0]] = np.array([float(x) for x in parts[1:]])
            except ValueError:
                raise DataFormatError(f"{path}: line {lineno}: non-numeric component")
    return WordEmbeddings(vectors)


def save_embeddings(vectors: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for w in sorted(vectors):
            comps = " ".join(repr(float(x)) for x in np.asarray(vectors[w]).reshape(-1))
            fh.write(f"{w} {comps}\n")


def embedding_sentence_score(embeddings: WordEmbeddings, transcription: str,
                             keyword: str) -> float:
    """Cosine between the keyword vector and the mean of the sentence's
    in-vocabulary word vectors."""
    if keyword not in embeddings:
        raise UsageError(f"keyword {keyword!r} has no embedding")
    vecs = [embeddings[t] for t in tokenize(transcription) if t in embeddings]
    if not vecs:
        logger.warning("embedding score: no in-vocabulary word in %r, scoring 0", transcription)
        return 0.0
    sentence = np.mean(vecs, axis=0)
    norm = np.linalg.norm(sentence)
    if norm == 0.0:
        return 0.0
    return float(np.dot(embeddings[keyword], sentence) / norm)


def embedding_scores(embeddings: WordEmbeddings, transcriptions: dict, keywords) -> ScoreMatrix:
    utt_ids = list(transcriptions)
    scores = np.zeros((len(utt_ids), len(keywords)))
    for j, kw in enumerate(keywords):
        if kw not in embeddings:
            logger.warning("embedding_scores: keyword %r has no embedding, scoring 0", kw)
            continue
        for i, utt in enumerate(utt_ids):
            scores[i, j] = embedding_sentence_score(embeddings, transcriptions[utt], kw)
    return ScoreMatrix(utt_ids, keywords, scores)


# ---------------------------------------------------------------------------
# Simulated ASR and word error rate
# ---------------------------------------------------------------------------

def simulate_asr_errors(transcription: str, error_rate: float, unigram: UnigramModel,
                        rng) -> str:
    """Per word, with probability `error_rate`, applies one edit drawn
    uniformly from substitution, deletion, or insertion after the word;
    replacement and inserted words are sampled from the training unigram
    distribution."""
    if not 0.0 <= error_rate <= 1.0:
        raise UsageError(f"error rate must lie in [0, 1], got {error_rate}")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    tokens = tokenize(transcription)
    if error_rate > 0.0 and not unigram.probs:
        raise UsageError("cannot corrupt text with an empty unigram distribution")
    out = []
    for tok in tokens:
        if rng.random() < error_rate:
            kind = int(rng.integers(3))
            if kind == 0:
                out.append(unigram.sample(rng))
            elif kind == 1:
                pass
            else:
                out.append(tok)
                out.append(unigram.sample(rng))
        else:
            out.append(tok)
    return " ".join(out)


def word_error_rate(hypothesis, reference) -> float:
    """Levenshtein word edit distance (unit costs) over reference length."""
    hyp = hypothesis.split() if isinstance(hypothesis, str) else list(hypothesis)
    ref = reference.split() if isinstance(reference, str) else list(reference)
    if not ref:
        raise UsageError("word error rate is undefined for an empty reference")
    return _levenshtein(hyp, ref) / len(ref)


def _levenshtein(a, b) -> int:
    """Edit distance with a vectorized row recurrence: the in-row
    dependency cur[j] = min(candidate[j], cur[j-1] + 1) is a running
    minimum of candidate[j] - j, restored by adding j back."""
    if not a:
        return len(b)
    if not b:
        return len(a)
    b_arr = np.array(b)
    prev = np.arange(len(b) + 1)
    idx = np.arange(len(b) + 1)
    for i, tok in enumerate(a, start=1):
        cost = (b_arr != tok).astype(int)
        candidate = np.empty(len(b) + 1, dtype=int)
        candidate[0] = i
        candidate[1:] = np.minimum(prev[1:] + 1, prev[:-1] + cost)
        prev = np.minimum.accumulate(candidate - idx) + idx
    return int(prev[-1])


def measure_corpus_wer(hypotheses: dict, references: dict) -> float:
    """Pooled corpus rate: total edit distance over total reference words."""
    distance = 0
    ref_words = 0
    for utt, ref in references.items():
        ref_toks = tokenize(ref)
        if not ref_toks:
            continue
        hyp_toks = tokenize(hypotheses.get(utt, ""))
        distance += _levenshtein(hyp_toks, ref_toks)
        ref_words += len(ref_toks)
    if ref_words == 0:
        raise UsageError("no reference words to measure against")
    return distance / ref_words


def cascaded_scores(hypotheses: dict, method: str, keywords, *,
                    taxonomy: Taxonomy | None = None,
                    embeddings: WordEmbeddings | None = None) -> ScoreMatrix:
    """Text retrieval applied to (possibly corrupted) ASR hypotheses."""
    if method == "wup":
        if taxonomy is None:
            raise UsageError("cascaded wup retrieval needs a taxonomy")
        return text_wup_scores(taxonomy, hypotheses, keywords)
    if method == "embedding":
        if embeddings is None:
            raise UsageError("cascaded embedding retrieval needs embeddings")
        return embedding_scores(embeddings, hypotheses, keywords)
    raise UsageError(f"retrieval method must be 'wup' or 'embedding', got {method!r}")
