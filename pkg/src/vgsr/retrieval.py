"""Ranking and evaluation over score matrices.

Any system that produces a relevance score per (utterance, keyword) pair
feeds the same metrics: precision at ten and at N averaged per keyword,
equal error rate averaged per keyword, average precision and Spearman rank
correlation pooled over all pairs, and the unweighted top-N precision that
splits correct retrievals into verbatim and purely semantic hits.

Every metric is rank-based, so strictly monotone transforms of the scores
leave all of them unchanged.  Ties in scores break by ascending utterance
id (and then keyword, for pooled metrics), keeping reports deterministic.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .corpus import AnnotationSet, RelevanceLabels, verbatim_labels
from .errors import DataFormatError, DimensionError, UsageError

logger = logging.getLogger(__name__)

SCORES_FORMAT = "vgsr-scores"
REPORT_FORMAT = "vgsr-report"


class ScoreMatrix:
    """Utterances x keywords relevance scores from any system."""

    def __init__(self, utt_ids, keywords, scores, meta=None):
        self.utt_ids = list(utt_ids)
        self.keywords = list(keywords)
        self.scores = np.asarray(scores, dtype=np.float64)
        self.meta = dict(meta or {})
        if len(set(self.utt_ids)) != len(self.utt_ids):
            raise DataFormatError("utterance ids are not unique")
        if len(set(self.keywords)) != len(self.keywords):
            raise DataFormatError("keywords are not unique")
        if self.scores.shape != (len(self.utt_ids), len(self.keywords)):
            raise DimensionError(
                f"score matrix shape {self.scores.shape} does not match "
                f"{len(self.utt_ids)} utterances x {len(self.keywords)} keywords"
            )
        if not np.all(np.isfinite(self.scores)):
            raise DataFormatError("scores contain non-finite values")
        self._kw_index = {k: i for i, k in enumerate(self.keywords)}

    def column(self, keyword) -> np.ndarray:
        idx = self._kw_index.get(keyword)
        if idx is None:
            raise UsageError(f"unknown keyword {keyword!r}")
        return self.scores[:, idx]

    def to_json_dict(self) -> dict:
        return {
            "format": SCORES_FORMAT,
            "version": 1,
            "utt_ids": self.utt_ids,
            "keywords": self.keywords,
            "scores": [[float(v) for v in row] for row in self.scores],
            "meta": self.meta,
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "ScoreMatrix":
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        if not isinstance(obj, dict) or obj.get("format") != SCORES_FORMAT:
            raise DataFormatError(f"{path}: not a {SCORES_FORMAT} file")
        return cls(obj["utt_ids"], obj["keywords"], obj["scores"], obj.get("meta"))


def _labels_fn(labels):
    if isinstance(labels, RelevanceLabels):
        return labels.is_relevant
    if isinstance(labels, dict):
        return lambda u, k: bool(labels.get((u, k), False))
    raise UsageError(f"unsupported label container {type(labels).__name__}")


def rank_utterances(matrix: ScoreMatrix, keyword) -> list[str]:
    """Utterance ids from most to least relevant; ties break by ascending id."""
    col = matrix.column(keyword)
    order = sorted(range(len(matrix.utt_ids)), key=lambda i: (-col[i], matrix.utt_ids[i]))
    return [matrix.utt_ids[i] for i in order]


def _ranked_relevance(matrix: ScoreMatrix, keyword, is_relevant) -> np.ndarray:
    ranked = rank_utterances(matrix, keyword)
    return np.array([is_relevant(u, keyword) for u in ranked], dtype=bool)


def p_at_10(matrix: ScoreMatrix, labels) -> float:
    """Mean over keywords of the precision among the ten highest scores."""
    if len(matrix.utt_ids) < 10:
        raise UsageError(
            f"precision at 10 needs at least 10 utterances, got {len(matrix.utt_ids)}"
        )
    is_rel = _labels_fn(labels)
    per_kw = [
        _ranked_relevance(matrix, kw, is_rel)[:10].mean() for kw in matrix.keywords
    ]
    return float(np.mean(per_kw))


def p_at_n(matrix: ScoreMatrix, labels) -> float:
    """Mean over keywords of the precision among the top N_w scores, N_w the
    keyword's number of relevant utterances; zero-support keywords are
    excluded."""
    is_rel = _labels_fn(labels)
    per_kw = []
    for kw in matrix.keywords:
        rel = _ranked_relevance(matrix, kw, is_rel)
        n = int(rel.sum())
        if n == 0:
            continue
        per_kw.append(rel[:n].mean())
    if not per_kw:
        raise UsageError("no keyword has a relevant utterance")
    return float(np.mean(per_kw))


def _eer_single(rel_in_rank_order: np.ndarray, group_sizes) -> float:
    """EER from a relevance sequence in descending-score order; thresholds
    sweep the boundaries between tied-score groups, and the crossing point
    interpolates linearly between adjacent operating points.  Rates are
    integer ratios, so the crossing is computed in exact rational
    arithmetic and rounded once at the end."""
    from fractions import Fraction

    positives = int(rel_in_rank_order.sum())
    negatives = rel_in_rank_order.size - positives
    fa_prev, fr_prev = Fraction(0), Fraction(1)
    taken = 0
    tp = 0
    for size in group_sizes:
        tp += int(rel_in_rank_order[taken : taken + size].sum())
        taken += size
        fa = Fraction(taken - tp, negatives)
        fr = Fraction(positives - tp, positives)
        if fa >= fr:
            if fa == fr:
                return float(fa)
            t = (fr_prev - fa_prev) / ((fa - fa_prev) + (fr_prev - fr))
            return float(fa_prev + t * (fa - fa_prev))
        fa_prev, fr_prev = fa, fr
    return float(fa_prev)  # pragma: no cover - sweep always reaches fa=1, fr=0


def eer(matrix: ScoreMatrix, labels) -> float:
    """Mean over keywords of the rate where false acceptances equal false
    rejections; keywords without both a positive and a negative are skipped
    with a warning."""
    is_rel = _labels_fn(labels)
    per_kw = []
    skipped = []
    for kw in matrix.keywords:
        col = matrix.column(kw)
        order = sorted(range(col.size), key=lambda i: (-col[i], matrix.utt_ids[i]))
        rel = np.array([is_rel(matrix.utt_ids[i], kw) for i in order], dtype=bool)
        pos = int(rel.sum())
        if pos == 0 or pos == rel.size:
            skipped.append(kw)
            continue
        sorted_scores = col[order]
        group_sizes = []
        start = 0
        for i in range(1, col.size + 1):
            if i == col.size or sorted_scores[i] != sorted_scores[start]:
                group_sizes.append(i - start)
                start = i
        per_kw.append(_eer_single(rel, group_sizes))
    for kw in skipped:
        logger.warning("eer: keyword %r has no positives or no negatives, excluded", kw)
    if not per_kw:
        raise UsageError("no keyword has both positive and negative utterances")
    return float(np.mean(per_kw))


def _pooled_pairs(matrix: ScoreMatrix):
    for ki, kw in enumerate(matrix.keywords):
        for ui, utt in enumerate(matrix.utt_ids):
            yield utt, kw, matrix.scores[ui, ki]


def average_precision(matrix: ScoreMatrix, labels) -> float:
    """Area under the precision-recall curve pooled over all pairs, as the
    step-wise sum of precision at each recall increment."""
    is_rel = _labels_fn(labels)
    pairs = sorted(_pooled_pairs(matrix), key=lambda p: (-p[2], p[0], p[1]))
    total_relevant = sum(1 for u, k, _ in pairs if is_rel(u, k))
    if total_relevant == 0:
        raise UsageError("average precision is undefined without a relevant pair")
    ap = 0.0
    hits = 0
    for rank, (u, k, _) in enumerate(pairs, start=1):
        if is_rel(u, k):
            hits += 1
            ap += hits / rank
    return ap / total_relevant


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with tied values sharing their average rank."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(values.size)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman_rho(matrix: ScoreMatrix, counts) -> float:
    """Rank correlation between scores and annotator counts pooled over all
    (utterance, keyword) pairs, with average-rank tie handling."""
    if isinstance(counts, AnnotationSet):
        getter = counts.count
    elif isinstance(counts, dict):
        getter = lambda u, k: counts.get((u, k), 0)
    else:
        raise UsageError(f"unsupported counts container {type(counts).__name__}")
    scores = []
    count_vals = []
    for utt, kw, s in _pooled_pairs(matrix):
        scores.append(s)
        count_vals.append(getter(utt, kw))
    x = _average_ranks(np.asarray(scores, dtype=np.float64))
    y = _average_ranks(np.asarray(count_vals, dtype=np.float64))
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt(np.sum(xc * xc) * np.sum(yc * yc))
    if denom == 0.0:
        raise UsageError("rank correlation is undefined when either variable is constant")
    return float(np.sum(xc * yc) / denom)


def p_at_n_star(matrix: ScoreMatrix, semantic_labels, exact_labels):
    """Unweighted pooled precision at N: (sum_w c_w) / (sum_w N_w) with N_w
    the keyword's semantic support and c_w its correct top-N_w retrievals.
    Returns (total, exact, semantic); each correct hit counts as exact when
    the keyword occurs verbatim, else as semantic, so total = exact + sem."""
    is_sem = _labels_fn(semantic_labels)
    is_exact = _labels_fn(exact_labels)
    total_n = 0
    exact_hits = 0
    sem_hits = 0
    for kw in matrix.keywords:
        ranked = rank_utterances(matrix, kw)
        n = sum(1 for u in ranked if is_sem(u, kw))
        if n == 0:
            continue
        total_n += n
        for u in ranked[:n]:
            if not is_sem(u, kw):
                continue
            if is_exact(u, kw):
                exact_hits += 1
            else:
                sem_hits += 1
    if total_n == 0:
        raise UsageError("no keyword has a semantically relevant utterance")
    return (
        (exact_hits + sem_hits) / total_n,
        exact_hits / total_n,
        sem_hits / total_n,
    )


# ---------------------------------------------------------------------------
# Full reports
# ---------------------------------------------------------------------------

@dataclass
class MetricReport:
    mode: str
    p_at_10: float
    p_at_n: float
    eer: float
    ap: float
    spearman_rho: float | None = None
    p_at_n_star: float | None = None
    p_at_n_star_exact: float | None = None
    p_at_n_star_sem: float | None = None
    per_keyword: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "version": 1,
            "mode": self.mode,
            "metrics": {
                "p_at_10": self.p_at_10,
                "p_at_n": self.p_at_n,
                "eer": self.eer,
                "ap": self.ap,
                "spearman_rho": self.spearman_rho,
                "p_at_n_star": self.p_at_n_star,
                "p_at_n_star_exact": self.p_at_n_star_exact,
                "p_at_n_star_sem": self.p_at_n_star_sem,
            },
            "per_keyword": self.per_keyword,
            "meta": self.meta,
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def save_per_keyword_csv(self, path) -> None:
        import csv

        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["keyword", "n_relevant", "p_at_10", "p_at_n", "eer"])
            for kw in sorted(self.per_keyword):
                row = self.per_keyword[kw]
                writer.writerow(
                    [kw, row["n_relevant"], row["p_at_10"], row["p_at_n"], row["eer"]]
                )


def evaluate_all(matrix: ScoreMatrix, semantic_labels, counts, transcriptions,
                 mode: str = "semantic", meta=None) -> MetricReport:
    """Full report against verbatim labels (mode 'exact') or annotator
    majority labels (mode 'semantic'); the semantic report additionally
    carries the rank correlation with raw counts and the exact/semantic
    split of pooled top-N precision."""
    if mode not in ("exact", "semantic"):
        raise UsageError(f"mode must be 'exact' or 'semantic', got {mode!r}")
    missing = [u for u in matrix.utt_ids if u not in transcriptions]
    if missing:
        raise UsageError(f"missing transcriptions for {len(missing)} utterances, "
                         f"e.g. {missing[:3]}")
    exact_labels = verbatim_labels(
        {u: transcriptions[u] for u in matrix.utt_ids}, matrix.keywords
    )
    primary = exact_labels if mode == "exact" else semantic_labels

    report = MetricReport(
        mode=mode,
        p_at_10=p_at_10(matrix, primary),
        p_at_n=p_at_n(matrix, primary),
        eer=eer(matrix, primary),
        ap=average_precision(matrix, primary),
        meta=dict(meta or {}),
    )
    if mode == "semantic":
        if counts is not None:
            report.spearman_rho = spearman_rho(matrix, counts)
        total, exact, sem = p_at_n_star(matrix, semantic_labels, exact_labels)
        report.p_at_n_star = total
        report.p_at_n_star_exact = exact
        report.p_at_n_star_sem = sem

    is_rel = _labels_fn(primary)
    for kw in matrix.keywords:
        rel = _ranked_relevance(matrix, kw, is_rel)
        n = int(rel.sum())
        row = {
            "n_relevant": n,
            "p_at_10": float(rel[:10].mean()) if rel.size >= 10 else None,
            "p_at_n": float(rel[:n].mean()) if n else None,
            "eer": None,
        }
        if 0 < n < rel.size:
            single = ScoreMatrix(matrix.utt_ids, [kw], matrix.column(kw)[:, None])
            row["eer"] = eer(single, primary)
        report.per_keyword[kw] = row
    return report
