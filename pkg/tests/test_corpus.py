"""Tests for manifests, vocabulary building, BoW targets, annotator
aggregation and the synthetic corpus generator."""

import numpy as np
import pytest

from vgsr.errors import DataFormatError, UsageError
from vgsr.corpus import (
    AnnotationSet,
    Vocabulary,
    aggregate_annotations,
    annotator_agreement,
    bow_targets,
    build_vocabulary,
    count_distribution,
    load_annotations,
    load_manifest,
    save_annotations,
    save_manifest,
    tokenize,
    verbatim_labels,
)
from vgsr.synth import synth_corpus


class TestTokenize:
    def test_lowercase_and_split(self):
        assert tokenize("A dog, RAN!") == ["a", "dog", "ran"]

    def test_empty(self):
        assert tokenize("  ...  ") == []


class TestManifest:
    def test_empty_file_gives_empty_corpus(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text("")
        assert len(load_manifest(path)) == 0

    def test_round_trip_preserves_fields(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text(
            '{"utt_id": "a", "split": "train", "transcription": "a dog", "tags": [0.1, 0.9]}\n'
            '{"utt_id": "b", "split": "test", "features": "feats/b.vgsf"}\n'
        )
        corpus = load_manifest(path)
        out = tmp_path / "copy.jsonl"
        save_manifest(corpus, out)
        again = load_manifest(out)
        assert [r.utt_id for r in again.records] == ["a", "b"]
        assert again.records[0].transcription == "a dog"
        np.testing.assert_array_equal(again.records[0].tags, [0.1, 0.9])
        assert again.records[1].features_path == "feats/b.vgsf"
        assert again.records[1].split == "test"

    def test_duplicate_id_reports_line(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text('{"utt_id": "a"}\n{"utt_id": "a"}\n')
        with pytest.raises(DataFormatError, match="line 2"):
            load_manifest(path)

    def test_bad_split_reports_line(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text('{"utt_id": "a", "split": "validation"}\n')
        with pytest.raises(DataFormatError, match="line 1"):
            load_manifest(path)

    def test_wrong_tag_length_rejected_at_line(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text(
            '{"utt_id": "a", "tags": [0.1, 0.2]}\n{"utt_id": "b", "tags": [0.5]}\n'
        )
        with pytest.raises(DataFormatError, match="line 2"):
            load_manifest(path)

    def test_tag_range_validated(self, tmp_path):
        path = tmp_path / "m.jsonl"
        path.write_text('{"utt_id": "a", "tags": [1.5]}\n')
        with pytest.raises(DataFormatError, match=r"\[0, 1\]"):
            load_manifest(path)


class TestVocabulary:
    def test_hand_counted_build(self):
        vocab = build_vocabulary(["a dog", "a dog ran"], 2, frozenset({"a"}))
        assert vocab.words == ["dog", "ran"]

    def test_tie_broken_lexicographically(self):
        vocab = build_vocabulary(["zebra apple", "zebra apple"], 2, frozenset())
        assert vocab.words == ["apple", "zebra"]

    def test_too_large_request_rejected(self):
        with pytest.raises(UsageError):
            build_vocabulary(["a dog"], 5, frozenset({"a"}))

    def test_all_stopword_corpus_rejected(self):
        with pytest.raises(UsageError):
            build_vocabulary(["the a of"], 1, frozenset({"the", "a", "of"}))

    def test_save_load_round_trip(self, tmp_path):
        vocab = Vocabulary(["dog", "ran", "sat"])
        path = tmp_path / "vocab.txt"
        vocab.save(path)
        assert Vocabulary.load(path).words == ["dog", "ran", "sat"]

    def test_duplicates_rejected(self):
        with pytest.raises(DataFormatError):
            Vocabulary(["dog", "dog"])


class TestBowTargets:
    def test_hand_case(self):
        vocab = Vocabulary(["dog", "ran", "sat"])
        np.testing.assert_array_equal(bow_targets("dog ran dog", vocab), [1.0, 1.0, 0.0])

    def test_empty_transcription(self):
        vocab = Vocabulary(["dog"])
        np.testing.assert_array_equal(bow_targets("", vocab), [0.0])

    def test_repetition_and_oov_ignored(self):
        vocab = Vocabulary(["dog"])
        np.testing.assert_array_equal(
            bow_targets("dog dog dog cat", vocab), bow_targets("dog", vocab)
        )


class TestAnnotations:
    def test_threshold_boundary(self):
        ann = AnnotationSet({("u", "k3"): 3, ("u", "k2"): 2, ("u", "k0"): 0})
        labels = aggregate_annotations(ann, threshold=3)
        assert labels.is_relevant("u", "k3")
        assert not labels.is_relevant("u", "k2")
        assert not labels.is_relevant("u", "k0")

    def test_aggregation_monotone_in_counts(self):
        rng = np.random.default_rng(0)
        counts = {("u%d" % i, "k"): int(rng.integers(0, 6)) for i in range(50)}
        ann = AnnotationSet(dict(counts))
        labels = aggregate_annotations(ann)
        bumped = {k: min(5, v + 1) for k, v in counts.items()}
        labels2 = aggregate_annotations(AnnotationSet(bumped))
        for pair in counts:
            assert labels2.hard[pair] >= labels.hard[pair]

    def test_agreement_all_fives(self):
        ann = AnnotationSet({("u%d" % i, "k"): 5 for i in range(10)})
        assert annotator_agreement(ann, aggregate_annotations(ann)) == 1.0

    def test_agreement_all_twos(self):
        ann = AnnotationSet({("u%d" % i, "k"): 2 for i in range(10)})
        assert annotator_agreement(ann, aggregate_annotations(ann)) == pytest.approx(0.6)

    def test_agreement_on_skewed_count_distribution(self):
        # Distribution with proportions 83.3/6.9/3.0/2.6/2.5/1.6 percent for
        # counts 0..5; majority labelling at threshold 3 leaves 95.8 percent
        # of individual annotator selections agreeing with the hard label.
        per_count = {0: 8330, 1: 690, 2: 300, 3: 260, 4: 250, 5: 160}
        counts = {}
        i = 0
        for c, n in per_count.items():
            for _ in range(n):
                counts[(f"u{i:05d}", "kw")] = c
                i += 1
        ann = AnnotationSet(counts)
        agreement = annotator_agreement(ann, aggregate_annotations(ann, threshold=3))
        assert agreement == pytest.approx(0.958, abs=1e-3)

    def test_count_distribution_uniform_and_normalised(self):
        counts = {("u%d" % i, "k"): i % 6 for i in range(60)}
        ann = AnnotationSet(counts)
        dist = count_distribution(ann)
        np.testing.assert_allclose(dist, np.full(6, 1 / 6), atol=1e-12)
        assert dist.sum() == pytest.approx(1.0, abs=1e-12)

    def test_count_distribution_matches_tally_oracle(self):
        rng = np.random.default_rng(1)
        counts = {("u%d" % i, "k%d" % (i % 3)): int(rng.integers(0, 6)) for i in range(200)}
        ann = AnnotationSet(counts)
        dist = count_distribution(ann)
        tally = [0] * 6
        for c in counts.values():
            tally[c] += 1
        np.testing.assert_allclose(dist, np.array(tally) / 200.0, atol=1e-12)

    def test_csv_round_trip(self, tmp_path):
        ann = AnnotationSet({("a", "dog"): 4, ("b", "dog"): 0, ("a", "cat"): 2})
        path = tmp_path / "ann.csv"
        save_annotations(ann, path)
        back = load_annotations(path)
        assert back.counts == ann.counts

    def test_csv_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("utt,kw,n\na,dog,3\n")
        with pytest.raises(DataFormatError, match="header"):
            load_annotations(path)

    def test_out_of_range_count_rejected(self):
        with pytest.raises(DataFormatError):
            AnnotationSet({("u", "k"): 7})

    def test_verbatim_labels(self):
        labels = verbatim_labels({"u1": "a dog ran", "u2": "cats sleep"}, ["dog", "cat"])
        assert labels.is_relevant("u1", "dog")
        assert not labels.is_relevant("u2", "dog")
        assert not labels.is_relevant("u2", "cat")  # token is "cats"


class TestSynthCorpus:
    def test_zero_noise_no_synonyms_gives_bow_tags(self):
        sc = synth_corpus(10, 5, 2, 2, seed=3, tag_noise=0.0, n_synonym_pairs=0)
        for rec in sc.corpus.records:
            expected = bow_targets(rec.transcription, sc.vocab)
            np.testing.assert_array_equal(rec.tags, expected)

    def test_fixed_seed_reproducible(self):
        a = synth_corpus(8, 6, 2, 2, seed=11, tag_noise=0.2)
        b = synth_corpus(8, 6, 2, 2, seed=11, tag_noise=0.2)
        for ra, rb in zip(a.corpus.records, b.corpus.records):
            assert ra.utt_id == rb.utt_id
            assert ra.transcription == rb.transcription
            np.testing.assert_array_equal(ra.features, rb.features)
            np.testing.assert_array_equal(ra.tags, rb.tags)
        assert a.annotations.counts == b.annotations.counts
        for w in a.vocab.words:
            np.testing.assert_array_equal(a.embeddings[w], b.embeddings[w])

    def test_count_mass_concentrates_at_zero(self):
        sc = synth_corpus(20, 40, 5, 5, seed=5, tag_noise=0.1)
        dist = count_distribution(sc.annotations)
        assert dist[0] > 0.5
        assert dist[0] == max(dist)

    def test_synonym_tags_activated(self):
        sc = synth_corpus(10, 30, 2, 2, seed=7, tag_noise=0.0, n_synonym_pairs=2)
        # Default strengths: the first pair is fully co-tagged, later pairs
        # partially.
        for (a, b), strength in zip(sc.synonym_pairs, (1.0, 0.8)):
            hit = False
            for rec in sc.corpus.records:
                present = set(rec.transcription.split())
                if a in present and b not in present:
                    assert rec.tags[sc.vocab.index[b]] == pytest.approx(strength)
                    hit = True
            assert hit

    def test_verbatim_pairs_always_relevant(self):
        sc = synth_corpus(10, 20, 2, 2, seed=9, tag_noise=0.0)
        labels = aggregate_annotations(sc.annotations)
        for rec in sc.corpus.records:
            for w in set(rec.transcription.split()):
                assert labels.is_relevant(rec.utt_id, w)

    def test_invalid_sizes_rejected(self):
        with pytest.raises(UsageError):
            synth_corpus(0, 1, 1, 1)
        with pytest.raises(UsageError):
            synth_corpus(4, 1, 1, 1, n_synonym_pairs=3)
