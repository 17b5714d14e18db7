"""Metric oracles: brute-force twins, closed forms, and a golden file."""

import json
import math
import os

import numpy as np
import pytest

from dualrec.metrics import (
    bleu,
    parse_rating,
    ranking_metrics,
    rating_metrics,
    rouge_n,
    text_metrics,
)

GOLDEN = os.path.join(os.path.dirname(__file__), "data", "text_metrics_golden.json")


class TestParseRating:
    @pytest.mark.parametrize(
        "text,want",
        [
            ("4.0", 4.0),
            ("I'd say 4.5 stars", 4.5),
            ("rate 2 or 3", 2.0),  # first literal wins
            ("7", 5.0),  # clamped
            ("0.5", 1.0),
        ],
    )
    def test_parses(self, text, want):
        val, ok = parse_rating(text)
        assert ok and val == want

    def test_fallback(self):
        val, ok = parse_rating("no digits here")
        assert (val, ok) == (3.0, False)


class TestRatingMetrics:
    def test_constant_offset_closed_form(self):
        golds = [1.0, 2.0, 3.0, 4.0, 5.0]
        for c in (0.0, 0.5, -1.25):
            out = rating_metrics([g + c for g in golds], golds)
            assert out["rmse"] == abs(c) and out["mae"] == abs(c)

    def test_mixed_signs(self):
        out = rating_metrics([2.0, 4.0], [3.0, 3.0])
        assert out["mae"] == 1.0 and out["rmse"] == 1.0

    def test_rmse_dominates_mae(self, rng):
        p = rng.uniform(1, 5, size=50)
        g = rng.uniform(1, 5, size=50)
        out = rating_metrics(list(p), list(g))
        assert out["rmse"] >= out["mae"] - 1e-12

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="equal"):
            rating_metrics([1.0], [1.0, 2.0])


def brute_force_ranking(ranked_lists, golds, ks):
    """Naive per-instance twin used as the oracle."""
    out = {}
    for k in ks:
        hits, gains = [], []
        for ranked, gold in zip(ranked_lists, golds):
            pos = None
            for j, cand in enumerate(ranked):
                if cand == gold:
                    pos = j + 1
                    break
            hits.append(1.0 if pos <= k else 0.0)
            gains.append(1.0 / math.log2(pos + 1) if pos <= k else 0.0)
        out[f"hr@{k}"] = sum(hits) / len(hits)
        out[f"ndcg@{k}"] = sum(gains) / len(gains)
    return out


class TestRankingMetrics:
    def test_rank_one_is_perfect(self):
        out = ranking_metrics([["a", "b", "c"]], ["a"], ks=(1, 3))
        assert out == {"hr@1": 1.0, "ndcg@1": 1.0, "hr@3": 1.0, "ndcg@3": 1.0}

    def test_rank_three_hand_value(self):
        out = ranking_metrics([["x", "y", "g", "z"]], ["g"], ks=(5,))
        assert out["hr@5"] == 1.0
        assert np.isclose(out["ndcg@5"], 1.0 / math.log2(4))  # 0.5

    def test_outside_k_scores_zero(self):
        out = ranking_metrics([["x", "y", "g"]], ["g"], ks=(2,))
        assert out == {"hr@2": 0.0, "ndcg@2": 0.0}

    def test_matches_brute_force_on_1000_instances(self, rng):
        ranked_lists, golds = [], []
        for i in range(1000):
            n = int(rng.integers(2, 13))
            cands = [f"c{i}_{j}" for j in range(n)]
            perm = rng.permutation(n)
            ranked_lists.append([cands[j] for j in perm])
            golds.append(cands[int(rng.integers(n))])
        fast = ranking_metrics(ranked_lists, golds, ks=(1, 3, 5, 10))
        slow = brute_force_ranking(ranked_lists, golds, ks=(1, 3, 5, 10))
        assert fast == slow

    def test_random_rank_monte_carlo(self, rng):
        # uniform gold position in lists of 10 => E[HR@k] = k/10
        n = 4000
        ranked_lists, golds = [], []
        for i in range(n):
            cands = [f"c{j}" for j in range(10)]
            order = list(rng.permutation(10))
            ranked_lists.append([cands[j] for j in order])
            golds.append(cands[int(rng.integers(10))])
        out = ranking_metrics(ranked_lists, golds, ks=(5,))
        assert abs(out["hr@5"] - 0.5) < 0.03

    def test_gold_absent_rejected(self):
        with pytest.raises(ValueError, match="absent"):
            ranking_metrics([["a", "b"]], ["z"])

    def test_bad_k_rejected(self):
        with pytest.raises(ValueError, match="k must be"):
            ranking_metrics([["a"]], ["a"], ks=(0,))


class TestBleu:
    def test_identical_corpus_is_one(self):
        corpus = [["the", "cat", "sat"], ["a", "dog", "ran", "fast"]]
        assert np.isclose(bleu(corpus, corpus), 1.0)

    def test_disjoint_is_zero(self):
        assert bleu([["a", "b"]], [["c", "d"]]) == 0.0

    def test_brevity_penalty_hand_value(self):
        # unigrams only: full overlap, hyp 2 tokens vs ref 4 => BP = e^(1-2)
        val = bleu([["a", "b"]], [["a", "b", "c", "d"]], max_n=1)
        assert np.isclose(val, math.exp(1 - 4 / 2))

    def test_smoothing_keeps_positive(self):
        # bigram overlap empty but unigrams overlap: add-one smoothing applies
        val = bleu([["a", "x", "b"]], [["a", "y", "b"]], max_n=2)
        assert 0.0 < val < 1.0

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            bleu([], [])


class TestRouge:
    def test_identical(self):
        assert rouge_n(["a", "b", "c"], ["a", "b", "c"], 1) == 1.0
        assert rouge_n(["a", "b", "c"], ["a", "b", "c"], 2) == 1.0

    def test_hand_value_half_precision(self):
        # hyp unigrams {a,b}, ref {a,c}: P=1/2, R=1/2 => F1=1/2
        assert rouge_n(["a", "b"], ["a", "c"], 1) == 0.5

    def test_no_overlap(self):
        assert rouge_n(["a"], ["b"], 1) == 0.0

    def test_clipping(self):
        # "the the the" vs "the": overlap clipped to 1 => P=1/3, R=1
        val = rouge_n(["the", "the", "the"], ["the"], 1)
        assert np.isclose(val, 2 * (1 / 3) * 1 / (1 / 3 + 1))


@pytest.fixture(scope="module")
def golden():
    with open(GOLDEN) as fh:
        return json.load(fh)


class TestTextMetricsGolden:

    def test_matches_golden_file(self, golden):
        hyps = [h.split() for h, _ in golden["pairs"]]
        refs = [r.split() for _, r in golden["pairs"]]
        out4 = text_metrics(hyps, refs, bleu_n=4)
        out2 = text_metrics(hyps, refs, bleu_n=2)
        assert abs(out4["bleu4"] - golden["bleu4"]) < 1e-9
        assert abs(out2["bleu2"] - golden["bleu2"]) < 1e-9
        assert abs(out4["rouge1"] - golden["rouge1"]) < 1e-9
        assert abs(out4["rouge2"] - golden["rouge2"]) < 1e-9

    def test_empty_references_skipped(self):
        out = text_metrics([["a"], ["b"]], [["a"], []])
        assert out["skipped_pairs"] == 1.0

    def test_all_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            text_metrics([["a"]], [[]])

    def test_size_mismatch_rejected(self):
        with pytest.raises(ValueError, match="mismatch"):
            text_metrics([["a"]], [])
