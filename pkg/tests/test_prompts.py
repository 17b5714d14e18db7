"""Template registry, rendering, splits, example construction, samplers."""

import numpy as np
import pytest

from dualrec.prompts import (
    FAMILIES,
    TRIGGERS,
    CandidateSet,
    PromptRegistry,
    PromptTemplate,
    make_examples,
    render_prompt,
    sample_hfm_candidates,
    sample_icl_candidates,
    split_prompts,
)


class TestRender:
    def test_no_placeholders_identity(self):
        text = "Does the description match what's being offered?"
        assert render_prompt(text, {}) == text

    def test_substitution(self):
        out = render_prompt("{user} likes {item}?", {"user": "u1", "item": "i2"})
        assert out == "u1 likes i2?"

    def test_unbound_rejected_by_name(self):
        with pytest.raises(ValueError, match="feature"):
            render_prompt("focus on {feature}", {})

    def test_extra_rejected_by_name(self):
        with pytest.raises(ValueError, match="bogus"):
            render_prompt("plain text", {"bogus": "x"})


class TestRegistry:
    def test_trigger_registry_covers_families(self):
        reg = PromptRegistry.from_triggers()
        assert {t.family for t in reg.templates} == set(FAMILIES)
        assert len(reg.groups()) == 10  # two groups per family

    def test_each_group_has_triggers(self):
        reg = PromptRegistry.from_triggers()
        for family, group in reg.groups():
            assert len(reg.by_group(family, group)) >= 1

    def test_template_ids_unique(self, small_registry):
        ids = [t.template_id for t in small_registry.templates]
        assert len(set(ids)) == len(ids)

    def test_save_load_round_trip(self, small_registry, tmp_path):
        path = str(tmp_path / "reg.jsonl")
        small_registry.save(path)
        back = PromptRegistry.load(path)
        assert [t.text for t in back.templates] == [t.text for t in small_registry.templates]
        assert [t.split for t in back.templates] == [t.split for t in small_registry.templates]


class TestSplit:
    def test_disjoint_and_sized(self, small_registry):
        for family, group in small_registry.groups():
            members = small_registry.by_group(family, group)
            seen = [t for t in members if t.split == "seen"]
            zero = [t for t in members if t.split == "zeroshot"]
            assert len(seen) == 7 and len(zero) == 2
            assert not ({t.template_id for t in seen} & {t.template_id for t in zero})

    def test_same_seed_same_split(self):
        def build():
            reg = PromptRegistry.from_triggers()
            return split_prompts(reg, 2, 1, seed=5)

        a, b = build(), build()
        assert [t.split for t in a.templates] == [t.split for t in b.templates]

    def test_insufficient_group_rejected(self):
        reg = PromptRegistry.from_triggers()
        with pytest.raises(ValueError, match="needs at least"):
            split_prompts(reg, 90, 5, seed=0)


class TestCandidateSet:
    def test_positive_among_negatives_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            CandidateSet(positive="a", negatives=["a", "b"], seed=0)

    def test_duplicate_negatives_rejected(self):
        with pytest.raises(ValueError, match="distinct"):
            CandidateSet(positive="a", negatives=["b", "b"], seed=0)


class TestHfmSampler:
    def test_constraints(self, small_catalog):
        nl, idset = sample_hfm_candidates(small_catalog, "item_3", 10, seed=1)
        for cs in (nl, idset):
            assert len(cs.negatives) == 10
            assert "item_3" not in cs.negatives
            assert len(set(cs.negatives)) == 10

    def test_determinism(self, small_catalog):
        a = sample_hfm_candidates(small_catalog, "item_5", 5, seed=9)
        b = sample_hfm_candidates(small_catalog, "item_5", 5, seed=9)
        assert a[0].negatives == b[0].negatives and a[1].negatives == b[1].negatives

    def test_insufficient_items_rejected(self, small_catalog):
        with pytest.raises(ValueError, match="sample"):
            sample_hfm_candidates(small_catalog, "item_1", 50, seed=0)

    def test_negative_frequencies_uniform(self, small_catalog):
        # chi-square-style bound: each non-positive item should appear with
        # frequency K/(n-1) within 3 sigma over many draws
        draws = 4000
        k = 5
        counts = {}
        for s in range(draws):
            nl, _ = sample_hfm_candidates(small_catalog, "item_1", k, seed=s)
            for neg in nl.negatives:
                counts[neg] = counts.get(neg, 0) + 1
        n_other = len(small_catalog.items) - 1
        p = k / n_other
        sigma = np.sqrt(draws * p * (1 - p))
        for item, c in counts.items():
            assert abs(c - draws * p) < 3.5 * sigma, (item, c)

    def test_invariants_over_many_seeds(self, small_catalog):
        for s in range(300):
            nl, idset = sample_hfm_candidates(small_catalog, "item_2", 8, seed=s)
            assert "item_2" not in nl.negatives and "item_2" not in idset.negatives
            assert len(set(nl.negatives)) == 8


class TestIclSampler:
    def test_rules(self, small_registry):
        target = small_registry.by_group("rating", 0)[0]
        cs = sample_icl_candidates(small_registry, target, 5, seed=3, split=None)
        pos = next(t for t in small_registry.templates if t.template_id == cs.positive)
        assert (pos.family, pos.group) == ("rating", 0)
        assert pos.template_id != target.template_id
        for neg_id in cs.negatives:
            neg = next(t for t in small_registry.templates if t.template_id == neg_id)
            assert (neg.family, neg.group) != ("rating", 0)

    def test_determinism(self, small_registry):
        target = small_registry.by_group("direct", 1)[0]
        a = sample_icl_candidates(small_registry, target, 4, seed=2, split=None)
        b = sample_icl_candidates(small_registry, target, 4, seed=2, split=None)
        assert a.positive == b.positive and a.negatives == b.negatives

    def test_singleton_group_rejected(self):
        reg = PromptRegistry()
        reg.add(PromptTemplate(family="rating", group=0, text="only one"))
        reg.add(PromptTemplate(family="direct", group=0, text="other a"))
        reg.add(PromptTemplate(family="direct", group=0, text="other b"))
        with pytest.raises(ValueError, match="positive"):
            sample_icl_candidates(reg, reg.templates[0], 1, seed=0, split=None)

    def test_invariants_over_many_seeds(self, small_registry):
        target = small_registry.by_group("sequential", 0)[1]
        for s in range(300):
            cs = sample_icl_candidates(small_registry, target, 5, seed=s, split=None)
            assert cs.positive not in cs.negatives
            assert len(set(cs.negatives)) == 5


@pytest.fixture(scope="module")
def per_family(small_catalog, small_registry, small_tokenizer):
    out = {}
    for fam in FAMILIES:
        templates = small_registry.by_family(fam)
        out[fam] = make_examples(small_catalog, fam, templates, small_tokenizer, seed=0)
    return out


class TestMakeExamples:

    def test_sequential_structure(self, per_family, small_catalog):
        exs = per_family["sequential"]
        assert len(exs) == len(small_catalog.users)  # every user has history
        for ex in exs:
            item_spans = [s for s in ex.spans if s.label.startswith("item")]
            assert len(item_spans) == len(ex.meta["history"])
            assert ex.meta["gold_item"] not in ex.meta["history"]  # sampled w/o replacement

    def test_direct_has_one_gold_among_candidates(self, per_family):
        for ex in per_family["direct"]:
            cands = ex.meta["candidates"]
            assert ex.meta["gold_item"] in cands
            assert cands.count(ex.meta["gold_item"]) == 1
            assert len(cands) == 10

    def test_spans_partition_id_tokens(self, per_family):
        for fam, exs in per_family.items():
            for ex in exs:
                spans = sorted(ex.spans, key=lambda s: s.start)
                assert spans[0].label == "cls" and spans[0].start == 0
                pos = 0
                for s in spans:
                    assert s.start == pos
                    pos = s.end
                assert pos == len(ex.id_tokens)

    def test_rating_target_format(self, per_family, small_tokenizer):
        for ex in per_family["rating"]:
            text = small_tokenizer.decode(ex.target_tokens)
            assert text in {f"{r}.0" for r in range(1, 6)}

    def test_coverage_once_per_interaction(self, per_family, small_catalog):
        n_inter = sum(len(v) for v in small_catalog.interactions.values())
        for fam in ("rating", "explanation", "summarization", "direct"):
            assert len(per_family[fam]) == n_inter

    def test_determinism(self, small_catalog, small_registry, small_tokenizer):
        t = small_registry.by_family("explanation")
        a = make_examples(small_catalog, "explanation", t, small_tokenizer, seed=4)
        b = make_examples(small_catalog, "explanation", t, small_tokenizer, seed=4)
        assert [x.nl_tokens for x in a] == [x.nl_tokens for x in b]
        assert [x.template_id for x in a] == [x.template_id for x in b]

    def test_unknown_family_rejected(self, small_catalog, small_registry, small_tokenizer):
        with pytest.raises(ValueError, match="family"):
            make_examples(small_catalog, "nope", small_registry.templates, small_tokenizer, seed=0)

    def test_explanation_renders_feature(self, per_family, small_tokenizer):
        for ex in per_family["explanation"][:10]:
            text = small_tokenizer.decode(ex.nl_tokens)
            assert "{" not in text and "}" not in text
