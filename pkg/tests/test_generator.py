"""Synthetic corpus generator: determinism, rates, and structural invariants."""

import numpy as np
import pytest

from slukit.corpus import build_vocab
from slukit.generator import (
    AMBIGUOUS_ENTITIES,
    CITIES_TEST,
    FOODS_TEST,
    GENRES_TEST,
    KB_CATEGORIES,
    GenConfig,
    generate_synthetic,
)
from slukit.knowledge import TripleStore, retrieve

TEST_ONLY = set(CITIES_TEST) | set(FOODS_TEST) | set(GENRES_TEST)


class TestConfig:
    def test_rates_outside_unit_interval_rejected(self):
        with pytest.raises(ValueError, match="knowledge_rate"):
            GenConfig(knowledge_rate=1.2)
        with pytest.raises(ValueError, match="context_rate"):
            GenConfig(context_rate=-0.1)

    def test_needs_at_least_one_training_dialogue(self):
        with pytest.raises(ValueError, match="training"):
            GenConfig(n_train=0)


class TestDeterminismAndRates:
    def test_same_seed_regenerates_identically(self):
        cfg = GenConfig(n_train=60, n_test=20)
        a = generate_synthetic(cfg, 0)
        b = generate_synthetic(cfg, 0)
        assert a[0] == b[0] and a[1] == b[1] and a[2] == b[2] and a[3] == b[3]

    def test_different_seeds_differ(self):
        cfg = GenConfig(n_train=30, n_test=10)
        a = generate_synthetic(cfg, 0)
        b = generate_synthetic(cfg, 1)
        assert a[0] != b[0]

    def test_zero_knowledge_rate_keeps_test_inside_train_vocab(self):
        cfg = GenConfig(n_train=150, n_test=60, knowledge_rate=0.0)
        train, test, _, _ = generate_synthetic(cfg, 1)
        assert not any(s.kb_only for d in test for u in d.turns for s in u.slots)
        train_tokens = {t for d in train for u in d.turns for t in u.tokens}
        for d in test:
            for u in d.turns:
                for s in u.slots:
                    for tok in u.tokens[s.start : s.end]:
                        assert tok in train_tokens, tok

    def test_zero_context_rate_marks_nothing(self):
        cfg = GenConfig(n_train=60, n_test=30, context_rate=0.0)
        train, test, _, _ = generate_synthetic(cfg, 2)
        assert not any(u.context_dependent for d in train + test for u in d.turns)

    def test_knowledge_rate_binomially_consistent(self):
        cfg = GenConfig()
        _, test, _, _ = generate_synthetic(cfg, 0)
        ambi = set(AMBIGUOUS_ENTITIES)
        eligible = 0
        marked = 0
        for d in test:
            for u in d.turns:
                for s in u.slots:
                    if s.name in KB_CATEGORIES and u.tokens[s.start] not in ambi:
                        eligible += 1
                        marked += s.kb_only
        r = cfg.knowledge_rate
        bound = 4 * np.sqrt(eligible * r * (1 - r))
        assert abs(marked - eligible * r) <= bound

    def test_kb_only_marks_match_test_only_pools(self):
        _, test, _, _ = generate_synthetic(GenConfig(), 3)
        for d in test:
            for u in d.turns:
                for s in u.slots:
                    value = u.tokens[s.start]
                    if s.kb_only:
                        assert value in TEST_ONLY
                    elif s.name in KB_CATEGORIES:
                        assert value not in TEST_ONLY


class TestStructure:
    @pytest.mark.parametrize("seed", range(10))
    def test_invariant_sweep(self, seed):
        cfg = GenConfig(n_train=40, n_test=15)
        train, test, kb, inventories = generate_synthetic(cfg, seed)
        acts = set(inventories["acts"])
        slots = set(inventories["slots"])
        for d in train + test:
            assert 2 <= len(d.turns) <= cfg.max_turns
            d.validate(acts, slots)
            for prev, cur in zip(d.turns, d.turns[1:]):
                assert prev.speaker != cur.speaker  # strict alternation

    def test_context_marks_follow_a_question(self):
        train, test, _, _ = generate_synthetic(GenConfig(), 0)
        for d in train + test:
            for i, u in enumerate(d.turns):
                if not u.context_dependent:
                    continue
                questions = [
                    j
                    for j in range(i)
                    if {"confirm_question", "offer_question"} & d.turns[j].acts
                ]
                assert questions, "ambiguous answer with no preceding question"
                last = max(questions)
                expected = (
                    "accept_booking"
                    if "confirm_question" in d.turns[last].acts
                    else "accept_more"
                )
                assert u.acts == frozenset({expected})

    def test_every_kb_entity_has_type_triple_in_top_retrievals(self):
        _, _, kb, _ = generate_synthetic(GenConfig(n_train=30, n_test=10), 0)
        store = TripleStore(kb)
        for pool, category in ((CITIES_TEST, "city"), (FOODS_TEST, "food"), (GENRES_TEST, "genre")):
            for entity in pool:
                top = retrieve(store, entity, m=5)
                assert any(t.relation == "is a" and t.tail == category for t in top), entity

    def test_ambiguous_entities_carry_both_type_triples(self):
        _, _, kb, _ = generate_synthetic(GenConfig(n_train=30, n_test=10), 0)
        store = TripleStore(kb)
        for entity in AMBIGUOUS_ENTITIES:
            tails = {t.tail for t in retrieve(store, entity, m=5) if t.relation == "is a"}
            assert {"city", "food"} <= tails

    def test_numbers_and_meridiems_have_no_triples(self):
        _, _, kb, _ = generate_synthetic(GenConfig(n_train=30, n_test=10), 0)
        store = TripleStore(kb)
        for word in ("3", "7", "am", "pm"):
            assert retrieve(store, word) == []

    def test_test_only_entities_never_in_training_text(self):
        train, _, _, _ = generate_synthetic(GenConfig(), 0)
        vocab = build_vocab(train)
        for entity in TEST_ONLY:
            assert entity not in vocab

    def test_kb_triple_counts_per_entity(self):
        """Every knowledge-bearing entity holds 1..5 true triples plus distractors."""
        _, _, kb, _ = generate_synthetic(GenConfig(n_train=30, n_test=10), 0)
        by_head: dict[str, list] = {}
        for t in kb:
            by_head.setdefault(t.head, []).append(t)
        for pool in (CITIES_TEST, FOODS_TEST, GENRES_TEST):
            for entity in pool:
                true_triples = [
                    t for t in by_head[entity] if t.relation in ("is a", "part of")
                    or (t.relation == "related to" and _same_pool(t.head, t.tail))
                ]
                assert 1 <= len(true_triples) <= 5


def _same_pool(a: str, b: str) -> bool:
    from slukit.generator import CITIES_TRAIN, FOODS_TRAIN, GENRES_TRAIN

    pools = [
        set(CITIES_TRAIN) | set(CITIES_TEST),
        set(FOODS_TRAIN) | set(FOODS_TEST),
        set(GENRES_TRAIN) | set(GENRES_TEST),
    ]
    return any(a in p and b in p for p in pools)
