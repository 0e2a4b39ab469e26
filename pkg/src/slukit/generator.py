"""Synthetic multi-turn booking dialogues with a matching knowledge base.

The generator plants two measurable phenomena:

* knowledge dependence: a configurable fraction of test-split city/food/genre
  slot values come from held-out entity pools that never occur in training
  text. Each such entity carries a high-weight type triple (entity, "is a",
  category) in the knowledge base, so the category is recoverable only
  through retrieved knowledge. These spans are marked ``kb_only``.
* context dependence: a configurable fraction of answer turns use surface
  forms like "yes please" whose dialogue act is fixed by the most recent
  system question (confirmation vs. offer), possibly several turns back
  across hold/acknowledge exchanges. These turns are marked
  ``context_dependent``.

A third, unmarked phenomenon targets the decoders: elliptical answers to
"which city / what food" questions sometimes name an entity that exists in
both the city and the food lexicons, so the slot label is decidable only
from the dialogue context.

Generation is a pure function of (config, seed).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Dialogue, SlotSpan, Utterance
from .knowledge import KnowledgeTriple

CITIES_TRAIN = [
    "ashford", "belmont", "carwell", "dunroven", "eastvale", "fairview",
    "glenrock", "harlow", "irvington", "jasperton", "kelbrook", "lynwood",
]
CITIES_TEST = ["marwick", "norvale", "osterley", "pellworth", "quimby", "redmoor"]
FOODS_TRAIN = [
    "tacos", "sushi", "ramen", "falafel", "paella", "gumbo",
    "pierogi", "lasagna", "goulash", "samosas", "chowder", "biryani",
]
FOODS_TEST = ["tagine", "pozole", "laksa", "arepas", "knishes", "cassoulet"]
GENRES_TRAIN = [
    "comedy", "thriller", "romance", "horror", "western", "musical",
    "mystery", "fantasy", "drama", "animation", "documentary", "noir",
]
GENRES_TEST = ["giallo", "wuxia", "kaiju", "screwball", "mockumentary", "peplum"]
# entities that are both a city and a food; only dialogue context disambiguates
AMBIGUOUS_ENTITIES = ["brindle", "calico", "damson", "farrow", "hollis", "juniper"]

DATES = ["today", "tomorrow", "tonight", "monday", "tuesday", "friday", "saturday", "sunday"]
HOURS = [str(h) for h in range(1, 13)]
MERIDIEMS = ["am", "pm"]
PARTY_SIZES = [str(n) for n in range(2, 10)]
PRICINGS = ["cheap", "moderate", "fancy", "budget", "upscale"]
REGIONS = ["westlands", "northshore", "midvale"]

KB_CATEGORIES = ("city", "food", "genre")
CONTEXT_DEPENDENT_ACTS = ("accept_booking", "accept_more")

ACT_INVENTORY = [
    "request", "request_alts", "ask_info", "inform", "confirm_question",
    "offer_question", "accept_booking", "accept_more", "reject", "hold",
    "acknowledge", "notify_success", "closing",
]
SLOT_INVENTORY = ["city", "food", "genre", "date", "starttime", "numberofpeople", "pricing"]


@dataclass(frozen=True)
class GenConfig:
    n_train: int = 600
    n_test: int = 200
    knowledge_rate: float = 0.3
    context_rate: float = 0.3
    max_turns: int = 8
    ask_info_rate: float = 0.45
    ellipsis_ambiguous_rate: float = 0.5
    reject_rate: float = 0.2
    more_round_rate: float = 0.7
    restart_rate: float = 0.35
    abandon_rate: float = 0.08
    close_rate: float = 0.85
    hold_rate: float = 0.4
    long_hold_rate: float = 0.8
    bridge_chain_rate: float = 0.15

    def __post_init__(self):
        for name in (
            "knowledge_rate", "context_rate", "ask_info_rate",
            "ellipsis_ambiguous_rate", "reject_rate", "more_round_rate", "restart_rate",
            "abandon_rate", "close_rate", "hold_rate", "long_hold_rate", "bridge_chain_rate",
        ):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if self.n_train < 1 or self.n_test < 0:
            raise ValueError("need at least one training dialogue")
        if self.max_turns < 2:
            raise ValueError("max_turns must be >= 2")


_POOLS = {
    "city": (CITIES_TRAIN, CITIES_TEST),
    "food": (FOODS_TRAIN, FOODS_TEST),
    "genre": (GENRES_TRAIN, GENRES_TEST),
}


class _DialogueBuilder:
    def __init__(self, cfg: GenConfig, rng: np.random.Generator, is_test: bool):
        self.cfg = cfg
        self.rng = rng
        self.is_test = is_test
        self.turns: list[Utterance] = []
        self.question_types_seen: set[str] = set()

    # -- entity draws -------------------------------------------------------

    def draw_entity(self, category: str) -> tuple[str, bool]:
        """Entity token for a kb category plus its kb_only mark."""
        train_pool, test_pool = _POOLS[category]
        if self.is_test and self.rng.random() < self.cfg.knowledge_rate:
            return str(self.rng.choice(test_pool)), True
        return str(self.rng.choice(train_pool)), False

    def pick(self, options):
        return options[int(self.rng.integers(0, len(options)))]

    # -- turn templates -----------------------------------------------------

    def user_request(self, first: bool) -> None:
        rng = self.rng
        template = int(rng.choice(len(_REQUEST_TEMPLATES), p=_REQUEST_WEIGHTS))
        tokens, spans = _REQUEST_TEMPLATES[template](self)
        acts = {"request"} if first else {"request_alts"}
        if not first:
            tokens = ["actually"] + tokens
            spans = [SlotSpan(s.name, s.start + 1, s.end + 1, s.kb_only) for s in spans]
        self.turns.append(Utterance("user", tokens, frozenset(acts), spans))

    def ask_info_pair(self) -> None:
        asked = self.pick(KB_CATEGORIES)
        ask_tokens = {
            "city": ["which", "city", "should", "i", "look", "in"],
            "food": ["what", "kind", "of", "food", "do", "you", "want"],
            "genre": ["what", "genre", "sounds", "fun"],
        }[asked]
        self.turns.append(Utterance("system", ask_tokens, frozenset({"ask_info"})))

        # the user may think it over first; these hold exchanges also put
        # filler pairs into the context of everything that follows
        holds = 0
        while holds < 2 and self.rng.random() < 0.4 and self.room(4):
            self.hold_pair()
            holds += 1

        if asked in ("city", "food") and self.rng.random() < self.cfg.ellipsis_ambiguous_rate:
            entity, kb_only = self.pick(AMBIGUOUS_ENTITIES), False
        else:
            entity, kb_only = self.draw_entity(asked)
        shape = int(self.rng.integers(0, 3))
        if shape == 0:
            tokens, pos = [entity, "please"], 0
        elif shape == 1:
            tokens, pos = ["maybe", entity], 1
        else:
            tokens, pos = [entity, "i", "think"], 0
        span = SlotSpan(asked, pos, pos + 1, kb_only)
        self.turns.append(Utterance("user", tokens, frozenset({"inform"}), [span]))

    def system_response(self, previous_question: str | None = None, force: str | None = None) -> str:
        """Emit an inform+question turn; returns the question type.

        Follow-up responses lean toward the other question type, so longer
        dialogues usually contain both types before the final answer.
        """
        if force is not None:
            confirm = force == "confirm"
        elif previous_question is None:
            confirm = self.rng.random() < 0.5
        else:
            flip = self.rng.random() < 0.8
            confirm = (previous_question == "offer") if flip else (previous_question == "confirm")
        if confirm:
            hour, meridiem = self.pick(HOURS), self.pick(MERIDIEMS)
            if self.rng.random() < 0.5:
                tokens = ["i", "found", "a", "spot", "at", hour, meridiem, "shall", "i", "book", "it"]
                start = 5
            else:
                tokens = ["there", "is", "a", "great", "option", "at", hour, meridiem, "should", "i", "reserve", "it"]
                start = 6
            spans = [SlotSpan("starttime", start, start + 2)]
            self.turns.append(Utterance("system", tokens, frozenset({"inform", "confirm_question"}), spans))
            self.question_types_seen.add("confirm")
            return "confirm"
        if self.rng.random() < 0.5:
            tokens = ["i", "see", "several", "choices", "do", "you", "want", "more", "options"]
        else:
            tokens = ["lots", "of", "places", "match", "want", "to", "hear", "more"]
        self.turns.append(Utterance("system", tokens, frozenset({"inform", "offer_question"})))
        self.question_types_seen.add("offer")
        return "offer"

    def hold_pair(self) -> None:
        # half the holds carry content, so filler turns are not constant
        if self.rng.random() < 0.5:
            n = self.pick(PARTY_SIZES)
            hold_tokens, pos = self.pick([(["hold", "on", n, "of", "us", "are", "deciding"], 2),
                                          (["one", "second", "checking", "with", n, "friends"], 4)])
            hold = Utterance("user", hold_tokens, frozenset({"hold", "inform"}),
                             [SlotSpan("numberofpeople", pos, pos + 1)])
        else:
            tokens = self.pick([["hold", "on", "a", "moment"], ["one", "second", "please"]])
            hold = Utterance("user", tokens, frozenset({"hold"}))
        ack = self.pick([["sure", "take", "your", "time"], ["no", "rush", "at", "all"]])
        self.turns.append(hold)
        self.turns.append(Utterance("system", ack, frozenset({"acknowledge"})))

    # answers that continue browsing; deliberately valid after either
    # question type, so the surface never reveals what was asked
    CONTINUE_ANSWERS = (
        ["show", "me", "other", "options"],
        ["let", "me", "see", "more", "choices"],
        ["i", "want", "to", "see", "more"],
    )

    def user_answer(self, question: str, ambiguous: bool) -> str:
        """Answer the pending question; returns the chosen act."""
        rng = self.rng
        if ambiguous:
            tokens = self.pick(
                [["yes", "please"], ["sure", "why", "not"], ["okay", "sounds", "good"], ["yes", "that", "works"]]
            )
            act = "accept_booking" if question == "confirm" else "accept_more"
            self.turns.append(Utterance("user", tokens, frozenset({act}), [], context_dependent=True))
            return act
        if rng.random() < self.cfg.reject_rate:
            tokens = self.pick([["no", "thanks"], ["no", "that", "is", "all"]])
            self.turns.append(Utterance("user", tokens, frozenset({"reject"})))
            return "reject"
        if question == "confirm" and rng.random() >= 0.6:
            tokens = self.pick([["yes", "book", "it", "for", "me"], ["go", "ahead", "and", "book", "it"]])
            self.turns.append(Utterance("user", tokens, frozenset({"accept_booking"})))
            return "accept_booking"
        # decline the proposed booking or accept the offer: keep browsing
        self.turns.append(Utterance("user", list(self.pick(self.CONTINUE_ANSWERS)), frozenset({"accept_more"})))
        return "accept_more"

    def bridge(self) -> None:
        tokens = ["booked", "it", "anything", "else", "i", "can", "do"]
        self.turns.append(Utterance("system", tokens, frozenset({"notify_success", "offer_question"})))
        self.question_types_seen.add("offer")

    def ambiguous_bridge_answer(self) -> None:
        # answers the bridge's offer question; a confirm question was
        # necessarily accepted earlier, so both question types precede this
        tokens = self.pick([["yes", "please"], ["sure", "why", "not"], ["okay", "sounds", "good"]])
        self.turns.append(Utterance("user", tokens, frozenset({"accept_more"}), [], context_dependent=True))

    def closing(self, final_act: str | None) -> None:
        if final_act == "accept_booking":
            if self.rng.random() < 0.5:
                self.turns.append(
                    Utterance("system", ["your", "booking", "is", "all", "set", "enjoy"], frozenset({"notify_success"}))
                )
            else:
                self.turns.append(
                    Utterance("system", ["all", "set", "goodbye", "now"], frozenset({"notify_success", "closing"}))
                )
        elif final_act == "reject":
            self.turns.append(Utterance("system", ["no", "problem", "goodbye"], frozenset({"closing"})))
        elif final_act == "accept_more":
            self.turns.append(
                Utterance(
                    "system", ["i", "will", "send", "more", "options", "goodbye"], frozenset({"inform", "closing"})
                )
            )

    # -- assembly -----------------------------------------------------------

    def room(self, upcoming: int, reserve_close: bool = True) -> bool:
        return len(self.turns) + upcoming + (1 if reserve_close else 0) <= self.cfg.max_turns

    def build(self) -> list[Utterance]:
        cfg, rng = self.cfg, self.rng
        final_act: str | None = None
        first = True
        asked_already = False
        skip_request = False
        if rng.random() < cfg.bridge_chain_rate:
            # compact two-question shape: a confirmed booking, then the
            # bridge's offer question, so both question types always precede
            # whatever answers come after
            self.user_request(True)
            first = False
            self.system_response(force="confirm")
            tokens = self.pick([["yes", "book", "it", "for", "me"], ["go", "ahead", "and", "book", "it"]])
            self.turns.append(Utterance("user", tokens, frozenset({"accept_booking"})))
            self.bridge()
            if rng.random() < min(1.0, 2.5 * cfg.context_rate):
                self.ambiguous_bridge_answer()
                skip_request = True
        while True:
            if not skip_request:
                self.user_request(first)
                first = False
                if not asked_already and rng.random() < cfg.ask_info_rate and self.room(4):
                    # at most one clarification exchange per dialogue
                    self.ask_info_pair()
                    asked_already = True
            skip_request = False
            final_act = None
            question: str | None = None
            while True:
                other_type_seen = len(self.question_types_seen) > 1
                question = self.system_response(previous_question=question)
                other_type_seen = other_type_seen or len(self.question_types_seen) > 1
                if rng.random() < cfg.abandon_rate:
                    final_act = None  # user walks away; no closing follows
                    break
                # once both question types are in play, answers are the
                # order-sensitive cases; sample them more often
                amb_p = min(1.0, 2.0 * cfg.context_rate) if other_type_seen else cfg.context_rate
                ambiguous = rng.random() < amb_p
                # ambiguous answers bind at distance 1 in training; the test
                # split stretches single-question-type cases across holds
                if ambiguous:
                    if self.is_test and not other_type_seen:
                        hold_rate, max_holds = cfg.long_hold_rate, 2
                    else:
                        hold_rate, max_holds = 0.0, 0
                else:
                    hold_rate, max_holds = cfg.hold_rate, 2
                holds = 0
                while holds < max_holds and rng.random() < hold_rate and self.room(3):
                    self.hold_pair()
                    holds += 1
                if not self.room(1):
                    break
                final_act = self.user_answer(question, ambiguous)
                if final_act == "accept_more" and self.room(2) and rng.random() < cfg.more_round_rate:
                    continue
                break
            if final_act == "accept_booking" and self.room(3) and rng.random() < cfg.restart_rate:
                self.bridge()
                if self.room(3) and rng.random() < cfg.context_rate:
                    self.ambiguous_bridge_answer()
                    skip_request = True
                continue
            break
        if final_act is not None and self.room(0, reserve_close=False) and rng.random() < cfg.close_rate:
            self.closing(final_act)
        return self.turns


_REQUEST_TEMPLATES = [
    lambda b: _req_food_city(b),
    lambda b: _req_pricing_food_city(b),
    lambda b: _req_genre_date(b),
    lambda b: _req_find_x(b),
    lambda b: _req_table(b),
    lambda b: _req_food_city_date(b),
    lambda b: _req_genre_city(b),
    lambda b: _req_pricing_date(b),
]
_REQUEST_WEIGHTS = np.array([1, 1, 1, 3, 1, 1, 1, 1], dtype=float)
_REQUEST_WEIGHTS /= _REQUEST_WEIGHTS.sum()


def _req_food_city(b: _DialogueBuilder):
    food, food_kb = b.draw_entity("food")
    city, city_kb = b.draw_entity("city")
    tokens = ["i", "need", "a", food, "place", "in", city]
    return tokens, [SlotSpan("food", 3, 4, food_kb), SlotSpan("city", 6, 7, city_kb)]


def _req_pricing_food_city(b: _DialogueBuilder):
    pricing = b.pick(PRICINGS)
    food, food_kb = b.draw_entity("food")
    city, city_kb = b.draw_entity("city")
    tokens = ["i", "need", "a", pricing, food, "place", "in", city]
    return tokens, [
        SlotSpan("pricing", 3, 4),
        SlotSpan("food", 4, 5, food_kb),
        SlotSpan("city", 7, 8, city_kb),
    ]


def _req_genre_date(b: _DialogueBuilder):
    genre, genre_kb = b.draw_entity("genre")
    date = b.pick(DATES)
    tokens = ["show", "me", "a", genre, "movie", date]
    return tokens, [SlotSpan("genre", 3, 4, genre_kb), SlotSpan("date", 5, 6)]


def _req_find_x(b: _DialogueBuilder):
    # lexically uninformative frame: only the entity itself (or its
    # knowledge) reveals which slot label applies
    category = b.pick(KB_CATEGORIES)
    entity, kb_only = b.draw_entity(category)
    tokens = ["find", entity, "please"]
    return tokens, [SlotSpan(category, 1, 2, kb_only)]


def _req_table(b: _DialogueBuilder):
    n = b.pick(PARTY_SIZES)
    hour, meridiem = b.pick(HOURS), b.pick(MERIDIEMS)
    tokens = ["book", "a", "table", "for", n, "people", "at", hour, meridiem]
    return tokens, [SlotSpan("numberofpeople", 4, 5), SlotSpan("starttime", 7, 9)]


def _req_food_city_date(b: _DialogueBuilder):
    food, food_kb = b.draw_entity("food")
    city, city_kb = b.draw_entity("city")
    date = b.pick(DATES)
    tokens = ["i", "want", food, "in", city, date]
    return tokens, [
        SlotSpan("food", 2, 3, food_kb),
        SlotSpan("city", 4, 5, city_kb),
        SlotSpan("date", 5, 6),
    ]


def _req_genre_city(b: _DialogueBuilder):
    genre, genre_kb = b.draw_entity("genre")
    city, city_kb = b.draw_entity("city")
    tokens = ["find", "a", genre, "movie", "in", city]
    return tokens, [SlotSpan("genre", 2, 3, genre_kb), SlotSpan("city", 5, 6, city_kb)]


def _req_pricing_date(b: _DialogueBuilder):
    pricing = b.pick(PRICINGS)
    date = b.pick(DATES)
    tokens = ["get", "me", "something", pricing, date]
    return tokens, [SlotSpan("pricing", 3, 4), SlotSpan("date", 4, 5)]


# ---------------------------------------------------------------------------
# knowledge base
# ---------------------------------------------------------------------------


def build_kb(rng: np.random.Generator) -> list[KnowledgeTriple]:
    """True type/sibling/region triples plus low-weight distractors.

    The type triple always carries the highest weight for its head, so top-5
    retrieval keeps it. Numbers and meridiem words get no entries at all.
    """
    triples: list[KnowledgeTriple] = []
    all_pools = {
        "city": CITIES_TRAIN + CITIES_TEST,
        "food": FOODS_TRAIN + FOODS_TEST,
        "genre": GENRES_TRAIN + GENRES_TEST,
    }
    everything = [e for pool in all_pools.values() for e in pool] + AMBIGUOUS_ENTITIES + DATES

    def distractors(head: str, count: int) -> None:
        for _ in range(count):
            other = str(rng.choice(everything))
            if other != head:
                triples.append(KnowledgeTriple(head, "related to", other, float(rng.uniform(0.05, 0.45))))

    for category, pool in all_pools.items():
        for entity in pool:
            triples.append(KnowledgeTriple(entity, "is a", category, float(rng.uniform(0.6, 1.0))))
            for _ in range(int(rng.integers(1, 3))):
                sibling = str(rng.choice([e for e in pool if e != entity][:12]))
                triples.append(KnowledgeTriple(entity, "related to", sibling, float(rng.uniform(0.1, 0.5))))
            if category == "city":
                triples.append(
                    KnowledgeTriple(entity, "part of", str(rng.choice(REGIONS)), float(rng.uniform(0.1, 0.5)))
                )
            distractors(entity, int(rng.integers(0, 3)))

    for entity in AMBIGUOUS_ENTITIES:
        # listed under both types: knowledge alone cannot resolve these
        triples.append(KnowledgeTriple(entity, "is a", "city", float(rng.uniform(0.6, 1.0))))
        triples.append(KnowledgeTriple(entity, "is a", "food", float(rng.uniform(0.6, 1.0))))
        distractors(entity, 1)

    for date in DATES:
        triples.append(KnowledgeTriple(date, "is a", "day", float(rng.uniform(0.6, 1.0))))
        other = str(rng.choice([d for d in DATES if d != date]))
        triples.append(KnowledgeTriple(date, "related to", other, float(rng.uniform(0.1, 0.4))))

    for head, relation, tail in (
        ("movie", "is a", "film"),
        ("place", "is a", "location"),
        ("table", "related to", "furniture"),
        ("food", "related to", "meal"),
    ):
        triples.append(KnowledgeTriple(head, relation, tail, float(rng.uniform(0.3, 0.6))))
    return triples


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def generate_synthetic(
    cfg: GenConfig, seed: int
) -> tuple[list[Dialogue], list[Dialogue], list[KnowledgeTriple], dict[str, list[str]]]:
    """Deterministic (config, seed) -> (train, test, kb triples, inventories)."""
    rng = np.random.default_rng(seed)
    kb = build_kb(rng)

    def gen_split(count: int, is_test: bool, tag: str) -> list[Dialogue]:
        out = []
        for i in range(count):
            builder = _DialogueBuilder(cfg, rng, is_test)
            turns = builder.build()
            dialogue = Dialogue(f"{tag}-{i:04d}", turns)
            dialogue.validate(set(ACT_INVENTORY), set(SLOT_INVENTORY))
            if not 2 <= len(turns) <= cfg.max_turns:
                raise AssertionError(f"dialogue {dialogue.id} has {len(turns)} turns")
            out.append(dialogue)
        return out

    train = gen_split(cfg.n_train, False, "train")
    test = gen_split(cfg.n_test, True, "test")
    inventories = {"acts": sorted(ACT_INVENTORY), "slots": sorted(SLOT_INVENTORY)}
    return train, test, kb, inventories
