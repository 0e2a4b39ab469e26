"""Dialogue data model, BIO codec, JSONL corpus files, and the vocabulary.

A corpus file holds one JSON object per line:

    {"id": ..., "turns": [{"speaker", "tokens": [...], "acts": [...],
                           "slots": [{"name", "start", "end"}, ...]}, ...]}

Slot objects may carry an optional ``"kb_only": true`` flag and turn objects
an optional ``"context_dependent": true`` flag; both mark generated phenomena
and are preserved on round-trip but never required.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
SENT_TOKEN = "<s>"
RESERVED_TOKENS = (PAD_TOKEN, UNK_TOKEN, SENT_TOKEN)

OUTSIDE_TAG = "O"
MAX_SEQ_LEN = 60


@dataclass(frozen=True)
class SlotSpan:
    """Half-open token span [start, end) carrying one slot value."""

    name: str
    start: int
    end: int
    kb_only: bool = False

    def key(self) -> tuple[str, int, int]:
        return (self.name, self.start, self.end)


@dataclass
class Utterance:
    speaker: str  # "user" or "system"
    tokens: list[str]
    acts: frozenset[str]
    slots: list[SlotSpan] = field(default_factory=list)
    context_dependent: bool = False

    @property
    def slot_tags(self) -> list[str]:
        return encode_bio(self.slots, len(self.tokens))

    def validate(self, act_inventory: set[str] | None = None, slot_inventory: set[str] | None = None) -> None:
        if self.speaker not in ("user", "system"):
            raise ValueError(f"speaker must be 'user' or 'system', got {self.speaker!r}")
        if not self.tokens:
            raise ValueError("utterance has no tokens")
        if len(self.tokens) > MAX_SEQ_LEN:
            raise ValueError(f"utterance has {len(self.tokens)} tokens; limit is {MAX_SEQ_LEN}")
        if not self.acts:
            raise ValueError("utterance has an empty act set")
        if act_inventory is not None:
            unknown = self.acts - act_inventory
            if unknown:
                raise ValueError(f"unknown act labels {sorted(unknown)}")
        if slot_inventory is not None:
            unknown = {s.name for s in self.slots} - slot_inventory
            if unknown:
                raise ValueError(f"unknown slot names {sorted(unknown)}")
        encode_bio(self.slots, len(self.tokens))  # raises on overlap / out of range


@dataclass
class Dialogue:
    id: str
    turns: list[Utterance]

    def validate(self, act_inventory: set[str] | None = None, slot_inventory: set[str] | None = None) -> None:
        if not self.turns:
            raise ValueError(f"dialogue {self.id!r} has no turns")
        for i, turn in enumerate(self.turns):
            try:
                turn.validate(act_inventory, slot_inventory)
            except ValueError as exc:
                raise ValueError(f"dialogue {self.id!r} turn {i}: {exc}") from None


# ---------------------------------------------------------------------------
# BIO codec
# ---------------------------------------------------------------------------


def encode_bio(spans: list[SlotSpan], length: int) -> list[str]:
    """B-name at each span start, I-name inside, O elsewhere."""
    tags = [OUTSIDE_TAG] * length
    for span in sorted(spans, key=lambda s: s.start):
        if not (0 <= span.start < span.end <= length):
            raise ValueError(f"span {span.key()} out of range for length {length}")
        for pos in range(span.start, span.end):
            if tags[pos] != OUTSIDE_TAG:
                raise ValueError(f"overlapping spans at token {pos}")
            tags[pos] = ("B-" if pos == span.start else "I-") + span.name
    return tags


def decode_bio(tags: list[str]) -> list[SlotSpan]:
    """Strict inverse of encode_bio; rejects orphan or mismatched I- tags."""
    spans: list[SlotSpan] = []
    open_name, open_start = None, 0
    for pos, tag in enumerate(tags):
        if tag == OUTSIDE_TAG:
            if open_name is not None:
                spans.append(SlotSpan(open_name, open_start, pos))
                open_name = None
        elif tag.startswith("B-"):
            if open_name is not None:
                spans.append(SlotSpan(open_name, open_start, pos))
            open_name, open_start = tag[2:], pos
        elif tag.startswith("I-"):
            if open_name != tag[2:]:
                raise ValueError(f"invalid BIO: {tag} at position {pos} does not continue a span")
        else:
            raise ValueError(f"invalid BIO tag {tag!r} at position {pos}")
    if open_name is not None:
        spans.append(SlotSpan(open_name, open_start, len(tags)))
    return spans


def repair_bio(tags: list[str]) -> list[str]:
    """Rewrite orphan or mismatched I-x tags to B-x so decode_bio accepts."""
    fixed = list(tags)
    prev_name = None
    for pos, tag in enumerate(fixed):
        if tag.startswith("I-"):
            if prev_name != tag[2:]:
                fixed[pos] = "B-" + tag[2:]
            prev_name = tag[2:]
        elif tag.startswith("B-"):
            prev_name = tag[2:]
        else:
            prev_name = None
    return fixed


# ---------------------------------------------------------------------------
# corpus files
# ---------------------------------------------------------------------------


def _utterance_to_obj(u: Utterance) -> dict:
    obj: dict = {
        "speaker": u.speaker,
        "tokens": list(u.tokens),
        "acts": sorted(u.acts),
        "slots": [],
    }
    for s in u.slots:
        rec: dict = {"name": s.name, "start": s.start, "end": s.end}
        if s.kb_only:
            rec["kb_only"] = True
        obj["slots"].append(rec)
    if u.context_dependent:
        obj["context_dependent"] = True
    return obj


def _utterance_from_obj(obj: dict) -> Utterance:
    slots = [
        SlotSpan(s["name"], int(s["start"]), int(s["end"]), bool(s.get("kb_only", False)))
        for s in obj.get("slots", [])
    ]
    return Utterance(
        speaker=obj["speaker"],
        tokens=[str(t) for t in obj["tokens"]],
        acts=frozenset(obj["acts"]),
        slots=slots,
        context_dependent=bool(obj.get("context_dependent", False)),
    )


def save_dialogues(dialogues: list[Dialogue], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in dialogues:
            obj = {"id": d.id, "turns": [_utterance_to_obj(u) for u in d.turns]}
            fh.write(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n")


def load_dialogues(
    path: str,
    act_inventory: set[str] | None = None,
    slot_inventory: set[str] | None = None,
) -> list[Dialogue]:
    dialogues: list[Dialogue] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                d = Dialogue(id=str(obj["id"]), turns=[_utterance_from_obj(t) for t in obj["turns"]])
                d.validate(act_inventory, slot_inventory)
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad dialogue record: {exc}") from None
            dialogues.append(d)
    return dialogues


def save_labels(labels: list[str], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for label in labels:
            fh.write(label + "\n")


def load_labels(path: str) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.strip() for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# vocabulary
# ---------------------------------------------------------------------------


class Vocab:
    """Token-to-id map with reserved padding/unknown/sentinel ids."""

    def __init__(self, tokens: list[str] | None = None):
        self._token_to_id: dict[str, int] = {}
        for tok in RESERVED_TOKENS:
            self._token_to_id[tok] = len(self._token_to_id)
        for tok in tokens or []:
            if tok not in self._token_to_id:
                self._token_to_id[tok] = len(self._token_to_id)

    def __len__(self) -> int:
        return len(self._token_to_id)

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    @property
    def pad_id(self) -> int:
        return self._token_to_id[PAD_TOKEN]

    @property
    def unk_id(self) -> int:
        return self._token_to_id[UNK_TOKEN]

    @property
    def sent_id(self) -> int:
        return self._token_to_id[SENT_TOKEN]

    def id_of(self, token: str) -> int:
        return self._token_to_id.get(token, self._token_to_id[UNK_TOKEN])

    def encode(self, tokens: list[str]) -> list[int]:
        get = self._token_to_id.get
        unk = self._token_to_id[UNK_TOKEN]
        return [get(t, unk) for t in tokens]

    def tokens(self) -> list[str]:
        return list(self._token_to_id)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self._token_to_id:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path: str) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            toks = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        if toks[: len(RESERVED_TOKENS)] != list(RESERVED_TOKENS):
            raise ValueError(f"{path}: reserved tokens missing or reordered")
        return cls(toks[len(RESERVED_TOKENS) :])


def build_vocab(dialogues: list[Dialogue]) -> Vocab:
    """Vocabulary over every training token, in first-seen order."""
    if not dialogues:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    seen: dict[str, None] = {}
    for d in dialogues:
        for u in d.turns:
            for tok in u.tokens:
                seen.setdefault(tok, None)
    return Vocab(list(seen))
