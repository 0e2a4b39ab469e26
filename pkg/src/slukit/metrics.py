"""Evaluation: exact-set dialogue-act accuracy and strict span-level slot F1.

A predicted span is a true positive only when an identical (name, start, end)
gold span exists in the same utterance; partially matched spans count as both
a false positive and a false negative. O positions never form spans and never
enter any count. F1 is micro-averaged: true/false positives and negatives are
pooled over the whole corpus.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .corpus import SlotSpan, decode_bio


@dataclass
class EvalReport:
    act_accuracy: float
    slot_precision: float
    slot_recall: float
    slot_f1: float
    per_slot: dict[str, dict[str, float]] = field(default_factory=dict)
    utterance_count: int = 0

    def to_json(self) -> str:
        return json.dumps(
            {
                "act_accuracy": self.act_accuracy,
                "slot_precision": self.slot_precision,
                "slot_recall": self.slot_recall,
                "slot_f1": self.slot_f1,
                "per_slot": self.per_slot,
                "utterance_count": self.utterance_count,
            },
            sort_keys=True,
            indent=2,
        )

    def pretty(self) -> str:
        lines = [
            f"utterances:     {self.utterance_count}",
            f"act accuracy:   {self.act_accuracy:.4f}",
            f"slot precision: {self.slot_precision:.4f}",
            f"slot recall:    {self.slot_recall:.4f}",
            f"slot F1:        {self.slot_f1:.4f}",
        ]
        if self.per_slot:
            lines.append("per-slot F1:")
            for name in sorted(self.per_slot):
                row = self.per_slot[name]
                lines.append(
                    f"  {name:<16} P={row['precision']:.4f} R={row['recall']:.4f} "
                    f"F1={row['f1']:.4f} gold={int(row['gold'])}"
                )
        return "\n".join(lines)


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _ratio(num: int, denom: int) -> float:
    return num / denom if denom else 0.0


def act_accuracy(pred_sets: list[frozenset[str]], gold_sets: list[frozenset[str]]) -> float:
    """Fraction of utterances whose act set matches gold exactly."""
    if len(pred_sets) != len(gold_sets):
        raise ValueError(f"prediction/gold length mismatch: {len(pred_sets)} vs {len(gold_sets)}")
    if not gold_sets:
        return 0.0
    hits = sum(1 for p, g in zip(pred_sets, gold_sets) if frozenset(p) == frozenset(g))
    return hits / len(gold_sets)


def _decode_sequences(tag_lists: list[list[str]], side: str) -> list[list[SlotSpan]]:
    out = []
    for i, tags in enumerate(tag_lists):
        try:
            out.append(decode_bio(tags))
        except ValueError as exc:
            raise ValueError(f"{side} utterance {i}: {exc}") from None
    return out


def slot_f1(
    pred_tags: list[list[str]], gold_tags: list[list[str]]
) -> tuple[float, float, float, dict[str, dict[str, float]]]:
    """Micro-averaged span precision/recall/F1 plus a per-slot-name table."""
    if len(pred_tags) != len(gold_tags):
        raise ValueError(f"prediction/gold length mismatch: {len(pred_tags)} vs {len(gold_tags)}")
    for i, (p, g) in enumerate(zip(pred_tags, gold_tags)):
        if len(p) != len(g):
            raise ValueError(f"utterance {i}: tag sequence lengths differ ({len(p)} vs {len(g)})")
    gold_spans = _decode_sequences(gold_tags, "gold")
    pred_spans = _decode_sequences(pred_tags, "predicted")

    tp_total = pred_total = gold_total = 0
    names: dict[str, dict[str, int]] = {}
    for pred, gold in zip(pred_spans, gold_spans):
        gold_keys = {s.key() for s in gold}
        for s in pred:
            row = names.setdefault(s.name, {"tp": 0, "pred": 0, "gold": 0})
            row["pred"] += 1
            pred_total += 1
            if s.key() in gold_keys:
                row["tp"] += 1
                tp_total += 1
        for s in gold:
            names.setdefault(s.name, {"tp": 0, "pred": 0, "gold": 0})["gold"] += 1
            gold_total += 1

    precision = _ratio(tp_total, pred_total)
    recall = _ratio(tp_total, gold_total)
    per_slot = {}
    for name, row in names.items():
        p = _ratio(row["tp"], row["pred"])
        r = _ratio(row["tp"], row["gold"])
        per_slot[name] = {"precision": p, "recall": r, "f1": _f1(p, r), "gold": float(row["gold"])}
    return precision, recall, _f1(precision, recall), per_slot


def slot_f1_restricted(
    pred_tags: list[list[str]],
    gold_tags: list[list[str]],
    keep_spans: list[set[tuple[str, int, int]]],
) -> tuple[float, float, float]:
    """Span F1 over a marked subset of gold spans.

    Gold spans outside the marked sets are dropped; predicted spans count
    toward precision only when they overlap a marked gold span's token range
    in the same utterance. Exact (name, start, end) matches are the true
    positives, as in the unrestricted metric.
    """
    if not (len(pred_tags) == len(gold_tags) == len(keep_spans)):
        raise ValueError("prediction/gold/marker length mismatch")
    gold_spans = _decode_sequences(gold_tags, "gold")
    pred_spans = _decode_sequences(pred_tags, "predicted")

    tp = pred_total = gold_total = 0
    for pred, gold, keep in zip(pred_spans, gold_spans, keep_spans):
        marked = [s for s in gold if s.key() in keep]
        gold_total += len(marked)
        marked_keys = {s.key() for s in marked}
        for s in pred:
            overlaps = any(s.start < m.end and m.start < s.end for m in marked)
            if not overlaps:
                continue
            pred_total += 1
            if s.key() in marked_keys:
                tp += 1
    precision = _ratio(tp, pred_total)
    recall = _ratio(tp, gold_total)
    return precision, recall, _f1(precision, recall)


def act_accuracy_restricted(
    pred_sets: list[frozenset[str]], gold_sets: list[frozenset[str]], keep: list[bool]
) -> float:
    """Exact-set accuracy over the marked subset of utterances."""
    if not (len(pred_sets) == len(gold_sets) == len(keep)):
        raise ValueError("prediction/gold/marker length mismatch")
    pairs = [(p, g) for p, g, k in zip(pred_sets, gold_sets, keep) if k]
    if not pairs:
        return 0.0
    return sum(1 for p, g in pairs if frozenset(p) == frozenset(g)) / len(pairs)


def phenomenon_masks(dialogues) -> tuple[list[set[tuple[str, int, int]]], list[bool]]:
    """Per-utterance markers for the restricted metrics.

    Returns (knowledge-dependent gold span keys, context-dependent flags),
    flattened in corpus order, read from the generator-provided marks.
    """
    keep_spans: list[set[tuple[str, int, int]]] = []
    ctx_mask: list[bool] = []
    for d in dialogues:
        for u in d.turns:
            keep_spans.append({s.key() for s in u.slots if s.kb_only})
            ctx_mask.append(u.context_dependent)
    return keep_spans, ctx_mask


def build_report(
    pred_acts: list[frozenset[str]],
    gold_acts: list[frozenset[str]],
    pred_tags: list[list[str]],
    gold_tags: list[list[str]],
) -> EvalReport:
    precision, recall, f1, per_slot = slot_f1(pred_tags, gold_tags)
    return EvalReport(
        act_accuracy=act_accuracy(pred_acts, gold_acts),
        slot_precision=precision,
        slot_recall=recall,
        slot_f1=f1,
        per_slot=per_slot,
        utterance_count=len(gold_acts),
    )
