"""Slot and act decoders, the joint loss, and label prediction.

Slots: a BiLSTM runs over the knowledge-enriched token vectors of one
utterance. Each direction's initial hidden state is tanh(W c_n) of that
turn's dialogue-context vector (initial cell state zero); the concatenated
per-token outputs feed a linear slot head, softmaxed at loss/prediction time.

Acts: a unidirectional LSTM runs over the turn axis of the dialogue-context
matrix; each turn's output feeds a linear act head, sigmoided at
loss/prediction time (multi-label).

The joint loss sums, over turns, the mean-over-labels binary cross entropy
of the act logits and the mean-over-tokens cross entropy of the slot logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import repair_bio
from .params import Parameters, glorot


@dataclass(frozen=True)
class DecoderConfig:
    d_model: int = 64
    lstm_hidden: int = 64

    def __post_init__(self):
        if min(self.d_model, self.lstm_hidden) < 1:
            raise ValueError("decoder dimensions must be >= 1")


def init_lstm(params: Parameters, prefix: str, input_dim: int, hidden: int, rng: np.random.Generator) -> None:
    params.add(f"{prefix}.w_x", glorot(rng, input_dim, 4 * hidden))
    params.add(f"{prefix}.w_h", glorot(rng, hidden, 4 * hidden))
    bias = np.zeros((1, 4 * hidden))
    bias[0, hidden : 2 * hidden] = 1.0  # forget gate opens at init
    params.add(f"{prefix}.b", bias)


def init_decoders(
    params: Parameters, cfg: DecoderConfig, n_acts: int, n_slot_tags: int, rng: np.random.Generator
) -> None:
    d, hidden = cfg.d_model, cfg.lstm_hidden
    init_lstm(params, "slot_decoder.fwd", d, hidden, rng)
    init_lstm(params, "slot_decoder.bwd", d, hidden, rng)
    params.add("slot_decoder.init_fwd", glorot(rng, d, hidden))
    params.add("slot_decoder.init_bwd", glorot(rng, d, hidden))
    init_lstm(params, "act_decoder", d, hidden, rng)
    params.add("heads.w_slot", glorot(rng, 2 * hidden, n_slot_tags))
    params.add("heads.w_act", glorot(rng, hidden, n_acts))


def init_affine_heads(
    params: Parameters, cfg: DecoderConfig, n_acts: int, n_slot_tags: int, rng: np.random.Generator
) -> None:
    """Decoder-free variant: direct linear heads on token and turn vectors."""
    params.add("heads.w_slot", glorot(rng, cfg.d_model, n_slot_tags))
    params.add("heads.w_act", glorot(rng, cfg.d_model, n_acts))


def run_lstm(x: Tensor, h0: Tensor, params: Parameters, prefix: str, reverse: bool = False) -> Tensor:
    return ad.lstm_sequence(
        x, h0, params[f"{prefix}.w_x"], params[f"{prefix}.w_h"], params[f"{prefix}.b"], reverse=reverse
    )


def decode_slots(fused_tokens: Tensor, context_vec: Tensor, params: Parameters) -> Tensor:
    """Slot logits (T x |tags|) for one utterance.

    context_vec is the (1, d) dialogue-context row for this turn; it seeds
    both LSTM directions through per-direction tanh projections.
    """
    h0_fwd = ad.tanh(ad.matmul(context_vec, params["slot_decoder.init_fwd"]))
    h0_bwd = ad.tanh(ad.matmul(context_vec, params["slot_decoder.init_bwd"]))
    fwd = run_lstm(fused_tokens, h0_fwd, params, "slot_decoder.fwd")
    bwd = run_lstm(fused_tokens, h0_bwd, params, "slot_decoder.bwd", reverse=True)
    return ad.matmul(ad.concat([fwd, bwd], axis=1), params["heads.w_slot"])


def decode_acts(context_rows: Tensor, params: Parameters) -> Tensor:
    """Act logits (N x |acts|), one row per turn."""
    hidden = params["act_decoder.w_h"].shape[0]
    h0 = Tensor(np.zeros((1, hidden)))
    states = run_lstm(context_rows, h0, params, "act_decoder")
    return ad.matmul(states, params["heads.w_act"])


def decode_slots_affine(fused_tokens: Tensor, params: Parameters) -> Tensor:
    return ad.matmul(fused_tokens, params["heads.w_slot"])


def decode_acts_affine(context_rows: Tensor, params: Parameters) -> Tensor:
    return ad.matmul(context_rows, params["heads.w_act"])


def joint_loss(
    act_logits: Tensor,
    slot_logits_per_turn: list[Tensor],
    gold_act_rows: np.ndarray,
    gold_slot_ids_per_turn: list[list[int]],
) -> Tensor:
    """Sum over turns of mean-over-acts BCE plus mean-over-tokens CE."""
    n_turns = act_logits.shape[0]
    if gold_act_rows.shape != act_logits.shape:
        raise ValueError(f"act targets {gold_act_rows.shape} do not match logits {act_logits.shape}")
    if len(slot_logits_per_turn) != n_turns or len(gold_slot_ids_per_turn) != n_turns:
        raise ValueError("slot logits/targets must have one entry per turn")
    loss = ad.bce_with_logits(act_logits, gold_act_rows)
    for logits, ids in zip(slot_logits_per_turn, gold_slot_ids_per_turn):
        loss = ad.add(loss, ad.ce_with_logits(logits, ids))
    return loss


def predict_acts(
    act_logit_row: np.ndarray, act_labels: list[str], threshold: float = 0.5
) -> tuple[frozenset[str], dict[str, float]]:
    """Labels with sigmoid probability above threshold; argmax fallback.

    The fallback keeps the predicted act set non-empty when nothing clears
    the threshold.
    """
    if not (0.0 < threshold < 1.0):
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    probs = 1.0 / (1.0 + np.exp(-np.clip(act_logit_row, -60, 60)))
    chosen = {label for label, p in zip(act_labels, probs) if p > threshold}
    if not chosen:
        chosen = {act_labels[int(np.argmax(probs))]}
    return frozenset(chosen), {label: float(p) for label, p in zip(act_labels, probs)}


def predict_slots(slot_logits: np.ndarray, tag_labels: list[str]) -> list[str]:
    """Per-token argmax followed by BIO repair."""
    raw = [tag_labels[int(i)] for i in slot_logits.argmax(axis=1)]
    return repair_bio(raw)
