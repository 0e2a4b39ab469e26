"""Token-level utterance encoder and the turn-level causal context stack.

The token encoder is a small trainable substitute for a pretrained masked
language model: learned token embeddings plus sinusoidal positions, a
prepended sentinel position whose output acts as the utterance summary
vector, and a stack of unmasked transformer layers. The context stack runs
the same layer type with a causal mask over the sequence of utterance
vectors, so row n of its output depends only on turns 1..n.

Layers are post-norm: layer_norm(x + MHA(x)) then layer_norm(x + FFN(x)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .params import Parameters, glorot, normal_rows


@dataclass(frozen=True)
class EncoderConfig:
    d_model: int = 64
    token_layers: int = 2
    context_layers: int = 1
    context_heads: int = 4
    attn_dim: int = 64
    ffn_dim: int = 128
    scale_mode: str = "per_head"  # or "model_dim"

    def __post_init__(self):
        if self.scale_mode not in ("per_head", "model_dim"):
            raise ValueError(f"scale_mode must be 'per_head' or 'model_dim', got {self.scale_mode!r}")
        if self.attn_dim % self.context_heads != 0:
            raise ValueError(f"attn_dim {self.attn_dim} not divisible by {self.context_heads} heads")
        if self.attn_dim != self.d_model:
            raise ValueError(
                f"attn_dim {self.attn_dim} must equal d_model {self.d_model} for the residual connections"
            )
        if self.token_layers < 1 or self.context_layers < 1:
            raise ValueError("layer counts must be >= 1")

    @property
    def attn_scale(self) -> float:
        if self.scale_mode == "model_dim":
            return 1.0 / math.sqrt(self.d_model)
        return 1.0 / math.sqrt(self.attn_dim // self.context_heads)


_POSITION_CACHE: dict[tuple[int, int], np.ndarray] = {}


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    """Classic sin/cos position table, rows 0..n-1 (cached, do not mutate)."""
    key = (n, d)
    cached = _POSITION_CACHE.get(key)
    if cached is not None:
        return cached
    pos = np.arange(n)[:, None]
    dim = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (dim // 2)) / d)
    table = np.empty((n, d))
    table[:, 0::2] = np.sin(angle[:, 0::2])
    table[:, 1::2] = np.cos(angle[:, 1::2])
    _POSITION_CACHE[key] = table
    return table


def init_transformer_layer(params: Parameters, prefix: str, cfg: EncoderConfig, rng: np.random.Generator) -> None:
    d, ha, ff = cfg.d_model, cfg.attn_dim, cfg.ffn_dim
    params.add(f"{prefix}.w_q", glorot(rng, d, ha))
    params.add(f"{prefix}.w_k", glorot(rng, d, ha))
    params.add(f"{prefix}.w_v", glorot(rng, d, ha))
    params.add(f"{prefix}.ffn_w1", glorot(rng, ha, ff))
    params.add(f"{prefix}.ffn_b1", np.zeros((1, ff)))
    params.add(f"{prefix}.ffn_w2", glorot(rng, ff, d))
    params.add(f"{prefix}.ffn_b2", np.zeros((1, d)))
    params.add(f"{prefix}.norm1_gain", np.ones((1, d)))
    params.add(f"{prefix}.norm1_bias", np.zeros((1, d)))
    params.add(f"{prefix}.norm2_gain", np.ones((1, d)))
    params.add(f"{prefix}.norm2_bias", np.zeros((1, d)))


def init_token_encoder(params: Parameters, vocab_size: int, cfg: EncoderConfig, rng: np.random.Generator) -> None:
    params.add("token_encoder.embed", normal_rows(rng, vocab_size, cfg.d_model))
    for i in range(cfg.token_layers):
        init_transformer_layer(params, f"token_encoder.layer{i}", cfg, rng)


def init_context_stack(params: Parameters, cfg: EncoderConfig, rng: np.random.Generator) -> None:
    for i in range(cfg.context_layers):
        init_transformer_layer(params, f"context.layer{i}", cfg, rng)


def mha(
    q_in: Tensor,
    k_in: Tensor,
    v_in: Tensor,
    mask: np.ndarray | None,
    params: Parameters,
    prefix: str,
    heads: int,
    scale_factor: float,
) -> Tensor:
    """Project inputs, run multi-head attention, concatenate heads.

    The residual connection and layer norm belong to the calling block.
    """
    q = ad.matmul(q_in, params[f"{prefix}.w_q"])
    k = ad.matmul(k_in, params[f"{prefix}.w_k"])
    v = ad.matmul(v_in, params[f"{prefix}.w_v"])
    return ad.multihead_attention(q, k, v, heads, scale_factor, mask=mask)


def ffn(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Position-wise feed forward: max(0, x W1 + b1) W2 + b2."""
    return ad.add(ad.matmul(ad.relu_affine(x, w1, b1), w2), b2)


def transformer_layer(
    x: Tensor, mask: np.ndarray | None, params: Parameters, prefix: str, cfg: EncoderConfig
) -> Tensor:
    attended = mha(x, x, x, mask, params, prefix, cfg.context_heads, cfg.attn_scale)
    x = ad.layer_norm(ad.add(x, attended), params[f"{prefix}.norm1_gain"], params[f"{prefix}.norm1_bias"])
    fed = ffn(
        x,
        params[f"{prefix}.ffn_w1"],
        params[f"{prefix}.ffn_b1"],
        params[f"{prefix}.ffn_w2"],
        params[f"{prefix}.ffn_b2"],
    )
    return ad.layer_norm(ad.add(x, fed), params[f"{prefix}.norm2_gain"], params[f"{prefix}.norm2_bias"])


MAX_TOKENS = 60


def encode_utterance(
    token_ids: list[int], sent_id: int, params: Parameters, cfg: EncoderConfig
) -> tuple[Tensor, Tensor]:
    """Token matrix (T x d) and the sentinel summary vector (1 x d)."""
    if not token_ids:
        raise ValueError("cannot encode an empty utterance")
    if len(token_ids) > MAX_TOKENS:
        raise ValueError(f"utterance has {len(token_ids)} tokens; limit is {MAX_TOKENS}")
    ids = [sent_id] + list(token_ids)
    x = ad.embedding(params["token_encoder.embed"], ids)
    x = ad.add(x, Tensor(sinusoidal_positions(len(ids), cfg.d_model)))
    for i in range(cfg.token_layers):
        x = transformer_layer(x, None, params, f"token_encoder.layer{i}", cfg)
    sentinel = ad.slice_rows(x, 0, 1)
    tokens = ad.slice_rows(x, 1, len(ids))
    return tokens, sentinel


def context_attend(h_turns: Tensor, params: Parameters, cfg: EncoderConfig) -> Tensor:
    """Causal stack over turn vectors: row n sees only turns 1..n.

    No turn-order positions are added: the stack consumes the utterance
    vectors directly, so row n carries (causally masked) content information
    about earlier turns while their arrival order stays with whatever reads
    the rows sequentially.
    """
    n = h_turns.shape[0]
    if n < 1:
        raise ValueError("context stack needs at least one turn")
    x = h_turns
    mask = ad.causal_mask(n)
    for i in range(cfg.context_layers):
        x = transformer_layer(x, mask, params, f"context.layer{i}", cfg)
    return x
