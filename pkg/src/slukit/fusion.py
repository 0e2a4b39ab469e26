"""Per-token knowledge attention and the knowledge gate.

For token vector h and its m retrieved triples with relation/tail vectors
(r_j, t_j): relevance logits are (h W_h) . tanh(r_j W_r + t_j W_t), the
attention weights are their softmax over the m rows, and the raw knowledge
vector is the alpha-weighted sum of the concatenations [r_j; t_j], projected
into model width by a learned matrix. A scalar sigmoid gate over [h; v] then
mixes the token vector with the knowledge vector: h' = g * h + (1 - g) * v.

Words absent from the knowledge base arrive as all-zero triple rows: the
logits tie, the weights go exactly uniform, the knowledge vector is exactly
zero, and h' collapses to g * h.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .knowledge import KgEmbeddings, KnowledgeTriple, triples_to_vectors
from .params import Parameters, glorot


@dataclass(frozen=True)
class FusionConfig:
    d_model: int = 64
    kg_dim: int = 16
    kg_attn_dim: int = 32
    triples_per_word: int = 5

    def __post_init__(self):
        if min(self.d_model, self.kg_dim, self.kg_attn_dim, self.triples_per_word) < 1:
            raise ValueError("fusion dimensions must all be >= 1")


def init_fusion(params: Parameters, cfg: FusionConfig, rng: np.random.Generator) -> None:
    d, dk, da = cfg.d_model, cfg.kg_dim, cfg.kg_attn_dim
    params.add("fusion.w_h", glorot(rng, d, da))
    params.add("fusion.w_r", glorot(rng, dk, da))
    params.add("fusion.w_t", glorot(rng, dk, da))
    params.add("fusion.v_proj", glorot(rng, 2 * dk, d))
    params.add("fusion.gate_w", glorot(rng, 2 * d, 1))
    params.add("fusion.gate_b", np.zeros((1, 1)))


def knowledge_attention(
    h_vec: Tensor, rel_mat: Tensor, tail_mat: Tensor, params: Parameters
) -> tuple[Tensor, Tensor]:
    """One token vector (1, d) against its (m, d_k) triple matrices.

    Returns the (1, m) attention weights and the (1, d) knowledge vector.
    Zero triple rows are legal padding and receive ordinary (uniform when all
    rows are zero) weights.
    """
    if h_vec.shape[0] != 1:
        raise ValueError(f"knowledge_attention takes one (1, d) token vector, got {h_vec.shape}")
    if rel_mat.shape != tail_mat.shape:
        raise ValueError(f"relation/tail shapes differ: {rel_mat.shape} vs {tail_mat.shape}")
    m, d_a = rel_mat.shape[0], params["fusion.w_r"].shape[1]
    keys = ad.tanh(
        ad.add(ad.matmul(rel_mat, params["fusion.w_r"]), ad.matmul(tail_mat, params["fusion.w_t"]))
    )  # (m, d_a)
    query = ad.matmul(h_vec, params["fusion.w_h"])  # (1, d_a)
    logits = ad.reshape(ad.matmul(keys, ad.reshape(query, d_a, 1)), 1, m)
    alpha = ad.softmax_lastdim(logits)
    pairs = ad.concat([rel_mat, tail_mat], axis=1)  # (m, 2*d_k)
    v_raw = ad.matmul(alpha, pairs)  # (1, 2*d_k)
    v = ad.matmul(v_raw, params["fusion.v_proj"])  # (1, d)
    return alpha, v


def gate_fuse(h_vec: Tensor, v_vec: Tensor, params: Parameters) -> tuple[Tensor, Tensor]:
    """Scalar gate g = sigmoid(w . [h; v] + b); returns (h', g)."""
    if h_vec.shape != v_vec.shape:
        raise ValueError(f"gate_fuse takes matching vectors, got {h_vec.shape} and {v_vec.shape}")
    gate_in = ad.concat([h_vec, v_vec], axis=1)
    gate = ad.sigmoid(ad.add(ad.matmul(gate_in, params["fusion.gate_w"]), params["fusion.gate_b"]))
    ones = Tensor(np.ones((h_vec.shape[0], 1)))
    fused = ad.add(ad.mul(gate, h_vec), ad.mul(ad.sub(ones, gate), v_vec))
    return fused, gate


def fuse_tokens(
    token_reps: Tensor,
    rel_flat: Tensor,
    tail_flat: Tensor,
    params: Parameters,
    m: int,
) -> tuple[Tensor, Tensor, Tensor]:
    """Attention + gate over all tokens of one utterance at once.

    token_reps is (T, d); rel_flat / tail_flat stack each token's m triple
    vectors contiguously, shape (T*m, d_k). Returns the fused (T, d) matrix,
    the (T, m) attention weights, and the (T, 1) gate values. Must agree with
    the tokenwise composition of knowledge_attention and gate_fuse.
    """
    t_len = token_reps.shape[0]
    if rel_flat.shape[0] != t_len * m or tail_flat.shape[0] != t_len * m:
        raise ValueError(f"triple rows {rel_flat.shape[0]} do not match {t_len} tokens x {m} triples")
    keys = ad.tanh(
        ad.add(ad.matmul(rel_flat, params["fusion.w_r"]), ad.matmul(tail_flat, params["fusion.w_t"]))
    )  # (T*m, d_a)
    queries = ad.repeat_rows(ad.matmul(token_reps, params["fusion.w_h"]), m)  # (T*m, d_a)
    logits = ad.row_sums(ad.mul(queries, keys))  # row dots -> (T*m, 1)
    alpha = ad.softmax_lastdim(ad.reshape(logits, t_len, m))  # (T, m)
    pairs = ad.concat([rel_flat, tail_flat], axis=1)  # (T*m, 2*d_k)
    weighted = ad.mul(ad.reshape(alpha, t_len * m, 1), pairs)
    v = ad.matmul(ad.sum_row_blocks(weighted, m), params["fusion.v_proj"])  # (T, d)

    gate_in = ad.concat([token_reps, v], axis=1)
    gate = ad.sigmoid(ad.add(ad.matmul(gate_in, params["fusion.gate_w"]), params["fusion.gate_b"]))
    ones = Tensor(np.ones((t_len, 1)))
    fused = ad.add(ad.mul(gate, token_reps), ad.mul(ad.sub(ones, gate), v))
    return fused, alpha, gate


def stack_triple_vectors(
    per_token_triples: list[list[KnowledgeTriple]],
    emb: KgEmbeddings,
    m: int,
    diagnostics: dict | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Stack each token's m relation/tail rows into (T*m, d_k) arrays."""
    t_len = len(per_token_triples)
    rel_rows = np.zeros((t_len * m, emb.dim))
    tail_rows = np.zeros((t_len * m, emb.dim))
    for i, triples in enumerate(per_token_triples):
        rel_mat, tail_mat, _ = triples_to_vectors(triples, emb, m, diagnostics=diagnostics)
        rel_rows[i * m : (i + 1) * m] = rel_mat
        tail_rows[i * m : (i + 1) * m] = tail_mat
    return rel_rows, tail_rows


def fuse_utterance(
    token_reps: Tensor,
    per_token_triples: list[list[KnowledgeTriple]],
    emb: KgEmbeddings,
    params: Parameters,
    m: int = 5,
    diagnostics: dict | None = None,
) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Fuse a whole utterance from raw retrieved triples.

    Returns the fused (T, d) tensor plus plain-array diagnostics: the (T, m)
    attention weights and (T,) gate values.
    """
    t_len = token_reps.shape[0]
    if len(per_token_triples) != t_len:
        raise ValueError(f"{len(per_token_triples)} triple lists for {t_len} tokens")
    rel_rows, tail_rows = stack_triple_vectors(per_token_triples, emb, m, diagnostics=diagnostics)
    fused, alpha, gate = fuse_tokens(token_reps, Tensor(rel_rows), Tensor(tail_rows), params, m)
    return fused, alpha.values.copy(), gate.values[:, 0].copy()
