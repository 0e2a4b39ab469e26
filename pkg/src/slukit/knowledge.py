"""Knowledge triple store, word-level retrieval, and TransE embeddings.

Triples live in a tab-separated file, one per line:

    head<TAB>relation<TAB>tail<TAB>weight

Retrieval is exact string matching on the case-folded word, returning the
top-m triples by edge weight. Embeddings map entity and relation names to
d_k-dimensional vectors trained with the classic translation objective
(L2 distance, margin ranking loss, uniform head/tail corruption, per-epoch
renormalization of entity vectors onto the unit ball).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class KnowledgeTriple:
    head: str
    relation: str
    tail: str
    weight: float

    def __post_init__(self):
        if not (self.head and self.relation and self.tail):
            raise ValueError(f"triple fields must be non-empty: {(self.head, self.relation, self.tail)}")
        if self.weight < 0:
            raise ValueError(f"triple weight must be non-negative, got {self.weight}")


class TripleStore:
    """Deduplicated triples with a head index sorted by descending weight."""

    def __init__(self, triples: list[KnowledgeTriple] | None = None):
        self.triples: list[KnowledgeTriple] = []
        self._seen: set[tuple[str, str, str]] = set()
        self._head_index: dict[str, list[int]] = {}
        for t in triples or []:
            self.add(t)

    def add(self, triple: KnowledgeTriple) -> None:
        key = (triple.head, triple.relation, triple.tail)
        if key in self._seen:
            return
        self._seen.add(key)
        idx = len(self.triples)
        self.triples.append(triple)
        bucket = self._head_index.setdefault(triple.head.casefold(), [])
        # insertion order breaks weight ties, so sorting stays stable
        bucket.append(idx)
        bucket.sort(key=lambda i: -self.triples[i].weight)

    def __len__(self) -> int:
        return len(self.triples)

    def heads(self) -> list[str]:
        return list(self._head_index)

    def entities(self) -> list[str]:
        seen: dict[str, None] = {}
        for t in self.triples:
            seen.setdefault(t.head, None)
            seen.setdefault(t.tail, None)
        return list(seen)

    def relations(self) -> list[str]:
        seen: dict[str, None] = {}
        for t in self.triples:
            seen.setdefault(t.relation, None)
        return list(seen)

    def lookup(self, word: str) -> list[int]:
        return self._head_index.get(word.casefold(), [])


def load_triples(path: str) -> TripleStore:
    """Parse a TSV triple file; malformed lines are reported, not skipped."""
    store = TripleStore()
    errors: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                errors.append(f"line {lineno}: expected 4 tab-separated fields, got {len(parts)}")
                continue
            head, relation, tail, weight_s = parts
            try:
                store.add(KnowledgeTriple(head.strip(), relation.strip(), tail.strip(), float(weight_s)))
            except ValueError as exc:
                errors.append(f"line {lineno}: {exc}")
    if errors:
        raise ValueError(f"{path}: malformed triple lines:\n  " + "\n  ".join(errors))
    if len(store) == 0:
        warnings.warn(f"{path}: triple file is empty", stacklevel=2)
    return store


def save_triples(triples: list[KnowledgeTriple], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in triples:
            fh.write(f"{t.head}\t{t.relation}\t{t.tail}\t{float(t.weight)!r}\n")


def retrieve(store: TripleStore, word: str, m: int = 5) -> list[KnowledgeTriple]:
    """Top-m triples whose head matches the case-folded word; [] if absent."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    return [store.triples[i] for i in store.lookup(word)[:m]]


# ---------------------------------------------------------------------------
# embeddings
# ---------------------------------------------------------------------------


class KgEmbeddings:
    """Entity and relation name -> d_k vector maps."""

    def __init__(self, dim: int, entity_vecs: dict[str, np.ndarray], relation_vecs: dict[str, np.ndarray]):
        self.dim = dim
        self.entity_vecs = entity_vecs
        self.relation_vecs = relation_vecs

    def save(self, path: str) -> None:
        # kind, name, values are tab-separated: entity and relation names
        # may contain spaces ("is a", "related to")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"d_k={self.dim}\n")
            for name, vec in self.entity_vecs.items():
                fh.write("E\t" + name + "\t" + " ".join(repr(float(v)) for v in vec) + "\n")
            for name, vec in self.relation_vecs.items():
                fh.write("R\t" + name + "\t" + " ".join(repr(float(v)) for v in vec) + "\n")

    @classmethod
    def load(cls, path: str) -> "KgEmbeddings":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip()
            if not header.startswith("d_k="):
                raise ValueError(f"{path}: missing d_k header")
            dim = int(header[4:])
            entity_vecs: dict[str, np.ndarray] = {}
            relation_vecs: dict[str, np.ndarray] = {}
            for lineno, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 3 or parts[0] not in ("E", "R"):
                    raise ValueError(f"{path}:{lineno}: bad embedding line")
                vec = np.array([float(v) for v in parts[2].split()])
                if vec.size != dim:
                    raise ValueError(f"{path}:{lineno}: expected {dim} values, got {vec.size}")
                (entity_vecs if parts[0] == "E" else relation_vecs)[parts[1]] = vec
        return cls(dim, entity_vecs, relation_vecs)


def transe_scores(store: TripleStore, emb: KgEmbeddings) -> np.ndarray:
    """L2 distance ||h + r - t|| per stored triple (lower is better)."""
    out = np.empty(len(store.triples))
    for i, t in enumerate(store.triples):
        out[i] = np.linalg.norm(emb.entity_vecs[t.head] + emb.relation_vecs[t.relation] - emb.entity_vecs[t.tail])
    return out


def train_transe(
    store: TripleStore,
    dim: int = 16,
    epochs: int = 200,
    margin: float = 1.0,
    lr: float = 0.01,
    seed: int = 0,
) -> KgEmbeddings:
    """Translation embeddings with margin ranking loss and SGD.

    Each epoch renormalizes entity vectors onto the unit ball, then takes one
    gradient step per stored triple against a uniformly corrupted negative
    (head or tail replaced with probability 0.5 each).
    """
    if dim < 1:
        raise ValueError(f"embedding dim must be >= 1, got {dim}")
    if margin <= 0:
        raise ValueError(f"margin must be positive, got {margin}")
    if len(store) == 0:
        raise ValueError("cannot train embeddings on an empty triple store")

    rng = np.random.default_rng(seed)
    entities = store.entities()
    relations = store.relations()
    ent_id = {e: i for i, e in enumerate(entities)}
    rel_id = {r: i for i, r in enumerate(relations)}
    bound = 6.0 / np.sqrt(dim)
    ent = rng.uniform(-bound, bound, size=(len(entities), dim))
    rel = rng.uniform(-bound, bound, size=(len(relations), dim))
    rel /= np.maximum(np.linalg.norm(rel, axis=1, keepdims=True), 1e-12)

    heads = np.array([ent_id[t.head] for t in store.triples])
    rels = np.array([rel_id[t.relation] for t in store.triples])
    tails = np.array([ent_id[t.tail] for t in store.triples])
    n = len(store.triples)

    for _ in range(epochs):
        ent /= np.maximum(np.linalg.norm(ent, axis=1, keepdims=True), 1.0)
        order = rng.permutation(n)
        corrupt_head = rng.random(n) < 0.5
        replacements = rng.integers(0, len(entities), size=n)
        for j in order:
            h, r, t = heads[j], rels[j], tails[j]
            if corrupt_head[j]:
                h_neg, t_neg = replacements[j], t
            else:
                h_neg, t_neg = h, replacements[j]
            d_pos_vec = ent[h] + rel[r] - ent[t]
            d_neg_vec = ent[h_neg] + rel[r] - ent[t_neg]
            d_pos = float(np.sqrt(d_pos_vec @ d_pos_vec))
            d_neg = float(np.sqrt(d_neg_vec @ d_neg_vec))
            if margin + d_pos - d_neg <= 0:
                continue
            g_pos = d_pos_vec / max(d_pos, 1e-12)
            g_neg = d_neg_vec / max(d_neg, 1e-12)
            ent[h] -= lr * g_pos
            ent[t] += lr * g_pos
            rel[r] -= lr * (g_pos - g_neg)
            ent[h_neg] += lr * g_neg
            ent[t_neg] -= lr * g_neg
    ent /= np.maximum(np.linalg.norm(ent, axis=1, keepdims=True), 1.0)

    return KgEmbeddings(
        dim,
        {e: ent[i].copy() for i, e in enumerate(entities)},
        {r: rel[i].copy() for i, r in enumerate(relations)},
    )


def triples_to_vectors(
    triples: list[KnowledgeTriple],
    emb: KgEmbeddings,
    m: int = 5,
    diagnostics: dict | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack relation/tail vectors into fixed m-row matrices plus a mask.

    Rows past the available triples (or whole matrices, for a word with no
    triples) are zero with mask 0, which downstream attention reads as
    knowledge agnosticism. Triples naming an entity or relation without a
    vector are zeroed and tallied under ``diagnostics["unknown_entities"]``.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    rel_mat = np.zeros((m, emb.dim))
    tail_mat = np.zeros((m, emb.dim))
    mask = np.zeros(m)
    for row, triple in enumerate(triples[:m]):
        r_vec = emb.relation_vecs.get(triple.relation)
        t_vec = emb.entity_vecs.get(triple.tail)
        if r_vec is None or t_vec is None:
            if diagnostics is not None:
                diagnostics["unknown_entities"] = diagnostics.get("unknown_entities", 0) + 1
            continue
        rel_mat[row] = r_vec
        tail_mat[row] = t_vec
        mask[row] = 1.0
    return rel_mat, tail_mat, mask
