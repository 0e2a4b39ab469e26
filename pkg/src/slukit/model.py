"""The joint dialogue-act + slot-filling estimator.

``JointSLUModel`` follows the scikit-learn convention: constructor arguments
are hyperparameters stored verbatim (so ``get_params`` / ``set_params`` and
``clone`` work), ``fit`` runs the training loop over a list of labeled
Dialogue objects, and ``predict`` returns per-utterance act sets and BIO tag
sequences with full dialogue context.

Four wirings cover the ablation grid:

* ``full``      token encoder -> causal context stack -> knowledge fusion ->
                BiLSTM slot decoder (context-seeded) + act LSTM
* ``no_kg``     knowledge fusion bypassed, decoders unchanged
* ``no_ca``     context stack replaced by a unidirectional LSTM over the
                turn vectors
* ``no_lstm``   both decoders replaced by direct affine heads
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from . import autodiff as ad
from .autodiff import Tensor, backward
from .corpus import Dialogue, Vocab, build_vocab, encode_bio
from .decoders import (
    DecoderConfig,
    decode_acts,
    decode_acts_affine,
    decode_slots,
    decode_slots_affine,
    init_affine_heads,
    init_decoders,
    init_lstm,
    joint_loss,
    predict_acts,
    predict_slots,
)
from .encoder import EncoderConfig, context_attend, encode_utterance, init_context_stack, init_token_encoder
from .fusion import FusionConfig, fuse_tokens, init_fusion, stack_triple_vectors
from .knowledge import KgEmbeddings, KnowledgeTriple, TripleStore, retrieve, train_transe
from .metrics import EvalReport, build_report
from .params import AdamState, Parameters, adam_update, load_checkpoint, save_checkpoint

VARIANTS = ("full", "no_kg", "no_ca", "no_lstm")


@dataclass(frozen=True)
class Wiring:
    """Which architectural pieces a variant enables."""

    use_knowledge: bool
    context_encoder: str  # "transformer" or "lstm"
    decoders: str  # "lstm" or "affine"


def apply_ablation(variant: str) -> Wiring:
    table = {
        "full": Wiring(True, "transformer", "lstm"),
        "no_kg": Wiring(False, "transformer", "lstm"),
        "no_ca": Wiring(True, "lstm", "lstm"),
        "no_lstm": Wiring(True, "transformer", "affine"),
    }
    if variant not in table:
        raise ValueError(f"unknown ablation variant {variant!r}; expected one of {VARIANTS}")
    return table[variant]


@dataclass
class PredictionRecord:
    dialogue_id: str
    turn: int
    acts: frozenset[str]
    act_probs: dict[str, float]
    tags: list[str]
    explain: dict | None = None

    def to_obj(self) -> dict:
        obj = {
            "dialogue_id": self.dialogue_id,
            "turn": self.turn,
            "acts": sorted(self.acts),
            "act_probs": {k: round(v, 6) for k, v in sorted(self.act_probs.items())},
            "tags": list(self.tags),
        }
        if self.explain is not None:
            obj["explain"] = self.explain
        return obj


def save_predictions(records: list[PredictionRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_obj(), sort_keys=True, separators=(",", ":")) + "\n")


def load_predictions(path: str) -> list[PredictionRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out.append(
                    PredictionRecord(
                        dialogue_id=str(obj["dialogue_id"]),
                        turn=int(obj["turn"]),
                        acts=frozenset(obj["acts"]),
                        act_probs={k: float(v) for k, v in obj["act_probs"].items()},
                        tags=[str(t) for t in obj["tags"]],
                    )
                )
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad prediction record: {exc}") from None
    return out


@dataclass
class _TurnFeatures:
    tokens: list[str]
    token_ids: list[int]
    rel_flat: np.ndarray | None
    tail_flat: np.ndarray | None
    triples: list[list[KnowledgeTriple]] | None
    act_row: np.ndarray
    slot_ids: list[int]


@dataclass
class _DialogueFeatures:
    dialogue: Dialogue
    turns: list[_TurnFeatures] = field(default_factory=list)


def _check_dialogues(dialogues, act_inventory=None, slot_inventory=None) -> list[Dialogue]:
    if not isinstance(dialogues, (list, tuple)) or not dialogues:
        raise ValueError("expected a non-empty list of Dialogue objects")
    for d in dialogues:
        if not isinstance(d, Dialogue):
            raise TypeError(f"expected Dialogue, got {type(d).__name__}")
        d.validate(act_inventory, slot_inventory)
    return list(dialogues)


class JointSLUModel(BaseEstimator):
    """Knowledge-augmented joint dialogue-act and slot-filling model.

    Parameters mirror the flat key=value config file accepted by the CLI.
    Fitted attributes carry the trailing underscore: ``vocab_``,
    ``act_labels_``, ``tag_labels_``, ``params_``, ``run_log_``,
    ``embeddings_``, ``store_``.
    """

    def __init__(
        self,
        d_model: int = 64,
        token_layers: int = 2,
        context_layers: int = 1,
        context_heads: int = 4,
        attn_dim: int = 64,
        ffn_dim: int = 128,
        lstm_hidden: int = 64,
        kg_dim: int = 16,
        kg_attn_dim: int = 32,
        triples_per_word: int = 5,
        scale_mode: str = "per_head",
        variant: str = "full",
        epochs: int = 60,
        lr: float = 1e-3,
        batch_dialogues: int = 4,
        val_fraction: float = 0.1,
        patience: int = 10,
        unk_dropout: float = 0.15,
        threshold: float = 0.5,
        clip_norm: float | None = None,
        kg_epochs: int = 200,
        kg_lr: float = 0.01,
        kg_margin: float = 1.0,
        seed: int = 0,
    ):
        self.d_model = d_model
        self.token_layers = token_layers
        self.context_layers = context_layers
        self.context_heads = context_heads
        self.attn_dim = attn_dim
        self.ffn_dim = ffn_dim
        self.lstm_hidden = lstm_hidden
        self.kg_dim = kg_dim
        self.kg_attn_dim = kg_attn_dim
        self.triples_per_word = triples_per_word
        self.scale_mode = scale_mode
        self.variant = variant
        self.epochs = epochs
        self.lr = lr
        self.batch_dialogues = batch_dialogues
        self.val_fraction = val_fraction
        self.patience = patience
        self.unk_dropout = unk_dropout
        self.threshold = threshold
        self.clip_norm = clip_norm
        self.kg_epochs = kg_epochs
        self.kg_lr = kg_lr
        self.kg_margin = kg_margin
        self.seed = seed

    # -- configuration ------------------------------------------------------

    def _encoder_cfg(self) -> EncoderConfig:
        return EncoderConfig(
            d_model=self.d_model,
            token_layers=self.token_layers,
            context_layers=self.context_layers,
            context_heads=self.context_heads,
            attn_dim=self.attn_dim,
            ffn_dim=self.ffn_dim,
            scale_mode=self.scale_mode,
        )

    def _fusion_cfg(self) -> FusionConfig:
        return FusionConfig(
            d_model=self.d_model,
            kg_dim=self.kg_dim,
            kg_attn_dim=self.kg_attn_dim,
            triples_per_word=self.triples_per_word,
        )

    def _decoder_cfg(self) -> DecoderConfig:
        return DecoderConfig(d_model=self.d_model, lstm_hidden=self.lstm_hidden)

    def _validate_hyperparams(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.batch_dialogues < 1:
            raise ValueError(f"batch_dialogues must be >= 1, got {self.batch_dialogues}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")
        if not 0.0 <= self.unk_dropout < 1.0:
            raise ValueError(f"unk_dropout must lie in [0, 1), got {self.unk_dropout}")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")
        apply_ablation(self.variant)

    # -- parameter construction ----------------------------------------------

    def _build_params(self, vocab_size: int, n_acts: int, n_tags: int, rng: np.random.Generator) -> Parameters:
        wiring = apply_ablation(self.variant)
        params = Parameters()
        enc = self._encoder_cfg()
        init_token_encoder(params, vocab_size, enc, rng)
        if wiring.context_encoder == "transformer":
            init_context_stack(params, enc, rng)
        else:
            init_lstm(params, "context_lstm", self.d_model, self.d_model, rng)
        if wiring.use_knowledge:
            init_fusion(params, self._fusion_cfg(), rng)
        if wiring.decoders == "lstm":
            init_decoders(params, self._decoder_cfg(), n_acts, n_tags, rng)
        else:
            init_affine_heads(params, self._decoder_cfg(), n_acts, n_tags, rng)
        return params

    # -- featurization --------------------------------------------------------

    def _featurize(self, dialogues: list[Dialogue], with_triples: bool = False) -> list[_DialogueFeatures]:
        wiring = apply_ablation(self.variant)
        m = self.triples_per_word
        act_index = {a: i for i, a in enumerate(self.act_labels_)}
        tag_index = {t: i for i, t in enumerate(self.tag_labels_)}
        out = []
        for d in dialogues:
            feats = _DialogueFeatures(dialogue=d)
            for u in d.turns:
                ids = self.vocab_.encode(u.tokens)
                act_row = np.zeros(len(self.act_labels_))
                for a in u.acts:
                    if a not in act_index:
                        raise ValueError(f"dialogue {d.id!r}: act {a!r} missing from the fitted inventory")
                    act_row[act_index[a]] = 1.0
                slot_ids = []
                for tag in encode_bio(u.slots, len(u.tokens)):
                    if tag not in tag_index:
                        raise ValueError(f"dialogue {d.id!r}: slot tag {tag!r} missing from the fitted inventory")
                    slot_ids.append(tag_index[tag])
                rel_flat = tail_flat = None
                triples = None
                if wiring.use_knowledge:
                    triples = [retrieve(self.store_, tok, m) for tok in u.tokens]
                    rel_flat, tail_flat = stack_triple_vectors(triples, self.embeddings_, m)
                feats.turns.append(
                    _TurnFeatures(
                        tokens=list(u.tokens),
                        token_ids=ids,
                        rel_flat=rel_flat,
                        tail_flat=tail_flat,
                        triples=triples if with_triples else None,
                        act_row=act_row,
                        slot_ids=slot_ids,
                    )
                )
            out.append(feats)
        return out

    # -- forward ----------------------------------------------------------------

    def _forward(
        self, feats: _DialogueFeatures, dropout_rng: np.random.Generator | None = None, collect: bool = False
    ):
        """Logits for one dialogue; optionally fusion diagnostics per turn."""
        wiring = apply_ablation(self.variant)
        enc = self._encoder_cfg()
        params = self.params_
        unk = self.vocab_.unk_id
        token_mats, sentinels = [], []
        for turn in feats.turns:
            ids = turn.token_ids
            if dropout_rng is not None and self.unk_dropout > 0.0:
                keep = dropout_rng.random(len(ids)) >= self.unk_dropout
                ids = [i if k else unk for i, k in zip(ids, keep)]
            reps, sent = encode_utterance(ids, self.vocab_.sent_id, params, enc)
            token_mats.append(reps)
            sentinels.append(sent)
        h_turns = ad.concat(sentinels, axis=0) if len(sentinels) > 1 else sentinels[0]
        if wiring.context_encoder == "transformer":
            context = context_attend(h_turns, params, enc)
        else:
            h0 = Tensor(np.zeros((1, self.d_model)))
            context = ad.lstm_sequence(
                h_turns, h0, params["context_lstm.w_x"], params["context_lstm.w_h"], params["context_lstm.b"]
            )

        diagnostics = [] if collect else None
        fused_mats = []
        for n, turn in enumerate(feats.turns):
            if wiring.use_knowledge:
                fused, alpha, gate = fuse_tokens(
                    token_mats[n], Tensor(turn.rel_flat), Tensor(turn.tail_flat), params, self.triples_per_word
                )
                if collect:
                    diagnostics.append({"alpha": alpha.values.copy(), "gate": gate.values[:, 0].copy()})
            else:
                fused = token_mats[n]
                if collect:
                    diagnostics.append(None)
            fused_mats.append(fused)

        n_turns = len(feats.turns)
        if wiring.decoders == "lstm":
            act_logits = decode_acts(context, params)
            slot_logits = [
                decode_slots(fused_mats[n], ad.slice_rows(context, n, n + 1) if n_turns > 1 else context, params)
                for n in range(n_turns)
            ]
        else:
            act_logits = decode_acts_affine(context, params)
            slot_logits = [decode_slots_affine(fused_mats[n], params) for n in range(n_turns)]
        return act_logits, slot_logits, diagnostics

    def _dialogue_loss(self, feats: _DialogueFeatures, dropout_rng) -> Tensor:
        act_logits, slot_logits, _ = self._forward(feats, dropout_rng=dropout_rng)
        gold_acts = np.stack([t.act_row for t in feats.turns])
        gold_slots = [t.slot_ids for t in feats.turns]
        return joint_loss(act_logits, slot_logits, gold_acts, gold_slots)

    # -- fit ----------------------------------------------------------------------

    def fit(self, X, y=None, *, store: TripleStore | None = None, embeddings: KgEmbeddings | None = None):
        """Train on labeled dialogues.

        ``store`` supplies the knowledge base (required unless the variant is
        no_kg); ``embeddings`` may carry pre-trained triple vectors, else
        they are trained here from the store, seeded.
        """
        self._validate_hyperparams()
        dialogues = _check_dialogues(X)
        wiring = apply_ablation(self.variant)
        if wiring.use_knowledge:
            if store is None:
                raise ValueError(f"variant {self.variant!r} needs a knowledge store; pass store=...")
            if embeddings is None:
                embeddings = train_transe(
                    store, dim=self.kg_dim, epochs=self.kg_epochs, margin=self.kg_margin, lr=self.kg_lr, seed=self.seed
                )
            if embeddings.dim != self.kg_dim:
                raise ValueError(f"embeddings have dim {embeddings.dim}, expected kg_dim={self.kg_dim}")
        self.store_ = store if wiring.use_knowledge else None
        self.embeddings_ = embeddings if wiring.use_knowledge else None

        self.vocab_ = build_vocab(dialogues)
        self.act_labels_ = sorted({a for d in dialogues for u in d.turns for a in u.acts})
        slot_names = sorted({s.name for d in dialogues for u in d.turns for s in u.slots})
        self.tag_labels_ = ["O"] + [f"{p}-{name}" for name in slot_names for p in ("B", "I")]

        rng = np.random.default_rng(self.seed)
        self.params_ = self._build_params(len(self.vocab_), len(self.act_labels_), len(self.tag_labels_), rng)

        # deterministic validation split
        order = rng.permutation(len(dialogues))
        n_val = int(round(self.val_fraction * len(dialogues)))
        val_idx = set(order[:n_val].tolist())
        train_feats = self._featurize([dialogues[i] for i in range(len(dialogues)) if i not in val_idx])
        val_dialogues = [dialogues[i] for i in sorted(val_idx)]
        if not train_feats:
            raise ValueError("validation split consumed every dialogue; lower val_fraction")

        state = AdamState()
        dropout_rng = np.random.default_rng(int(rng.integers(0, 2**63 - 1)))
        best_score = -np.inf
        best_loss = np.inf
        best_arrays = self.params_.copy_arrays()
        best_epoch = 0
        since_best = 0
        self.run_log_ = []

        for epoch in range(1, self.epochs + 1):
            t0 = time.perf_counter()
            epoch_loss = 0.0
            perm = rng.permutation(len(train_feats))
            for lo in range(0, len(perm), self.batch_dialogues):
                batch = perm[lo : lo + self.batch_dialogues]
                self.params_.zero_grads()
                loss = None
                for i in batch:
                    item = self._dialogue_loss(train_feats[i], dropout_rng)
                    loss = item if loss is None else ad.add(loss, item)
                loss_val = loss.item()
                if not np.isfinite(loss_val):
                    raise RuntimeError(
                        f"training diverged: non-finite loss at epoch {epoch}, batch {lo // self.batch_dialogues}"
                    )
                epoch_loss += loss_val
                backward(loss)
                grads = {n: g for n, g in self.params_.grad_arrays().items() if g is not None}
                if self.clip_norm is not None:
                    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
                    if total > self.clip_norm:
                        factor = self.clip_norm / total
                        grads = {n: g * factor for n, g in grads.items()}
                adam_update(self.params_, grads, state, lr=self.lr)

            if val_dialogues:
                report = self.evaluate(val_dialogues)
                score = report.act_accuracy + report.slot_f1
                val_act, val_f1 = report.act_accuracy, report.slot_f1
            else:
                score, val_act, val_f1 = -epoch_loss, float("nan"), float("nan")
            self.run_log_.append(
                {
                    "epoch": epoch,
                    "train_loss": round(epoch_loss / max(1, len(train_feats)), 6),
                    "val_act_accuracy": round(val_act, 6) if np.isfinite(val_act) else None,
                    "val_slot_f1": round(val_f1, 6) if np.isfinite(val_f1) else None,
                    "seconds": round(time.perf_counter() - t0, 3),
                }
            )
            if score > best_score:
                best_score = score
                best_loss = epoch_loss
                best_arrays = self.params_.copy_arrays()
                best_epoch = epoch
                since_best = 0
            else:
                # validation often saturates early; among equal-validation
                # epochs keep the one that fit the training data best, but
                # patience still counts from the first saturation
                if score == best_score and epoch_loss < best_loss:
                    best_loss = epoch_loss
                    best_arrays = self.params_.copy_arrays()
                    best_epoch = epoch
                since_best += 1
                if since_best >= self.patience:
                    break

        self.params_.load_arrays(best_arrays)
        self.best_epoch_ = best_epoch
        return self

    # -- inference -------------------------------------------------------------------

    def _check_fitted(self) -> None:
        if not hasattr(self, "params_"):
            raise RuntimeError("model is not fitted; call fit or load a checkpoint first")

    def predict(self, X, explain: bool = False) -> list[PredictionRecord]:
        """Per-utterance predictions over whole dialogues, in corpus order."""
        self._check_fitted()
        dialogues = _check_dialogues(X)
        records: list[PredictionRecord] = []
        with self.params_.frozen():
            for feats in self._featurize(dialogues, with_triples=explain):
                act_logits, slot_logits, diagnostics = self._forward(feats, collect=explain)
                for n, turn in enumerate(feats.turns):
                    acts, probs = predict_acts(act_logits.values[n], self.act_labels_, self.threshold)
                    tags = predict_slots(slot_logits[n].values, self.tag_labels_)
                    rec = PredictionRecord(feats.dialogue.id, n, acts, probs, tags)
                    if explain:
                        rec.explain = self._explain_payload(turn, diagnostics[n])
                    records.append(rec)
        return records

    def _explain_payload(self, turn: _TurnFeatures, diag: dict | None) -> dict:
        tokens = []
        for i, tok in enumerate(turn.tokens):
            entry: dict = {"token": tok}
            if diag is not None:
                entry["gate"] = round(float(diag["gate"][i]), 6)
                triples = turn.triples[i] if turn.triples else []
                entry["knowledge"] = [
                    {"relation": t.relation, "tail": t.tail, "alpha": round(float(diag["alpha"][i, j]), 6)}
                    for j, t in enumerate(triples)
                ]
                if not triples:
                    entry["alpha_uniform"] = round(float(diag["alpha"][i, 0]), 6)
            tokens.append(entry)
        return {"tokens": tokens}

    def evaluate(self, X) -> EvalReport:
        """Score predictions against the gold labels carried by X."""
        records = self.predict(X)
        gold_acts, gold_tags = [], []
        for d in X:
            for u in d.turns:
                gold_acts.append(u.acts)
                gold_tags.append(u.slot_tags)
        pred_acts = [r.acts for r in records]
        pred_tags = [r.tags for r in records]
        return build_report(pred_acts, gold_acts, pred_tags, gold_tags)

    def score(self, X, y=None) -> float:
        report = self.evaluate(X)
        return (report.act_accuracy + report.slot_f1) / 2.0

    # -- persistence -------------------------------------------------------------------

    def save(self, path: str) -> None:
        self._check_fitted()
        arrays = dict(self.params_.arrays())
        if self.embeddings_ is not None:
            for name, vec in self.embeddings_.entity_vecs.items():
                arrays[f"kg_entity.{name}"] = vec.reshape(1, -1)
            for name, vec in self.embeddings_.relation_vecs.items():
                arrays[f"kg_relation.{name}"] = vec.reshape(1, -1)
        reserved = 3
        metadata = {
            "format": "slukit-joint-slu",
            "hyperparams": self.get_params(),
            "act_labels": self.act_labels_,
            "tag_labels": self.tag_labels_,
            "vocab_tokens": self.vocab_.tokens()[reserved:],
            "param_names": self.params_.names(),
            "kg_dim": self.embeddings_.dim if self.embeddings_ is not None else None,
            "best_epoch": getattr(self, "best_epoch_", None),
        }
        save_checkpoint(path, arrays, metadata)

    @classmethod
    def load(cls, path: str, store: TripleStore | None = None) -> "JointSLUModel":
        arrays, metadata = load_checkpoint(path)
        if metadata.get("format") != "slukit-joint-slu":
            raise ValueError(f"{path}: not a joint-SLU checkpoint")
        model = cls(**metadata["hyperparams"])
        model.act_labels_ = list(metadata["act_labels"])
        model.tag_labels_ = list(metadata["tag_labels"])
        model.vocab_ = Vocab(metadata["vocab_tokens"])
        wiring = apply_ablation(model.variant)
        rng = np.random.default_rng(model.seed)
        model.params_ = model._build_params(len(model.vocab_), len(model.act_labels_), len(model.tag_labels_), rng)
        model.params_.load_arrays({n: arrays[n] for n in metadata["param_names"]})
        if wiring.use_knowledge:
            if store is None:
                raise ValueError(f"variant {model.variant!r} needs the triple store to featurize; pass store=...")
            entity_vecs = {}
            relation_vecs = {}
            for name, arr in arrays.items():
                if name.startswith("kg_entity."):
                    entity_vecs[name[len("kg_entity."):]] = arr.reshape(-1)
                elif name.startswith("kg_relation."):
                    relation_vecs[name[len("kg_relation."):]] = arr.reshape(-1)
            model.embeddings_ = KgEmbeddings(int(metadata["kg_dim"]), entity_vecs, relation_vecs)
            model.store_ = store
        else:
            model.embeddings_ = None
            model.store_ = None
        model.best_epoch_ = metadata.get("best_epoch")
        model.run_log_ = []
        return model
