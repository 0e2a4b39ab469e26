"""Command-line entry point: gen-data, build-kb, train, eval, predict, ablate.

Every subcommand prints its resolved configuration before running, takes a
--seed, and exits 0 only when the requested artifact was fully produced.
Model hyperparameters come from a flat ``key=value`` config file (one pair
per line, '#' comments allowed); command-line flags override file values.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path



from .corpus import load_dialogues, save_dialogues, save_labels
from .generator import GenConfig, generate_synthetic
from .knowledge import KgEmbeddings, load_triples, save_triples, train_transe
from .metrics import act_accuracy_restricted, build_report, phenomenon_masks, slot_f1_restricted
from .model import VARIANTS, JointSLUModel, load_predictions, save_predictions


def _parse_scalar(raw: str):
    low = raw.strip()
    if low.lower() in ("true", "false"):
        return low.lower() == "true"
    if low.lower() in ("none", "null"):
        return None
    try:
        return int(low)
    except ValueError:
        pass
    try:
        return float(low)
    except ValueError:
        pass
    return low


def read_config(path: str | None) -> dict:
    """Flat key=value file -> dict; unknown keys are rejected downstream."""
    if path is None:
        return {}
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            out[key.strip()] = _parse_scalar(value)
    return out


def _model_kwargs(config: dict, overrides: dict) -> dict:
    merged = dict(config)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    valid = set(JointSLUModel().get_params())
    unknown = set(merged) - valid
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}; valid keys: {sorted(valid)}")
    return merged


def _print_config(name: str, resolved: dict) -> None:
    print(f"[{name}] resolved config:")
    for key in sorted(resolved):
        print(f"  {key} = {resolved[key]}")


def _gen_config_from(config: dict) -> GenConfig:
    valid = set(GenConfig.__dataclass_fields__)
    unknown = set(config) - valid
    if unknown:
        raise ValueError(f"unknown gen-data config keys: {sorted(unknown)}")
    return GenConfig(**config)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    config = read_config(args.config)
    for key, value in (
        ("n_train", args.n_train),
        ("n_test", args.n_test),
        ("knowledge_rate", args.knowledge_rate),
        ("context_rate", args.context_rate),
    ):
        if value is not None:
            config[key] = value
    gen_cfg = _gen_config_from(config)
    _print_config("gen-data", {"seed": args.seed, "out": args.out, **gen_cfg.__dict__})

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train, test, kb, inventories = generate_synthetic(gen_cfg, args.seed)
    save_dialogues(train, str(out / "train.jsonl"))
    save_dialogues(test, str(out / "test.jsonl"))
    save_triples(kb, str(out / "kb.tsv"))
    save_labels(inventories["acts"], str(out / "acts.txt"))
    save_labels(inventories["slots"], str(out / "slots.txt"))
    manifest = {"seed": args.seed, "config": gen_cfg.__dict__, "inventories": inventories}
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {len(train)} train / {len(test)} test dialogues, {len(kb)} triples -> {out}")
    return 0


def cmd_build_kb(args) -> int:
    _print_config(
        "build-kb",
        {"triples": args.triples, "dim": args.dim, "epochs": args.epochs, "seed": args.seed, "out": args.out},
    )
    store = load_triples(args.triples)
    emb = train_transe(store, dim=args.dim, epochs=args.epochs, margin=args.margin, lr=args.lr, seed=args.seed)
    emb.save(args.out)
    print(f"trained {len(emb.entity_vecs)} entity / {len(emb.relation_vecs)} relation vectors -> {args.out}")
    return 0


def cmd_train(args) -> int:
    overrides = {"seed": args.seed, "variant": args.variant, "epochs": args.epochs, "threshold": args.threshold}
    kwargs = _model_kwargs(read_config(args.config), overrides)
    model = JointSLUModel(**kwargs)
    _print_config("train", {"corpus": args.corpus, "triples": args.triples, "out": args.out, **model.get_params()})

    dialogues = load_dialogues(args.corpus)
    store = load_triples(args.triples) if args.triples else None
    embeddings = KgEmbeddings.load(args.embeddings) if args.embeddings else None
    model.fit(dialogues, store=store, embeddings=embeddings)
    model.save(args.out)
    if args.log:
        with open(args.log, "w", encoding="utf-8") as fh:
            for entry in model.run_log_:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
    last = model.run_log_[-1] if model.run_log_ else {}
    print(
        f"trained {model.variant} for {len(model.run_log_)} epochs "
        f"(best epoch {model.best_epoch_}, last val act_acc={last.get('val_act_accuracy')}, "
        f"val slot_f1={last.get('val_slot_f1')}) -> {args.out}"
    )
    return 0


def cmd_predict(args) -> int:
    _print_config(
        "predict",
        {
            "checkpoint": args.checkpoint,
            "corpus": args.corpus,
            "triples": args.triples,
            "out": args.out,
            "explain": args.explain,
            "threshold": args.threshold,
        },
    )
    store = load_triples(args.triples) if args.triples else None
    model = JointSLUModel.load(args.checkpoint, store=store)
    if args.threshold is not None:
        model.threshold = args.threshold
    dialogues = load_dialogues(args.corpus)
    records = model.predict(dialogues, explain=args.explain)
    save_predictions(records, args.out)
    if args.explain:
        _print_explanations(records, dialogues)
    print(f"wrote {len(records)} prediction records -> {args.out}")
    return 0


def _print_explanations(records, dialogues) -> None:
    by_id = {d.id: d for d in dialogues}
    for rec in records:
        turn = by_id[rec.dialogue_id].turns[rec.turn]
        print(f"-- {rec.dialogue_id} turn {rec.turn} ({turn.speaker}): {' '.join(turn.tokens)}")
        print(f"   acts: {sorted(rec.acts)}  tags: {rec.tags}")
        if not rec.explain:
            continue
        for entry in rec.explain["tokens"]:
            token = entry["token"]
            gate = entry.get("gate")
            knowledge = entry.get("knowledge", [])
            if knowledge:
                shown = ", ".join(f"{k['relation']}, {k['tail']} ({k['alpha']:.2g})" for k in knowledge)
                print(f"   {token:<14} g={gate:.3f}  {shown}")
            elif gate is not None:
                print(f"   {token:<14} g={gate:.3f}  (no knowledge: uniform alpha {entry['alpha_uniform']:.2g})")


def cmd_eval(args) -> int:
    _print_config(
        "eval",
        {
            "corpus": args.corpus,
            "predictions": args.predictions,
            "checkpoint": args.checkpoint,
            "triples": args.triples,
            "json_out": args.json_out,
        },
    )
    dialogues = load_dialogues(args.corpus)
    gold_acts = [u.acts for d in dialogues for u in d.turns]
    gold_tags = [u.slot_tags for d in dialogues for u in d.turns]

    if args.predictions:
        records = load_predictions(args.predictions)
        expected = {(d.id, n) for d in dialogues for n in range(len(d.turns))}
        got = {(r.dialogue_id, r.turn) for r in records}
        if expected != got:
            raise ValueError("predictions do not align with the corpus (dialogue id / turn mismatch)")
        order = {key: i for i, key in enumerate((d.id, n) for d in dialogues for n in range(len(d.turns)))}
        records = sorted(records, key=lambda r: order[(r.dialogue_id, r.turn)])
    elif args.checkpoint:
        store = load_triples(args.triples) if args.triples else None
        model = JointSLUModel.load(args.checkpoint, store=store)
        records = model.predict(dialogues)
    else:
        raise ValueError("eval needs --predictions or --checkpoint")

    report = build_report([r.acts for r in records], gold_acts, [r.tags for r in records], gold_tags)
    print(report.pretty())
    print(report.to_json())
    if args.json_out:
        Path(args.json_out).write_text(report.to_json() + "\n", encoding="utf-8")
    return 0


def cmd_ablate(args) -> int:
    kwargs = _model_kwargs(read_config(args.config), {"seed": args.seed, "epochs": args.epochs})
    _print_config("ablate", {"seed": args.seed, "corpus_dir": args.corpus_dir, "out": args.out, **kwargs})

    if args.corpus_dir:
        base = Path(args.corpus_dir)
        train = load_dialogues(str(base / "train.jsonl"))
        test = load_dialogues(str(base / "test.jsonl"))
        store = load_triples(str(base / "kb.tsv"))
    else:
        gen_cfg = GenConfig()
        train, test, kb, _ = generate_synthetic(gen_cfg, args.seed)
        store = None
        from .knowledge import TripleStore

        store = TripleStore(kb)

    rows = []
    for variant in VARIANTS:
        model = JointSLUModel(**{**kwargs, "variant": variant})
        model.fit(train, store=store)
        report = model.evaluate(test)
        restricted = _restricted_metrics(model, train, test)
        rows.append(
            {
                "variant": variant,
                "act_accuracy": round(report.act_accuracy, 4),
                "slot_f1": round(report.slot_f1, 4),
                **restricted,
                "epochs_ran": len(model.run_log_),
            }
        )
        print(
            f"[ablate] {variant}: act_acc={report.act_accuracy:.4f} slot_f1={report.slot_f1:.4f} "
            f"kb_f1={restricted['kb_slot_f1']:.4f} ctx_acc={restricted['context_act_accuracy']:.4f}"
        )

    print(f"{'variant':<10} {'ID (Acc)':>10} {'SL (F1)':>10} {'KB SL (F1)':>12} {'CTX ID (Acc)':>13}")
    for row in rows:
        print(
            f"{row['variant']:<10} {row['act_accuracy'] * 100:>10.2f} {row['slot_f1'] * 100:>10.2f}"
            f" {row['kb_slot_f1'] * 100:>12.2f} {row['context_act_accuracy'] * 100:>13.2f}"
        )
    if args.out:
        Path(args.out).write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return 0


def _restricted_metrics(model: JointSLUModel, train, test) -> dict:
    records = model.predict(test)
    gold_tags = [u.slot_tags for d in test for u in d.turns]
    gold_acts = [u.acts for d in test for u in d.turns]
    keep, ctx_mask = phenomenon_masks(test)
    _, _, kb_f1 = slot_f1_restricted([r.tags for r in records], gold_tags, keep)
    ctx_acc = act_accuracy_restricted([r.acts for r in records], gold_acts, ctx_mask)
    return {"kb_slot_f1": round(kb_f1, 4), "context_act_accuracy": round(ctx_acc, 4)}


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slukit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus and knowledge base")
    p.add_argument("--config", help="flat key=value generator config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n-train", type=int, dest="n_train")
    p.add_argument("--n-test", type=int, dest="n_test")
    p.add_argument("--knowledge-rate", type=float, dest="knowledge_rate")
    p.add_argument("--context-rate", type=float, dest="context_rate")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("build-kb", help="train knowledge-graph embeddings from a triple file")
    p.add_argument("--triples", required=True)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--margin", type=float, default=1.0)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_kb)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--corpus", required=True, help="training dialogues (JSONL)")
    p.add_argument("--triples", help="knowledge base TSV (omit only for no_kg)")
    p.add_argument("--embeddings", help="pre-trained embedding file from build-kb")
    p.add_argument("--config", help="flat key=value model config")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--epochs", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--log", help="write the per-epoch run log (JSONL)")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict acts and slots for a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--triples")
    p.add_argument("--threshold", type=float)
    p.add_argument("--explain", action="store_true", help="dump per-token knowledge weights and gate values")
    p.add_argument("--out", required=True, help="prediction JSONL path")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions (or a checkpoint) against gold labels")
    p.add_argument("--corpus", required=True)
    p.add_argument("--predictions", help="prediction JSONL from `predict`")
    p.add_argument("--checkpoint", help="run the model instead of reading predictions")
    p.add_argument("--triples")
    p.add_argument("--json-out", dest="json_out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train all four variants and print a comparison table")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int)
    p.add_argument("--corpus-dir", dest="corpus_dir", help="directory from gen-data; default: generate with --seed")
    p.add_argument("--out", help="write the table as JSON")
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
