"""End-to-end CLI workflows on a miniature corpus."""

import json

import pytest

from slukit.cli import main, read_config
from slukit.corpus import load_dialogues
from slukit.knowledge import KgEmbeddings


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """gen-data -> build-kb -> train once; downstream commands reuse it."""
    root = tmp_path_factory.mktemp("cliws")
    data = root / "data"
    assert main(["gen-data", "--seed", "0", "--out", str(data), "--n-train", "50", "--n-test", "12"]) == 0
    config = root / "model.cfg"
    config.write_text(
        "d_model = 16\ntoken_layers = 1\ncontext_layers = 1\ncontext_heads = 2\n"
        "attn_dim = 16\nffn_dim = 24\nlstm_hidden = 12\nkg_dim = 8\nkg_attn_dim = 8\n"
        "kg_epochs = 30\nepochs = 2\npatience = 50\n# comment line\n"
    )
    ckpt = root / "model.ckpt"
    code = main(
        [
            "train",
            "--corpus", str(data / "train.jsonl"),
            "--triples", str(data / "kb.tsv"),
            "--config", str(config),
            "--seed", "0",
            "--log", str(root / "run.jsonl"),
            "--out", str(ckpt),
        ]
    )
    assert code == 0
    return root, data, config, ckpt


class TestGenData:
    def test_outputs_exist_and_parse(self, workspace):
        _, data, _, _ = workspace
        for name in ("train.jsonl", "test.jsonl", "kb.tsv", "acts.txt", "slots.txt", "manifest.json"):
            assert (data / name).exists(), name
        train = load_dialogues(str(data / "train.jsonl"))
        assert len(train) == 50
        manifest = json.loads((data / "manifest.json").read_text())
        assert manifest["seed"] == 0

    def test_idempotent_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        args = ["gen-data", "--seed", "3", "--n-train", "12", "--n-test", "4"]
        assert main(args + ["--out", str(a)]) == 0
        assert main(args + ["--out", str(b)]) == 0
        for name in ("train.jsonl", "test.jsonl", "kb.tsv", "acts.txt", "slots.txt"):
            assert (a / name).read_bytes() == (b / name).read_bytes(), name

    def test_bad_rate_rejected_nonzero_exit(self, tmp_path, capsys):
        code = main(["gen-data", "--seed", "0", "--out", str(tmp_path / "x"), "--knowledge-rate", "1.5"])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_unknown_flag_rejected(self):
        with pytest.raises(SystemExit):
            main(["gen-data", "--seed", "0", "--out", "/tmp/x", "--bogus-flag", "1"])


class TestBuildKb:
    def test_produces_loadable_embeddings(self, workspace, tmp_path):
        _, data, _, _ = workspace
        out = tmp_path / "kb.emb"
        code = main(
            ["build-kb", "--triples", str(data / "kb.tsv"), "--dim", "8", "--epochs", "20", "--seed", "0", "--out", str(out)]
        )
        assert code == 0
        emb = KgEmbeddings.load(str(out))
        assert emb.dim == 8
        assert emb.entity_vecs and emb.relation_vecs

    def test_missing_file_nonzero_exit(self, tmp_path, capsys):
        code = main(["build-kb", "--triples", str(tmp_path / "nope.tsv"), "--out", str(tmp_path / "o")])
        assert code == 1
        assert "error:" in capsys.readouterr().err


class TestTrainPredictEval:
    def test_train_is_seed_deterministic(self, workspace, tmp_path):
        root, data, config, _ = workspace
        outs = []
        for name in ("c1.ckpt", "c2.ckpt"):
            path = tmp_path / name
            code = main(
                [
                    "train",
                    "--corpus", str(data / "train.jsonl"),
                    "--triples", str(data / "kb.tsv"),
                    "--config", str(config),
                    "--seed", "7",
                    "--out", str(path),
                ]
            )
            assert code == 0
            outs.append(path.read_bytes())
        assert outs[0] == outs[1]

    def test_unknown_config_key_rejected(self, workspace, tmp_path, capsys):
        _, data, _, _ = workspace
        bad = tmp_path / "bad.cfg"
        bad.write_text("warp_speed = 9\n")
        code = main(
            ["train", "--corpus", str(data / "train.jsonl"), "--triples", str(data / "kb.tsv"),
             "--config", str(bad), "--out", str(tmp_path / "c.ckpt")]
        )
        assert code == 1
        assert "warp_speed" in capsys.readouterr().err

    def test_predict_then_eval(self, workspace, tmp_path, capsys):
        root, data, _, ckpt = workspace
        preds = tmp_path / "preds.jsonl"
        code = main(
            ["predict", "--checkpoint", str(ckpt), "--corpus", str(data / "test.jsonl"),
             "--triples", str(data / "kb.tsv"), "--out", str(preds)]
        )
        assert code == 0
        assert preds.exists()
        capsys.readouterr()
        json_out = tmp_path / "report.json"
        code = main(
            ["eval", "--corpus", str(data / "test.jsonl"), "--predictions", str(preds),
             "--json-out", str(json_out)]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "act accuracy" in out
        report = json.loads(json_out.read_text())
        assert set(report) >= {"act_accuracy", "slot_f1", "per_slot"}

    def test_eval_of_gold_as_predictions_is_perfect(self, workspace, tmp_path, capsys):
        _, data, _, _ = workspace
        test = load_dialogues(str(data / "test.jsonl"))
        preds = tmp_path / "gold_preds.jsonl"
        with open(preds, "w") as fh:
            for d in test:
                for n, u in enumerate(d.turns):
                    fh.write(
                        json.dumps(
                            {
                                "dialogue_id": d.id,
                                "turn": n,
                                "acts": sorted(u.acts),
                                "act_probs": {a: 1.0 for a in u.acts},
                                "tags": u.slot_tags,
                            }
                        )
                        + "\n"
                    )
        json_out = tmp_path / "r.json"
        code = main(["eval", "--corpus", str(data / "test.jsonl"), "--predictions", str(preds), "--json-out", str(json_out)])
        assert code == 0
        report = json.loads(json_out.read_text())
        assert report["act_accuracy"] == 1.0
        assert report["slot_f1"] == 1.0

    def test_predict_explain_emits_knowledge_dump(self, workspace, tmp_path, capsys):
        _, data, _, ckpt = workspace
        preds = tmp_path / "preds_explained.jsonl"
        code = main(
            ["predict", "--checkpoint", str(ckpt), "--corpus", str(data / "test.jsonl"),
             "--triples", str(data / "kb.tsv"), "--explain", "--out", str(preds)]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "g=" in out  # gate values shown per token
        assert "uniform alpha" in out  # KB-absent tokens show the agnostic case
        first = json.loads(preds.read_text().splitlines()[0])
        assert "explain" in first

    def test_eval_misaligned_predictions_rejected(self, workspace, tmp_path, capsys):
        _, data, _, _ = workspace
        preds = tmp_path / "short.jsonl"
        preds.write_text(
            json.dumps(
                {"dialogue_id": "test-0000", "turn": 0, "acts": ["request"], "act_probs": {}, "tags": ["O"]}
            )
            + "\n"
        )
        code = main(["eval", "--corpus", str(data / "test.jsonl"), "--predictions", str(preds)])
        assert code == 1
        assert "align" in capsys.readouterr().err


class TestAblate:
    def test_four_row_table_with_full_variant(self, workspace, tmp_path, capsys):
        root, data, config, _ = workspace
        out = tmp_path / "table.json"
        code = main(
            ["ablate", "--config", str(config), "--seed", "0", "--epochs", "2",
             "--corpus-dir", str(data), "--out", str(out)]
        )
        assert code == 0
        text = capsys.readouterr().out
        assert "ID (Acc)" in text and "SL (F1)" in text
        rows = json.loads(out.read_text())
        assert [r["variant"] for r in rows] == ["full", "no_kg", "no_ca", "no_lstm"]
        for row in rows:
            assert 0.0 <= row["act_accuracy"] <= 1.0
            assert 0.0 <= row["slot_f1"] <= 1.0


class TestConfigFile:
    def test_read_config_parses_scalars(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("a = 3\nb = 0.5\nc = hello\nd = true\ne = none\n# comment\n\n")
        assert read_config(str(path)) == {"a": 3, "b": 0.5, "c": "hello", "d": True, "e": None}

    def test_read_config_rejects_bad_line(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("not a pair\n")
        with pytest.raises(ValueError, match="key=value"):
            read_config(str(path))
