import argparse
import json

import pytest

from dsre.cli import (EXIT_CHECKPOINT, EXIT_DATA, EXIT_IO, EXIT_OK, EXIT_USAGE, main, resolve_config)
from dsre.corpus import load_dataset
from dsre.depparse import entity_anchor, stp, validate_tree
from dsre.manifest import file_sha256
from dsre.synthetic import relation_names, trigger_words

SMALL = ["--relations", "3", "--train-bags", "40", "--test-bags", "15", "--entities", "30"]
FAST = ["--epochs", "1", "--batch-size", "8", "--lr", "1e-2"]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("syn")
    assert main(["make-synthetic", "--out", str(d), "--noise", "0"] + SMALL) == EXIT_OK
    return d


@pytest.fixture(scope="module")
def trained(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", "--train", str(corpus / "train.jsonl"), "--out", str(out)] + FAST) == EXIT_OK
    return out


def good_record(iid="a", relation="/r/a"):
    return {"id": iid, "tokens": ["Alice", "founded", "Acme"],
            "head": {"surface": "Alice", "start": 0, "end": 1, "type": "PERSON"},
            "tail": {"surface": "Acme", "start": 2, "end": 3, "type": "ORG"},
            "dep_heads": [1, -1, 1], "relation": relation}


class TestPrepare:
    def test_empty_input(self, tmp_path, capsys):
        (tmp_path / "in.jsonl").write_text("")
        assert main(["prepare", str(tmp_path / "in.jsonl"), str(tmp_path / "out.jsonl")]) == EXIT_OK
        assert (tmp_path / "out.jsonl").read_text() == ""
        assert json.loads(capsys.readouterr().out)["sentences"] == 0

    def test_attaches_paths_and_is_idempotent(self, tmp_path):
        (tmp_path / "in.jsonl").write_text(json.dumps(good_record()) + "\n")
        assert main(["prepare", str(tmp_path / "in.jsonl"), str(tmp_path / "a.jsonl")]) == EXIT_OK
        assert main(["prepare", str(tmp_path / "a.jsonl"), str(tmp_path / "b.jsonl")]) == EXIT_OK
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
        rec = json.loads((tmp_path / "a.jsonl").read_text())
        assert rec["stp"] == [0, 1, 2] and rec["sdp"] == [0, 1, 2]

    def test_bad_line_reports_line_number(self, tmp_path, capsys):
        bad = dict(good_record("b"), dep_heads=[1, 2, 0])
        lines = [json.dumps(good_record()), json.dumps(bad), "{oops"]
        (tmp_path / "in.jsonl").write_text("\n".join(lines) + "\n")
        assert main(["prepare", str(tmp_path / "in.jsonl"), str(tmp_path / "out.jsonl")]) == EXIT_DATA
        err = capsys.readouterr().err
        assert "line 2" in err and "line 3" in err
        assert len((tmp_path / "out.jsonl").read_text().splitlines()) == 1

    def test_missing_input(self, tmp_path):
        assert main(["prepare", str(tmp_path / "nope.jsonl"), str(tmp_path / "o.jsonl")]) == EXIT_IO


class TestMakeSynthetic:
    def test_clean_triggers_on_path(self, corpus):
        train = load_dataset(corpus / "train.jsonl", "train")
        test = load_dataset(corpus / "test.jsonl", "test", train.vocab)
        assert not train.errors and not test.errors
        trig = dict(zip(relation_names(3), trigger_words(3)))
        seen = {}
        for inst in train.instances + test.instances:
            tree = validate_tree(inst.dep_heads)
            path = stp(tree, entity_anchor(tree, inst.head.span), entity_anchor(tree, inst.tail.span))
            on_path = {inst.tokens[i] for i in path} & set(trig.values())
            if inst.relation == "NA":
                assert not on_path
            else:
                assert on_path == {trig[inst.relation]}
                seen.setdefault(inst.relation, set()).update(on_path)
        # relation -> trigger is one to one
        assert len({frozenset(v) for v in seen.values()}) == len(seen) == 3

    def test_manifest(self, corpus):
        m = json.loads((corpus / "manifest.json").read_text())
        assert m["command"] == "make-synthetic" and m["seed"] == 13
        assert file_sha256(corpus / "train.jsonl") in m["data"].values()


class TestTrainEval:
    def test_outputs(self, trained):
        m = json.loads((trained / "manifest.json").read_text())
        assert m["weights_sha256"] == file_sha256(trained / "model.safetensors")
        assert m["config"]["train"]["lr"] == 1e-2
        assert m["config"]["train"]["seed"] == m["seed"] == 42
        assert len((trained / "train_log.jsonl").read_text().splitlines()) == m["steps"]

    def test_repeat_runs_identical_weights(self, corpus, trained, tmp_path):
        assert main(["train", "--train", str(corpus / "train.jsonl"), "--out", str(tmp_path)] + FAST) == EXIT_OK
        assert file_sha256(tmp_path / "model.safetensors") == file_sha256(trained / "model.safetensors")
        assert (tmp_path / "train_log.jsonl").read_text() == (trained / "train_log.jsonl").read_text()

    def test_eval_stamped(self, corpus, trained, tmp_path):
        assert main(["eval", str(trained), str(corpus / "test.jsonl"), "--out", str(tmp_path)]) == EXIT_OK
        metrics = json.loads((tmp_path / "metrics.json").read_text())
        stamp = metrics["manifest"]
        assert (tmp_path / "pr_curve.csv").read_text().startswith(f"# manifest {stamp}\n")
        assert (tmp_path / "pr_curve.png").stat().st_size > 0
        assert json.loads((tmp_path / "eval_manifest.json").read_text())["command"] == "eval"
        assert 0.0 <= metrics["auc"] <= 1.0
        assert sum(metrics["top_300"].values()) == min(300, metrics["predictions"])
        # plot overlays existing curves
        png = tmp_path / "overlay.png"
        assert main(["plot", f"a={tmp_path / 'pr_curve.csv'}", f"b={tmp_path / 'pr_curve.csv'}",
                     "--out", str(png)]) == EXIT_OK
        assert png.exists()

    def test_inspect(self, corpus, trained, tmp_path, capsys):
        iid = json.loads((corpus / "test.jsonl").read_text().splitlines()[0])["id"]
        img = tmp_path / "att.png"
        assert main(["inspect-attention", str(trained), str(corpus / "test.jsonl"), iid, "--image", str(img)]) == 0
        out = capsys.readouterr().out
        assert out.startswith(f"# {iid}") and "[CLS]" in out
        assert img.exists()
        assert main(["inspect-attention", str(trained), str(corpus / "test.jsonl"), "missing-id"]) == EXIT_DATA

    def test_bad_checkpoint(self, corpus, tmp_path):
        assert main(["eval", str(tmp_path), str(corpus / "test.jsonl")]) == EXIT_CHECKPOINT

    def test_pretrained_needs_bundle(self, corpus, tmp_path):
        argv = ["train", "--train", str(corpus / "train.jsonl"), "--out", str(tmp_path), "--profile", "pretrained"]
        assert main(argv) == EXIT_USAGE

    def test_ablate_subset(self, corpus, tmp_path, capsys):
        argv = ["ablate", "--train", str(corpus / "train.jsonl"), "--test", str(corpus / "test.jsonl"),
                "--out", str(tmp_path), "--variants", "full", "no_rel_emb"] + FAST
        assert main(argv) == EXIT_OK
        rows = json.loads((tmp_path / "ablation.json").read_text())
        assert [r["variant"] for r in rows] == ["full", "no_rel_emb"]
        assert rows[0]["config_hash"] != rows[1]["config_hash"]
        assert "full model" in (tmp_path / "ablation.txt").read_text()


class TestConfigPrecedence:
    def args(self, **kw):
        base = {"config": None, "train_path": None, "test_path": None, "profile": None, "bundle": None,
                "variant": None, "seed": None, "out_dir": None, "max_seq_length": None, "batch_size": None,
                "epochs": None, "lr": None, "warmup_fraction": None, "weight_decay": None, "dropout": None,
                "bag_cap": None, "fine_tune_last_k": None}
        base.update(kw)
        return argparse.Namespace(**base)

    def test_defaults(self):
        cfg = resolve_config(self.args())
        assert cfg.train.lr == 2e-5 and cfg.train.batch_size == 32 and cfg.train.epochs == 3
        assert cfg.train.dropout == 0.4 and cfg.seed == 42

    def test_file_then_flags(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"variant": "sdp", "seed": 5, "train": {"lr": 0.5, "epochs": 9}}))
        cfg = resolve_config(self.args(config=str(tmp_path / "c.json"), epochs=2))
        assert cfg.variant == "sdp" and cfg.seed == 5 == cfg.train.seed
        assert cfg.train.lr == 0.5 and cfg.train.epochs == 2

    def test_unknown_key(self, tmp_path, capsys):
        (tmp_path / "c.json").write_text(json.dumps({"colour": "red"}))
        assert main(["train", "--config", str(tmp_path / "c.json")]) == EXIT_USAGE
