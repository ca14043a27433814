"""Optional full-scale checks against the published NYT-10 numbers.

Skipped unless the data (and, for training, a bert-base-cased style bundle)
are available:

    DSRE_NYT10_TRAIN, DSRE_NYT10_TEST   raw or prepared JSONL
    DSRE_BERT_BUNDLE                    directory with config.json, weights and vocab.txt
"""

import json
import os

import pytest

from dsre.cli import main

from conftest import ACCEPTANCE_RESULTS

TRAIN = os.environ.get("DSRE_NYT10_TRAIN")
TEST = os.environ.get("DSRE_NYT10_TEST")
BUNDLE = os.environ.get("DSRE_BERT_BUNDLE")

needs_data = pytest.mark.skipif(not (TRAIN and TEST), reason="DSRE_NYT10_TRAIN / DSRE_NYT10_TEST not set")
needs_bundle = pytest.mark.skipif(not BUNDLE, reason="DSRE_BERT_BUNDLE not set")

# sentences, entity pairs, relation mentions
PUBLISHED_STATS = {"train": (522_611, 281_270, 18_252), "test": (172_448, 96_678, 1_950)}
PUBLISHED_METRICS = {"auc": (0.424, 0.010), "p@100": (0.780, 0.030), "p@300": (0.730, 0.030),
                     "p@500": (0.676, 0.030)}
PUBLISHED_ABLATION = {"no_rel_emb": 0.404, "no_et": 0.415, "sdp": 0.418, "no_rel_attn": 0.422, "full": 0.424}


@pytest.fixture(scope="module")
def prepared(tmp_path_factory):
    d = tmp_path_factory.mktemp("nyt10")
    stats = {}
    for split, src in (("train", TRAIN), ("test", TEST)):
        out = d / f"{split}.jsonl"
        main(["prepare", src, str(out)])
        stats[split] = out
    return stats


@needs_data
def test_criterion_7_dataset_stats(prepared, capsys):
    from dsre.corpus import RelationVocab, dataset_stats, load_dataset

    lines = []
    ok = True
    for split, path in prepared.items():
        res = load_dataset(path, split)
        vocab = RelationVocab.from_relations(i.relation for i in res.instances)
        s = dataset_stats(res.instances, vocab)
        want = PUBLISHED_STATS[split]
        got = (s["sentences"], s["entity_pairs"], s["relation_mentions"])
        with open(path) as f:
            kept = sum(1 for _ in f)
        rejected = want[0] - kept
        split_ok = got == want if rejected == 0 else got[0] + rejected == want[0]
        ok &= split_ok
        lines.append(f"{split} {got} vs {want}, {rejected} parse failures")
    ACCEPTANCE_RESULTS.append(f"[{'PASS' if ok else 'FAIL'}] criterion 7: " + "; ".join(lines))
    assert ok


@needs_data
@needs_bundle
def test_criterion_6_published_metrics(prepared, tmp_path):
    base = ["--train", str(prepared["train"]), "--test", str(prepared["test"]), "--profile", "pretrained",
            "--bundle", BUNDLE]
    run = tmp_path / "full"
    assert main(["train", "--out", str(run)] + base[:2] + base[4:]) == 0
    assert main(["eval", str(run), str(prepared["test"])]) == 0
    m = json.loads((run / "metrics.json").read_text())
    misses = [k for k, (v, tol) in PUBLISHED_METRICS.items() if abs(m[k] - v) > tol]
    abl = tmp_path / "ablate"
    assert main(["ablate", "--out", str(abl)] + base) == 0
    rows = {r["variant"]: r["auc"] for r in json.loads((abl / "ablation.json").read_text())}
    misses += [v for v, auc in PUBLISHED_ABLATION.items() if abs(rows[v] - auc) > 0.010]
    ACCEPTANCE_RESULTS.append(f"[{'PASS' if not misses else 'FAIL'}] criterion 6: AUC {m['auc']:.3f}, "
                              f"P@100/300/500 {m['p@100']:.3f}/{m['p@300']:.3f}/{m['p@500']:.3f}; "
                              f"ablation {rows}; out of tolerance: {misses or 'none'}")
    assert not misses
