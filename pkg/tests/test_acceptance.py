"""Desk-scale acceptance criteria 1-5.

Each test appends one ``[PASS]``/``[FAIL]`` line to the terminal summary.
"""

import json
import subprocess
import sys
import time
from pathlib import Path

import pytest
import torch

from dsre.bagenc import bag_loss
from dsre.cli import main
from dsre.corpus import group_into_bags, load_dataset
from dsre.evaluate import inspect_attention
from dsre.model import load_checkpoint
from dsre.synthetic import relation_names, trigger_words

from conftest import ACCEPTANCE_RESULTS, make_instance, tiny_model

HERE = Path(__file__).parent

# the tiny profile trains at a larger peak rate than the pretrained one
DESK_TRAIN = ["--epochs", "3", "--lr", "1e-2"]


def record(n, ok, detail):
    ACCEPTANCE_RESULTS.append(f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}")


def synthetic(out, noise):
    argv = ["make-synthetic", "--out", str(out), "--relations", "5", "--train-bags", "2000", "--noise", str(noise)]
    assert main(argv) == 0
    return out


@pytest.fixture(scope="module")
def noisy_corpus(tmp_path_factory):
    return synthetic(tmp_path_factory.mktemp("noisy"), 0.2)


PROPERTY_TESTS = [
    "test_sentrep.py::TestProperties::test_alpha_simplex_and_tanh_range",
    "test_sentrep.py::TestProperties::test_matches_loop_oracle",
    "test_bagenc.py::TestSelectiveAttention::test_permutation_equivariance",
    "test_bagenc.py::TestClassifierAndLoss::test_classify_is_softmax_of_linear",
    "test_structinput.py::TestTokenize::test_mask_soundness_and_disjointness",
    "test_structinput.py::TestBuildSequence::test_identical_surfaces_stay_disjoint",
    "test_depparse.py::TestPaths::test_sdp_subset_of_stp",
    "test_depparse.py::TestLca::test_symmetry",
    "test_encoder.py::TestTrainableMask::test_frozen_parameters_get_no_gradient",
    "test_bagenc.py::TestTraining::test_step_moves_only_trainable",
]


def test_criterion_1_property_suite(toy_instances, toy_vocab):
    start = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *PROPERTY_TESTS],
                          cwd=HERE, capture_output=True, text=True)
    # the three softmaxes of a real forward pass sum to one within 1e-6
    model = tiny_model(toy_instances, toy_vocab).eval()
    bags = group_into_bags(toy_instances, "train", toy_vocab)
    prepared = model.prepare_all(toy_instances)
    inputs = [[prepared[i] for i in b.instance_ids] for b in bags]
    with torch.no_grad():
        rep, attn = model.sentence_reprs([x for bag in inputs for x in bag])
        logits, weights = model(inputs)
    sums = [rep.alpha.sum(-1), torch.stack([w.sum() for w in weights]), logits.softmax(-1).sum(-1)]
    softmax_ok = all(((s - 1).abs() < 1e-6).all() for s in sums)
    tanh_ok = bool((rep.l.abs() <= 1).all())
    elapsed = time.perf_counter() - start
    ok = proc.returncode == 0 and softmax_ok and tanh_ok and elapsed < 120
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else "no output"
    record(1, ok, f"property suite ({summary}); softmax sums within 1e-6: {softmax_ok}; {elapsed:.1f}s < 120s")
    assert proc.returncode == 0, proc.stdout[-3000:]
    assert softmax_ok and tanh_ok
    assert elapsed < 120


def test_criterion_2_gradient_oracle(toy_instances, toy_vocab):
    start = time.perf_counter()
    model = tiny_model(toy_instances, toy_vocab, seed=3).double().eval()
    bags = group_into_bags(toy_instances, "train", toy_vocab)[:3]
    prepared = model.prepare_all(toy_instances)
    inputs = [[prepared[i] for i in b.instance_ids] for b in bags]
    gold = torch.tensor([b.label for b in bags])
    weights = torch.tensor([0.5, 1.25, 1.25], dtype=torch.float64)

    def loss():
        logits, _ = model(inputs)
        return bag_loss(logits, gold, weights)

    mask = model.apply_trainable_mask(model.encoder.cfg.fine_tune_last_k)
    model.zero_grad()
    loss().backward()
    groups = {
        "w_l": model.relation_head.weight, "b_l": model.relation_head.bias, "r": model.bag_encoder.query,
        "W_r": model.bag_encoder.classifier.weight, "b_r": model.bag_encoder.classifier.bias,
    }
    for name, p in model.encoder.named_parameters():
        if name.startswith("layers.") and mask[f"encoder.{name}"]:
            groups[name] = p
    gen = torch.Generator().manual_seed(0)
    # float64 central differences; a smaller step lets rounding in the loss swamp gradients near 1e-6
    eps = 1e-4
    worst, checked = 0.0, 0
    with torch.no_grad():
        for name, p in groups.items():
            flat = p.data.view(-1)
            for k in torch.randint(0, flat.numel(), (min(6, flat.numel()),), generator=gen).tolist():
                orig = flat[k].item()
                flat[k] = orig + eps
                up = loss().item()
                flat[k] = orig - eps
                down = loss().item()
                flat[k] = orig
                fd = (up - down) / (2 * eps)
                bp = p.grad.view(-1)[k].item()
                scale = max(abs(fd), abs(bp))
                if scale < 1e-9:
                    continue
                worst = max(worst, abs(fd - bp) / scale)
                checked += 1
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-4 and checked > 0 and elapsed < 120
    record(2, ok, f"{checked} coordinates over {len(groups)} tensors, worst relative error {worst:.2e} "
                  f"<= 1e-4; {elapsed:.1f}s < 120s")
    assert checked > 0
    assert worst <= 1e-4
    assert elapsed < 120


def test_criterion_3_synthetic_end_to_end(noisy_corpus, tmp_path):
    start = time.perf_counter()
    run = tmp_path / "run"
    assert main(["train", "--train", str(noisy_corpus / "train.jsonl"), "--out", str(run)] + DESK_TRAIN) == 0
    assert main(["eval", str(run), str(noisy_corpus / "test.jsonl")]) == 0
    m = json.loads((run / "metrics.json").read_text())
    elapsed = time.perf_counter() - start
    ok = m["auc"] >= 0.80 and m["p@100"] >= 0.90 and elapsed < 600
    record(3, ok, f"AUC {m['auc']:.3f} >= 0.80, P@100 {m['p@100']:.2f} >= 0.90; {elapsed:.0f}s < 600s")
    assert m["auc"] >= 0.80
    assert m["p@100"] >= 0.90
    assert elapsed < 600


def test_criterion_4_ablation(noisy_corpus, tmp_path):
    out = tmp_path / "ablate"
    argv = ["ablate", "--train", str(noisy_corpus / "train.jsonl"), "--test", str(noisy_corpus / "test.jsonl"),
            "--out", str(out)] + DESK_TRAIN
    assert main(argv) == 0
    rows = {r["variant"]: r for r in json.loads((out / "ablation.json").read_text())}
    table = (out / "ablation.txt").read_text().strip().splitlines()
    complete = len(rows) == 5 and len(table) == 2 + 5 and all(
        r[k] is not None for r in rows.values() for k in ("auc", "p@100", "p@200", "p@300"))
    full, no_emb = rows["full"]["auc"], rows["no_rel_emb"]["auc"]
    ok = complete and no_emb <= full + 0.02
    aucs = ", ".join(f"{v} {r['auc']:.3f}" for v, r in rows.items())
    record(4, ok, f"5-row table: {complete}; AUC {aucs}; w/o relation embedding <= full + 0.02")
    assert complete
    assert no_emb <= full + 0.02


def test_criterion_5_attention_localization(tmp_path):
    corpus = synthetic(tmp_path / "clean", 0.0)
    run = tmp_path / "run"
    assert main(["train", "--train", str(corpus / "train.jsonl"), "--out", str(run)] + DESK_TRAIN) == 0
    model = load_checkpoint(run)
    test = load_dataset(corpus / "test.jsonl", "test", model.vocab).instances
    trig = dict(zip(relation_names(5), trigger_words(5)))
    targets = [i for i in test if i.relation != "NA"]
    hits = 0
    for inst in targets:
        table = inspect_attention(inst, model)
        lo, hi = model.prepare(inst).stp_region
        k = table.argmax()
        hits += lo <= k < hi and table.tokens[k] == trig[inst.relation]
    rate = hits / len(targets)
    record(5, rate >= 0.80, f"argmax on planted trigger in {hits}/{len(targets)} = {rate:.1%} >= 80% "
                            f"of held-out non-NA instances")
    assert rate >= 0.80


def test_attention_probe_sanity(toy_instances, toy_vocab):
    """The localisation probe reads the path region, never the header copy of an entity."""
    model = tiny_model(toy_instances, toy_vocab)
    inst = make_instance("p", "/r/a", ["the", "Alice", "founded", "Bob", "today"], [1, 2, -1, 2, 2], (1, 2), (3, 4))
    x = model.prepare(inst)
    lo, hi = x.stp_region
    assert x.tokens[lo:hi] == ("Alice", "founded", "Bob")
