import random

import pytest
import torch

from dsre.corpus import EntityMention, Instance, RelationVocab
from dsre.encoder import Encoder, tiny_config
from dsre.model import RelationExtractor
from dsre.structinput import SubwordTokenizer, build_vocab

ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)


def make_instance(iid="s0", relation="NA", tokens=None, heads=None, head=(0, 1), tail=(2, 3),
                  head_type="PERSON", tail_type="ORG", head_id=None, tail_id=None):
    tokens = tokens or ["Alice", "founded", "Acme", "yesterday"]
    heads = heads if heads is not None else [1, -1, 1, 1]
    return Instance(
        id=iid,
        tokens=tuple(tokens),
        head=EntityMention(" ".join(tokens[head[0]:head[1]]), head, head_type, head_id),
        tail=EntityMention(" ".join(tokens[tail[0]:tail[1]]), tail, tail_type, tail_id),
        dep_heads=tuple(heads),
        dep_labels=tuple("dep" for _ in tokens),
        relation=relation,
    )


def random_heads(rng: random.Random, n: int):
    """Uniformly attached random tree over ``n`` tokens in shuffled order."""
    order = list(range(n))
    rng.shuffle(order)
    heads = [0] * n
    heads[order[0]] = -1
    for k in range(1, n):
        heads[order[k]] = order[rng.randrange(k)]
    return heads


@pytest.fixture
def toy_instances():
    """Five bags with a separable trigger each."""
    rng = random.Random(3)
    triggers = {"NA": "met", "/r/a": "founded", "/r/b": "married"}
    out = []
    names = ["Alice", "Bob", "Carol", "Dave", "Erin", "Frank", "Gina", "Hal", "Ivy", "Jon"]
    for b, rel in enumerate(["/r/a", "/r/b", "NA", "/r/a", "/r/b"]):
        for j in range(2):
            h, t = names[2 * b], names[2 * b + 1]
            tokens = ["the", h, triggers[rel], t, rng.choice(["today", "again"])]
            out.append(make_instance(f"b{b}-{j}", rel, tokens, [1, 2, -1, 2, 2], (1, 2), (3, 4)))
    return out


@pytest.fixture
def toy_vocab(toy_instances):
    return RelationVocab.from_relations(i.relation for i in toy_instances)


def tiny_model(instances, vocab, variant="full", seed=0, dropout=0.0, **enc):
    tok = SubwordTokenizer(build_vocab(instances))
    torch.manual_seed(seed)
    encoder = Encoder(tiny_config(tok.base_size, **({"dropout": 0.0} | enc)))
    return RelationExtractor(encoder, tok, vocab, variant, dropout)


@pytest.fixture
def toy_model(toy_instances, toy_vocab):
    return tiny_model(toy_instances, toy_vocab)
