"""Synthetic distantly-supervised corpus with planted relation patterns.

Every relation owns one trigger word. In a sentence expressing the relation
the trigger is the lowest common ancestor of the two entities, so it always
lies on both the sub-tree path and the shortest dependency path. Triggers of
other relations may appear as distractors attached off the path. A fraction
of train bags has its label replaced at random, mimicking the wrong-label
problem of distant supervision.
"""

import random
from dataclasses import dataclass
from typing import List, Tuple

from .corpus import NA_LABEL, EntityMention, Instance

TRIGGERS = ("founded", "married", "governs", "owns", "coached", "acquired", "designed", "visited",
            "sponsored", "captained", "invented", "mentored")
NEUTRAL = ("met", "saw", "and", "near", "with", "beside")
GOVERNORS = ("said", "reported", "noted", "stated", "claimed")
SUBJECTS = ("officials", "sources", "witnesses", "analysts", "reporters")
DETS = ("the", "some", "several")
PREPS = ("of", "in", "at", "for")
TAILS = ("yesterday", "today", "recently", "again")
ENTITY_TYPE_POOL = ("PERSON", "ORG", "GPE", "LOC", "NORP", "FAC")
SYLLABLES = ("ka", "vo", "ri", "mel", "tan", "dor", "zu", "fe", "lin", "quo", "sar", "bex", "nim", "ol",
             "pra", "gu", "ver", "thi", "mo", "cal")


@dataclass
class SyntheticConfig:
    relations: int = 5
    train_bags: int = 2000
    test_bags: int = 500
    noise: float = 0.2
    na_fraction: float = 0.4
    unexpressed: float = 0.0
    distractor_rate: float = 0.5
    max_bag_size: int = 4
    entities: int = 400
    seed: int = 13

    def __post_init__(self):
        if not 1 <= self.relations:
            raise ValueError("need at least one relation")
        if self.entities < 2 or self.entities * (self.entities - 1) < self.train_bags + self.test_bags:
            raise ValueError("entity pool too small for the requested number of bags")
        if not 0 <= self.noise < 1 or not 0 <= self.na_fraction < 1 or not 0 <= self.unexpressed < 1:
            raise ValueError("rates must lie in [0, 1)")


def relation_names(k: int) -> List[str]:
    return [f"/synthetic/rel{i}" for i in range(k)]


def trigger_words(k: int) -> List[str]:
    return [TRIGGERS[i] if i < len(TRIGGERS) else f"trig{i}" for i in range(k)]


class _Names:
    def __init__(self, rng):
        self.rng = rng
        self.used = set()

    def __call__(self):
        while True:
            n_tok = self.rng.choice((1, 1, 2))
            toks = tuple("".join(self.rng.choice(SYLLABLES) for _ in range(self.rng.randint(2, 3))).capitalize()
                         for _ in range(n_tok))
            if toks not in self.used:
                self.used.add(toks)
                return toks


def _sentence(rng, head: Tuple[str, ...], tail: Tuple[str, ...], link: str, distractor: str,
              head_type: str, tail_type: str, head_id: str, tail_id: str):
    """Build tokens and a dependency tree around ``link`` joining the entities."""
    nodes = []  # (word, parent node number or None, label)

    def add(word, parent, label):
        nodes.append([word, parent, label])
        return len(nodes) - 1

    det = add(rng.choice(DETS), None, "det")
    subj = add(rng.choice(SUBJECTS), None, "nsubj")
    gov = add(rng.choice(GOVERNORS), None, "root")
    nodes[det][1] = subj
    nodes[subj][1] = gov

    def entity(words, parent, label):
        first = len(nodes)
        for w in words:
            add(w, None, "compound")
        anchor = len(nodes) - 1
        for i in range(first, anchor):
            nodes[i][1] = anchor
        nodes[anchor][1] = parent
        nodes[anchor][2] = label
        return first, anchor + 1

    head_first = rng.random() < 0.7
    order_a, order_b = (head, tail) if head_first else (tail, head)
    # the first entity is added before the link node and attached to it afterwards
    a_span = entity(order_a, None, "nsubj")
    link_node = add(link, gov, "ccomp")
    nodes[a_span[1] - 1][1] = link_node
    if rng.random() < 0.4:
        prep = add(rng.choice(PREPS), link_node, "prep")
        b_span = entity(order_b, prep, "pobj")
    else:
        b_span = entity(order_b, link_node, "dobj")
    if distractor:
        add(distractor, gov, "advcl")
        add(rng.choice(DETS), len(nodes) - 1, "dep")
    if rng.random() < 0.5:
        add(rng.choice(TAILS), gov, "advmod")

    tokens = [w for w, _, _ in nodes]
    heads = [-1 if p is None else p for _, p, _ in nodes]
    labels = [lab for _, _, lab in nodes]
    h_span, t_span = (a_span, b_span) if head_first else (b_span, a_span)
    h = EntityMention(" ".join(head), h_span, head_type, head_id)
    t = EntityMention(" ".join(tail), t_span, tail_type, tail_id)
    return tokens, heads, labels, h, t


def generate(config: SyntheticConfig) -> Tuple[List[Instance], List[Instance]]:
    """Train and test instances; test labels are always clean."""
    rng = random.Random(config.seed)
    names = _Names(rng)
    rels = relation_names(config.relations)
    trig = trigger_words(config.relations)
    labels = [NA_LABEL] + rels
    # a shared entity pool keeps entity names uninformative about the relation
    pool = [(names(), rng.choice(ENTITY_TYPE_POOL), f"E{i:06d}") for i in range(config.entities)]
    used_pairs = set()

    def new_pair():
        while True:
            a, b = rng.sample(range(len(pool)), 2)
            if (a, b) not in used_pairs:
                used_pairs.add((a, b))
                return pool[a], pool[b]

    def make_split(split, n_bags, noise):
        out = []
        for b in range(n_bags):
            true = None if rng.random() < config.na_fraction else rng.randrange(config.relations)
            label = NA_LABEL if true is None else rels[true]
            if noise and rng.random() < noise:
                label = rng.choice([x for x in labels if x != label])
            (hw, ht, hid), (tw, tt, tid) = new_pair()
            size = rng.randint(1, config.max_bag_size)
            expressed = [true is not None and rng.random() >= config.unexpressed for _ in range(size)]
            if true is not None and not any(expressed):
                expressed[0] = True
            for j in range(size):
                link = trig[true] if expressed[j] else rng.choice(NEUTRAL)
                distractor = None
                if rng.random() < config.distractor_rate:
                    distractor = rng.choice([w for i, w in enumerate(trig) if i != true] or list(NEUTRAL))
                tokens, heads, dl, h, t = _sentence(rng, hw, tw, link, distractor, ht, tt, hid, tid)
                out.append(Instance(f"{split}-{b:05d}-{j}", tuple(tokens), h, t, tuple(heads), tuple(dl), label))
        return out

    train = make_split("train", config.train_bags, config.noise)
    test = make_split("test", config.test_bags, 0.0)
    return train, test
