"""Loading, validation and bagging of distantly-supervised RE corpora.

Records are line-delimited JSON objects, one sentence per line::

    {"id": "s1", "tokens": [...],
     "head": {"surface": "James", "start": 0, "end": 1, "type": "PERSON", "kb_id": "m.01"},
     "tail": {...}, "dep_heads": [...], "dep_labels": [...], "relation": "/people/person/children"}

``dep_heads`` holds 0-based parent indices with ``-1`` marking the root.
Prepared records may also carry ``stp`` and ``sdp`` index arrays.
"""

import json
import logging
from collections import Counter, OrderedDict
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, NamedTuple, Optional, Sequence, Tuple

from .depparse import TreeError, validate_tree

logger = logging.getLogger(__name__)

NA_LABEL = "NA"

ENTITY_TYPES = (
    "PERSON", "NORP", "FAC", "ORG", "GPE", "LOC", "PRODUCT", "EVENT", "WORK_OF_ART",
    "LAW", "LANGUAGE", "DATE", "TIME", "PERCENT", "MONEY", "QUANTITY", "ORDINAL", "CARDINAL",
)


class RecordError(NamedTuple):
    line: int
    record_id: Optional[str]
    kind: str
    message: str

    def __str__(self):
        rid = f" ({self.record_id})" if self.record_id else ""
        return f"line {self.line}{rid}: {self.kind}: {self.message}"


class SchemaError(ValueError):
    def __init__(self, kind, message):
        self.kind = kind
        super().__init__(message)


@dataclass(frozen=True)
class EntityMention:
    surface: str
    span: Tuple[int, int]
    type_tag: str
    kb_id: Optional[str] = None

    @property
    def key(self) -> str:
        return self.kb_id if self.kb_id else self.surface.lower()


@dataclass(frozen=True)
class Instance:
    id: str
    tokens: Tuple[str, ...]
    head: EntityMention
    tail: EntityMention
    dep_heads: Tuple[int, ...]
    dep_labels: Tuple[str, ...]
    relation: str
    stp: Optional[Tuple[int, ...]] = None
    sdp: Optional[Tuple[int, ...]] = None

    @property
    def pair_key(self) -> Tuple[str, str]:
        return (self.head.key, self.tail.key)


@dataclass(frozen=True)
class Bag:
    pair_key: Tuple[str, str]
    instance_ids: Tuple[str, ...]
    gold_labels: FrozenSet[int]
    split: str

    def __len__(self):
        return len(self.instance_ids)

    @property
    def label(self) -> int:
        """The single label of a train bag."""
        if len(self.gold_labels) != 1:
            raise ValueError(f"bag {self.pair_key} has {len(self.gold_labels)} labels")
        return next(iter(self.gold_labels))


class RelationVocab:
    """Bijection between relation labels and indices with a distinguished NA."""

    def __init__(self, labels: Sequence[str], na_label: str = NA_LABEL):
        labels = list(labels)
        if labels.count(na_label) != 1:
            raise ValueError(f"NA label {na_label!r} must occur exactly once")
        if len(set(labels)) != len(labels):
            raise ValueError("duplicate relation labels")
        self.labels = labels
        self.na_label = na_label
        self.index = {label: i for i, label in enumerate(labels)}
        self.na_index = self.index[na_label]

    @classmethod
    def from_relations(cls, relations: Iterable[str], na_label: str = NA_LABEL):
        """NA first, then the remaining labels sorted."""
        others = sorted(set(relations) - {na_label})
        return cls([na_label] + others, na_label)

    def __len__(self):
        return len(self.labels)

    def __contains__(self, label):
        return label in self.index

    def __eq__(self, other):
        return isinstance(other, RelationVocab) and self.labels == other.labels and self.na_label == other.na_label

    def label_of(self, i: int) -> str:
        return self.labels[i]

    def to_json(self):
        return {"labels": self.labels, "na_label": self.na_label}

    @classmethod
    def from_json(cls, obj):
        return cls(obj["labels"], obj.get("na_label", NA_LABEL))


class LoadResult(NamedTuple):
    instances: List[Instance]
    vocab: RelationVocab
    errors: List[RecordError]


def _mention(obj, n_tokens: int, which: str, type_vocab) -> EntityMention:
    if not isinstance(obj, dict):
        raise SchemaError("schema", f"{which} must be an object")
    for key in ("surface", "start", "end", "type"):
        if key not in obj:
            raise SchemaError("schema", f"{which}.{key} missing")
    start, end = obj["start"], obj["end"]
    if not (isinstance(start, int) and isinstance(end, int)):
        raise SchemaError("schema", f"{which} span must be integers")
    if not 0 <= start < end <= n_tokens:
        raise SchemaError("span", f"{which} span [{start}, {end}) invalid for {n_tokens} tokens")
    if obj["type"] not in type_vocab:
        raise SchemaError("entity_type", f"{which} type {obj['type']!r} not in type vocabulary")
    kb_id = obj.get("kb_id")
    return EntityMention(str(obj["surface"]), (start, end), obj["type"], None if kb_id in (None, "") else str(kb_id))


def _index_array(obj, name, n_tokens):
    value = obj.get(name)
    if value is None:
        return None
    if not isinstance(value, list) or not all(isinstance(i, int) for i in value):
        raise SchemaError("schema", f"{name} must be an integer array")
    if list(value) != sorted(set(value)) or any(not 0 <= i < n_tokens for i in value):
        raise SchemaError("schema", f"{name} must be strictly increasing token indices")
    return tuple(value)


def parse_record(obj, type_vocab=ENTITY_TYPES) -> Instance:
    """Validate one decoded record and build an :class:`Instance`."""
    if not isinstance(obj, dict):
        raise SchemaError("schema", "record must be an object")
    for key in ("id", "tokens", "head", "tail", "dep_heads", "relation"):
        if key not in obj:
            raise SchemaError("schema", f"field {key!r} missing")
    tokens = obj["tokens"]
    if not isinstance(tokens, list) or not tokens or not all(isinstance(t, str) for t in tokens):
        raise SchemaError("schema", "tokens must be a non-empty string array")
    n = len(tokens)
    head = _mention(obj["head"], n, "head", type_vocab)
    tail = _mention(obj["tail"], n, "tail", type_vocab)
    if head.span[0] < tail.span[1] and tail.span[0] < head.span[1]:
        raise SchemaError("span", "head and tail spans overlap")
    dep_heads = obj["dep_heads"]
    if not isinstance(dep_heads, list) or len(dep_heads) != n:
        raise SchemaError("dependency", f"dep_heads must have {n} entries")
    dep_labels = obj.get("dep_labels") or [""] * n
    if len(dep_labels) != n:
        raise SchemaError("dependency", f"dep_labels must have {n} entries")
    try:
        validate_tree(dep_heads, dep_labels)
    except TreeError as e:
        raise SchemaError("dependency", str(e)) from None
    if not isinstance(obj["relation"], str) or not obj["relation"]:
        raise SchemaError("schema", "relation must be a non-empty string")
    return Instance(
        id=str(obj["id"]),
        tokens=tuple(tokens),
        head=head,
        tail=tail,
        dep_heads=tuple(dep_heads),
        dep_labels=tuple(str(l) for l in dep_labels),
        relation=obj["relation"],
        stp=_index_array(obj, "stp", n),
        sdp=_index_array(obj, "sdp", n),
    )


def iter_records(path):
    """Yield ``(line_no, decoded object or RecordError)`` for non-blank lines."""
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                yield line_no, json.loads(line)
            except json.JSONDecodeError as e:
                yield line_no, RecordError(line_no, None, "json", str(e))


def load_dataset(path, split: str, vocab: Optional[RelationVocab] = None,
                 type_vocab=ENTITY_TYPES) -> LoadResult:
    """Read a record file; invalid records are collected, not fatal.

    With ``vocab`` given (e.g. the train vocabulary when loading test data),
    records with unknown relations are rejected. Otherwise a vocabulary is
    built from the relations seen.
    """
    if split not in ("train", "test"):
        raise ValueError(f"split must be 'train' or 'test', not {split!r}")
    instances, errors, seen = [], [], set()
    for line_no, obj in iter_records(path):
        if isinstance(obj, RecordError):
            errors.append(obj)
            continue
        rid = obj.get("id") if isinstance(obj, dict) else None
        try:
            inst = parse_record(obj, type_vocab)
            if vocab is not None and inst.relation not in vocab:
                raise SchemaError("relation", f"unknown relation {inst.relation!r}")
            if inst.id in seen:
                raise SchemaError("schema", f"duplicate id {inst.id!r}")
        except SchemaError as e:
            errors.append(RecordError(line_no, None if rid is None else str(rid), e.kind, str(e)))
            continue
        seen.add(inst.id)
        instances.append(inst)
    if vocab is None:
        vocab = RelationVocab.from_relations(inst.relation for inst in instances)
    if errors:
        logger.warning("%s: %d record(s) rejected, %d loaded", path, len(errors), len(instances))
    return LoadResult(instances, vocab, errors)


def instance_to_record(inst: Instance) -> "OrderedDict[str, object]":
    def mention(m):
        d = OrderedDict(surface=m.surface, start=m.span[0], end=m.span[1], type=m.type_tag)
        if m.kb_id is not None:
            d["kb_id"] = m.kb_id
        return d

    rec = OrderedDict()
    rec["id"] = inst.id
    rec["tokens"] = list(inst.tokens)
    rec["head"] = mention(inst.head)
    rec["tail"] = mention(inst.tail)
    rec["dep_heads"] = list(inst.dep_heads)
    rec["dep_labels"] = list(inst.dep_labels)
    rec["relation"] = inst.relation
    if inst.stp is not None:
        rec["stp"] = list(inst.stp)
    if inst.sdp is not None:
        rec["sdp"] = list(inst.sdp)
    return rec


def dumps_record(inst: Instance) -> str:
    return json.dumps(instance_to_record(inst), ensure_ascii=False)


def write_dataset(path, instances: Iterable[Instance]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as f:
        for inst in instances:
            f.write(dumps_record(inst))
            f.write("\n")
            n += 1
    return n


def group_into_bags(instances: Sequence[Instance], split: str, vocab: RelationVocab) -> List[Bag]:
    """Group instances into bags.

    Train bags are keyed by (entity pair, relation) and carry one label; test
    bags are keyed by entity pair and carry the union of their labels.
    Bags come out in order of first appearance.
    """
    groups: "OrderedDict[object, List[Instance]]" = OrderedDict()
    for inst in instances:
        key = (inst.pair_key, inst.relation) if split == "train" else inst.pair_key
        groups.setdefault(key, []).append(inst)
    bags = []
    for key, members in groups.items():
        pair = key[0] if split == "train" else key
        labels = frozenset(vocab.index[m.relation] for m in members)
        bags.append(Bag(pair, tuple(m.id for m in members), labels, split))
    return bags


def class_weights(bags: Sequence[Bag], vocab: RelationVocab) -> List[float]:
    """Inverse-frequency class weights over train bags, normalized to mean 1.

    Relations without any bag get weight 1.
    """
    counts = Counter(bag.label for bag in bags)
    weights = [1.0] * len(vocab)
    if not counts:
        return weights
    total = sum(counts.values())
    k = len(counts)
    raw = {c: (total / k) / n for c, n in counts.items()}
    mean = sum(raw.values()) / k
    for c, w in raw.items():
        weights[c] = w / mean
    return weights


def dataset_stats(instances: Sequence[Instance], vocab: RelationVocab) -> Dict[str, int]:
    """Sentence, entity-pair and non-NA relation-mention counts."""
    pairs = {inst.pair_key for inst in instances}
    mentions = {(inst.pair_key, inst.relation) for inst in instances if inst.relation != vocab.na_label}
    return {"sentences": len(instances), "entity_pairs": len(pairs), "relation_mentions": len(mentions)}


# -- conversion from the common NYT-10 json distribution ---------------------------

def _char_span_to_tokens(tokens, pos):
    offsets, at = [], 0
    for tok in tokens:
        offsets.append((at, at + len(tok)))
        at += len(tok) + 1
    start, end = pos
    covered = [i for i, (a, b) in enumerate(offsets) if a < end and start < b]
    if not covered:
        raise SchemaError("span", f"character span {pos} matches no token")
    return covered[0], covered[-1] + 1


def convert_nyt10_record(raw) -> dict:
    """Map one record of the widely circulated NYT-10 json layout to ours.

    Accepts ``text`` (space-tokenized) or ``token``, entities as
    ``{"name", "id", "pos", "type"}`` with character (``text``) or token
    (``token``) offsets, and a dependency annotation under ``dep_heads``
    (0-based, root -1) or ``stanford_head`` (1-based, root 0).
    """
    if "tokens" in raw and "dep_heads" in raw:
        return raw
    if "token" in raw:
        tokens, char_pos = list(raw["token"]), False
    elif "text" in raw:
        tokens, char_pos = raw["text"].split(), True
    else:
        raise SchemaError("schema", "record has neither 'text' nor 'token'")

    def mention(m, which):
        if "pos" not in m:
            raise SchemaError("schema", f"{which}.pos missing")
        if char_pos:
            start, end = _char_span_to_tokens(tokens, m["pos"])
        else:
            start, end = m["pos"]
        if "type" not in m:
            raise SchemaError("entity_type", f"{which}.type missing; entity types must be annotated")
        out = {"surface": m.get("name", " ".join(tokens[start:end])), "start": start, "end": end, "type": m["type"]}
        if m.get("id"):
            out["kb_id"] = m["id"]
        return out

    if "dep_heads" in raw:
        heads = list(raw["dep_heads"])
        labels = raw.get("dep_labels")
    elif "stanford_head" in raw:
        heads = [h - 1 for h in raw["stanford_head"]]
        labels = raw.get("stanford_deprel")
    else:
        raise SchemaError("dependency", "no dependency annotation")
    rec = OrderedDict()
    rec["id"] = str(raw.get("id", ""))
    rec["tokens"] = tokens
    rec["head"] = mention(raw["h"], "head")
    rec["tail"] = mention(raw["t"], "tail")
    rec["dep_heads"] = heads
    rec["dep_labels"] = list(labels) if labels is not None else [""] * len(tokens)
    rec["relation"] = raw.get("relation", NA_LABEL)
    return rec
