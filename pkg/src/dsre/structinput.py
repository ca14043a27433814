"""Structured relation-extraction input and its sub-word encoding.

A sentence becomes::

    [CLS] <HEAD-TYPE> head words [H-SEP] <TAIL-TYPE> tail words [T-SEP] path words [SEP]

where the path is the sub-tree path between the entities (or the shortest
dependency path, or the whole sentence). Head and tail masks mark the
sub-words of entity occurrences inside the path segment.
"""

from collections import Counter
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import torch
from tokenizers import AddedToken, Tokenizer
from tokenizers.models import WordPiece
from tokenizers.normalizers import BertNormalizer
from tokenizers.pre_tokenizers import BertPreTokenizer

from .corpus import ENTITY_TYPES, Instance
from .depparse import entity_anchor, sdp, stp, validate_tree

CLS, SEP, PAD, UNK, MASK = "[CLS]", "[SEP]", "[PAD]", "[UNK]", "[MASK]"
H_SEP, T_SEP = "[H-SEP]", "[T-SEP]"
BASE_SPECIALS = (PAD, UNK, CLS, SEP, MASK)
MODES = ("stp", "sdp", "full")


def type_marker(type_tag: str) -> str:
    return f"<{type_tag}>"


@dataclass(frozen=True)
class SpecialVocab:
    """The tokens appended to a pretrained vocabulary: two delimiters plus one marker per entity type."""

    entity_types: Tuple[str, ...] = ENTITY_TYPES

    @property
    def added_tokens(self) -> Tuple[str, ...]:
        return (H_SEP, T_SEP) + tuple(type_marker(t) for t in self.entity_types)


SPECIAL_VOCAB = SpecialVocab()


class SequenceError(ValueError):
    pass


@dataclass(frozen=True)
class WordSequence:
    """Marker-annotated word sequence before sub-word tokenization.

    ``segments`` labels every word: ``special``, ``head``, ``tail`` (header
    entity words) or ``path``. ``head_marks``/``tail_marks`` flag path words
    that are occurrences of the respective entity.
    """

    words: Tuple[str, ...]
    segments: Tuple[str, ...]
    head_marks: Tuple[bool, ...]
    tail_marks: Tuple[bool, ...]
    path: Tuple[int, ...]


def instance_path(instance: Instance, mode: str = "stp") -> Tuple[int, ...]:
    """Token indices of the path selected by ``mode``."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if mode == "full":
        return tuple(range(len(instance.tokens)))
    cached = instance.stp if mode == "stp" else instance.sdp
    if cached is not None:
        return cached
    tree = validate_tree(instance.dep_heads)
    h = entity_anchor(tree, instance.head.span)
    t = entity_anchor(tree, instance.tail.span)
    return stp(tree, h, t) if mode == "stp" else sdp(tree, h, t)


def _occurrences(path_words, path, span, surface_words) -> List[bool]:
    """Path words inside the entity span, plus repeated runs of its surface."""
    marks = [span[0] <= i < span[1] for i in path]
    n = len(surface_words)
    for k in range(len(path_words) - n + 1):
        if list(path_words[k:k + n]) == surface_words:
            for j in range(k, k + n):
                marks[j] = True
    return marks


def build_sequence(instance: Instance, path: Optional[Sequence[int]] = None, mode: str = "stp",
                   use_entity_types: bool = True) -> WordSequence:
    if path is None:
        path = instance_path(instance, mode)
    path = tuple(path)
    if not path:
        raise SequenceError(f"{instance.id}: empty path")
    head_words = list(instance.tokens[slice(*instance.head.span)])
    tail_words = list(instance.tokens[slice(*instance.tail.span)])
    path_words = [instance.tokens[i] for i in path]

    words, segments = [CLS], ["special"]
    if use_entity_types:
        words.append(type_marker(instance.head.type_tag))
        segments.append("special")
    words += head_words
    segments += ["head"] * len(head_words)
    words.append(H_SEP)
    segments.append("special")
    if use_entity_types:
        words.append(type_marker(instance.tail.type_tag))
        segments.append("special")
    words += tail_words
    segments += ["tail"] * len(tail_words)
    words.append(T_SEP)
    segments.append("special")

    head_marks = _occurrences(path_words, path, instance.head.span, head_words)
    tail_marks = _occurrences(path_words, path, instance.tail.span, tail_words)
    in_head = [instance.head.span[0] <= i < instance.head.span[1] for i in path]
    in_tail = [instance.tail.span[0] <= i < instance.tail.span[1] for i in path]
    for k in range(len(path)):
        # a word claimed by both entities only through surface matching is dropped
        if head_marks[k] and tail_marks[k]:
            head_marks[k] = in_head[k]
            tail_marks[k] = in_tail[k]

    n_prefix = len(words)
    words += path_words
    segments += ["path"] * len(path_words)
    words.append(SEP)
    segments.append("special")
    pad = [False] * n_prefix
    return WordSequence(
        words=tuple(words),
        segments=tuple(segments),
        head_marks=tuple(pad + head_marks + [False]),
        tail_marks=tuple(pad + tail_marks + [False]),
        path=path,
    )


class SubwordTokenizer:
    """WordPiece tokenizer over a BERT-style vocabulary file, with atomic added tokens."""

    def __init__(self, vocab: Sequence[str], added_tokens: Sequence[str] = SPECIAL_VOCAB.added_tokens,
                 lowercase: bool = False):
        vocab = list(vocab)
        missing = [t for t in BASE_SPECIALS[:4] if t not in vocab]
        if missing:
            raise ValueError(f"vocabulary lacks {missing}")
        self.base_size = len(vocab)
        self.lowercase = lowercase
        self._tok = Tokenizer(WordPiece({t: i for i, t in enumerate(vocab)}, unk_token=UNK,
                                        max_input_chars_per_word=100))
        self._tok.normalizer = BertNormalizer(lowercase=lowercase, strip_accents=False if not lowercase else None)
        self._tok.pre_tokenizer = BertPreTokenizer()
        self._tok.add_special_tokens([AddedToken(t, normalized=False) for t in BASE_SPECIALS if t in vocab])
        fresh = [t for t in added_tokens if t not in vocab]
        if len(set(fresh)) != len(fresh):
            raise ValueError("duplicate added tokens")
        self._tok.add_special_tokens([AddedToken(t, normalized=False) for t in fresh])
        self.added_tokens = tuple(fresh)
        self.vocab = vocab + list(fresh)
        for k, t in enumerate(fresh):
            if self._tok.token_to_id(t) != self.base_size + k:
                raise ValueError(f"added token {t!r} got an unexpected id")
        self.cls_id = self.token_to_id(CLS)
        self.sep_id = self.token_to_id(SEP)
        self.pad_id = self.token_to_id(PAD)

    @classmethod
    def from_file(cls, path, added_tokens=SPECIAL_VOCAB.added_tokens, lowercase=False):
        with open(path, encoding="utf-8") as f:
            vocab = [line.rstrip("\n") for line in f]
        return cls(vocab, added_tokens, lowercase)

    def save_vocab(self, path):
        """Write the base vocabulary followed by the added tokens."""
        with open(path, "w", encoding="utf-8") as f:
            for t in self.vocab:
                f.write(t + "\n")

    def __len__(self):
        return len(self.vocab)

    def token_to_id(self, token: str) -> int:
        i = self._tok.token_to_id(token)
        if i is None:
            raise KeyError(token)
        return i

    def id_to_token(self, i: int) -> str:
        return self.vocab[i]

    def encode_words(self, words: Sequence[str]) -> List[List[int]]:
        """Sub-word ids for every word, grouped per word."""
        enc = self._tok.encode(list(words), is_pretokenized=True, add_special_tokens=False)
        groups: List[List[int]] = [[] for _ in words]
        for i, w in zip(enc.ids, enc.word_ids):
            groups[w].append(i)
        for k, g in enumerate(groups):
            if not g:
                # words that normalize to nothing still occupy one position
                g.append(self._tok.token_to_id(UNK))
        return groups


def build_vocab(instances: Sequence[Instance], min_count: int = 1) -> List[str]:
    """A small WordPiece vocabulary for the tiny profile.

    Whole words seen ``min_count`` times plus every character in both its
    word-initial and ``##`` continuation form, so unseen words still split
    into sub-words rather than collapsing to ``[UNK]``.
    """
    counts = Counter()
    chars = set()
    pretok = BertPreTokenizer()
    for inst in instances:
        for tok in inst.tokens:
            for piece, _ in pretok.pre_tokenize_str(tok):
                counts[piece] += 1
                chars.update(piece)
    vocab = list(BASE_SPECIALS)
    vocab += sorted(chars)
    vocab += sorted("##" + c for c in chars)
    seen = set(vocab)
    for word in sorted(w for w, n in counts.items() if n >= min_count):
        if word not in seen:
            vocab.append(word)
            seen.add(word)
    return vocab


@dataclass(frozen=True)
class StructuredInput:
    """Encoder-ready sub-word sequence (unpadded).

    ``head_fallback``/``tail_fallback`` are set when no occurrence of the
    entity survived in the path segment and the mask points at the header
    words instead.
    """

    token_ids: Tuple[int, ...]
    tokens: Tuple[str, ...]
    head_mask: Tuple[int, ...]
    tail_mask: Tuple[int, ...]
    stp_region: Tuple[int, int]
    head_fallback: bool = False
    tail_fallback: bool = False
    n_path_words: int = 0

    def __len__(self):
        return len(self.token_ids)

    @property
    def position_ids(self) -> Tuple[int, ...]:
        return tuple(range(len(self.token_ids)))


def tokenize(seq: WordSequence, tokenizer: SubwordTokenizer, max_seq_length: int = 64) -> StructuredInput:
    groups = tokenizer.encode_words(seq.words)
    for w, seg, g in zip(seq.words, seq.segments, groups):
        if seg == "special" and len(g) != 1:
            raise SequenceError(f"special token {w!r} is not atomic in this vocabulary")

    path_start = seq.segments.index("path") if "path" in seq.segments else len(seq.words) - 1
    prefix_len = sum(len(g) for g in groups[:path_start])
    if prefix_len + 1 > max_seq_length:
        raise SequenceError(f"entity header needs {prefix_len + 1} positions, limit is {max_seq_length}")

    path_words = list(range(path_start, len(seq.words) - 1))
    budget = max_seq_length - prefix_len - 1
    kept, used = [], 0
    for w in path_words:
        if used + len(groups[w]) > budget:
            break
        kept.append(w)
        used += len(groups[w])
    word_order = list(range(path_start)) + kept + [len(seq.words) - 1]

    ids, head, tail, segs = [], [], [], []
    for w in word_order:
        for i in groups[w]:
            ids.append(i)
            head.append(int(seq.head_marks[w]))
            tail.append(int(seq.tail_marks[w]))
            segs.append(seq.segments[w])
    region = (prefix_len, prefix_len + used)

    head_fallback = not any(head)
    tail_fallback = not any(tail)
    if head_fallback:
        head = [int(s == "head") for s in segs]
    if tail_fallback:
        tail = [int(s == "tail") for s in segs]
    return StructuredInput(
        token_ids=tuple(ids),
        tokens=tuple(tokenizer.id_to_token(i) for i in ids),
        head_mask=tuple(head),
        tail_mask=tuple(tail),
        stp_region=region,
        head_fallback=head_fallback,
        tail_fallback=tail_fallback,
        n_path_words=len(kept),
    )


def prepare_instance(instance: Instance, tokenizer: SubwordTokenizer, mode: str = "stp",
                     use_entity_types: bool = True, max_seq_length: int = 64) -> StructuredInput:
    seq = build_sequence(instance, mode=mode, use_entity_types=use_entity_types)
    return tokenize(seq, tokenizer, max_seq_length)


def pad_batch(inputs: Sequence[StructuredInput], pad_id: int):
    """Stack inputs into ``(token_ids, attention_mask, head_mask, tail_mask)`` tensors."""
    width = max(len(x) for x in inputs)
    n = len(inputs)
    ids = torch.full((n, width), pad_id, dtype=torch.long)
    attn = torch.zeros((n, width), dtype=torch.bool)
    head = torch.zeros((n, width))
    tail = torch.zeros((n, width))
    for r, x in enumerate(inputs):
        k = len(x)
        ids[r, :k] = torch.tensor(x.token_ids)
        attn[r, :k] = True
        head[r, :k] = torch.tensor(x.head_mask, dtype=torch.float)
        tail[r, :k] = torch.tensor(x.tail_mask, dtype=torch.float)
    return ids, attn, head, tail

