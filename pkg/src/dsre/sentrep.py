"""Sentence representation from final-layer token states.

Entity vectors are mask-weighted sums of token states. Their difference,
passed through a linear map and tanh, gives a relation embedding ``l``; a
softmax of ``state . l`` over the real tokens pools the sentence, and the
representation is ``[l ; pooled]``.
"""

from dataclasses import dataclass

import torch
from torch import nn

REPR_MODES = ("full", "no_rel_emb", "no_rel_attn")

# variant name -> (path mode, entity types in input, representation mode)
VARIANTS = {
    "full": ("stp", True, "full"),
    "no_et": ("stp", False, "full"),
    "no_rel_emb": ("stp", True, "no_rel_emb"),
    "no_rel_attn": ("stp", True, "no_rel_attn"),
    "sdp": ("sdp", True, "full"),
}


def repr_dim(repr_mode: str, hidden_dim: int) -> int:
    if repr_mode not in REPR_MODES:
        raise ValueError(f"unknown representation mode {repr_mode!r}")
    return hidden_dim if repr_mode == "no_rel_emb" else 2 * hidden_dim


@dataclass
class SentenceRepr:
    s: torch.Tensor
    l: torch.Tensor = None
    h_prime: torch.Tensor = None
    alpha: torch.Tensor = None


class RelationHead(nn.Linear):
    """``w_l`` and ``b_l``: a square map on entity-vector differences."""

    def __init__(self, hidden_dim: int):
        super().__init__(hidden_dim, hidden_dim)


def entity_vectors(states, head_mask, tail_mask):
    """Sum the token states selected by each mask. Shapes ``[..., T, d]`` and ``[..., T]``."""
    if (head_mask.sum(-1) == 0).any() or (tail_mask.sum(-1) == 0).any():
        raise ValueError("entity mask selects no token")
    head_mask = head_mask.to(states.dtype)
    tail_mask = tail_mask.to(states.dtype)
    h = (head_mask.unsqueeze(-1) * states).sum(-2)
    t = (tail_mask.unsqueeze(-1) * states).sum(-2)
    return h, t


def relation_embedding(h, t, head: nn.Linear):
    return torch.tanh(head(t - h))


def relation_attention(states, l, padding_mask=None):
    """Token-level softmax of ``states . l``; padded positions get exactly zero."""
    logits = (states * l.unsqueeze(-2)).sum(-1)
    if padding_mask is None:
        return logits.softmax(-1)
    padding_mask = padding_mask.bool()
    logits = logits.masked_fill(~padding_mask, float("-inf"))
    alpha = logits.softmax(-1)
    return alpha.masked_fill(~padding_mask, 0.0)


def weighted_hidden(states, alpha):
    return (alpha.unsqueeze(-1) * states).sum(-2)


def sentence_repr(states, head_mask, tail_mask, padding_mask, head: nn.Linear,
                  repr_mode: str = "full") -> SentenceRepr:
    """Batched sentence representation; position 0 holds ``[CLS]``."""
    if repr_mode == "sdp_input":
        repr_mode = "full"
    if repr_mode not in REPR_MODES:
        raise ValueError(f"unknown representation mode {repr_mode!r}")
    cls = states[..., 0, :]
    if repr_mode == "no_rel_emb":
        return SentenceRepr(s=cls)
    h, t = entity_vectors(states, head_mask, tail_mask)
    l = relation_embedding(h, t, head)
    if repr_mode == "no_rel_attn":
        return SentenceRepr(s=torch.cat([l, cls], -1), l=l, h_prime=cls)
    alpha = relation_attention(states, l, padding_mask)
    h_prime = weighted_hidden(states, alpha)
    return SentenceRepr(s=torch.cat([l, h_prime], -1), l=l, h_prime=h_prime, alpha=alpha)
