"""Selective attention over a bag of sentence vectors and the bag classifier."""

import torch
import torch.nn.functional as F
from torch import nn


def selective_attention(sentences, query):
    """Weights ``softmax(s_i . r)`` over the bag and the weighted sum ``B``.

    ``sentences`` is ``[n, dim]``; returns ``(B [dim], alpha [n])``.
    """
    if sentences.shape[0] == 0:
        raise ValueError("empty bag")
    alpha = (sentences @ query).softmax(0)
    return alpha @ sentences, alpha


class BagEncoder(nn.Module):
    def __init__(self, repr_dim: int, num_relations: int, dropout: float = 0.4):
        super().__init__()
        if not 0 <= dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        self.query = nn.Parameter(torch.empty(repr_dim).normal_(0.0, 0.02))
        self.classifier = nn.Linear(repr_dim, num_relations)
        self.dropout = nn.Dropout(dropout)

    def forward(self, bags):
        """``bags`` is a list of ``[n_i, dim]`` tensors; returns logits and per-bag weights."""
        pooled, weights = [], []
        for s in bags:
            b, a = selective_attention(s, self.query)
            pooled.append(b)
            weights.append(a)
        logits = self.logits(torch.stack(pooled))
        return logits, weights

    def logits(self, bag_vectors):
        return self.classifier(self.dropout(bag_vectors))

    def classify(self, bag_vectors):
        """Relation probabilities for bag vectors (dropout only in training mode)."""
        return self.logits(bag_vectors).softmax(-1)


def bag_loss(logits, gold, class_weights=None):
    """Class-weighted negative log-likelihood averaged over the batch size.

    Unlike ``F.cross_entropy`` with weights, the sum is divided by the number
    of bags rather than by the total weight.
    """
    logp = F.log_softmax(logits, -1).gather(-1, gold.view(-1, 1)).squeeze(-1)
    if class_weights is not None:
        logp = logp * class_weights.to(logp.dtype)[gold]
    return -logp.mean()
