"""Held-out evaluation: ranked predictions, P-R curve, AUC, P@N and attention inspection."""

import csv
import logging
from collections import Counter, OrderedDict
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import torch

from .corpus import Bag, Instance, RelationVocab
from .model import RelationExtractor, bag_inputs

logger = logging.getLogger(__name__)


class Prediction(NamedTuple):
    pair_key: Tuple[str, str]
    relation: int
    score: float
    correct: bool


@dataclass
class PRCurve:
    recall: List[float]
    precision: List[float]
    auc: float
    total_positives: int

    @property
    def points(self):
        return list(zip(self.recall, self.precision))


def rank(predictions: Sequence[Prediction]) -> List[Prediction]:
    """Score descending; ties broken by pair key, then relation index."""
    return sorted(predictions, key=lambda p: (-p.score, p.pair_key, p.relation))


def count_positives(bags: Sequence[Bag], vocab: RelationVocab) -> int:
    """Non-NA gold relations over all test bags."""
    return sum(len(b.gold_labels - {vocab.na_index}) for b in bags)


def predict_all(bags: Sequence[Bag], model: RelationExtractor, instances: Sequence[Instance],
                batch_size: int = 32, bag_cap: Optional[int] = None) -> List[Prediction]:
    """One prediction per (bag, non-NA relation), scored by the bag's softmax output."""
    prepared = model.prepare_all(instances)
    probs = model.predict_proba(bag_inputs(bags, prepared, bag_cap), batch_size)
    na = model.vocab.na_index
    out = []
    for bag, p in zip(bags, probs.tolist()):
        for r, score in enumerate(p):
            if r != na:
                out.append(Prediction(bag.pair_key, r, score, r in bag.gold_labels))
    return out


def pr_curve(predictions: Sequence[Prediction], total_positives: Optional[int] = None) -> PRCurve:
    """Precision and recall at every rank, with step-wise area under the curve.

    ``total_positives`` defaults to the number of correct predictions.
    """
    ranked = rank(predictions)
    if total_positives is None:
        total_positives = sum(p.correct for p in ranked)
    if total_positives <= 0:
        raise ValueError("no positives to evaluate against")
    recall, precision = [], []
    hits = 0
    auc = 0.0
    prev_recall = 0.0
    for k, p in enumerate(ranked, 1):
        hits += p.correct
        r = hits / total_positives
        prec = hits / k
        auc += prec * (r - prev_recall)
        prev_recall = r
        recall.append(r)
        precision.append(prec)
    return PRCurve(recall, precision, auc, total_positives)


def precision_at(predictions: Sequence[Prediction], n: int) -> float:
    if not 0 < n <= len(predictions):
        raise ValueError(f"P@{n} needs at least {n} predictions, got {len(predictions)}")
    return sum(p.correct for p in rank(predictions)[:n]) / n


def top_n_distribution(predictions: Sequence[Prediction], n: int = 300,
                       vocab: Optional[RelationVocab] = None) -> "OrderedDict":
    """Predicted-relation counts among the top ``n``, most frequent first."""
    counts = Counter(p.relation for p in rank(predictions)[:n])
    items = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    if vocab is not None:
        items = [(vocab.label_of(r), c) for r, c in items]
    return OrderedDict(items)


def metrics(predictions, total_positives, ns=(100, 200, 300, 500)) -> Dict[str, float]:
    curve = pr_curve(predictions, total_positives)
    out = {"auc": curve.auc}
    for n in ns:
        out[f"p@{n}"] = precision_at(predictions, n) if n <= len(predictions) else None
    return out


def write_curve_csv(curve: PRCurve, path, stamp: Optional[str] = None):
    with open(path, "w", newline="", encoding="utf-8") as f:
        if stamp:
            f.write(f"# manifest {stamp}\n")
        w = csv.writer(f)
        w.writerow(["recall", "precision"])
        for r, p in curve.points:
            w.writerow([f"{r:.6f}", f"{p:.6f}"])


def read_curve_csv(path) -> Tuple[List[float], List[float]]:
    rec, prec = [], []
    with open(path, encoding="utf-8") as f:
        rows = [line for line in f if not line.startswith("#")]
    for row in csv.DictReader(rows):
        rec.append(float(row["recall"]))
        prec.append(float(row["precision"]))
    return rec, prec


def plot_curves(curves: Dict[str, Tuple[Sequence[float], Sequence[float]]], path, title="Precision-Recall"):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    for name, (rec, prec) in curves.items():
        ax.plot(rec, prec, label=name)
    ax.set_xlabel("Recall")
    ax.set_ylabel("Precision")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# -- attention inspection ------------------------------------------------------------

@dataclass
class AttentionTable:
    instance_id: str
    tokens: List[str]
    weights: List[float]
    relation: str
    score: float

    def argmax(self) -> int:
        return max(range(len(self.weights)), key=self.weights.__getitem__)

    def format(self) -> str:
        lines = [f"# {self.instance_id}: predicted {self.relation} ({self.score:.4f})"]
        width = max(len(t) for t in self.tokens)
        for t, w in zip(self.tokens, self.weights):
            lines.append(f"{t:<{width}}  {w:.4f}  {'#' * round(40 * w)}")
        return "\n".join(lines)


@torch.no_grad()
def inspect_attention(instance: Instance, model: RelationExtractor) -> AttentionTable:
    """Relation-attention weights over the structured input of one instance."""
    if model.repr_mode != "full":
        raise ValueError(f"variant {model.variant!r} has no relation attention")
    model.eval()
    x = model.prepare(instance)
    rep, _ = model.sentence_reprs([x])
    probs = model.bag_encoder.classify(rep.s)[0]
    best = int(probs.argmax())
    return AttentionTable(instance.id, list(x.tokens), rep.alpha[0].tolist(), model.vocab.label_of(best),
                          float(probs[best]))


def plot_attention(table: AttentionTable, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(max(4, 0.5 * len(table.tokens)), 1.6))
    ax.imshow([table.weights], cmap="Reds", aspect="auto", vmin=0)
    ax.set_xticks(range(len(table.tokens)))
    ax.set_xticklabels(table.tokens, rotation=60, ha="right", fontsize=8)
    ax.set_yticks([])
    ax.set_title(f"{table.instance_id}: {table.relation}", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
