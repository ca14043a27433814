"""Multi-instance training loop with warm-up plus cosine learning-rate decay."""

import json
import logging
import math
import random
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence

import torch

from .bagenc import bag_loss
from .corpus import Bag, Instance, class_weights
from .encoder import NumericError
from .model import RelationExtractor, bag_inputs

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 3
    lr: float = 2e-5
    betas: tuple = (0.9, 0.999)
    warmup_fraction: float = 0.001
    weight_decay: float = 0.001
    dropout: float = 0.4
    seed: int = 42
    bag_cap: int = 500
    fine_tune_last_k: Optional[int] = None
    deterministic: bool = True

    def __post_init__(self):
        self.betas = tuple(self.betas)
        for name in ("batch_size", "epochs", "lr", "bag_cap"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.warmup_fraction <= 1:
            raise ValueError("warmup_fraction must lie in [0, 1]")

    def to_json(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


def warmup_steps(total_steps: int, warmup_fraction: float) -> int:
    return math.ceil(warmup_fraction * total_steps)


def lr_at(step: int, total_steps: int, peak: float, warmup_fraction: float) -> float:
    """Learning rate for 1-based optimizer step ``step``.

    Linear ramp to ``peak`` over the warm-up steps, then half-cosine decay
    reaching zero at the last step.
    """
    warm = warmup_steps(total_steps, warmup_fraction)
    if step <= warm:
        return peak * step / warm
    if total_steps == warm:
        return peak
    progress = (step - warm) / (total_steps - warm)
    return peak * 0.5 * (1.0 + math.cos(math.pi * progress))


def seed_everything(seed: int, deterministic: bool = True):
    random.seed(seed)
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True)


@dataclass
class TrainResult:
    log: List[dict]
    steps: int
    class_weights: List[float]


def train(model: RelationExtractor, bags: Sequence[Bag], instances: Sequence[Instance], config: TrainConfig,
          train_heads: bool = True, log_path=None, progress=None) -> TrainResult:
    """Optimize ``model`` on train bags; only parameters left trainable by the mask move.

    Each entry of the returned log is ``{step, epoch, lr, loss}``. Raises
    :class:`NumericError` on a non-finite loss.
    """
    seed_everything(config.seed, config.deterministic)
    rng = random.Random(config.seed)
    weights = torch.tensor(class_weights(bags, model.vocab))
    model.apply_trainable_mask(config.fine_tune_last_k, train_heads=train_heads)
    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.AdamW(params, lr=config.lr, betas=config.betas,
                                  weight_decay=config.weight_decay) if params else None

    prepared = model.prepare_all(instances)
    per_epoch = math.ceil(len(bags) / config.batch_size)
    total = per_epoch * config.epochs
    labels = [bag.label for bag in bags]
    log, step = [], 0
    sink = open(log_path, "w", encoding="utf-8") if log_path else None
    model.train()
    try:
        for epoch in range(1, config.epochs + 1):
            order = list(range(len(bags)))
            rng.shuffle(order)
            for start in range(0, len(order), config.batch_size):
                step += 1
                idx = order[start:start + config.batch_size]
                batch = bag_inputs([bags[i] for i in idx], prepared, config.bag_cap, rng)
                gold = torch.tensor([labels[i] for i in idx])
                lr = lr_at(step, total, config.lr, config.warmup_fraction)
                logits, _ = model(batch)
                loss = bag_loss(logits, gold, weights)
                if not torch.isfinite(loss):
                    raise NumericError(f"non-finite loss at step {step}", step=step)
                if optimizer is not None:
                    for group in optimizer.param_groups:
                        group["lr"] = lr
                    optimizer.zero_grad()
                    loss.backward()
                    optimizer.step()
                entry = {"step": step, "epoch": epoch, "lr": lr, "loss": loss.item()}
                log.append(entry)
                if sink:
                    sink.write(json.dumps(entry) + "\n")
                if progress:
                    progress(entry, total)
    finally:
        if sink:
            sink.close()
    model.eval()
    return TrainResult(log, step, weights.tolist())
