"""The full relation extractor: encoder, sentence representation, bag encoder."""

import json
import logging
import os
import random
from typing import Dict, List, Optional, Sequence

import torch
from torch import nn

from .bagenc import BagEncoder
from .corpus import Bag, Instance, RelationVocab
from .encoder import Encoder, EncoderConfig
from .sentrep import VARIANTS, RelationHead, repr_dim, sentence_repr
from .structinput import StructuredInput, SubwordTokenizer, pad_batch, prepare_instance

logger = logging.getLogger(__name__)

WEIGHTS_FILE = "model.safetensors"
CONFIG_FILE = "model_config.json"


class CheckpointError(ValueError):
    pass


class RelationExtractor(nn.Module):
    def __init__(self, encoder: Encoder, tokenizer: SubwordTokenizer, vocab: RelationVocab,
                 variant: str = "full", dropout: float = 0.4, max_seq_length: int = 64):
        super().__init__()
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; expected one of {sorted(VARIANTS)}")
        if len(tokenizer) != encoder.cfg.total_vocab:
            raise CheckpointError(f"tokenizer has {len(tokenizer)} tokens, encoder expects {encoder.cfg.total_vocab}")
        self.encoder = encoder
        self.tokenizer = tokenizer
        self.vocab = vocab
        self.variant = variant
        self.path_mode, self.use_entity_types, self.repr_mode = VARIANTS[variant]
        self.max_seq_length = min(max_seq_length, encoder.cfg.max_positions)
        d = encoder.cfg.hidden_dim
        self.relation_head = RelationHead(d)
        self.bag_encoder = BagEncoder(repr_dim(self.repr_mode, d), len(vocab), dropout)

    @property
    def dropout_rate(self) -> float:
        return self.bag_encoder.dropout.p

    def prepare(self, instance: Instance) -> StructuredInput:
        return prepare_instance(instance, self.tokenizer, self.path_mode, self.use_entity_types,
                                self.max_seq_length)

    def prepare_all(self, instances: Sequence[Instance]) -> Dict[str, StructuredInput]:
        return {inst.id: self.prepare(inst) for inst in instances}

    def sentence_reprs(self, inputs: Sequence[StructuredInput]):
        ids, attn, head, tail = pad_batch(inputs, self.tokenizer.pad_id)
        states = self.encoder(ids, attn)
        return sentence_repr(states, head, tail, attn, self.relation_head, self.repr_mode), attn

    def forward(self, bags: Sequence[Sequence[StructuredInput]]):
        """Relation logits for each bag plus the selective-attention weights."""
        flat = [x for bag in bags for x in bag]
        rep, _ = self.sentence_reprs(flat)
        chunks = list(torch.split(rep.s, [len(b) for b in bags]))
        return self.bag_encoder(chunks)

    def heads(self):
        return [self.relation_head, self.bag_encoder]

    def apply_trainable_mask(self, k: Optional[int] = None, train_heads: bool = True) -> Dict[str, bool]:
        """Freeze everything but the last ``k`` encoder layers, added embeddings and heads."""
        enc_mask = self.encoder.apply_trainable_mask(k)
        mask = {f"encoder.{n}": v for n, v in enc_mask.items()}
        for prefix, module in (("relation_head", self.relation_head), ("bag_encoder", self.bag_encoder)):
            for n, p in module.named_parameters():
                p.requires_grad_(train_heads)
                mask[f"{prefix}.{n}"] = train_heads
        return mask

    @torch.no_grad()
    def predict_proba(self, bags: Sequence[Sequence[StructuredInput]], batch_size: int = 32):
        was_training = self.training
        self.eval()
        out = []
        for i in range(0, len(bags), batch_size):
            logits, _ = self(bags[i:i + batch_size])
            out.append(logits.softmax(-1))
        self.train(was_training)
        return torch.cat(out) if out else torch.zeros(0, len(self.vocab))

    def config_dict(self) -> dict:
        return {
            "encoder": self.encoder.cfg.to_json(),
            "variant": self.variant,
            "dropout": self.dropout_rate,
            "max_seq_length": self.max_seq_length,
            "relations": self.vocab.to_json(),
            "added_tokens": list(self.tokenizer.added_tokens),
            "lowercase": self.tokenizer.lowercase,
        }


def bag_inputs(bags: Sequence[Bag], prepared: Dict[str, StructuredInput], cap: Optional[int] = None,
               rng: Optional[random.Random] = None) -> List[List[StructuredInput]]:
    """Structured inputs per bag, uniformly sub-sampling bags larger than ``cap``."""
    out = []
    for bag in bags:
        ids = list(bag.instance_ids)
        if cap is not None and len(ids) > cap:
            ids = sorted((rng or random.Random(0)).sample(ids, cap), key=bag.instance_ids.index)
        out.append([prepared[i] for i in ids])
    return out


def save_checkpoint(model: RelationExtractor, directory) -> str:
    from safetensors.torch import save_file

    os.makedirs(directory, exist_ok=True)
    state = {k: v.detach().contiguous() for k, v in model.state_dict().items()}
    path = os.path.join(directory, WEIGHTS_FILE)
    save_file(state, path)
    with open(os.path.join(directory, CONFIG_FILE), "w", encoding="utf-8") as f:
        json.dump(model.config_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    base = model.tokenizer.vocab[:model.tokenizer.base_size]
    with open(os.path.join(directory, "vocab.txt"), "w", encoding="utf-8") as f:
        f.writelines(t + "\n" for t in base)
    return path


def load_checkpoint(directory) -> RelationExtractor:
    from safetensors.torch import load_file

    cfg_path = os.path.join(directory, CONFIG_FILE)
    if not os.path.exists(cfg_path):
        raise CheckpointError(f"{directory}: no {CONFIG_FILE}")
    with open(cfg_path, encoding="utf-8") as f:
        cfg = json.load(f)
    tokenizer = SubwordTokenizer.from_file(os.path.join(directory, "vocab.txt"), cfg["added_tokens"],
                                           cfg.get("lowercase", False))
    enc = Encoder(EncoderConfig(**cfg["encoder"]))
    model = RelationExtractor(enc, tokenizer, RelationVocab.from_json(cfg["relations"]), cfg["variant"],
                              cfg["dropout"], cfg["max_seq_length"])
    state = load_file(os.path.join(directory, WEIGHTS_FILE))
    try:
        model.load_state_dict(state)
    except RuntimeError as e:
        raise CheckpointError(f"checkpoint does not match its config: {e}") from None
    model.eval()
    return model


def build_tiny_model(instances: Sequence[Instance], vocab: RelationVocab, variant: str = "full",
                     seed: int = 0, dropout: float = 0.4, max_seq_length: int = 64,
                     **encoder_overrides) -> RelationExtractor:
    """Fresh tiny-profile model with a vocabulary built from ``instances``."""
    from .encoder import tiny_config
    from .structinput import build_vocab

    tokenizer = SubwordTokenizer(build_vocab(instances))
    torch.manual_seed(seed)
    enc = Encoder(tiny_config(tokenizer.base_size, **encoder_overrides))
    return RelationExtractor(enc, tokenizer, vocab, variant, dropout, max_seq_length)


def build_pretrained_model(bundle_path, vocab: RelationVocab, variant: str = "full", seed: int = 0,
                           fine_tune_last_k: int = 4, dropout: float = 0.4, max_seq_length: int = 64):
    """Model on top of a pretrained bundle; returns the model and bundle info for the manifest."""
    from .encoder import load_pretrained

    enc, tokenizer, info = load_pretrained(bundle_path, fine_tune_last_k=fine_tune_last_k, seed=seed)
    torch.manual_seed(seed)
    return RelationExtractor(enc, tokenizer, vocab, variant, dropout, max_seq_length), info
