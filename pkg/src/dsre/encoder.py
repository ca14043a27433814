"""Bidirectional transformer encoder with BERT-compatible parameter layout.

The encoder can be built from scratch (the tiny CPU profile) or loaded from a
pretrained bert-base-cased style bundle, in which case the embedding table is
extended with the task-specific tokens. Only the last ``k`` layers, the added
embedding rows and the downstream heads are trained.
"""

import hashlib
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, replace
from typing import Dict, Optional, Tuple

import torch
import torch.nn.functional as F
from torch import nn

from .structinput import SPECIAL_VOCAB, SpecialVocab, SubwordTokenizer

logger = logging.getLogger(__name__)


class NumericError(RuntimeError):
    def __init__(self, message, layer=None, step=None):
        self.layer = layer
        self.step = step
        super().__init__(message)


class BundleError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int = 2
    num_heads: int = 2
    hidden_dim: int = 32
    vocab_size: int = 1000
    max_positions: int = 64
    fine_tune_last_k: int = 2
    intermediate_dim: Optional[int] = None
    n_added: int = len(SPECIAL_VOCAB.added_tokens)
    dropout: float = 0.1
    layer_norm_eps: float = 1e-12

    def __post_init__(self):
        if self.hidden_dim % self.num_heads:
            raise ValueError(f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}")
        if not 0 <= self.fine_tune_last_k <= self.num_layers:
            raise ValueError(f"fine_tune_last_k must lie in [0, {self.num_layers}]")

    @property
    def ffn_dim(self) -> int:
        return self.intermediate_dim or 4 * self.hidden_dim

    @property
    def total_vocab(self) -> int:
        return self.vocab_size + self.n_added

    def to_json(self):
        return asdict(self)


def tiny_config(vocab_size: int, **overrides) -> EncoderConfig:
    base = EncoderConfig(num_layers=2, num_heads=2, hidden_dim=32, vocab_size=vocab_size,
                         max_positions=64, fine_tune_last_k=2)
    return replace(base, **overrides)


BERT_BASE = EncoderConfig(num_layers=12, num_heads=12, hidden_dim=768, vocab_size=28996,
                          max_positions=512, fine_tune_last_k=4, intermediate_dim=3072)


class EncoderLayer(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        d = cfg.hidden_dim
        self.num_heads = cfg.num_heads
        self.query = nn.Linear(d, d)
        self.key = nn.Linear(d, d)
        self.value = nn.Linear(d, d)
        self.attn_out = nn.Linear(d, d)
        self.attn_norm = nn.LayerNorm(d, eps=cfg.layer_norm_eps)
        self.ffn_in = nn.Linear(d, cfg.ffn_dim)
        self.ffn_out = nn.Linear(cfg.ffn_dim, d)
        self.ffn_norm = nn.LayerNorm(d, eps=cfg.layer_norm_eps)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x, key_mask):
        b, n, d = x.shape
        hd = d // self.num_heads

        def split(t):
            return t.view(b, n, self.num_heads, hd).transpose(1, 2)

        q, k, v = split(self.query(x)), split(self.key(x)), split(self.value(x))
        scores = q @ k.transpose(-1, -2) / math.sqrt(hd)
        scores = scores.masked_fill(~key_mask[:, None, None, :], torch.finfo(scores.dtype).min)
        attn = self.dropout(scores.softmax(-1))
        ctx = (attn @ v).transpose(1, 2).reshape(b, n, d)
        x = self.attn_norm(x + self.dropout(self.attn_out(ctx)))
        h = self.ffn_out(F.gelu(self.ffn_in(x)))
        return self.ffn_norm(x + self.dropout(h))


class Encoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.hidden_dim
        self.word_embeddings = nn.Embedding(cfg.vocab_size, d)
        self.added_embeddings = nn.Parameter(torch.zeros(cfg.n_added, d))
        self.position_embeddings = nn.Embedding(cfg.max_positions, d)
        self.emb_norm = nn.LayerNorm(d, eps=cfg.layer_norm_eps)
        self.emb_dropout = nn.Dropout(cfg.dropout)
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.num_layers))
        self.reset_parameters()

    def reset_parameters(self, std: float = 0.02):
        for name, p in self.named_parameters():
            if "norm" in name:
                nn.init.ones_(p) if name.endswith("weight") else nn.init.zeros_(p)
            elif name.endswith("bias"):
                nn.init.zeros_(p)
            else:
                nn.init.normal_(p, 0.0, std)

    @property
    def embedding_table(self):
        return torch.cat([self.word_embeddings.weight, self.added_embeddings], 0)

    def embed(self, token_ids):
        """Token plus position embedding, ``h_0``."""
        n = token_ids.shape[-1]
        if n > self.cfg.max_positions:
            raise ValueError(f"sequence length {n} exceeds max_positions {self.cfg.max_positions}")
        if token_ids.numel() and (token_ids.min() < 0 or token_ids.max() >= self.cfg.total_vocab):
            raise ValueError(f"token id outside [0, {self.cfg.total_vocab})")
        positions = torch.arange(n, device=token_ids.device)
        return F.embedding(token_ids, self.embedding_table) + self.position_embeddings(positions)

    def forward(self, token_ids, attention_mask=None):
        """Final-layer hidden states ``[batch, seq, hidden]``."""
        if token_ids.dim() == 1:
            token_ids = token_ids[None]
        if attention_mask is None:
            attention_mask = torch.ones_like(token_ids, dtype=torch.bool)
        attention_mask = attention_mask.bool()
        x = self.emb_dropout(self.emb_norm(self.embed(token_ids)))
        for i, layer in enumerate(self.layers):
            x = layer(x, attention_mask)
            if not torch.isfinite(x[attention_mask]).all():
                raise NumericError(f"non-finite activations after encoder layer {i + 1}", layer=i + 1)
        return x

    def trainable_mask(self, k: Optional[int] = None) -> Dict[str, bool]:
        """Which encoder parameters are trained when fine-tuning the last ``k`` layers.

        The added embedding rows are always trainable; with ``k`` equal to the
        number of layers everything is.
        """
        k = self.cfg.fine_tune_last_k if k is None else k
        if not 0 <= k <= self.cfg.num_layers:
            raise ValueError(f"k must lie in [0, {self.cfg.num_layers}]")
        first_trainable = self.cfg.num_layers - k
        mask = {}
        for name, _ in self.named_parameters():
            if name == "added_embeddings":
                mask[name] = True
            elif name.startswith("layers."):
                mask[name] = int(name.split(".")[1]) >= first_trainable
            else:
                mask[name] = k == self.cfg.num_layers
        return mask

    def apply_trainable_mask(self, k: Optional[int] = None) -> Dict[str, bool]:
        mask = self.trainable_mask(k)
        for name, p in self.named_parameters():
            p.requires_grad_(mask[name])
        return mask


# -- pretrained bundles ------------------------------------------------------------

_LAYER_MAP = {
    "attention.self.query": "query",
    "attention.self.key": "key",
    "attention.self.value": "value",
    "attention.output.dense": "attn_out",
    "attention.output.LayerNorm": "attn_norm",
    "intermediate.dense": "ffn_in",
    "output.dense": "ffn_out",
    "output.LayerNorm": "ffn_norm",
}


def _hf_name(name: str) -> str:
    """Our parameter name in the bert-base-cased layout (without the ``bert.`` prefix)."""
    if name.startswith("word_embeddings."):
        return "embeddings." + name
    if name.startswith("position_embeddings."):
        return "embeddings." + name
    if name.startswith("emb_norm."):
        return "embeddings.LayerNorm." + name.split(".", 1)[1]
    _, idx, sub, leaf = name.split(".")
    for hf, ours in _LAYER_MAP.items():
        if ours == sub:
            return f"encoder.layer.{idx}.{hf}.{leaf}"
    raise KeyError(name)


def _read_tensors(bundle_path) -> Dict[str, torch.Tensor]:
    st = os.path.join(bundle_path, "model.safetensors")
    pt = os.path.join(bundle_path, "pytorch_model.bin")
    if os.path.exists(st):
        from safetensors.torch import load_file

        raw = load_file(st)
    elif os.path.exists(pt):
        raw = torch.load(pt, map_location="cpu", weights_only=True)
    else:
        raise BundleError(f"{bundle_path}: no model.safetensors or pytorch_model.bin")
    out = {}
    for k, v in raw.items():
        k = k[len("bert."):] if k.startswith("bert.") else k
        k = k.replace("LayerNorm.gamma", "LayerNorm.weight").replace("LayerNorm.beta", "LayerNorm.bias")
        out[k] = v
    return out


def bundle_hash(bundle_path) -> str:
    h = hashlib.sha256()
    for name in sorted(os.listdir(bundle_path)):
        path = os.path.join(bundle_path, name)
        if os.path.isfile(path):
            h.update(name.encode())
            with open(path, "rb") as f:
                for chunk in iter(lambda: f.read(1 << 20), b""):
                    h.update(chunk)
    return h.hexdigest()


def load_pretrained(bundle_path, special: SpecialVocab = SPECIAL_VOCAB, fine_tune_last_k: int = 4,
                    seed: int = 0, dropout: float = 0.1) -> Tuple[Encoder, SubwordTokenizer, dict]:
    """Load a bert-base-cased style directory (``config.json``, weights, ``vocab.txt``).

    The added-token rows are drawn from a normal distribution with the
    pretrained table's mean and standard deviation.
    """
    with open(os.path.join(bundle_path, "config.json"), encoding="utf-8") as f:
        hf = json.load(f)
    tokenizer = SubwordTokenizer.from_file(os.path.join(bundle_path, "vocab.txt"), special.added_tokens,
                                           lowercase=hf.get("do_lower_case", False))
    if fine_tune_last_k > hf["num_hidden_layers"]:
        logger.warning("bundle has %d layers; fine-tuning all of them", hf["num_hidden_layers"])
        fine_tune_last_k = hf["num_hidden_layers"]
    cfg = EncoderConfig(
        num_layers=hf["num_hidden_layers"],
        num_heads=hf["num_attention_heads"],
        hidden_dim=hf["hidden_size"],
        vocab_size=tokenizer.base_size,
        max_positions=hf["max_position_embeddings"],
        fine_tune_last_k=fine_tune_last_k,
        intermediate_dim=hf.get("intermediate_size"),
        n_added=len(tokenizer.added_tokens),
        dropout=dropout,
        layer_norm_eps=hf.get("layer_norm_eps", 1e-12),
    )
    if hf.get("vocab_size", cfg.vocab_size) != cfg.vocab_size:
        raise BundleError(f"config vocab_size {hf['vocab_size']} != vocab.txt size {cfg.vocab_size}")
    tensors = _read_tensors(bundle_path)
    enc = Encoder(cfg)
    state = {}
    for name, p in enc.named_parameters():
        if name == "added_embeddings":
            continue
        key = _hf_name(name)
        if key not in tensors:
            raise BundleError(f"missing tensor {key}")
        t = tensors[key]
        if tuple(t.shape) != tuple(p.shape):
            raise BundleError(f"shape mismatch for {key}: bundle {tuple(t.shape)}, expected {tuple(p.shape)}")
        state[name] = t.to(p.dtype)
    tt = tensors.get("embeddings.token_type_embeddings.weight")
    if tt is not None:
        # single-segment inputs: fold segment 0 into the position table
        if tt.shape[-1] != cfg.hidden_dim:
            raise BundleError(f"shape mismatch for embeddings.token_type_embeddings.weight: {tuple(tt.shape)}")
        state["position_embeddings.weight"] = state["position_embeddings.weight"] + tt[0]
    table = state["word_embeddings.weight"]
    gen = torch.Generator().manual_seed(seed)
    added = torch.randn(cfg.n_added, cfg.hidden_dim, generator=gen) * table.std() + table.mean()
    state["added_embeddings"] = added
    enc.load_state_dict(state)
    info = {"bundle": os.path.abspath(bundle_path), "bundle_sha256": bundle_hash(bundle_path),
            "added_tokens": list(tokenizer.added_tokens), "init_seed": seed}
    return enc, tokenizer, info
