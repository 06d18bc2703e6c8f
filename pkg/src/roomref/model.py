"""Transformer encoder over joint utterance + object-label sequences.

Pre-norm residual blocks with a final LayerNorm. Spatial encodings are
added to the token embeddings at object positions only, before the first
block, so geometry and language mix through ordinary self-attention.
Four linear heads read the contextual features:

    reference  Linear(d, 1)      at M_O   which object is referred to
    binary     Linear(d, 2)      at M_O   is this object the target class
    text       Linear(d, C)      at CLS   target class from language alone
    mlm        Linear(d, vocab)  at M_U   masked word recovery

Dropout is driven by an explicit generator so training batches are
reproducible; eval mode applies none.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import torch
from torch import nn

from .errors import ConfigError, DataError


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    n_classes: int
    d_model: int = 72
    n_layers: int = 4
    n_heads: int = 4
    ff_dim: int = 288
    dropout: float = 0.1
    max_len: int = 256
    use_sequence_positions: bool = True

    def validate(self) -> None:
        if self.d_model % 12 != 0:
            raise ConfigError(f"d_model must be divisible by 12, got {self.d_model}")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model {self.d_model} must divide evenly over {self.n_heads} heads"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        for name in ("vocab_size", "n_classes", "n_layers", "ff_dim", "max_len"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "n_classes": self.n_classes,
            "d_model": self.d_model,
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "ff_dim": self.ff_dim,
            "dropout": self.dropout,
            "max_len": self.max_len,
            "use_sequence_positions": self.use_sequence_positions,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ModelConfig":
        cfg = cls(**payload)
        cfg.validate()
        return cfg


@dataclass
class Batch:
    """Padded tensors for one forward pass.

    Index tensors hold sequence positions; masked-out slots point at
    position 0 and must stay excluded via the companion boolean masks
    (their spatial rows are zero, so the fused add is a no-op there).
    """

    token_ids: torch.Tensor  # (B, T) long
    lengths: torch.Tensor  # (B,) long
    object_index: torch.Tensor  # (B, M) long
    object_mask: torch.Tensor  # (B, M) bool
    utterance_index: torch.Tensor  # (B, U) long
    utterance_mask: torch.Tensor  # (B, U) bool
    spatial: torch.Tensor  # (B, M, d) float

    @property
    def size(self) -> int:
        return self.token_ids.shape[0]

    @property
    def seq_len(self) -> int:
        return self.token_ids.shape[1]


@dataclass
class ModelOutput:
    features: torch.Tensor  # (B, T, d)
    reference_scores: torch.Tensor  # (B, M), zeros at padded slots
    binary_logits: torch.Tensor  # (B, M, 2)
    text_logits: torch.Tensor  # (B, C)
    mlm_logits: torch.Tensor  # (B, U, vocab)
    object_mask: torch.Tensor  # (B, M) bool
    utterance_mask: torch.Tensor  # (B, U) bool
    attentions: Optional[list] = field(default=None)  # per layer (B, H, T, T)


def seeded_dropout(x: torch.Tensor, p: float, generator: torch.Generator) -> torch.Tensor:
    if p <= 0.0:
        return x
    keep = torch.rand(x.shape, generator=generator, dtype=x.dtype) >= p
    return x * keep.to(x.dtype) / (1.0 - p)


class SelfAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = d_model // n_heads
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)

    def forward(self, x, valid):
        b, t, d = x.shape

        def split(proj):
            return proj(x).view(b, t, self.n_heads, self.head_dim).transpose(1, 2)

        q, k, v = split(self.q_proj), split(self.k_proj), split(self.v_proj)
        scores = torch.matmul(q, k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        scores = scores.masked_fill(~valid[:, None, None, :], float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        ctx = torch.matmul(weights, v).transpose(1, 2).reshape(b, t, d)
        return self.out_proj(ctx), weights


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.attn = SelfAttention(cfg.d_model, cfg.n_heads)
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.ff_in = nn.Linear(cfg.d_model, cfg.ff_dim)
        self.ff_out = nn.Linear(cfg.ff_dim, cfg.d_model)
        self.dropout = cfg.dropout

    def forward(self, x, valid, generator=None):
        attn_out, weights = self.attn(self.norm1(x), valid)
        if generator is not None:
            attn_out = seeded_dropout(attn_out, self.dropout, generator)
        x = x + attn_out
        ff_out = self.ff_out(torch.relu(self.ff_in(self.norm2(x))))
        if generator is not None:
            ff_out = seeded_dropout(ff_out, self.dropout, generator)
        return x + ff_out, weights


class GroundingModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.token_embed = nn.Embedding(cfg.vocab_size, cfg.d_model)
        if cfg.use_sequence_positions:
            self.position_embed = nn.Embedding(cfg.max_len, cfg.d_model)
        else:
            self.position_embed = None
        # normalizes embeddings to unit scale BEFORE spatial fusion, so the
        # unit-amplitude sinusoids do not swamp the token identity
        self.embed_norm = nn.LayerNorm(cfg.d_model)
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.n_layers))
        self.final_norm = nn.LayerNorm(cfg.d_model)
        self.ref_head = nn.Linear(cfg.d_model, 1)
        self.binary_head = nn.Linear(cfg.d_model, 2)
        self.text_head = nn.Linear(cfg.d_model, cfg.n_classes)
        self.mlm_head = nn.Linear(cfg.d_model, cfg.vocab_size)

    def forward(
        self,
        batch: Batch,
        train_mode: bool = False,
        dropout_generator: Optional[torch.Generator] = None,
        return_attention: bool = False,
    ) -> ModelOutput:
        cfg = self.cfg
        if batch.seq_len > cfg.max_len:
            raise DataError(
                f"batch sequence length {batch.seq_len} exceeds max_len {cfg.max_len}"
            )
        gen = None
        if train_mode and cfg.dropout > 0.0:
            if dropout_generator is None:
                raise ConfigError("train_mode with dropout > 0 requires a generator")
            gen = dropout_generator

        x = self.token_embed(batch.token_ids)
        if self.position_embed is not None:
            positions = torch.arange(batch.seq_len, device=x.device)
            x = x + self.position_embed(positions)[None, :, :]
        x = self.embed_norm(x)

        # fuse geometry at object positions; padded slots carry zero rows
        b_idx = torch.arange(batch.size)[:, None].expand_as(batch.object_index)
        x = x.index_put(
            (b_idx.reshape(-1), batch.object_index.reshape(-1)),
            batch.spatial.reshape(-1, cfg.d_model).to(x.dtype),
            accumulate=True,
        )
        if gen is not None:
            x = seeded_dropout(x, cfg.dropout, gen)

        valid = torch.arange(batch.seq_len)[None, :] < batch.lengths[:, None]
        attentions = [] if return_attention else None
        for layer in self.layers:
            x, weights = layer(x, valid, gen)
            if return_attention:
                attentions.append(weights)
        x = self.final_norm(x)

        obj_feats = _gather_positions(x, batch.object_index)
        utt_feats = _gather_positions(x, batch.utterance_index)
        ref_scores = self.ref_head(obj_feats).squeeze(-1)
        ref_scores = ref_scores * batch.object_mask.to(ref_scores.dtype)
        return ModelOutput(
            features=x,
            reference_scores=ref_scores,
            binary_logits=self.binary_head(obj_feats),
            text_logits=self.text_head(x[:, 0]),
            mlm_logits=self.mlm_head(utt_feats),
            object_mask=batch.object_mask,
            utterance_mask=batch.utterance_mask,
            attentions=attentions,
        )


def _gather_positions(x: torch.Tensor, index: torch.Tensor) -> torch.Tensor:
    b_idx = torch.arange(x.shape[0])[:, None].expand_as(index)
    return x[b_idx, index]


def init_model(cfg: ModelConfig, seed: int, dtype: torch.dtype = torch.float32) -> GroundingModel:
    """Build a model with every parameter drawn from a seeded generator.

    Embeddings get N(0, 0.02); linear weights get the uniform fan-in/out
    rule; biases zero; LayerNorm at identity. Same (cfg, seed, dtype)
    yields bit-identical parameters regardless of global RNG state.
    """
    cfg.validate()
    model = GroundingModel(cfg).to(dtype)
    gen = torch.Generator().manual_seed(seed & 0x7FFFFFFFFFFFFFFF)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.endswith("embed.weight"):
                p.normal_(0.0, 0.02, generator=gen)
            elif name.endswith("weight") and p.dim() == 2:
                fan_out, fan_in = p.shape
                bound = math.sqrt(6.0 / (fan_in + fan_out))
                p.uniform_(-bound, bound, generator=gen)
            elif name.endswith("bias"):
                p.zero_()
            else:  # LayerNorm weight
                p.fill_(1.0)
    return model


def expected_parameter_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count for GroundingModel."""
    d, f, v, c = cfg.d_model, cfg.ff_dim, cfg.vocab_size, cfg.n_classes
    total = v * d  # token embeddings
    if cfg.use_sequence_positions:
        total += cfg.max_len * d
    total += 2 * d  # embedding LayerNorm
    per_layer = 4 * (d * d + d)  # q, k, v, out projections
    per_layer += 2 * 2 * d  # two LayerNorms
    per_layer += d * f + f + f * d + d  # feed-forward
    total += cfg.n_layers * per_layer
    total += 2 * d  # final LayerNorm
    total += (d + 1) * 1 + (d + 1) * 2 + (d + 1) * c + (d + 1) * v  # heads
    return total


def select_target(reference_scores) -> int:
    """Argmax with ties resolved toward the lowest index."""
    scores = [float(s) for s in reference_scores]
    if not scores:
        raise DataError("cannot select a target from zero candidates")
    best = 0
    for i, s in enumerate(scores):
        if s > scores[best]:
            best = i
    return best
