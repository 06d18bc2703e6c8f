"""Noun masking and the four-term training objective.

total = w_ref * l_ref + w_clf * l_clf + w_text * l_text + w_mask * l_mask

with defaults (1.0, 0.5, 0.5, 0.5). Terms toggle independently; all four
are on by default. The text head doubles as the inference-time class
filter, so shipped configs keep it trained; the loss-ablation grid is
where individual terms get switched off.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn.functional as F

from .encoding import MASK_ID, NUM_SPECIALS, TokenSequence
from .errors import ConfigError
from .model import ModelOutput

IGNORE_INDEX = -100


@dataclass(frozen=True)
class MaskingPolicy:
    """BERT-style corruption restricted to noun positions.

    Each eligible position is selected with probability select_p; selected
    positions become [MASK] / a random non-special word / the original
    word with probability mask_p / random_p / keep_p.
    """

    select_p: float = 0.15
    mask_p: float = 0.8
    random_p: float = 0.1
    keep_p: float = 0.1

    def validate(self) -> None:
        if not 0.0 <= self.select_p <= 1.0:
            raise ConfigError(f"select_p must be in [0, 1], got {self.select_p}")
        for name in ("mask_p", "random_p", "keep_p"):
            if getattr(self, name) < 0.0:
                raise ConfigError(f"{name} must be >= 0")
        if abs(self.mask_p + self.random_p + self.keep_p - 1.0) > 1e-9:
            raise ConfigError("mask_p + random_p + keep_p must sum to 1")


def apply_noun_masking(
    seq: TokenSequence,
    policy: MaskingPolicy,
    vocab_size: int,
    seed: int,
) -> tuple[TokenSequence, tuple[int, ...]]:
    """Corrupt noun tokens; returns (corrupted sequence, per-position labels).

    Labels carry the original token id at selected positions and
    IGNORE_INDEX elsewhere, aligned with the full sequence. Only noun
    positions inside the utterance span are eligible; object-block tokens
    never change.
    """
    policy.validate()
    if vocab_size <= NUM_SPECIALS:
        raise ConfigError("vocab has no non-special words to sample from")
    rng = random.Random(seed)
    ids = list(seq.ids)
    labels = [IGNORE_INDEX] * len(ids)
    eligible = set(seq.utterance_positions)
    for pos in seq.noun_positions:
        if pos not in eligible:
            continue
        if rng.random() >= policy.select_p:
            continue
        labels[pos] = ids[pos]
        roll = rng.random()
        if roll < policy.mask_p:
            ids[pos] = MASK_ID
        elif roll < policy.mask_p + policy.random_p:
            ids[pos] = rng.randrange(NUM_SPECIALS, vocab_size)
        # else keep the original token, label still set
    return seq.with_ids(tuple(ids)), tuple(labels)


@dataclass(frozen=True)
class LossWeights:
    w_ref: float = 1.0
    w_clf: float = 0.5
    w_text: float = 0.5
    w_mask: float = 0.5
    enable_ref: bool = True
    enable_clf: bool = True
    enable_text: bool = True
    enable_mask: bool = True

    def validate(self) -> None:
        for name in ("w_ref", "w_clf", "w_text", "w_mask"):
            if getattr(self, name) < 0.0:
                raise ConfigError(f"{name} must be >= 0")
        if not (self.enable_ref or self.enable_clf or self.enable_text or self.enable_mask):
            raise ConfigError("at least one loss term must be enabled")

    def enabled_terms(self) -> tuple[str, ...]:
        names = []
        for term in ("ref", "clf", "text", "mask"):
            if getattr(self, f"enable_{term}"):
                names.append(term)
        return tuple(names)

    def to_dict(self) -> dict:
        return {
            "w_ref": self.w_ref,
            "w_clf": self.w_clf,
            "w_text": self.w_text,
            "w_mask": self.w_mask,
            "enable_ref": self.enable_ref,
            "enable_clf": self.enable_clf,
            "enable_text": self.enable_text,
            "enable_mask": self.enable_mask,
        }

    @classmethod
    def from_terms(cls, terms, **weights) -> "LossWeights":
        terms = set(terms)
        unknown = terms - {"ref", "clf", "text", "mask"}
        if unknown:
            raise ConfigError(f"unknown loss terms: {sorted(unknown)}")
        return cls(
            enable_ref="ref" in terms,
            enable_clf="clf" in terms,
            enable_text="text" in terms,
            enable_mask="mask" in terms,
            **weights,
        )


@dataclass
class LossTargets:
    """Supervision for one batch; entries may be None for disabled terms.

    binary labels and the text class come from true object classes even
    when the model sees noisy label text.
    """

    target_index: Optional[torch.Tensor] = None  # (B,) long, object slot
    binary_labels: Optional[torch.Tensor] = None  # (B, M) long in {0, 1}
    text_class: Optional[torch.Tensor] = None  # (B,) long
    mlm_labels: Optional[torch.Tensor] = None  # (B, U) long, IGNORE_INDEX off


@dataclass
class LossBundle:
    l_ref: torch.Tensor
    l_clf: torch.Tensor
    l_text: torch.Tensor
    l_mask: torch.Tensor
    total: torch.Tensor

    def scalars(self) -> dict:
        return {
            "l_ref": float(self.l_ref.detach()),
            "l_clf": float(self.l_clf.detach()),
            "l_text": float(self.l_text.detach()),
            "l_mask": float(self.l_mask.detach()),
            "total": float(self.total.detach()),
        }


def combine_terms(values: dict, weights: LossWeights):
    """Weighted sum over enabled terms in fixed (ref, clf, text, mask) order."""
    total = None
    for term in ("ref", "clf", "text", "mask"):
        if not getattr(weights, f"enable_{term}"):
            continue
        piece = getattr(weights, f"w_{term}") * values[term]
        total = piece if total is None else total + piece
    return total


def compute_loss(out: ModelOutput, targets: LossTargets, weights: LossWeights) -> LossBundle:
    weights.validate()
    dtype = out.text_logits.dtype
    zero = torch.zeros((), dtype=dtype)
    values = {"ref": zero, "clf": zero, "text": zero, "mask": zero}

    if weights.enable_ref:
        if targets.target_index is None:
            raise ConfigError("ref loss enabled but target_index is missing")
        scores = out.reference_scores.masked_fill(~out.object_mask, float("-inf"))
        values["ref"] = F.cross_entropy(scores, targets.target_index)

    if weights.enable_clf:
        if targets.binary_labels is None:
            raise ConfigError("clf loss enabled but binary_labels is missing")
        b, m, _ = out.binary_logits.shape
        per_obj = F.cross_entropy(
            out.binary_logits.reshape(b * m, 2),
            targets.binary_labels.reshape(b * m).clamp(min=0),
            reduction="none",
        ).view(b, m)
        mask = out.object_mask.to(dtype)
        # per-sample mean over that sample's objects, then batch mean
        per_sample = (per_obj * mask).sum(dim=1) / mask.sum(dim=1)
        values["clf"] = per_sample.mean()

    if weights.enable_text:
        if targets.text_class is None:
            raise ConfigError("text loss enabled but text_class is missing")
        values["text"] = F.cross_entropy(out.text_logits, targets.text_class)

    if weights.enable_mask:
        if targets.mlm_labels is None:
            raise ConfigError("mask loss enabled but mlm_labels is missing")
        b, u, v = out.mlm_logits.shape
        flat_labels = targets.mlm_labels.reshape(b * u)
        selected = flat_labels != IGNORE_INDEX
        if bool(selected.any()):
            # global mean over selected positions across the batch
            values["mask"] = F.cross_entropy(
                out.mlm_logits.reshape(b * u, v)[selected], flat_labels[selected]
            )

    return LossBundle(
        l_ref=values["ref"],
        l_clf=values["clf"],
        l_text=values["text"],
        l_mask=values["mask"],
        total=combine_terms(values, weights),
    )
