"""Sample preparation and padded batch assembly."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .encoding import (
    NormBounds,
    PAD_ID,
    TokenSequence,
    Vocab,
    encode_sample,
    spatial_encode_stack,
)
from .errors import DataError
from .model import Batch, ModelConfig
from .objectives import IGNORE_INDEX, MaskingPolicy, apply_noun_masking
from .scenes import Scene
from .utterances import UtteranceRecord


def class_index(catalog) -> dict[str, int]:
    return {label: i for i, label in enumerate(sorted(catalog))}


@dataclass
class PreparedSample:
    seq: TokenSequence
    spatial: np.ndarray  # (M, d_model)
    target_slot: int  # index into seq.object_order
    binary_labels: tuple[int, ...]  # per object slot
    text_class: int
    mlm_labels: Optional[tuple[int, ...]]  # full sequence length or None


def prepare_sample(
    record: UtteranceRecord,
    scene: Scene,
    labels: dict[int, str],
    vocab: Vocab,
    model_cfg: ModelConfig,
    class_to_id: dict[str, int],
    masking: Optional[MaskingPolicy] = None,
    mask_seed: int = 0,
) -> PreparedSample:
    """Encode one record against the scene as presented.

    ``labels`` is what the model reads; supervision (binary labels, text
    class) always comes from the true classes in the scene.
    """
    seq = encode_sample(record, scene, labels, vocab, model_cfg.max_len)
    mlm_labels = None
    if masking is not None:
        seq, mlm_labels = apply_noun_masking(seq, masking, vocab.size, mask_seed)

    bounds = NormBounds.from_scene(scene)
    spatial = spatial_encode_stack(list(seq.boxes), bounds, model_cfg.d_model)

    try:
        target_slot = seq.object_order.index(record.target_id)
    except ValueError:
        raise DataError(
            f"scene {scene.scene_id}: target object {record.target_id} not present"
        ) from None
    target_class = scene.object_by_id(record.target_id).class_label
    binary = tuple(
        int(scene.object_by_id(oid).class_label == target_class) for oid in seq.object_order
    )
    if target_class not in class_to_id:
        raise DataError(f"target class {target_class!r} missing from the class catalog")
    return PreparedSample(
        seq=seq,
        spatial=spatial,
        target_slot=target_slot,
        binary_labels=binary,
        text_class=class_to_id[target_class],
        mlm_labels=mlm_labels,
    )


def collate(samples: list[PreparedSample], dtype: torch.dtype = torch.float32):
    """Pad prepared samples into a Batch plus aligned supervision tensors.

    Returns (batch, target_index, binary_labels, text_class, mlm_labels);
    mlm_labels is None unless every sample carries masking labels.
    """
    if not samples:
        raise DataError("cannot collate an empty batch")
    b = len(samples)
    max_t = max(s.seq.length for s in samples)
    max_m = max(len(s.seq.object_positions) for s in samples)
    max_u = max(len(s.seq.utterance_positions) for s in samples)
    d = samples[0].spatial.shape[1] if samples[0].spatial.size else 0

    token_ids = torch.full((b, max_t), PAD_ID, dtype=torch.long)
    lengths = torch.zeros(b, dtype=torch.long)
    object_index = torch.zeros((b, max_m), dtype=torch.long)
    object_mask = torch.zeros((b, max_m), dtype=torch.bool)
    utterance_index = torch.zeros((b, max_u), dtype=torch.long)
    utterance_mask = torch.zeros((b, max_u), dtype=torch.bool)
    spatial = torch.zeros((b, max_m, d), dtype=dtype)
    target_index = torch.zeros(b, dtype=torch.long)
    binary_labels = torch.zeros((b, max_m), dtype=torch.long)
    text_class = torch.zeros(b, dtype=torch.long)
    with_mlm = all(s.mlm_labels is not None for s in samples)
    mlm_labels = (
        torch.full((b, max_u), IGNORE_INDEX, dtype=torch.long) if with_mlm else None
    )

    for i, s in enumerate(samples):
        t = s.seq.length
        m = len(s.seq.object_positions)
        u = len(s.seq.utterance_positions)
        token_ids[i, :t] = torch.tensor(s.seq.ids, dtype=torch.long)
        lengths[i] = t
        object_index[i, :m] = torch.tensor(s.seq.object_positions, dtype=torch.long)
        object_mask[i, :m] = True
        utterance_index[i, :u] = torch.tensor(s.seq.utterance_positions, dtype=torch.long)
        utterance_mask[i, :u] = True
        if m:
            spatial[i, :m] = torch.from_numpy(s.spatial).to(dtype)
        target_index[i] = s.target_slot
        binary_labels[i, :m] = torch.tensor(s.binary_labels, dtype=torch.long)
        text_class[i] = s.text_class
        if with_mlm:
            # restrict full-length labels to the utterance slots
            for j, pos in enumerate(s.seq.utterance_positions):
                mlm_labels[i, j] = s.mlm_labels[pos]

    batch = Batch(
        token_ids=token_ids,
        lengths=lengths,
        object_index=object_index,
        object_mask=object_mask,
        utterance_index=utterance_index,
        utterance_mask=utterance_mask,
        spatial=spatial,
    )
    return batch, target_index, binary_labels, text_class, mlm_labels
