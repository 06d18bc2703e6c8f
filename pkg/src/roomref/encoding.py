"""Token and spatial encodings.

Sequence layout::

    [CLS] u_1 ... u_t [SEP] o1_w1 ... o1_wk [SEP] o2_w1 ... [SEP]

Object blocks appear in object_id order. M_U covers the utterance words,
M_O holds the first token position of each object block; multi-word labels
("coffee table") occupy several positions but contribute one M_O entry.

Geometry enters through sinusoidal features of the six normalized box
scalars, added to the token embeddings at M_O positions only. Word order
inside the utterance is carried by ordinary learned position embeddings
(see model), which can be disabled to make object blocks order-invariant.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, DataError, SequenceOverflowError
from .scenes import BoundingBox, Scene
from .utterances import UtteranceRecord

SPECIAL_TOKENS = ("[CLS]", "[SEP]", "[MASK]", "[PAD]", "[UNK]")
CLS_ID, SEP_ID, MASK_ID, PAD_ID, UNK_ID = range(5)
NUM_SPECIALS = len(SPECIAL_TOKENS)


@dataclass(frozen=True)
class Vocab:
    """Word-level vocabulary: specials at ids 0..4, words sorted after."""

    id_to_word: tuple[str, ...]

    def __post_init__(self):
        if self.id_to_word[:NUM_SPECIALS] != SPECIAL_TOKENS:
            raise ConfigError("vocab must start with the special tokens")
        object.__setattr__(
            self, "_word_to_id", {w: i for i, w in enumerate(self.id_to_word)}
        )
        if len(self._word_to_id) != len(self.id_to_word):
            raise ConfigError("vocab contains duplicate words")

    @property
    def size(self) -> int:
        return len(self.id_to_word)

    def lookup(self, word: str) -> int:
        return self._word_to_id.get(word, UNK_ID)

    def decode(self, ids) -> list[str]:
        return [self.id_to_word[i] for i in ids]

    def fingerprint(self) -> str:
        payload = json.dumps(list(self.id_to_word), separators=(",", ":"))
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def to_dict(self) -> dict:
        return {
            "specials": {w: i for i, w in enumerate(SPECIAL_TOKENS)},
            "words": {w: i + NUM_SPECIALS for i, w in enumerate(self.id_to_word[NUM_SPECIALS:])},
            "size": self.size,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "Vocab":
        words = sorted(payload["words"].items(), key=lambda kv: kv[1])
        ids = [kv[1] for kv in words]
        if ids != list(range(NUM_SPECIALS, NUM_SPECIALS + len(ids))):
            raise DataError("vocab word ids must be contiguous after the specials")
        vocab = cls(id_to_word=SPECIAL_TOKENS + tuple(kv[0] for kv in words))
        if vocab.size != payload["size"]:
            raise DataError(
                f"vocab size field {payload['size']} does not match {vocab.size} entries"
            )
        return vocab


def build_vocab(class_catalog, extra_words=()) -> Vocab:
    """Closed vocabulary over catalog label words plus template words."""
    words = set()
    for label in class_catalog:
        words.update(label.split())
    words.update(extra_words)
    overlap = words.intersection(SPECIAL_TOKENS)
    if overlap:
        raise ConfigError(f"words collide with special tokens: {sorted(overlap)}")
    return Vocab(id_to_word=SPECIAL_TOKENS + tuple(sorted(words)))


@dataclass(frozen=True)
class TokenSequence:
    """Encoded sample: token ids plus the index sets the heads read from."""

    ids: tuple[int, ...]
    utterance_positions: tuple[int, ...]  # M_U
    object_positions: tuple[int, ...]  # M_O, one entry per object
    object_order: tuple[int, ...]  # object ids aligned with object_positions
    boxes: tuple[BoundingBox, ...]  # aligned with object_positions
    noun_positions: tuple[int, ...]  # sequence coordinates, subset of M_U
    scene_id: str

    def __post_init__(self):
        if len(self.object_positions) != len(self.object_order) or len(
            self.object_positions
        ) != len(self.boxes):
            raise DataError("object positions, order, and boxes must align")

    @property
    def length(self) -> int:
        return len(self.ids)

    def with_ids(self, ids: tuple[int, ...]) -> "TokenSequence":
        if len(ids) != len(self.ids):
            raise DataError("token replacement must preserve sequence length")
        return replace(self, ids=ids)


def encode_sample(
    record: UtteranceRecord,
    scene: Scene,
    labels: dict[int, str],
    vocab: Vocab,
    max_len: int,
) -> TokenSequence:
    """Build the joint sequence from an utterance and per-object label text.

    ``labels`` maps object_id to the label string shown to the model (true
    class or classifier output); boxes come from the scene as presented,
    i.e. after any orientation handling by the caller.
    """
    missing = [obj.object_id for obj in scene.objects if obj.object_id not in labels]
    if missing:
        raise DataError(f"scene {scene.scene_id}: missing labels for objects {missing}")

    ids = [CLS_ID]
    ids.extend(vocab.lookup(w) for w in record.tokens)
    utterance_positions = tuple(range(1, 1 + len(record.tokens)))
    noun_positions = tuple(1 + p for p in record.noun_positions)
    ids.append(SEP_ID)

    object_positions = []
    object_order = []
    boxes = []
    for obj in sorted(scene.objects, key=lambda o: o.object_id):
        words = labels[obj.object_id].split()
        if not words:
            raise DataError(f"scene {scene.scene_id}: empty label for object {obj.object_id}")
        object_positions.append(len(ids))
        object_order.append(obj.object_id)
        boxes.append(obj.box)
        ids.extend(vocab.lookup(w) for w in words)
        ids.append(SEP_ID)

    if len(ids) > max_len:
        raise SequenceOverflowError(
            f"scene {scene.scene_id}: sequence length {len(ids)} exceeds max_len {max_len}"
        )
    return TokenSequence(
        ids=tuple(ids),
        utterance_positions=utterance_positions,
        object_positions=tuple(object_positions),
        object_order=tuple(object_order),
        boxes=tuple(boxes),
        noun_positions=noun_positions,
        scene_id=scene.scene_id,
    )


@dataclass(frozen=True)
class NormBounds:
    """Normalization ranges mapping box scalars into [0, 1]."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    z_min: float
    z_max: float
    extent_scale: float

    @classmethod
    def from_room(cls, room_extent: tuple[float, float]) -> "NormBounds":
        sx, sy = room_extent
        side = max(sx, sy)
        return cls(
            x_min=-sx / 2.0,
            x_max=sx / 2.0,
            y_min=-sy / 2.0,
            y_max=sy / 2.0,
            z_min=0.0,
            z_max=side,
            extent_scale=side,
        )

    @classmethod
    def from_scene(cls, scene: Scene) -> "NormBounds":
        return cls.from_room(scene.room_extent)

    def normalize(self, box: BoundingBox) -> tuple[float, ...]:
        def unit(v, lo, hi):
            if hi <= lo:
                raise ConfigError("normalization range must be non-degenerate")
            return (v - lo) / (hi - lo)

        values = (
            unit(box.center_x, self.x_min, self.x_max),
            unit(box.center_y, self.y_min, self.y_max),
            unit(box.center_z, self.z_min, self.z_max),
            box.extent_x / self.extent_scale,
            box.extent_y / self.extent_scale,
            box.extent_z / self.extent_scale,
        )
        for v in values:
            if not 0.0 <= v <= 1.0:
                raise DataError(
                    f"box scalar {v} falls outside the normalization bounds"
                )
        return values


def sinusoid_periods(half: int) -> np.ndarray:
    """Geometric period ladder from 1.0 down to 1e-4."""
    if half == 1:
        return np.ones(1)
    i = np.arange(half, dtype=np.float64)
    return np.power(10000.0, -i / (half - 1))


def spatial_encode(box: BoundingBox, bounds: NormBounds, d_model: int) -> np.ndarray:
    """Sinusoidal features of the six normalized box scalars.

    Each scalar owns a d_model/6 block of interleaved sin/cos pairs over a
    geometric period ladder; blocks concatenate in (cx, cy, cz, ex, ey, ez)
    order. Requires d_model % 12 == 0 so every block has whole pairs.
    """
    if d_model % 12 != 0:
        raise ConfigError(f"d_model must be divisible by 12, got {d_model}")
    block = d_model // 6
    half = block // 2
    periods = sinusoid_periods(half)
    out = np.empty(d_model, dtype=np.float64)
    for slot, value in enumerate(bounds.normalize(box)):
        angles = 2.0 * math.pi * value / periods
        base = slot * block
        out[base : base + block : 2] = np.sin(angles)
        out[base + 1 : base + block : 2] = np.cos(angles)
    return out


def spatial_encode_stack(boxes, bounds: NormBounds, d_model: int) -> np.ndarray:
    if not boxes:
        return np.zeros((0, d_model), dtype=np.float64)
    return np.stack([spatial_encode(box, bounds, d_model) for box in boxes])
