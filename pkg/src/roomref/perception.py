"""Label-noise channel standing in for a pointcloud classifier.

Instead of running a learned classifier over points, each object's class is
passed through a symmetric corruption channel: with probability ``1 - p`` the
top-1 label flips to a uniformly random wrong class. The full catalog is
always ranked; when the top-1 flips, the true class sits at rank 2, so a
top-k filter with k >= 2 never loses the true class while k = 1 does. Scores
below the top choices carry small seeded jitter so rankings are total and
deterministic.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

from .errors import ConfigError, DataError
from .scenes import Scene
from .seeding import derive_seed

DEFAULT_TOP1_ACCURACY = 0.69


@dataclass(frozen=True)
class NoiseModel:
    """Perception simulator configuration.

    ``mode='gt'`` is the noiseless channel (forces top1_accuracy = 1.0);
    ``temperature`` controls how spread the softmax scores are in noisy mode.
    """

    top1_accuracy: float = DEFAULT_TOP1_ACCURACY
    temperature: float = 1.0
    mode: str = "noisy"

    @classmethod
    def gt(cls) -> "NoiseModel":
        return cls(top1_accuracy=1.0, mode="gt")

    @classmethod
    def noisy(cls, p: float = DEFAULT_TOP1_ACCURACY, temperature: float = 1.0) -> "NoiseModel":
        return cls(top1_accuracy=p, temperature=temperature, mode="noisy")

    def validate(self) -> None:
        if self.mode not in ("gt", "noisy"):
            raise ConfigError(f"noise mode must be 'gt' or 'noisy', got {self.mode!r}")
        if not 0.0 <= self.top1_accuracy <= 1.0:
            raise ConfigError(f"top1_accuracy must be in [0, 1], got {self.top1_accuracy}")
        if self.mode == "gt" and self.top1_accuracy != 1.0:
            raise ConfigError("mode='gt' forces top1_accuracy = 1.0")
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")


@dataclass(frozen=True)
class RankedLabels:
    """Full-catalog class ranking for one object, scores descending."""

    entries: tuple[tuple[str, float], ...]

    @property
    def top1(self) -> str:
        return self.entries[0][0]

    def top(self, k: int) -> tuple[str, ...]:
        return tuple(label for label, _ in self.entries[:k])

    def rank_of(self, label: str) -> int:
        for rank, (entry_label, _) in enumerate(self.entries):
            if entry_label == label:
                return rank
        raise DataError(f"label {label!r} missing from ranking")


def _softmax(values: list[float], temperature: float) -> list[float]:
    peak = max(values)
    exps = [math.exp((v - peak) / temperature) for v in values]
    total = sum(exps)
    return [e / total for e in exps]


def _rank_object(true_label: str, catalog: tuple[str, ...], model: NoiseModel, rng: random.Random) -> RankedLabels:
    if model.mode == "gt":
        entries = [(true_label, 1.0)]
        entries += sorted(
            ((label, 0.4 * rng.random()) for label in catalog if label != true_label),
            key=lambda item: (-item[1], item[0]),
        )
        return RankedLabels(entries=tuple(entries))

    top_choice = true_label
    if rng.random() >= model.top1_accuracy:
        wrong = [label for label in catalog if label != true_label]
        top_choice = rng.choice(wrong)
    # Logit layout keeps the chosen top-1 first and the true label no worse
    # than rank 2; jitter makes the tail order random but total.
    logits = []
    for label in catalog:
        z = 0.5 * rng.random()
        if label == top_choice:
            z += 2.0
        if label == true_label:
            z += 1.0
        logits.append(z)
    scores = _softmax(logits, model.temperature)
    entries = sorted(zip(catalog, scores), key=lambda item: (-item[1], item[0]))
    return RankedLabels(entries=tuple(entries))


def classify_objects(
    scene: Scene,
    model: NoiseModel,
    catalog: tuple[str, ...],
    seed: int,
) -> dict[int, RankedLabels]:
    """Rank the full catalog per object; deterministic in (scene, model, seed).

    Corruption decisions are independent across objects (each object draws
    from its own derived stream, so results do not depend on iteration
    order).
    """
    model.validate()
    if not scene.objects:
        raise DataError(f"scene {scene.scene_id}: cannot classify an empty scene")
    ranked: dict[int, RankedLabels] = {}
    for obj in scene.objects:
        if obj.class_label not in catalog:
            raise DataError(
                f"scene {scene.scene_id}: object class {obj.class_label!r} not in catalog"
            )
        rng = random.Random(derive_seed(seed, scene.scene_id, obj.object_id))
        ranked[obj.object_id] = _rank_object(obj.class_label, catalog, model, rng)
    return ranked


def simulate_predictions(
    scenes: list[Scene],
    model: NoiseModel,
    catalog: tuple[str, ...],
    seed: int,
) -> dict[str, dict[int, RankedLabels]]:
    """Run the channel once over a scene corpus (the classifier runs once
    per scene; train and eval share its output)."""
    return {scene.scene_id: classify_objects(scene, model, catalog, seed) for scene in scenes}
