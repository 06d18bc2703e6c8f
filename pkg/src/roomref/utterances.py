"""Templated referring utterances with oracle-defined targets.

Every record is guaranteed unambiguous: the oracle must resolve the relation
with a margin above the tie tolerance, otherwise the draw is rejected and
retried. Noun positions (class words, landmark words) come straight from
template metadata, so no POS tagging is involved anywhere.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .errors import AmbiguityError, DataError, DensityError, GenerationSkip, ResolutionError
from .oracle import (
    VIEW_DEPENDENT_KINDS,
    VIEW_INDEPENDENT_KINDS,
    RelationSpec,
    resolve_reference,
    valid_orientations,
)
from .scenes import GenConfig, Scene, generate_scene
from .seeding import derive_seed

VIEW_INDEPENDENT = "vi"
VD_EXPLICIT = "vd_explicit"
VD_IMPLICIT = "vd_implicit"

# {C} = target class, {A}/{B} = anchor classes, {L} = faced landmark.
TEMPLATES = {
    "closest": ("the", "{C}", "closest", "to", "the", "{A}"),
    "farthest": ("the", "{C}", "farthest", "from", "the", "{A}"),
    "between": ("the", "{C}", "between", "the", "{A}", "and", "the", "{B}"),
    "left": ("the", "{C}", "to", "the", "left", "of", "the", "{A}"),
    "right": ("the", "{C}", "to", "the", "right", "of", "the", "{A}"),
    "front": ("the", "{C}", "in", "front", "of", "the", "{A}"),
    "behind": ("the", "{C}", "behind", "the", "{A}"),
}

EXPLICIT_PREFIX = ("facing", "the", "{L}")


def template_lexicon() -> tuple[str, ...]:
    """All literal words the templates can emit, sorted."""
    words = set(EXPLICIT_PREFIX)
    for template in TEMPLATES.values():
        words.update(template)
    return tuple(sorted(w for w in words if not w.startswith("{")))


@dataclass(frozen=True)
class UtteranceRecord:
    tokens: tuple[str, ...]
    scene_id: str
    target_id: int
    relation: RelationSpec
    view_class: str  # vi | vd_explicit | vd_implicit
    speaker_orientation: int | None  # defined iff view-dependent
    valid_orientations: tuple[int, ...]
    noun_positions: tuple[int, ...]
    difficulty: str  # easy | hard

    @property
    def view_dependent(self) -> bool:
        return self.view_class != VIEW_INDEPENDENT


def _render(template: tuple[str, ...], slots: dict[str, str]) -> tuple[tuple[str, ...], tuple[int, ...]]:
    """Expand slot words; every word of a substituted label is a noun."""
    tokens: list[str] = []
    nouns: list[int] = []
    for word in template:
        if word.startswith("{"):
            for part in slots[word].split():
                nouns.append(len(tokens))
                tokens.append(part)
        else:
            tokens.append(word)
    return tuple(tokens), tuple(nouns)


def generate_utterance(scene: Scene, cfg: GenConfig, seed: int) -> UtteranceRecord:
    """Draw one unambiguous utterance for the scene; raises GenerationSkip
    when no renderable relation survives the ambiguity filter."""
    rng = random.Random(seed)
    counts = {}
    for obj in scene.objects:
        counts[obj.class_label] = counts.get(obj.class_label, 0) + 1
    target_classes = sorted(c for c, n in counts.items() if n >= 2)
    unique_objects = [obj for obj in scene.objects if counts[obj.class_label] == 1]
    if not target_classes or not unique_objects:
        raise GenerationSkip(f"scene {scene.scene_id}: no distractor class or no unique anchors")

    view_dependent = rng.random() < cfg.vd_fraction
    explicit = view_dependent and rng.random() < cfg.explicit_fraction
    orientation = rng.randrange(4) if view_dependent else 0
    kinds = VIEW_DEPENDENT_KINDS if view_dependent else VIEW_INDEPENDENT_KINDS

    for _ in range(40):
        kind = rng.choice(kinds)
        target_class = rng.choice(target_classes)
        anchor_pool = [obj for obj in unique_objects if obj.class_label != target_class]
        needed = 2 if kind == "between" else 1
        if len(anchor_pool) < needed:
            continue
        anchors = rng.sample(anchor_pool, needed)
        if needed == 2 and anchors[0].class_label == anchors[1].class_label:
            continue
        rel = RelationSpec(kind=kind, target_class=target_class, anchor_ids=tuple(a.object_id for a in anchors))
        try:
            target_id = resolve_reference(scene, rel, orientation, cfg.tie_tolerance)
        except (ResolutionError, AmbiguityError):
            continue

        slots = {"{C}": target_class, "{A}": anchors[0].class_label}
        if needed == 2:
            slots["{B}"] = anchors[1].class_label
        template = TEMPLATES[kind]
        if explicit:
            faced = scene.object_by_id(scene.landmark_ids[orientation])
            slots["{L}"] = faced.class_label
            template = EXPLICIT_PREFIX + template
        tokens, noun_positions = _render(template, slots)

        if not view_dependent:
            view_class, speaker, valid = VIEW_INDEPENDENT, None, (0, 1, 2, 3)
        elif explicit:
            view_class, speaker, valid = VD_EXPLICIT, orientation, (orientation,)
        else:
            view_class, speaker = VD_IMPLICIT, orientation
            valid = valid_orientations(scene, rel, target_id, cfg.tie_tolerance)
        return UtteranceRecord(
            tokens=tokens,
            scene_id=scene.scene_id,
            target_id=target_id,
            relation=rel,
            view_class=view_class,
            speaker_orientation=speaker,
            valid_orientations=valid,
            noun_positions=noun_positions,
            difficulty="easy" if counts[target_class] == 2 else "hard",
        )
    raise GenerationSkip(f"scene {scene.scene_id}: no unambiguous relation found (seed {seed})")


def generate_corpus(
    cfg: GenConfig,
    n_scenes: int,
    utterances_per_scene: int,
    seed: int,
) -> tuple[list[Scene], list[UtteranceRecord]]:
    """Generate a scene set plus records; deterministic in all arguments.

    Per-slot seeds are derived independently, so generation could be sharded
    by scene without changing the output.
    """
    scenes: list[Scene] = []
    records: list[UtteranceRecord] = []
    for i in range(n_scenes):
        # redraw unlucky packings; an infeasible config still fails loudly
        scene = None
        for attempt in range(50):
            try:
                scene = generate_scene(cfg, derive_seed(seed, "scene", i, attempt))
                break
            except DensityError:
                if attempt == 49:
                    raise
        scenes.append(scene)
        for j in range(utterances_per_scene):
            for attempt in range(200):
                try:
                    records.append(
                        generate_utterance(scene, cfg, derive_seed(seed, "utt", scene.scene_id, j, attempt))
                    )
                    break
                except GenerationSkip:
                    continue
    return scenes, records


def record_to_dict(record: UtteranceRecord) -> dict:
    return {
        "scene_id": record.scene_id,
        "tokens": list(record.tokens),
        "target_id": record.target_id,
        "relation": {
            "kind": record.relation.kind,
            "target_class": record.relation.target_class,
            "anchor_ids": list(record.relation.anchor_ids),
        },
        "view_class": record.view_class,
        "speaker_orientation": record.speaker_orientation,
        "valid_orientations": list(record.valid_orientations),
        "noun_positions": list(record.noun_positions),
        "difficulty": record.difficulty,
    }


def record_from_dict(data: dict) -> UtteranceRecord:
    try:
        return UtteranceRecord(
            tokens=tuple(data["tokens"]),
            scene_id=data["scene_id"],
            target_id=data["target_id"],
            relation=RelationSpec(
                kind=data["relation"]["kind"],
                target_class=data["relation"]["target_class"],
                anchor_ids=tuple(data["relation"]["anchor_ids"]),
            ),
            view_class=data["view_class"],
            speaker_orientation=data["speaker_orientation"],
            valid_orientations=tuple(data["valid_orientations"]),
            noun_positions=tuple(data["noun_positions"]),
            difficulty=data["difficulty"],
        )
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed utterance record: {exc}") from exc
