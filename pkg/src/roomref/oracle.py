"""Brute-force geometric resolver that defines ground truth for utterances.

Relation semantics (all margins use the tie tolerance; a win by less than
the tolerance raises AmbiguityError so the generator can discard the
utterance):

* ``closest`` / ``farthest``: 3D center distance to the single anchor.
* ``between``: among candidates whose xy-center projects strictly inside the
  anchor-to-anchor segment, the one with the smallest perpendicular distance
  to it.
* ``left`` / ``right`` / ``front`` / ``behind`` (view-dependent): the speaker
  stands at the room centroid with view direction ``VIEW_DIRECTIONS[k]``;
  ``left`` is the view direction rotated 90 deg counterclockwise, ``right``
  the opposite, ``front`` points from the anchor back toward the speaker
  (``-view``), ``behind`` away (``+view``). The winner has the maximal
  positive signed offset along that direction relative to the anchor center.

All scores use componentwise-symmetric arithmetic, so results are bit-exact
under quarter-turn scene rotations: view-independent kinds are invariant,
view-dependent kinds co-rotate with the orientation index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import AmbiguityError, ConfigError, ResolutionError
from .scenes import VIEW_DIRECTIONS, Scene, SceneObject

VIEW_DEPENDENT_KINDS = ("left", "right", "front", "behind")
VIEW_INDEPENDENT_KINDS = ("closest", "farthest", "between")
RELATION_KINDS = VIEW_INDEPENDENT_KINDS + VIEW_DEPENDENT_KINDS

DEFAULT_TIE_TOLERANCE = 0.10  # meters


@dataclass(frozen=True)
class RelationSpec:
    """One spatial relation: pick the ``target_class`` object standing in
    ``kind`` relation to the anchor object(s)."""

    kind: str
    target_class: str
    anchor_ids: tuple[int, ...]

    def validate(self) -> None:
        if self.kind not in RELATION_KINDS:
            raise ConfigError(f"unknown relation kind {self.kind!r}")
        expected = 2 if self.kind == "between" else 1
        if len(self.anchor_ids) != expected:
            raise ConfigError(
                f"relation {self.kind!r} takes {expected} anchor(s), got {len(self.anchor_ids)}"
            )

    @property
    def view_dependent(self) -> bool:
        return self.kind in VIEW_DEPENDENT_KINDS


def relation_direction(kind: str, orientation: int) -> tuple[float, float]:
    """Unit xy-direction whose positive offsets satisfy a directional kind."""
    vx, vy = VIEW_DIRECTIONS[orientation % 4]
    if kind == "left":
        return (-vy, vx)
    if kind == "right":
        return (vy, -vx)
    if kind == "front":
        return (-vx, -vy)
    if kind == "behind":
        return (vx, vy)
    raise ConfigError(f"{kind!r} is not a directional relation kind")


def _distance3(a: SceneObject, b: SceneObject) -> float:
    dx = a.box.center_x - b.box.center_x
    dy = a.box.center_y - b.box.center_y
    dz = a.box.center_z - b.box.center_z
    return math.sqrt(dx * dx + dy * dy + dz * dz)


def _signed_offset(candidate: SceneObject, anchor: SceneObject, direction: tuple[float, float]) -> float:
    dx = candidate.box.center_x - anchor.box.center_x
    dy = candidate.box.center_y - anchor.box.center_y
    return dx * direction[0] + dy * direction[1]


def _between_projection(candidate: SceneObject, a1: SceneObject, a2: SceneObject) -> tuple[float, float]:
    """(t, perpendicular distance) of the candidate onto the a1->a2 segment."""
    vx = a2.box.center_x - a1.box.center_x
    vy = a2.box.center_y - a1.box.center_y
    ux = candidate.box.center_x - a1.box.center_x
    uy = candidate.box.center_y - a1.box.center_y
    denom = vx * vx + vy * vy
    if denom == 0.0:
        raise ResolutionError("'between' anchors share a center")
    t = (ux * vx + uy * vy) / denom
    rx = ux - t * vx
    ry = uy - t * vy
    return t, math.sqrt(rx * rx + ry * ry)


def resolve_reference(
    scene: Scene,
    rel: RelationSpec,
    orientation: int,
    tie_tolerance: float = DEFAULT_TIE_TOLERANCE,
) -> int:
    """Return the object id the relation uniquely picks out.

    Pure function. Raises ResolutionError when no candidate satisfies the
    relation and AmbiguityError when the best candidate does not beat the
    runner-up by more than ``tie_tolerance``.
    """
    rel.validate()
    anchors = [scene.object_by_id(a) for a in rel.anchor_ids]
    candidates = [
        obj
        for obj in scene.objects
        if obj.class_label == rel.target_class and obj.object_id not in rel.anchor_ids
    ]
    if not candidates:
        raise ResolutionError(
            f"scene {scene.scene_id}: no candidate of class {rel.target_class!r}"
        )

    # Higher utility wins for every kind.
    if rel.kind == "closest":
        scored = [(-_distance3(c, anchors[0]), c) for c in candidates]
    elif rel.kind == "farthest":
        scored = [(_distance3(c, anchors[0]), c) for c in candidates]
    elif rel.kind == "between":
        scored = []
        for c in candidates:
            t, perp = _between_projection(c, anchors[0], anchors[1])
            if 0.0 < t < 1.0:
                scored.append((-perp, c))
        if not scored:
            raise ResolutionError(
                f"scene {scene.scene_id}: no {rel.target_class!r} projects between the anchors"
            )
    else:
        direction = relation_direction(rel.kind, orientation)
        scored = [(_signed_offset(c, anchors[0], direction), c) for c in candidates]
        if max(score for score, _ in scored) <= 0.0:
            raise ResolutionError(
                f"scene {scene.scene_id}: no {rel.target_class!r} lies {rel.kind} of the anchor"
            )

    scored.sort(key=lambda item: (-item[0], item[1].object_id))
    best_score, best = scored[0]
    if len(scored) >= 2:
        margin = best_score - scored[1][0]
        if margin <= tie_tolerance:
            raise AmbiguityError(
                f"scene {scene.scene_id}: {rel.kind}/{rel.target_class} margin "
                f"{margin:.4f} m within tie tolerance {tie_tolerance}"
            )
    return best.object_id


def valid_orientations(
    scene: Scene,
    rel: RelationSpec,
    target_id: int,
    tie_tolerance: float = DEFAULT_TIE_TOLERANCE,
) -> tuple[int, ...]:
    """Orientations under which the relation resolves to ``target_id``."""
    if not rel.view_dependent:
        return (0, 1, 2, 3)
    hits = []
    for k in range(4):
        try:
            if resolve_reference(scene, rel, k, tie_tolerance) == target_id:
                hits.append(k)
        except (ResolutionError, AmbiguityError):
            continue
    return tuple(hits)
