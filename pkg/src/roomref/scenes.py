"""Synthetic rooms: axis-aligned boxed objects in an origin-centered room.

Rooms are rectangles centered on the origin, so the room centroid is (0, 0)
and quarter-turn rotations are exact coordinate swaps/negations (no
trigonometry, hence bit-exact invertibility). Every scene carries exactly
four wall-midpoint landmark objects with distinct classes, one per wall;
``landmark_ids[k]`` is the landmark on the wall a speaker at the centroid
faces under orientation ``k``.

Orientations are quarter-turn indices ``k`` in {0, 1, 2, 3} (yaw = 90 deg * k
about the vertical axis). The speaker's view direction per orientation is
given by ``VIEW_DIRECTIONS``.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, replace

from .errors import ConfigError, DataError, DensityError

ORIENTATIONS = (0, 1, 2, 3)

# View direction in the xy-plane for a speaker at the room centroid, per
# orientation k. Successive entries are 90-degree counterclockwise turns.
VIEW_DIRECTIONS = ((0.0, 1.0), (-1.0, 0.0), (0.0, -1.0), (1.0, 0.0))

LANDMARK_CLASSES = ("door", "window", "shelf", "whiteboard")

FURNITURE_CLASSES = (
    "bed",
    "bench",
    "cabinet",
    "chair",
    "coffee table",
    "desk",
    "lamp",
    "monitor",
    "pillow",
    "plant",
    "rug",
    "sofa",
    "stool",
    "table",
    "trash can",
    "vase",
)

DEFAULT_CATALOG = FURNITURE_CLASSES + LANDMARK_CLASSES

# Nominal (footprint_x, footprint_y, height) in meters; jittered +-15% at
# placement time. Landmarks use (width_along_wall, thickness, height).
_FURNITURE_SIZES = {
    "bed": (1.9, 1.5, 0.6),
    "bench": (1.3, 0.4, 0.45),
    "cabinet": (0.9, 0.45, 1.2),
    "chair": (0.5, 0.5, 0.9),
    "coffee table": (0.9, 0.55, 0.45),
    "desk": (1.3, 0.65, 0.75),
    "lamp": (0.35, 0.35, 1.5),
    "monitor": (0.55, 0.2, 0.45),
    "pillow": (0.5, 0.35, 0.15),
    "plant": (0.45, 0.45, 1.1),
    "rug": (1.6, 1.1, 0.02),
    "sofa": (1.8, 0.85, 0.8),
    "stool": (0.38, 0.38, 0.5),
    "table": (1.2, 0.8, 0.75),
    "trash can": (0.3, 0.3, 0.45),
    "vase": (0.25, 0.25, 0.4),
}

_LANDMARK_SIZES = {
    "door": (0.9, 0.12, 2.0),
    "window": (1.2, 0.1, 1.1),
    "shelf": (1.0, 0.15, 1.8),
    "whiteboard": (1.4, 0.08, 1.0),
}

_WALL_MARGIN = 0.2  # furniture keeps this far from walls (clears landmarks)
_PLACEMENT_GAP = 0.01  # minimum footprint separation after rounding


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box: center (x, y, z) plus full side lengths."""

    center_x: float
    center_y: float
    center_z: float
    extent_x: float
    extent_y: float
    extent_z: float

    @property
    def center(self) -> tuple[float, float, float]:
        return (self.center_x, self.center_y, self.center_z)

    @property
    def extent(self) -> tuple[float, float, float]:
        return (self.extent_x, self.extent_y, self.extent_z)

    def footprint_overlaps(self, other: "BoundingBox") -> bool:
        """True when the open xy-footprints intersect (touching is fine)."""
        return abs(self.center_x - other.center_x) < (self.extent_x + other.extent_x) / 2 and abs(
            self.center_y - other.center_y
        ) < (self.extent_y + other.extent_y) / 2


@dataclass(frozen=True)
class SceneObject:
    object_id: int
    class_label: str
    box: BoundingBox
    is_landmark: bool = False


@dataclass(frozen=True)
class Scene:
    """A room with boxed objects, expressed in the ``stored_orientation`` frame."""

    scene_id: str
    room_extent: tuple[float, float]
    objects: tuple[SceneObject, ...]
    landmark_ids: tuple[int, int, int, int]
    stored_orientation: int = 0

    def object_by_id(self, object_id: int) -> SceneObject:
        for obj in self.objects:
            if obj.object_id == object_id:
                return obj
        raise DataError(f"scene {self.scene_id}: no object with id {object_id}")

    def class_count(self, class_label: str) -> int:
        return sum(1 for obj in self.objects if obj.class_label == class_label)


@dataclass(frozen=True)
class GenConfig:
    """Knobs for scene and utterance generation.

    ``min_objects``/``max_objects`` bound the furniture count; the four wall
    landmarks come on top of that.
    """

    room_extent: tuple[float, float] = (6.0, 6.0)
    min_objects: int = 6
    max_objects: int = 14
    max_retries: int = 1000
    tie_tolerance: float = 0.10
    vd_fraction: float = 0.4
    explicit_fraction: float = 0.5
    catalog: tuple[str, ...] = DEFAULT_CATALOG
    landmark_classes: tuple[str, str, str, str] = LANDMARK_CLASSES

    def validate(self) -> None:
        if not self.catalog:
            raise ConfigError("catalog must be nonempty")
        if len(set(self.catalog)) != len(self.catalog):
            raise ConfigError("catalog contains duplicate classes")
        if len(self.landmark_classes) != 4 or len(set(self.landmark_classes)) != 4:
            raise ConfigError("landmark_classes must be 4 distinct classes")
        if not set(self.landmark_classes) <= set(self.catalog):
            raise ConfigError("landmark_classes must be a subset of the catalog")
        if len(self.furniture_classes) == 0:
            raise ConfigError("catalog must contain at least one non-landmark class")
        if self.min_objects < 2:
            raise ConfigError(f"min_objects must be >= 2, got {self.min_objects}")
        if self.max_objects < self.min_objects:
            raise ConfigError("max_objects must be >= min_objects")
        if self.max_retries < 1:
            raise ConfigError("max_retries must be >= 1")
        if self.room_extent[0] <= 0 or self.room_extent[1] <= 0:
            raise ConfigError(f"room_extent must be positive, got {self.room_extent}")
        if self.tie_tolerance <= 0:
            raise ConfigError("tie_tolerance must be > 0")
        if not 0.0 <= self.vd_fraction <= 1.0:
            raise ConfigError("vd_fraction must be in [0, 1]")
        if not 0.0 <= self.explicit_fraction <= 1.0:
            raise ConfigError("explicit_fraction must be in [0, 1]")

    @property
    def furniture_classes(self) -> tuple[str, ...]:
        return tuple(c for c in self.catalog if c not in self.landmark_classes)


def _nominal_size(class_label: str) -> tuple[float, float, float]:
    return _FURNITURE_SIZES.get(class_label, (0.6, 0.6, 0.6))


def _make_landmark(wall: int, class_label: str, object_id: int, room: tuple[float, float], rng: random.Random) -> SceneObject:
    width, thickness, height = _LANDMARK_SIZES.get(class_label, (1.0, 0.12, 1.5))
    width = round(width * rng.uniform(0.9, 1.1), 3)
    half_x, half_y = room[0] / 2, room[1] / 2
    if wall == 0:  # +y
        center, extent = (0.0, half_y - thickness / 2), (width, thickness)
    elif wall == 1:  # -x
        center, extent = (-half_x + thickness / 2, 0.0), (thickness, width)
    elif wall == 2:  # -y
        center, extent = (0.0, -half_y + thickness / 2), (width, thickness)
    else:  # +x
        center, extent = (half_x - thickness / 2, 0.0), (thickness, width)
    box = BoundingBox(
        center_x=round(center[0], 3),
        center_y=round(center[1], 3),
        center_z=round(height / 2, 3),
        extent_x=round(extent[0], 3),
        extent_y=round(extent[1], 3),
        extent_z=round(height, 3),
    )
    return SceneObject(object_id=object_id, class_label=class_label, box=box, is_landmark=True)


def _separated(box: BoundingBox, placed: list[BoundingBox], gap: float) -> bool:
    for other in placed:
        if abs(box.center_x - other.center_x) < (box.extent_x + other.extent_x) / 2 + gap and abs(
            box.center_y - other.center_y
        ) < (box.extent_y + other.extent_y) / 2 + gap:
            return False
    return True


def generate_scene(cfg: GenConfig, seed: int) -> Scene:
    """Generate one room, a pure function of (cfg, seed).

    Furniture classes are sampled with one class forced to appear at least
    twice (the same-class distractor guarantee); footprints are rejection
    sampled until pairwise non-overlapping. Raises DensityError when a
    placement cannot be found within ``cfg.max_retries`` attempts.
    """
    cfg.validate()
    rng = random.Random(seed)
    room = cfg.room_extent
    half_x, half_y = room[0] / 2, room[1] / 2

    n_furniture = rng.randint(cfg.min_objects, cfg.max_objects)
    furniture = cfg.furniture_classes
    distractor_class = rng.choice(furniture)
    distractor_count = min(2 if rng.random() < 0.5 else 3, n_furniture)
    classes = [distractor_class] * distractor_count
    classes += [rng.choice(furniture) for _ in range(n_furniture - distractor_count)]
    rng.shuffle(classes)

    wall_classes = list(cfg.landmark_classes)
    rng.shuffle(wall_classes)
    landmarks = [
        _make_landmark(wall, wall_classes[wall], n_furniture + wall, room, rng) for wall in range(4)
    ]

    placed_boxes = [lm.box for lm in landmarks]
    objects: list[SceneObject] = []
    for object_id, class_label in enumerate(classes):
        nominal = _nominal_size(class_label)
        for _ in range(cfg.max_retries):
            scale_xy = rng.uniform(0.85, 1.15)
            scale_z = rng.uniform(0.85, 1.15)
            ex = round(nominal[0] * scale_xy, 3)
            ey = round(nominal[1] * scale_xy, 3)
            ez = round(nominal[2] * scale_z, 3)
            lo_x, hi_x = -half_x + _WALL_MARGIN + ex / 2, half_x - _WALL_MARGIN - ex / 2
            lo_y, hi_y = -half_y + _WALL_MARGIN + ey / 2, half_y - _WALL_MARGIN - ey / 2
            if lo_x > hi_x or lo_y > hi_y:
                continue
            box = BoundingBox(
                center_x=round(rng.uniform(lo_x, hi_x), 3),
                center_y=round(rng.uniform(lo_y, hi_y), 3),
                center_z=round(ez / 2, 3),
                extent_x=ex,
                extent_y=ey,
                extent_z=ez,
            )
            if _separated(box, placed_boxes, _PLACEMENT_GAP):
                placed_boxes.append(box)
                objects.append(SceneObject(object_id=object_id, class_label=class_label, box=box))
                break
        else:
            raise DensityError(
                f"could not place object {object_id} ({class_label}) after "
                f"{cfg.max_retries} retries: room_extent={room}, "
                f"min_objects={cfg.min_objects}, max_objects={cfg.max_objects}"
            )

    return Scene(
        scene_id=f"scene{seed:08d}",
        room_extent=room,
        objects=tuple(objects) + tuple(landmarks),
        landmark_ids=tuple(lm.object_id for lm in landmarks),
        stored_orientation=0,
    )


def _rotate_xy(x: float, y: float, k: int) -> tuple[float, float]:
    if k == 1:
        return (-y, x)
    if k == 2:
        return (-x, -y)
    if k == 3:
        return (y, -x)
    return (x, y)


def rotate_box(box: BoundingBox, k: int) -> BoundingBox:
    cx, cy = _rotate_xy(box.center_x, box.center_y, k % 4)
    if k % 2 == 1:
        ex, ey = box.extent_y, box.extent_x
    else:
        ex, ey = box.extent_x, box.extent_y
    return BoundingBox(cx, cy, box.center_z, ex, ey, box.extent_z)


def rotate_scene(scene: Scene, k: int) -> Scene:
    """Rotate by 90 deg * k counterclockwise about the room centroid.

    Coordinates are swapped/negated exactly, so
    ``rotate_scene(rotate_scene(s, k), 4 - k mod 4) == s`` bit for bit.
    """
    k = k % 4
    if k == 0:
        return scene
    objects = tuple(
        replace(obj, box=rotate_box(obj.box, k)) for obj in scene.objects
    )
    room = scene.room_extent if k % 2 == 0 else (scene.room_extent[1], scene.room_extent[0])
    # A landmark on the wall faced under orientation j lands on the wall
    # faced under orientation (j + k); invert to reindex by wall.
    landmark_ids = tuple(scene.landmark_ids[(j - k) % 4] for j in range(4))
    return Scene(
        scene_id=scene.scene_id,
        room_extent=room,
        objects=objects,
        landmark_ids=landmark_ids,
        stored_orientation=(scene.stored_orientation + k) % 4,
    )


def validate_scene(scene: Scene) -> None:
    """Check the scene invariants, raising DataError on the first violation."""
    if len(scene.objects) < 2:
        raise DataError(f"scene {scene.scene_id}: needs at least 2 objects")
    ids = [obj.object_id for obj in scene.objects]
    if len(set(ids)) != len(ids):
        raise DataError(f"scene {scene.scene_id}: duplicate object ids")
    half_x, half_y = scene.room_extent[0] / 2, scene.room_extent[1] / 2
    for obj in scene.objects:
        box = obj.box
        if box.extent_x <= 0 or box.extent_y <= 0 or box.extent_z <= 0:
            raise DataError(f"scene {scene.scene_id}: object {obj.object_id} has nonpositive extent")
        if abs(box.center_x) + box.extent_x / 2 > half_x + 1e-9 or abs(box.center_y) + box.extent_y / 2 > half_y + 1e-9:
            raise DataError(f"scene {scene.scene_id}: object {obj.object_id} leaves the room")
    for i, a in enumerate(scene.objects):
        for b in scene.objects[i + 1 :]:
            if a.box.footprint_overlaps(b.box):
                raise DataError(
                    f"scene {scene.scene_id}: objects {a.object_id} and {b.object_id} overlap"
                )
    counts: dict[str, int] = {}
    for obj in scene.objects:
        counts[obj.class_label] = counts.get(obj.class_label, 0) + 1
    if not any(c >= 2 for c in counts.values()):
        raise DataError(f"scene {scene.scene_id}: no class with >= 2 instances")
    landmarks = [obj for obj in scene.objects if obj.is_landmark]
    if len(landmarks) != 4:
        raise DataError(f"scene {scene.scene_id}: expected 4 landmarks, got {len(landmarks)}")
    if len({lm.class_label for lm in landmarks}) != 4:
        raise DataError(f"scene {scene.scene_id}: landmark classes must be distinct")
    if sorted(scene.landmark_ids) != sorted(lm.object_id for lm in landmarks):
        raise DataError(f"scene {scene.scene_id}: landmark_ids do not match landmark objects")
    if scene.stored_orientation not in ORIENTATIONS:
        raise DataError(f"scene {scene.scene_id}: bad stored_orientation {scene.stored_orientation}")


def landmark_wall(scene: Scene, object_id: int) -> int:
    """Wall index (0..3, facing order) a landmark sits against."""
    box = scene.object_by_id(object_id).box
    if abs(box.center_x) > abs(box.center_y):
        return 1 if box.center_x < 0 else 3
    return 0 if box.center_y > 0 else 2


def scene_to_dict(scene: Scene) -> dict:
    return {
        "scene_id": scene.scene_id,
        "room_extent": list(scene.room_extent),
        "stored_orientation": scene.stored_orientation,
        "objects": [
            {
                "object_id": obj.object_id,
                "class_label": obj.class_label,
                "center": [obj.box.center_x, obj.box.center_y, obj.box.center_z],
                "extent": [obj.box.extent_x, obj.box.extent_y, obj.box.extent_z],
                "is_landmark": obj.is_landmark,
            }
            for obj in scene.objects
        ],
    }


def scene_from_dict(data: dict) -> Scene:
    try:
        objects = tuple(
            SceneObject(
                object_id=entry["object_id"],
                class_label=entry["class_label"],
                box=BoundingBox(*entry["center"], *entry["extent"]),
                is_landmark=entry["is_landmark"],
            )
            for entry in data["objects"]
        )
        scene = Scene(
            scene_id=data["scene_id"],
            room_extent=tuple(data["room_extent"]),
            objects=objects,
            landmark_ids=(0, 0, 0, 0),
            stored_orientation=data["stored_orientation"],
        )
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed scene record: {exc}") from exc
    # landmark_ids are not serialized; recover wall assignment from geometry
    walls: dict[int, int] = {}
    for obj in objects:
        if obj.is_landmark:
            walls[landmark_wall(scene, obj.object_id)] = obj.object_id
    if sorted(walls) != [0, 1, 2, 3]:
        raise DataError(f"scene {data['scene_id']}: landmarks do not cover all four walls")
    return replace(scene, landmark_ids=(walls[0], walls[1], walls[2], walls[3]))
