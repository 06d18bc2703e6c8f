import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from roomref.errors import ConfigError, DataError, DensityError
from roomref.scenes import (
    BoundingBox,
    DEFAULT_CATALOG,
    FURNITURE_CLASSES,
    GenConfig,
    LANDMARK_CLASSES,
    ORIENTATIONS,
    VIEW_DIRECTIONS,
    generate_scene,
    landmark_wall,
    rotate_box,
    rotate_scene,
    scene_from_dict,
    scene_to_dict,
    validate_scene,
)


def test_view_directions_are_quarter_turns():
    # entry k+1 is entry k rotated 90 deg counterclockwise
    for k in range(4):
        vx, vy = VIEW_DIRECTIONS[k]
        nx, ny = VIEW_DIRECTIONS[(k + 1) % 4]
        assert (nx, ny) == (-vy, vx)
        assert math.hypot(vx, vy) == 1.0


def test_catalog_layout():
    assert len(DEFAULT_CATALOG) == len(set(DEFAULT_CATALOG))
    assert set(LANDMARK_CLASSES) <= set(DEFAULT_CATALOG)
    assert set(FURNITURE_CLASSES).isdisjoint(LANDMARK_CLASSES)
    # multi-word labels exist so object blocks exercise multi-token spans
    assert any(" " in label for label in FURNITURE_CLASSES)


class TestGenerate:
    def test_deterministic(self, gen_cfg):
        assert generate_scene(gen_cfg, 5) == generate_scene(gen_cfg, 5)

    def test_different_seeds_differ(self, gen_cfg):
        assert generate_scene(gen_cfg, 5) != generate_scene(gen_cfg, 6)

    def test_object_count_bounds(self, gen_cfg, scene_pool):
        for scene in scene_pool:
            n_furniture = sum(1 for o in scene.objects if not o.is_landmark)
            assert gen_cfg.min_objects <= n_furniture <= gen_cfg.max_objects
            assert len(scene.objects) == n_furniture + 4

    def test_every_scene_validates(self, scene_pool):
        for scene in scene_pool:
            validate_scene(scene)

    def test_distractor_class_present(self, scene_pool):
        for scene in scene_pool:
            counts = {}
            for obj in scene.objects:
                counts[obj.class_label] = counts.get(obj.class_label, 0) + 1
            assert any(c >= 2 for c in counts.values())

    def test_object_ids_contiguous(self, scene_pool):
        for scene in scene_pool:
            assert sorted(o.object_id for o in scene.objects) == list(range(len(scene.objects)))

    def test_furniture_before_landmarks(self, scene_pool):
        for scene in scene_pool:
            n_furniture = sum(1 for o in scene.objects if not o.is_landmark)
            for obj in scene.objects:
                assert obj.is_landmark == (obj.object_id >= n_furniture)

    def test_coordinates_rounded(self, scene_pool):
        for scene in scene_pool:
            for obj in scene.objects:
                for v in obj.box.center + obj.box.extent:
                    assert v == round(v, 3)

    def test_density_error_names_config(self):
        cramped = GenConfig(room_extent=(2.0, 2.0), min_objects=14, max_objects=14, max_retries=20)
        with pytest.raises(DensityError, match=r"room_extent.*min_objects.*max_objects"):
            generate_scene(cramped, 0)

    def test_landmarks_each_wall_distinct_classes(self, scene_pool):
        for scene in scene_pool:
            walls = [landmark_wall(scene, lid) for lid in scene.landmark_ids]
            assert walls == [0, 1, 2, 3]
            classes = {scene.object_by_id(lid).class_label for lid in scene.landmark_ids}
            assert len(classes) == 4

    def test_landmark_ids_follow_facing_order(self, scene):
        # landmark_ids[k] is the landmark straight ahead under orientation k
        for k in ORIENTATIONS:
            lm = scene.object_by_id(scene.landmark_ids[k])
            vx, vy = VIEW_DIRECTIONS[k]
            ahead = lm.box.center_x * vx + lm.box.center_y * vy
            assert ahead > 0


class TestConfigValidation:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"min_objects": 1},
            {"min_objects": 8, "max_objects": 6},
            {"room_extent": (0.0, 6.0)},
            {"tie_tolerance": 0.0},
            {"vd_fraction": 1.5},
            {"explicit_fraction": -0.1},
            {"max_retries": 0},
            {"landmark_classes": ("door", "door", "shelf", "window")},
            {"catalog": ("door", "window", "shelf", "whiteboard")},
        ],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ConfigError):
            GenConfig(**kwargs).validate()

    def test_default_validates(self):
        GenConfig().validate()


class TestRotation:
    def test_rotate_zero_is_identity(self, scene):
        assert rotate_scene(scene, 0) is scene
        assert rotate_scene(scene, 4) is scene

    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_inverse_restores_bits(self, scene, k):
        assert rotate_scene(rotate_scene(scene, k), (4 - k) % 4) == scene

    def test_four_turns_compose_to_identity(self, scene):
        out = scene
        for _ in range(4):
            out = rotate_scene(out, 1)
        assert out == scene

    @pytest.mark.parametrize("j", [1, 2, 3])
    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_composition(self, scene, j, k):
        assert rotate_scene(rotate_scene(scene, j), k) == rotate_scene(scene, (j + k) % 4)

    def test_rotated_scene_validates(self, scene_pool):
        for scene in scene_pool[:10]:
            for k in (1, 2, 3):
                validate_scene(rotate_scene(scene, k))

    def test_stored_orientation_advances(self, scene):
        assert rotate_scene(scene, 3).stored_orientation == 3

    def test_room_extent_swaps_on_odd_turns(self):
        cfg = GenConfig(room_extent=(8.0, 4.0))
        scene = generate_scene(cfg, 9)
        assert rotate_scene(scene, 1).room_extent == (4.0, 8.0)
        assert rotate_scene(scene, 2).room_extent == (8.0, 4.0)

    def test_landmark_tracking_under_rotation(self, scene):
        # the object faced under orientation k is faced under k+1 after one turn
        rotated = rotate_scene(scene, 1)
        for k in ORIENTATIONS:
            assert rotated.landmark_ids[(k + 1) % 4] == scene.landmark_ids[k]
        # wall geometry agrees with the reindexed ids
        for k in ORIENTATIONS:
            assert landmark_wall(rotated, rotated.landmark_ids[k]) == k

    @given(
        cx=st.floats(-3, 3), cy=st.floats(-3, 3),
        ex=st.floats(0.1, 2), ey=st.floats(0.1, 2),
        k=st.integers(0, 3),
    )
    @settings(max_examples=200, deadline=None)
    def test_rotate_box_preserves_metric(self, cx, cy, ex, ey, k):
        box = BoundingBox(cx, cy, 0.5, ex, ey, 1.0)
        out = rotate_box(box, k)
        assert math.hypot(out.center_x, out.center_y) == pytest.approx(
            math.hypot(cx, cy), abs=1e-12
        )
        assert sorted((out.extent_x, out.extent_y)) == sorted((ex, ey))
        assert (out.center_z, out.extent_z) == (0.5, 1.0)

    @given(
        cx=st.floats(-3, 3, allow_subnormal=False), cy=st.floats(-3, 3, allow_subnormal=False),
        k=st.integers(0, 3),
    )
    @settings(max_examples=200, deadline=None)
    def test_rotate_box_exact_inverse(self, cx, cy, k):
        box = BoundingBox(cx, cy, 0.5, 1.0, 2.0, 1.0)
        assert rotate_box(rotate_box(box, k), (4 - k) % 4) == box


class TestOverlap:
    def test_touching_footprints_do_not_overlap(self):
        a = BoundingBox(0.0, 0.0, 0.5, 1.0, 1.0, 1.0)
        b = BoundingBox(1.0, 0.0, 0.5, 1.0, 1.0, 1.0)
        assert not a.footprint_overlaps(b)

    def test_intersecting_footprints_overlap(self):
        a = BoundingBox(0.0, 0.0, 0.5, 1.0, 1.0, 1.0)
        b = BoundingBox(0.9, 0.0, 0.5, 1.0, 1.0, 1.0)
        assert a.footprint_overlaps(b)
        assert b.footprint_overlaps(a)

    def test_validate_rejects_overlap(self, scene):
        squashed = scene_from_dict(scene_to_dict(scene))
        payload = scene_to_dict(squashed)
        payload["objects"][1]["center"] = payload["objects"][0]["center"]
        with pytest.raises(DataError, match="overlap"):
            validate_scene(scene_from_dict(payload))


class TestSerialization:
    def test_round_trip_identity(self, scene_pool):
        for scene in scene_pool[:10]:
            assert scene_from_dict(scene_to_dict(scene)) == scene

    def test_round_trip_after_rotation(self, scene):
        rotated = rotate_scene(scene, 2)
        assert scene_from_dict(scene_to_dict(rotated)) == rotated

    def test_schema_fields(self, scene):
        payload = scene_to_dict(scene)
        assert set(payload) == {"scene_id", "room_extent", "stored_orientation", "objects"}
        for entry in payload["objects"]:
            assert set(entry) == {"object_id", "class_label", "center", "extent", "is_landmark"}

    def test_malformed_record_raises(self):
        with pytest.raises(DataError, match="malformed"):
            scene_from_dict({"scene_id": "x", "objects": [{}]})


def test_validate_scene_catches_escape(scene):
    payload = scene_to_dict(scene)
    payload["objects"][0]["center"][0] = 10.0
    with pytest.raises(DataError, match="leaves the room"):
        validate_scene(scene_from_dict(payload))
