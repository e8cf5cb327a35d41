import numpy as np
import pytest

from humanforge.compose import (
    AnnotationRecord,
    annotate,
    composite_scene,
    dilate_mask,
    draw_overlay,
    render_person_sprite,
)
from humanforge.demo import blocky_person, exact_skeleton
from humanforge.geometry import CameraIntrinsics, project
from humanforge.placement import Anchor, ModelRef, Placement, PlacementPlan, SegMask, plan_scene
from humanforge.skeleton import JOINT_COUNT, SKELETON_EDGES

TEMPLATE = CameraIntrinsics(fx=400.0, fy=400.0, cx=160.0, cy=120.0, width=320, height=240)

MESH0, JOINTS0 = blocky_person(0)
MESH1, JOINTS1 = blocky_person(1)
SKEL0 = exact_skeleton(JOINTS0)
SKEL1 = exact_skeleton(JOINTS1)


def make_placement(anchor_uv, pixel_height, distance, model_id=0, yaw=0.0,
                   height_m=1.7):
    return Placement(model_id=model_id, anchor=Anchor(*anchor_uv),
                     person_height_m=height_m, pixel_height=pixel_height,
                     distance=distance, yaw=yaw)


def make_plan(placements, background_id="bg", seed=0):
    ordered = sorted(placements, key=lambda p: -p.distance)
    return PlacementPlan(background_id=background_id, placements=tuple(ordered),
                         seed=seed, requested_count=len(placements))


def sprite_for(placement, mesh=MESH0, skeleton=SKEL0):
    return render_person_sprite(mesh, skeleton, placement.yaw, placement.pixel_height,
                                TEMPLATE)


def alpha_height(sprite):
    rows = np.flatnonzero(sprite.frame.alpha.any(axis=1))
    return rows[-1] - rows[0] + 1


class TestRenderPersonSprite:
    @pytest.mark.parametrize("pixel_height", [40.0, 120.0, 200.0])
    def test_alpha_height_within_one_pixel(self, pixel_height):
        sprite = render_person_sprite(MESH0, SKEL0, 0.7, pixel_height, TEMPLATE)
        assert pixel_height - 1 <= alpha_height(sprite) <= pixel_height + 1

    def test_yaw_periodicity_bitwise(self):
        a = render_person_sprite(MESH0, SKEL0, 0.0, 100.0, TEMPLATE)
        b = render_person_sprite(MESH0, SKEL0, 2.0 * np.pi, 100.0, TEMPLATE)
        assert np.array_equal(a.frame.rgba, b.frame.rgba)
        assert np.array_equal(a.frame.depth, b.frame.depth)

    def test_joints_match_projection_of_rotated_joints(self):
        yaw = 1.1
        sprite = render_person_sprite(MESH0, SKEL0, yaw, 150.0, TEMPLATE)
        c, s = np.cos(yaw), np.sin(yaw)
        rot = np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
        for j in range(JOINT_COUNT):
            expected = project(sprite.intr, sprite.pose, rot @ JOINTS0[j])
            got = sprite.joints[j]
            assert abs(got[0] - expected[0]) <= 1e-6
            assert abs(got[1] - expected[1]) <= 1e-6

    def test_unresolved_joints_propagate_as_none(self):
        from humanforge.skeleton import JointEstimate, JointSet3D

        joints = [JointEstimate(None, None, 0) if j == 9
                  else JointEstimate(JOINTS0[j], 0.0, 8) for j in range(JOINT_COUNT)]
        sprite = render_person_sprite(MESH0, JointSet3D(joints), 0.0, 90.0, TEMPLATE)
        assert sprite.joints[9] is None
        assert sprite.joints[0] is not None

    def test_joints_inside_sprite_bounds(self):
        sprite = render_person_sprite(MESH0, SKEL0, 2.2, 80.0, TEMPLATE)
        for joint in sprite.joints:
            assert joint is not None
            assert -0.2 * sprite.frame.width <= joint[0] <= 1.2 * sprite.frame.width
            assert -0.2 * sprite.frame.height <= joint[1] <= 1.2 * sprite.frame.height

    def test_rejects_tiny_height(self):
        with pytest.raises(ValueError):
            render_person_sprite(MESH0, SKEL0, 0.0, 0.5, TEMPLATE)


def background(h=240, w=320, value=(90, 90, 90)):
    bg = np.zeros((h, w, 3), dtype=np.uint8)
    bg[:] = value
    return bg


class TestCompositeScene:
    def test_zero_persons_identity(self):
        plan = make_plan([])
        bg = background()
        comp = composite_scene(bg, plan, [])
        assert np.array_equal(comp.image, bg)
        assert not (comp.owner >= 0).any()

    def test_sprite_count_mismatch(self):
        plan = make_plan([make_placement((100, 200), 80, 5.0)])
        with pytest.raises(ValueError):
            composite_scene(background(), plan, [])

    def test_two_nonoverlapping_owned_equals_alpha(self):
        p1 = make_placement((70, 200), 70.0, 6.0)
        p2 = make_placement((250, 200), 70.0, 6.5, model_id=1)
        plan = make_plan([p1, p2])
        sprites = [sprite_for(p) for p in plan.placements]
        comp = composite_scene(background(), plan, sprites)
        for index, sprite in enumerate(sprites):
            support = np.zeros_like(comp.owner, dtype=bool)
            ox, oy = sprite.anchor_offset
            a = sprite.frame.alpha > 0
            support[oy:oy + sprite.frame.height, ox:ox + sprite.frame.width] = a
            assert np.array_equal(comp.owner == index, support)

    def test_overlap_owned_by_nearer_person(self):
        far = make_placement((160, 150), 120.0, 10.0, model_id=1)
        near = make_placement((160, 200), 160.0, 5.0)
        plan = make_plan([far, near])
        sprites = [sprite_for(p, *((MESH1, SKEL1) if p.model_id == 1 else (MESH0, SKEL0)))
                   for p in plan.placements]
        comp = composite_scene(background(), plan, sprites)
        near_index = next(i for i, p in enumerate(plan.placements) if p.distance == 5.0)
        far_index = 1 - near_index

        # brute-force per-pixel ownership over the overlap region
        supports, depths = [], []
        for sprite in sprites:
            support = np.zeros_like(comp.owner, dtype=bool)
            depth = np.full(comp.owner.shape, np.inf)
            ox, oy = sprite.anchor_offset
            a = sprite.frame.alpha > 0
            support[oy:oy + sprite.frame.height, ox:ox + sprite.frame.width] = a
            block = sprite.frame.depth - sprite.cam_distance + sprite.scene_distance
            depth[oy:oy + sprite.frame.height, ox:ox + sprite.frame.width] = block
            supports.append(support)
            depths.append(depth)
        overlap = supports[0] & supports[1]
        assert overlap.any()
        assert np.all(comp.owner[overlap] == near_index)
        only_far = supports[far_index] & ~supports[near_index]
        assert np.all(comp.owner[only_far] == far_index)

    def test_background_outside_sprites_unchanged(self):
        p = make_placement((160, 200), 100.0, 5.0)
        plan = make_plan([p])
        sprites = [sprite_for(p)]
        bg = background()
        comp = composite_scene(bg, plan, sprites)
        untouched = comp.owner < 0
        assert np.array_equal(comp.image[untouched], bg[untouched])

    def test_permutation_order_independence(self):
        mask = SegMask(np.full((240, 320), 7))
        from humanforge.placement import PlacementConfig

        cfg = PlacementConfig(valid_class_ids={7}, horizon_row=100.0, focal=300.0,
                              persons_per_image=(3, 3), min_anchor_separation=10.0,
                              max_bbox_iou=0.6, min_pixel_height=30.0,
                              max_pixel_height=150.0)
        rng = np.random.default_rng(0)
        for seed in range(5):
            plan = plan_scene("bg", mask, [ModelRef(0, 0.45), ModelRef(1, 0.5)], cfg, seed)
            if len(plan.placements) < 2:
                continue
            sprites = {
                id(p): sprite_for(p, *((MESH1, SKEL1) if p.model_id == 1 else (MESH0, SKEL0)))
                for p in plan.placements
            }
            base = None
            for _ in range(3):
                order = rng.permutation(len(plan.placements))
                shuffled = PlacementPlan(
                    background_id=plan.background_id,
                    placements=tuple(plan.placements[k] for k in order),
                    seed=plan.seed, requested_count=plan.requested_count,
                )
                comp = composite_scene(
                    background(), shuffled,
                    [sprites[id(p)] for p in shuffled.placements])
                owner_by_identity = np.full(comp.owner.shape, -1, dtype=np.int64)
                for local_index, p in enumerate(shuffled.placements):
                    owner_by_identity[comp.owner == local_index] = id(p)
                if base is None:
                    base = (comp.image, owner_by_identity)
                else:
                    assert np.array_equal(base[0], comp.image)
                    assert np.array_equal(base[1], owner_by_identity)

    def test_fully_clipped_person_warned_and_dropped(self):
        p = make_placement((2000, 2000), 80.0, 5.0)
        plan = make_plan([p])
        sprites = [sprite_for(p)]
        with pytest.warns(UserWarning, match="outside"):
            comp = composite_scene(background(), plan, sprites)
        assert comp.clipped == (0,)
        records = annotate(plan, sprites, comp)
        assert records == []


class TestAnnotate:
    def single_scene(self, anchor=(160, 210), pixel_height=150.0):
        p = make_placement(anchor, pixel_height, 4.0)
        plan = make_plan([p])
        sprites = [sprite_for(p)]
        comp = composite_scene(background(), plan, sprites)
        return plan, sprites, comp

    def test_single_person_all_visible(self):
        plan, sprites, comp = self.single_scene()
        records = annotate(plan, sprites, comp)
        assert len(records) == 1
        record = records[0]
        assert record.num_keypoints == JOINT_COUNT
        for u, v, vis in record.keypoints:
            assert vis == 2

    def test_bbox_matches_naive_alpha_scan(self):
        plan, sprites, comp = self.single_scene()
        record = annotate(plan, sprites, comp)[0]
        sprite = sprites[0]
        ox, oy = sprite.anchor_offset
        covered = [(ox + x, oy + y)
                   for y in range(sprite.frame.height)
                   for x in range(sprite.frame.width)
                   if sprite.frame.alpha[y, x] > 0
                   and 0 <= ox + x < 320 and 0 <= oy + y < 240]
        xs = [c[0] for c in covered]
        ys = [c[1] for c in covered]
        assert record.bbox == (min(xs), min(ys), max(xs) - min(xs) + 1, max(ys) - min(ys) + 1)
        assert record.area == len(covered)

    def test_visible_keypoints_inside_dilated_bbox(self):
        plan, sprites, comp = self.single_scene()
        record = annotate(plan, sprites, comp)[0]
        x, y, w, h = record.bbox
        for u, v, vis in record.keypoints:
            if vis == 2:
                assert x - 2 <= u <= x + w + 2
                assert y - 2 <= v <= y + h + 2

    def test_occlusion_gives_visibility_one(self):
        # near person planted in front of the far person's left half
        far = make_placement((170, 150), 120.0, 10.0, model_id=1)
        near = make_placement((140, 210), 190.0, 4.0)
        plan = make_plan([far, near])
        sprites = [sprite_for(p, *((MESH1, SKEL1) if p.model_id == 1 else (MESH0, SKEL0)))
                   for p in plan.placements]
        comp = composite_scene(background(), plan, sprites)
        records = annotate(plan, sprites, comp)
        far_records = [r for r in records if r.identity_id == 1]
        assert far_records, "far person unexpectedly dropped"
        far_record = far_records[0]
        far_index = far_record.person_id

        # independent expectation from the ownership map
        owned_near = dilate_mask(comp.owner == far_index, 2)
        vis_values = set()
        for u, v, vis in far_record.keypoints:
            if vis == 0:
                continue
            expected = 2 if owned_near[int(round(v)), int(round(u))] else 1
            assert vis == expected
            vis_values.add(vis)
        assert vis_values == {1, 2}

    def test_fully_occluded_person_dropped(self):
        # far person sized to hide entirely behind the near person's torso
        far = make_placement((160, 100), 40.0, 12.0, model_id=1)
        near = make_placement((160, 220), 230.0, 3.0)
        plan = make_plan([far, near])
        sprites = [sprite_for(p, *((MESH1, SKEL1) if p.model_id == 1 else (MESH0, SKEL0)))
                   for p in plan.placements]
        comp = composite_scene(background(), plan, sprites)
        far_index = next(i for i, p in enumerate(plan.placements) if p.model_id == 1)
        if (comp.owner == far_index).any():
            pytest.skip("craft failed: far person not fully hidden")
        with pytest.warns(UserWarning, match="occluded"):
            records = annotate(plan, sprites, comp)
        assert all(r.person_id != far_index for r in records)

    def test_owned_masks_disjoint_and_bounded(self):
        far = make_placement((150, 160), 110.0, 9.0, model_id=1)
        near = make_placement((170, 210), 170.0, 4.0)
        plan = make_plan([far, near])
        sprites = [sprite_for(p, *((MESH1, SKEL1) if p.model_id == 1 else (MESH0, SKEL0)))
                   for p in plan.placements]
        comp = composite_scene(background(), plan, sprites)
        total_owned = sum(int((comp.owner == i).sum()) for i in range(2))
        assert total_owned == int((comp.owner >= 0).sum())
        assert total_owned <= comp.owner.size

    def test_face_bbox_square_around_head(self):
        plan, sprites, comp = self.single_scene(pixel_height=200.0)
        record = annotate(plan, sprites, comp)[0]
        assert record.face_bbox is not None
        fx, fy, fw, fh = record.face_bbox
        assert np.isclose(fw, fh)
        for jid in range(5):
            u, v, vis = record.keypoints[jid]
            assert vis > 0
            assert fx <= u <= fx + fw
            assert fy <= v <= fy + fh

    def test_face_bbox_absent_without_head_keypoints(self):
        from humanforge.skeleton import JointEstimate, JointSet3D

        headless = JointSet3D([
            JointEstimate(None, None, 0) if j < 5 else JointEstimate(JOINTS0[j], 0.0, 8)
            for j in range(JOINT_COUNT)
        ])
        p = make_placement((160, 210), 150.0, 4.0)
        plan = make_plan([p])
        sprite = render_person_sprite(MESH0, headless, 0.0, 150.0, TEMPLATE)
        comp = composite_scene(background(), plan, [sprite])
        record = annotate(plan, [sprite], comp)[0]
        assert record.face_bbox is None
        assert record.num_keypoints == JOINT_COUNT - 5

    def test_identity_mapping_applied(self):
        plan, sprites, comp = self.single_scene()
        records = annotate(plan, sprites, comp, identity_of=lambda m: 777)
        assert records[0].identity_id == 777


class TestDilate:
    def test_city_block_radius_two(self):
        mask = np.zeros((9, 9), dtype=bool)
        mask[4, 4] = True
        grown = dilate_mask(mask, 2)
        for dy in range(-3, 4):
            for dx in range(-3, 4):
                expected = abs(dx) + abs(dy) <= 2
                assert grown[4 + dy, 4 + dx] == expected


class TestOverlay:
    def test_overlay_draws_without_touching_input(self):
        plan = make_plan([make_placement((160, 210), 150.0, 4.0)])
        sprites = [sprite_for(plan.placements[0])]
        comp = composite_scene(background(), plan, sprites)
        records = annotate(plan, sprites, comp)
        before = comp.image.copy()
        out = draw_overlay(comp.image, records, SKELETON_EDGES)
        assert np.array_equal(comp.image, before)
        assert not np.array_equal(out, before)
