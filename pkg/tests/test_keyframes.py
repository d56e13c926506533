"""Covisibility, partition, and window-draw tests."""

import numpy as np
import pytest

from splatmap.geometry import Intrinsics, Pose
from splatmap.keyframes import (
    DEPTH_COMPAT_FACTOR,
    CovisPartition,
    Keyframe,
    KeyframeRegistry,
    build_fixed_window,
    build_window,
    covisibility_partition,
    visible_fraction,
)

INTR = Intrinsics(fx=100.0, fy=100.0, cx=49.5, cy=49.5, width=100, height=100)


def kf_at(pose, anchors=None, depths=None):
    return Keyframe(
        kf_id=-1,
        color=np.zeros((4, 4, 3)),
        pose=pose,
        anchor_points=anchors,
        anchor_depths=depths,
    )


def turned_away_pose():
    # 180 degree turn about y: the camera looks along -z, so points at
    # positive world z fall behind it
    return Pose(quat=np.array([0.0, 0.0, 1.0, 0.0]), trans=np.zeros(3))


class TestVisibleFraction:
    def test_all_points_on_axis_visible(self):
        pts = np.array([[0.0, 0.0, 2.0], [0.1, 0.1, 2.5]])
        dep = np.array([2.0, 2.5])
        assert visible_fraction(pts, dep, Pose.identity(), INTR) == 1.0

    def test_point_outside_frustum_halves_fraction(self):
        # (10, 0, 2) projects to u = 100 * 5 + 49.5, far off the image
        pts = np.array([[0.0, 0.0, 2.0], [10.0, 0.0, 2.0]])
        dep = np.array([2.0, 2.0])
        assert visible_fraction(pts, dep, Pose.identity(), INTR) == 0.5

    def test_points_behind_camera_invisible(self):
        pts = np.array([[0.0, 0.0, 2.0]])
        dep = np.array([2.0])
        assert visible_fraction(pts, dep, turned_away_pose(), INTR) == 0.0

    def test_depth_compatibility_bound(self):
        # a point anchored at depth 0.4 seen from 4x farther than that is
        # rejected even though it projects inside the image
        pts = np.array([[0.0, 0.0, 2.0]])
        near = np.array([0.4])
        far_enough = np.array([2.0 / DEPTH_COMPAT_FACTOR])
        assert visible_fraction(pts, near, Pose.identity(), INTR) == 0.0
        assert visible_fraction(pts, far_enough, Pose.identity(), INTR) == 1.0

    def test_no_points_zero(self):
        assert visible_fraction(np.zeros((0, 3)), np.zeros(0), Pose.identity(), INTR) == 0.0


class TestCovisibilityPartition:
    def test_same_pose_covisible_turned_away_other(self):
        reg = KeyframeRegistry()
        anchors = np.array([[0.0, 0.0, 2.0], [0.2, -0.1, 2.2]])
        depths = np.array([2.0, 2.2])
        id_same = reg.add(kf_at(Pose.identity()))
        id_away = reg.add(kf_at(turned_away_pose()))
        k_new = kf_at(Pose.identity(), anchors, depths)
        reg.add(k_new)
        part = covisibility_partition(k_new, reg, INTR, theta=0.3)
        assert part.covisible == [id_same]
        assert part.other == [id_away]

    def test_new_frame_excluded_from_both(self):
        reg = KeyframeRegistry()
        k_new = kf_at(Pose.identity(), np.array([[0.0, 0.0, 2.0]]), np.array([2.0]))
        kf_id = reg.add(k_new)
        part = covisibility_partition(k_new, reg, INTR, theta=0.3)
        assert kf_id not in part.covisible and kf_id not in part.other

    def test_no_anchors_sends_everything_to_other(self):
        reg = KeyframeRegistry()
        reg.add(kf_at(Pose.identity()))
        k_new = kf_at(Pose.identity(), np.zeros((0, 3)), np.zeros(0))
        reg.add(k_new)
        part = covisibility_partition(k_new, reg, INTR, theta=0.3)
        assert part.covisible == [] and len(part.other) == 1

    def test_threshold_is_inclusive(self):
        # 1 of 2 anchors visible = fraction 0.5; theta 0.5 keeps it covisible
        reg = KeyframeRegistry()
        kf_id = reg.add(kf_at(Pose.identity()))
        anchors = np.array([[0.0, 0.0, 2.0], [10.0, 0.0, 2.0]])
        k_new = kf_at(Pose.identity(), anchors, np.array([2.0, 2.0]))
        reg.add(k_new)
        assert covisibility_partition(k_new, reg, INTR, 0.5).covisible == [kf_id]
        assert covisibility_partition(k_new, reg, INTR, 0.51).covisible == []


class TestWindowDraws:
    PART = CovisPartition(covisible=[1, 2], other=[3, 4, 5, 6])

    def test_sizes_without_backfill(self):
        # k1 exceeds the covisible pool: the unused slots do NOT spill into
        # the other pool
        rng = np.random.default_rng(0)
        win = build_window(0, self.PART, k1=5, k2=1, rng=rng)
        assert win.members[0] == 0
        assert len(win.members) == 1 + 2 + 1

    def test_members_come_from_the_right_pools(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            win = build_window(0, self.PART, k1=1, k2=2, rng=rng)
            assert win.members[0] == 0
            assert win.members[1] in self.PART.covisible
            assert set(win.members[2:]) <= set(self.PART.other)
            assert len(set(win.members)) == len(win.members)

    def test_draw_is_deterministic_given_rng(self):
        a = build_window(0, self.PART, 1, 2, np.random.default_rng(7)).members
        b = build_window(0, self.PART, 1, 2, np.random.default_rng(7)).members
        assert a == b

    def test_all_others_eventually_drawn(self):
        rng = np.random.default_rng(2)
        seen = set()
        for _ in range(200):
            seen.update(build_window(0, self.PART, 0, 1, rng).members[1:])
        assert seen == set(self.PART.other)

    def test_empty_pools(self):
        win = build_window(9, CovisPartition(), 5, 3, np.random.default_rng(0))
        assert win.members == [9]


class TestFixedWindow:
    @staticmethod
    def registry_with(n):
        reg = KeyframeRegistry()
        for _ in range(n):
            reg.add(kf_at(Pose.identity()))
        return reg

    def test_recency_tail(self):
        reg = self.registry_with(10)
        win = build_fixed_window(9, reg, size=4)
        assert win.members == [9, 5, 6, 7, 8]

    def test_short_history(self):
        reg = self.registry_with(3)
        win = build_fixed_window(2, reg, size=8)
        assert win.members == [2, 0, 1]

    def test_size_zero(self):
        reg = self.registry_with(5)
        assert build_fixed_window(4, reg, size=0).members == [4]


class TestRegistry:
    def test_sequential_ids_and_iteration_order(self):
        reg = KeyframeRegistry()
        ids = [reg.add(kf_at(Pose.identity())) for _ in range(4)]
        assert ids == [0, 1, 2, 3]
        assert reg.ids() == ids
        assert len(reg) == 4
        assert [kf.kf_id for kf in reg] == ids
        assert reg.get(2).kf_id == 2
