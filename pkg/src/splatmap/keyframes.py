"""Keyframe registry, covisibility partition, and dynamic window draws.

Each optimization iteration draws a fresh random window: the newest
keyframe, up to k1 keyframes that covisibly overlap it, and up to k2 of
the remaining ones.  Revisiting old keyframes this way keeps previously
mapped regions from degrading while recent ones are refined.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from splatmap.geometry import Intrinsics, Pose, Z_NEAR

DEPTH_COMPAT_FACTOR = 4.0  # gross depth-compatibility bound for covisibility


class EmptyFrame(ValueError):
    """Raised when registration finds no usable sample in a frame."""


class NoSparsePoints(ValueError):
    """Raised in monocular mode when neither sparse points nor an existing
    map can seed a keyframe."""


@dataclass
class Keyframe:
    """A retained input frame with everything mapping needs."""

    kf_id: int
    color: np.ndarray  # (H, W, 3) float64 in [0, 1]
    pose: Pose
    depth: np.ndarray | None = None  # (H, W) meters, 0 = invalid
    sparse_points: np.ndarray | None = None  # (N, 3) world positions
    sparse_colors: np.ndarray | None = None  # (N, 3)
    anchor_points: np.ndarray | None = None  # (M, 3) world, seeds of this frame
    anchor_depths: np.ndarray | None = None  # (M,) camera-frame depth at this frame
    frame_index: int = -1


@dataclass
class CovisPartition:
    covisible: list[int] = field(default_factory=list)
    other: list[int] = field(default_factory=list)


@dataclass
class KeyframeWindow:
    """Per-iteration optimization set; the new keyframe is always first."""

    members: list[int]


class KeyframeRegistry:
    def __init__(self):
        self._frames: dict[int, Keyframe] = {}
        self._order: list[int] = []
        self._next_id = 0

    def add(self, frame: Keyframe) -> int:
        kf_id = self._next_id
        self._next_id += 1
        frame.kf_id = kf_id
        self._frames[kf_id] = frame
        self._order.append(kf_id)
        return kf_id

    def get(self, kf_id: int) -> Keyframe:
        return self._frames[kf_id]

    def ids(self) -> list[int]:
        return list(self._order)

    def __len__(self) -> int:
        return len(self._order)

    def __iter__(self):
        return (self._frames[i] for i in self._order)


def visible_fraction(
    points: np.ndarray, depths_at_anchor: np.ndarray, pose: Pose, intr: Intrinsics
) -> float:
    """Fraction of anchor points that land inside ``pose``'s frustum with a
    camera depth between the near plane and a gross multiple of the depth
    the anchor had in its own keyframe."""
    if points.shape[0] == 0:
        return 0.0
    p_cam = pose.world_to_camera(points)
    Z = p_cam[:, 2]
    ok = Z > Z_NEAR
    u = intr.fx * p_cam[:, 0] / np.where(ok, Z, 1.0) + intr.cx
    v = intr.fy * p_cam[:, 1] / np.where(ok, Z, 1.0) + intr.cy
    inside = (
        ok
        & (u >= -0.5) & (u < intr.width - 0.5)
        & (v >= -0.5) & (v < intr.height - 0.5)
        & (Z <= DEPTH_COMPAT_FACTOR * depths_at_anchor)
    )
    return float(inside.mean())


def covisibility_partition(
    k_new: Keyframe, registry: KeyframeRegistry, intr: Intrinsics, theta: float
) -> CovisPartition:
    """Split all other registered keyframes by whether they see at least a
    ``theta`` fraction of the new keyframe's anchor points."""
    part = CovisPartition()
    pts = k_new.anchor_points
    dep = k_new.anchor_depths
    for kf in registry:
        if kf.kf_id == k_new.kf_id:
            continue
        if pts is None or pts.shape[0] == 0:
            part.other.append(kf.kf_id)
            continue
        frac = visible_fraction(pts, dep, kf.pose, intr)
        (part.covisible if frac >= theta else part.other).append(kf.kf_id)
    return part


def build_window(
    k_new_id: int,
    partition: CovisPartition,
    k1: int,
    k2: int,
    rng: np.random.Generator,
) -> KeyframeWindow:
    """Draw min(k1, |covisible|) + min(k2, |other|) keyframes uniformly
    without replacement (independent draws, no backfill across the sets)."""
    members = [k_new_id]
    pool1 = sorted(partition.covisible)
    pool2 = sorted(partition.other)
    n1 = min(k1, len(pool1))
    n2 = min(k2, len(pool2))
    if n1:
        members.extend(int(i) for i in rng.choice(pool1, size=n1, replace=False))
    if n2:
        members.extend(int(i) for i in rng.choice(pool2, size=n2, replace=False))
    return KeyframeWindow(members=members)


def build_fixed_window(k_new_id: int, registry: KeyframeRegistry, size: int) -> KeyframeWindow:
    """Recency window: the new keyframe plus the last ``size`` older ones
    (the ablation baseline for the dynamic draw)."""
    others = [i for i in registry.ids() if i != k_new_id]
    tail = others[-size:] if size > 0 else []
    return KeyframeWindow(members=[k_new_id] + tail)
