"""Synthetic scene generation.

Produces ground-truth splat scenes plus camera trajectories for
self-contained experiments: a random blob cloud, a textured plane, and a
two-room layout whose trajectory pans from one room to the other (useful
for probing how optimization treats regions that left the field of view).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from splatmap.geometry import Intrinsics, Pose, rot_to_quat
from splatmap.gmap import GaussianMap, logit
from splatmap.plyio import write_splat_ply
from splatmap.dataio import write_intrinsics

DEFAULT_INTRINSICS = Intrinsics(fx=120.0, fy=120.0, cx=63.5, cy=47.5, width=128, height=96)


def look_at_pose(eye: np.ndarray, target: np.ndarray, up=(0.0, -1.0, 0.0)) -> Pose:
    """Camera-to-world pose with +Z looking from ``eye`` toward ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd = fwd / np.linalg.norm(fwd)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(fwd, up)
    nrm = np.linalg.norm(right)
    if nrm < 1e-9:  # forward parallel to up; pick any perpendicular
        right = np.cross(fwd, np.array([1.0, 0.0, 0.0]))
        nrm = np.linalg.norm(right)
    right = right / nrm
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd], axis=1)  # columns = camera axes in world
    return Pose(rot_to_quat(rot), eye)


def _fill_map(gmap: GaussianMap, positions, colors, log_scales, quats, opacities) -> None:
    gmap.insert_raw(
        positions,
        log_scales,
        quats,
        logit(np.asarray(opacities, dtype=np.float64)),
        colors,
    )


def _random_quats(rng: np.random.Generator, n: int) -> np.ndarray:
    q = rng.standard_normal((n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def make_random_scene(n: int = 120, seed: int = 0) -> GaussianMap:
    """Blob cloud of exactly ``n`` splats centered near (0, 0, 2.5)."""
    rng = np.random.default_rng(seed)
    gmap = GaussianMap()
    positions = np.array([0.0, 0.0, 2.5]) + rng.uniform(-1.0, 1.0, (n, 3))
    colors = rng.uniform(0.1, 0.9, (n, 3))
    log_scales = rng.uniform(np.log(0.02), np.log(0.08), (n, 3))
    quats = _random_quats(rng, n)
    opacities = rng.uniform(0.5, 0.95, n)
    _fill_map(gmap, positions, colors, log_scales, quats, opacities)
    return gmap


def make_planar_scene(n: int = 144, seed: int = 0, z: float = 2.0) -> GaussianMap:
    """Textured plane at depth ``z``: ``n`` flat splats on a jittered grid."""
    rng = np.random.default_rng(seed)
    gmap = GaussianMap()
    side = int(np.ceil(np.sqrt(n)))
    grid = np.linspace(-0.9, 0.9, side)
    xs, ys = np.meshgrid(grid, grid)
    spacing = grid[1] - grid[0] if side > 1 else 0.3
    centers = np.stack([xs.ravel(), ys.ravel(), np.full(side * side, z)], axis=1)[:n]
    positions = centers + rng.uniform(-0.25, 0.25, (n, 3)) * np.array(
        [spacing, spacing, 0.02]
    )
    colors = rng.uniform(0.05, 0.95, (n, 3))
    s_inplane = rng.uniform(0.6, 1.1, (n, 2)) * spacing * 0.75
    log_scales = np.log(np.column_stack([s_inplane, np.full(n, 0.01)]))
    quats = np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (n, 1))
    opacities = rng.uniform(0.7, 0.95, n)
    _fill_map(gmap, positions, colors, log_scales, quats, opacities)
    return gmap


def make_rooms_scene(n: int = 140, seed: int = 0) -> GaussianMap:
    """Two disjoint clusters ("rooms") left and right of the origin,
    ``n`` splats total."""
    rng = np.random.default_rng(seed)
    gmap = GaussianMap()
    counts = (n // 2, n - n // 2)
    parts = []
    for cx, cnt in zip((-1.25, 1.25), counts):
        p = np.array([cx, 0.0, 2.5]) + rng.uniform(-0.75, 0.75, (cnt, 3)) * np.array(
            [0.6, 1.0, 0.5]
        )
        parts.append(p)
    positions = np.concatenate(parts)
    colors = rng.uniform(0.1, 0.9, (n, 3))
    log_scales = rng.uniform(np.log(0.03), np.log(0.09), (n, 3))
    quats = _random_quats(rng, n)
    opacities = rng.uniform(0.6, 0.95, n)
    _fill_map(gmap, positions, colors, log_scales, quats, opacities)
    return gmap


def arc_trajectory(
    n_frames: int,
    target=(0.0, 0.0, 2.5),
    radius: float = 2.5,
    span_deg: float = 40.0,
    height: float = 0.0,
) -> list[Pose]:
    """Poses on a horizontal arc, all looking at ``target``."""
    target = np.asarray(target, dtype=np.float64)
    angles = np.deg2rad(np.linspace(-span_deg / 2.0, span_deg / 2.0, n_frames))
    poses = []
    for a in angles:
        eye = target + np.array([radius * np.sin(a), height, -radius * np.cos(a)])
        poses.append(look_at_pose(eye, target))
    return poses


def pan_trajectory(n_frames: int, z_cam: float = 0.0) -> list[Pose]:
    """Lateral pan from the left room to the right room.

    Early frames see only the left cluster, late frames only the right —
    each frame looks straight ahead from a translating eye point.
    """
    xs = np.linspace(-1.25, 1.25, n_frames)
    poses = []
    for x in xs:
        eye = np.array([x, 0.0, z_cam])
        poses.append(look_at_pose(eye, eye + np.array([0.0, 0.0, 1.0])))
    return poses


def write_bundle(root, gmap: GaussianMap, poses, intr: Intrinsics = DEFAULT_INTRINSICS) -> None:
    """Write a synthetic dataset bundle: scene.ply, trajectory.txt, intrinsics.txt."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    write_splat_ply(root / "scene.ply", gmap)
    lines = []
    for i, pose in enumerate(poses):
        w, x, y, z = (float(v) for v in pose.quat)
        tx, ty, tz = (float(v) for v in pose.trans)
        lines.append(f"{float(i):.6f} {tx!r} {ty!r} {tz!r} {x!r} {y!r} {z!r} {w!r}")
    (root / "trajectory.txt").write_text("\n".join(lines) + "\n")
    write_intrinsics(root / "intrinsics.txt", intr)


def make_bundle(root, kind: str = "random", n_gaussians: int = 120, n_frames: int = 30,
                seed: int = 0, intr: Intrinsics = DEFAULT_INTRINSICS) -> None:
    """Generate and write one of the named scene kinds."""
    if n_gaussians < 1 or n_frames < 1:
        raise ValueError("scene needs at least 1 primitive and 1 view")
    if kind == "random":
        gmap = make_random_scene(n=n_gaussians, seed=seed)
        poses = arc_trajectory(n_frames)
    elif kind == "planar":
        gmap = make_planar_scene(n=n_gaussians, seed=seed)
        poses = arc_trajectory(n_frames, target=(0.0, 0.0, 2.0), radius=2.0, span_deg=30.0)
    elif kind == "rooms":
        gmap = make_rooms_scene(n=n_gaussians, seed=seed)
        poses = pan_trajectory(n_frames)
    else:
        raise ValueError(f"unknown scene kind: {kind!r}")
    write_bundle(root, gmap, poses, intr)
