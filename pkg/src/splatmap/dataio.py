"""Dataset ingestion and artifact writers.

Two dataset flavors are supported: TUM-style RGB-D directories
(rgb.txt / depth.txt / groundtruth.txt with nearest-timestamp
association) and synthetic scene bundles (a splat PLY plus a trajectory
file) whose "sensor" images are produced on demand by the reference
renderer — never by the tiled renderer under test.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from splatmap.geometry import Intrinsics, Pose, back_project_many
from splatmap.gmap import GaussianMap
from splatmap.plyio import map_from_arrays, read_splat_ply
from splatmap.renderer import render_reference_arrays
from splatmap.sampling import gradient_magnitude

TUM_DEPTH_SCALE = 5000.0  # 16-bit depth units per meter
TUM_ASSOC_WINDOW = 0.02  # seconds


class DatasetError(ValueError):
    """Base class for dataset problems (maps to CLI exit code 3)."""


class MissingFile(DatasetError):
    pass


class NoAssociations(DatasetError):
    pass


@dataclass
class Frame:
    timestamp: float
    pose: Pose
    color_path: Path | None = None
    depth_path: Path | None = None
    index: int = 0


@dataclass
class DatasetSequence:
    """Ordered posed frames with lazy color/depth access."""

    frames: list[Frame]
    intrinsics: Intrinsics
    mode: str
    root: Path
    gt_map: GaussianMap | None = None
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    _cache: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.frames)

    def color(self, i: int) -> np.ndarray:
        key = ("c", i)
        if key not in self._cache:
            frame = self.frames[i]
            if frame.color_path is not None:
                self._cache[key] = load_color_png(frame.color_path)
            else:
                self._render_sensor(i)
        return self._cache[key]

    def depth(self, i: int) -> np.ndarray:
        key = ("d", i)
        if key not in self._cache:
            frame = self.frames[i]
            if frame.depth_path is not None:
                self._cache[key] = load_depth_png(frame.depth_path)
            elif self.gt_map is not None:
                self._render_sensor(i)
            else:
                raise DatasetError(f"frame {i} has no depth source")
        return self._cache[key]

    def _render_sensor(self, i: int) -> None:
        color, depth, alpha = render_reference_arrays(
            self.gt_map, self.frames[i].pose, self.intrinsics, self.background
        )
        # Sensor depth is only trustworthy where the scene is actually
        # covered; elsewhere it reads 0 (invalid), like a real sensor dropout.
        depth = np.where(alpha > 0.5, depth, 0.0)
        self._cache[("c", i)] = color
        self._cache[("d", i)] = depth

    def sparse_points(self, i: int, count: int) -> tuple[np.ndarray, np.ndarray]:
        """Synthesized sparse cloud: the ``count`` strongest-gradient pixels
        with valid depth, back-projected (stands in for a tracker's
        triangulated points in monocular mode)."""
        color = self.color(i)
        depth = self.depth(i)
        grad = gradient_magnitude(color).magnitude
        valid = depth > 0
        if not valid.any():
            return np.empty((0, 3)), np.empty((0, 3))
        scores = np.where(valid, grad, -1.0)
        flat = np.argsort(scores, axis=None, kind="stable")[::-1][:count]
        vs, us = np.unravel_index(flat, depth.shape)
        keep = depth[vs, us] > 0
        vs, us = vs[keep], us[keep]
        pixels = np.stack([us, vs], axis=1).astype(np.float64)
        pts = back_project_many(pixels, depth[vs, us], self.frames[i].pose, self.intrinsics)
        return pts, color[vs, us]


# ------------------------------------------------------------------ TUM files


def _read_file_list(path: Path) -> list[tuple[float, str]]:
    if not path.exists():
        raise MissingFile(str(path))
    rows = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        rows.append((float(parts[0]), parts[1]))
    return rows


def _read_trajectory(path: Path) -> list[tuple[float, Pose]]:
    if not path.exists():
        raise MissingFile(str(path))
    rows = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        vals = [float(x) for x in line.split()]
        t, tx, ty, tz, qx, qy, qz, qw = vals[:8]
        rows.append((t, Pose(np.array([qw, qx, qy, qz]), np.array([tx, ty, tz]))))
    return rows


def _associate(times_a: np.ndarray, times_b: np.ndarray, window: float) -> list[tuple[int, int]]:
    """Greedy nearest-timestamp pairing within ``window`` seconds."""
    pairs = []
    used = set()
    for ia, ta in enumerate(times_a):
        diffs = np.abs(times_b - ta)
        ib = int(np.argmin(diffs))
        if diffs[ib] <= window and ib not in used:
            pairs.append((ia, ib))
            used.add(ib)
    return pairs


def load_tum(root, mode: str = "rgbd", intrinsics: Intrinsics | None = None) -> DatasetSequence:
    """Load a TUM-style directory: rgb.txt (+depth.txt in rgbd mode) and
    groundtruth.txt poses, associated by nearest timestamp within 0.02 s."""
    root = Path(root)
    rgb = _read_file_list(root / "rgb.txt")
    traj = _read_trajectory(root / "groundtruth.txt")
    if intrinsics is None:
        intr_file = root / "intrinsics.txt"
        if intr_file.exists():
            intrinsics = read_intrinsics(intr_file)
        else:
            # TUM Freiburg default camera
            intrinsics = Intrinsics(525.0, 525.0, 319.5, 239.5, 640, 480)

    rgb_times = np.array([t for t, _ in rgb])
    pose_times = np.array([t for t, _ in traj])
    rgb_pose = dict(_associate(rgb_times, pose_times, TUM_ASSOC_WINDOW))

    depth_map = {}
    if mode == "rgbd":
        depth = _read_file_list(root / "depth.txt")
        depth_times = np.array([t for t, _ in depth])
        depth_map = dict(_associate(rgb_times, depth_times, TUM_ASSOC_WINDOW))

    frames = []
    for ia, (t, rel) in enumerate(rgb):
        if ia not in rgb_pose:
            continue
        if mode == "rgbd" and ia not in depth_map:
            continue
        frames.append(
            Frame(
                timestamp=t,
                pose=traj[rgb_pose[ia]][1],
                color_path=root / rel,
                depth_path=(root / depth[depth_map[ia]][1]) if mode == "rgbd" else None,
                index=len(frames),
            )
        )
    if not frames:
        raise NoAssociations(f"{root}: no frame associated within {TUM_ASSOC_WINDOW}s")
    for frame in frames:
        if not frame.color_path.exists():
            raise MissingFile(str(frame.color_path))
        if frame.depth_path is not None and not frame.depth_path.exists():
            raise MissingFile(str(frame.depth_path))
    return DatasetSequence(frames=frames, intrinsics=intrinsics, mode=mode, root=root)


# ------------------------------------------------------------ synthetic scenes


def read_intrinsics(path: Path) -> Intrinsics:
    vals = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, raw = [p.strip() for p in line.split("=", 1)]
        vals[key] = float(raw)
    try:
        return Intrinsics(
            fx=vals["fx"], fy=vals["fy"], cx=vals["cx"], cy=vals["cy"],
            width=int(vals["width"]), height=int(vals["height"]),
        )
    except KeyError as exc:
        raise DatasetError(f"{path}: missing intrinsics key {exc}") from exc


def write_intrinsics(path, intr: Intrinsics) -> None:
    Path(path).write_text(
        f"fx = {intr.fx!r}\nfy = {intr.fy!r}\ncx = {intr.cx!r}\ncy = {intr.cy!r}\n"
        f"width = {intr.width}\nheight = {intr.height}\n"
    )


def load_synthetic(root, mode: str = "rgbd") -> DatasetSequence:
    """Load a synthetic bundle: scene.ply + trajectory.txt + intrinsics.txt.

    Color/depth are rendered lazily from the ground-truth primitives by the
    reference renderer.
    """
    root = Path(root)
    ply = root / "scene.ply"
    traj_file = root / "trajectory.txt"
    intr_file = root / "intrinsics.txt"
    for f in (ply, traj_file, intr_file):
        if not f.exists():
            raise MissingFile(str(f))
    gt_map = map_from_arrays(read_splat_ply(ply))
    traj = _read_trajectory(traj_file)
    intr = read_intrinsics(intr_file)
    frames = [
        Frame(timestamp=t, pose=pose, index=i) for i, (t, pose) in enumerate(traj)
    ]
    if not frames:
        raise DatasetError(f"{root}: empty trajectory")
    return DatasetSequence(frames=frames, intrinsics=intr, mode=mode, root=root, gt_map=gt_map)


def load_dataset(root, mode: str) -> DatasetSequence:
    root = Path(root)
    if (root / "scene.ply").exists():
        return load_synthetic(root, mode)
    if (root / "rgb.txt").exists():
        return load_tum(root, mode)
    raise DatasetError(f"{root}: neither a synthetic bundle (scene.ply) nor TUM (rgb.txt)")


# ------------------------------------------------------------------- images


def load_color_png(path) -> np.ndarray:
    img = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64)
    return img / 255.0


def load_depth_png(path) -> np.ndarray:
    img = np.asarray(Image.open(path), dtype=np.float64)
    return img / TUM_DEPTH_SCALE


def save_color_png(path, color: np.ndarray) -> None:
    """8-bit PNG with simple 1/2.2 gamma encoding from linear [0,1]."""
    encoded = np.clip(color, 0.0, 1.0) ** (1.0 / 2.2)
    Image.fromarray((encoded * 255.0 + 0.5).astype(np.uint8)).save(path)


def save_depth_png(path, depth: np.ndarray) -> None:
    """16-bit PNG in millimeters."""
    mm = np.clip(depth * 1000.0, 0, 65535).astype(np.uint16)
    Image.fromarray(mm).save(path)


def save_alpha_png(path, alpha: np.ndarray) -> None:
    Image.fromarray((np.clip(alpha, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)).save(path)


# ------------------------------------------------------------------ artifacts


def write_metrics(path, report: dict) -> None:
    """Single JSON document; key order and float repr are deterministic."""
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_metrics(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def write_table_csv(path, rows: list[dict]) -> None:
    """Comparison table CSV: one row per dict, columns from the first row.
    Floats are written via repr so identical runs produce identical bytes."""
    if not rows:
        Path(path).write_text("")
        return
    cols = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in rows:
            writer.writerow(
                [repr(v) if isinstance(v, float) else v for v in (row[c] for c in cols)]
            )


def write_loss_csv(path, records) -> None:
    """Loss-history CSV: iteration, l_pho, l_geo, l_iso, total, primitive_count."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "l_pho", "l_geo", "l_iso", "total", "primitive_count"])
        for rec in records:
            writer.writerow(
                [rec.iteration, repr(rec.l_pho), repr(rec.l_geo), repr(rec.l_iso),
                 repr(rec.total), rec.primitive_count]
            )
