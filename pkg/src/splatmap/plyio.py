"""Binary PLY export/import in the de facto Gaussian-splat layout.

Each vertex is 14 little-endian float32 values:
x, y, z, f_dc_0..2 (zeroth-order color coefficients), opacity (logit),
scale_0..2 (log), rot_0..3 (quaternion w, x, y, z).
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from splatmap.gmap import GaussianMap

SH_C0 = 0.28209479177387814
FIELDS = (
    ["x", "y", "z"]
    + [f"f_dc_{i}" for i in range(3)]
    + ["opacity"]
    + [f"scale_{i}" for i in range(3)]
    + [f"rot_{i}" for i in range(4)]
)
BYTES_PER_VERTEX = len(FIELDS) * 4


class MalformedScene(ValueError):
    """Raised when a scene PLY does not match the splat layout."""


def color_to_dc(color: np.ndarray) -> np.ndarray:
    return (np.asarray(color, dtype=np.float64) - 0.5) / SH_C0


def dc_to_color(f_dc: np.ndarray) -> np.ndarray:
    return np.asarray(f_dc, dtype=np.float64) * SH_C0 + 0.5


def write_splat_ply(path, gmap: GaussianMap) -> int:
    """Write the map's primitives; returns the vertex payload size in bytes
    (the model-size metric: count x 14 x 4)."""
    n = len(gmap)
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {n}\n"
        + "".join(f"property float {name}\n" for name in FIELDS)
        + "end_header\n"
    )
    data = np.empty((n, len(FIELDS)), dtype="<f4")
    data[:, 0:3] = gmap.positions
    data[:, 3:6] = color_to_dc(gmap.colors)
    data[:, 6] = gmap.opacity_logits
    data[:, 7:10] = gmap.log_scales
    data[:, 10:14] = gmap.rotations
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(data.tobytes())
    return n * BYTES_PER_VERTEX


def read_splat_ply(path) -> dict:
    """Read a splat PLY back into parameter arrays (float64)."""
    raw = Path(path).read_bytes()
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply") or end < 0:
        raise MalformedScene(f"{path}: not a PLY file")
    header = raw[:end].decode("ascii", errors="replace").splitlines()
    n = None
    props: list[str] = []
    fmt_ok = False
    for line in header:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt_ok = parts[1] == "binary_little_endian"
        elif parts[0] == "element" and parts[1] == "vertex":
            n = int(parts[2])
        elif parts[0] == "property" and len(parts) == 3:
            if parts[1] != "float":
                raise MalformedScene(f"{path}: non-float property {parts[2]}")
            props.append(parts[2])
    if not fmt_ok or n is None:
        raise MalformedScene(f"{path}: missing format/element declarations")
    if props != FIELDS:
        raise MalformedScene(f"{path}: unexpected property layout {props}")
    body = raw[end + len(b"end_header\n"):]
    expected = n * BYTES_PER_VERTEX
    if len(body) < expected:
        raise MalformedScene(f"{path}: truncated body ({len(body)} < {expected} bytes)")
    data = np.frombuffer(body[:expected], dtype="<f4").reshape(n, len(FIELDS)).astype(np.float64)
    return {
        "positions": data[:, 0:3],
        "colors": dc_to_color(data[:, 3:6]),
        "opacity_logits": data[:, 6],
        "log_scales": data[:, 7:10],
        "rotations": data[:, 10:14],
    }


def map_from_arrays(arrays: dict, index_cell: float | None = None) -> GaussianMap:
    gmap = GaussianMap(index_cell=index_cell)
    gmap.insert_raw(
        arrays["positions"],
        arrays["log_scales"],
        arrays["rotations"],
        arrays["opacity_logits"],
        arrays["colors"],
    )
    return gmap
