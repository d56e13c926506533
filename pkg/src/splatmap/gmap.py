"""The Gaussian map: primitive storage, spatial index, filtering, densify/prune.

Primitives are stored struct-of-arrays (float64) with stable integer ids.
A uniform voxel grid over positions answers exact KNN queries by scanning
growing shells of cells; the redundancy filter uses those queries to drop
candidate insertions that fall inside the scaled radius of all of their k
nearest existing primitives.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from splatmap.geometry import quat_to_rot, quats_to_rots

DEFAULT_KNN_K = 3
MIN_SCALE = 1e-6
MAX_SCALE = 1e3
SEED_SCALE_FLOOR = 1e-4  # meters; floor for nearest-neighbour scale seeding


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p / (1.0 - p))


def build_covariances(log_scales: np.ndarray, quats: np.ndarray) -> np.ndarray:
    """(N, 3, 3) world covariances R diag(s^2) R^T from log-scales and quats."""
    R = quats_to_rots(quats)
    s2 = np.exp(2.0 * np.asarray(log_scales, dtype=np.float64))
    return np.einsum("nij,nj,nkj->nik", R, s2, R)


@dataclass
class GaussianPrimitive:
    """One anisotropic Gaussian (a convenience view; storage is SoA)."""

    position: np.ndarray
    log_scale: np.ndarray
    rotation: np.ndarray  # unit quaternion (w, x, y, z)
    opacity_logit: float
    color: np.ndarray

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))

    @property
    def scale(self) -> np.ndarray:
        return np.exp(self.log_scale)

    def covariance(self) -> np.ndarray:
        R = quat_to_rot(self.rotation)
        return R @ np.diag(self.scale**2) @ R.T


class GaussianMap:
    """Growable primitive store with a uniform-grid KNN index.

    All mutation happens through the insert/prune/densify methods so the
    spatial index stays consistent.  Rows keep insertion order; structural
    edits are reported back to the caller (appended counts and keep masks)
    so optimizer state can be kept aligned.
    """

    def __init__(self, index_cell: float | None = None):
        self.positions = np.empty((0, 3), dtype=np.float64)
        self.log_scales = np.empty((0, 3), dtype=np.float64)
        self.rotations = np.empty((0, 4), dtype=np.float64)
        self.opacity_logits = np.empty((0,), dtype=np.float64)
        self.colors = np.empty((0, 3), dtype=np.float64)
        self.ids = np.empty((0,), dtype=np.int64)
        # densify/prune bookkeeping
        self.grad_accum = np.empty((0,), dtype=np.float64)
        self.grad_count = np.empty((0,), dtype=np.int64)
        self.observe_count = np.empty((0,), dtype=np.int64)

        self._next_id = 0
        self._id_to_row: dict[int, int] = {}
        self._cells: dict[tuple[int, int, int], list[int]] = {}
        self._index_cell = index_cell  # None until auto-sized on first batch
        # Monotone bounds on occupied cell coordinates (upper bound on span;
        # removals do not shrink them, which only costs extra empty shells).
        self._cell_lo: list[int] | None = None
        self._cell_hi: list[int] | None = None

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def index_cell(self) -> float | None:
        return self._index_cell

    # ------------------------------------------------------------------ index

    def _cell_of(self, pos: np.ndarray) -> tuple[int, int, int]:
        c = self._index_cell
        return (int(np.floor(pos[0] / c)), int(np.floor(pos[1] / c)), int(np.floor(pos[2] / c)))

    def _index_add(self, pid: int, pos: np.ndarray) -> None:
        key = self._cell_of(pos)
        self._cells.setdefault(key, []).append(pid)
        if self._cell_lo is None:
            self._cell_lo = list(key)
            self._cell_hi = list(key)
        else:
            for axis in range(3):
                self._cell_lo[axis] = min(self._cell_lo[axis], key[axis])
                self._cell_hi[axis] = max(self._cell_hi[axis], key[axis])

    def _auto_cell_size(self, batch: np.ndarray) -> float:
        """About twice the median nearest-neighbour spacing of a seed batch.

        The estimate only needs to be in the right ballpark (cell size never
        affects KNN exactness, only shell-search speed), so large batches are
        cut to a prefix before the quadratic pairwise step.  Seed batches
        arrive in subdivision order, which keeps a prefix spatially coherent.
        """
        n = batch.shape[0]
        if n < 2:
            return 0.05
        batch = batch[:1024]
        d2 = np.sum((batch[:, None, :] - batch[None, :, :]) ** 2, axis=2)
        np.fill_diagonal(d2, np.inf)
        nn = np.sqrt(d2.min(axis=1))
        return float(max(2.0 * np.median(nn), 1e-6))

    def _ensure_index_cell(self, batch: np.ndarray) -> None:
        if self._index_cell is None:
            self._index_cell = self._auto_cell_size(batch)

    def rebuild_index(self) -> None:
        self._cells = {}
        self._cell_lo = None
        self._cell_hi = None
        for row in range(len(self)):
            self._index_add(int(self.ids[row]), self.positions[row])

    # ------------------------------------------------------------------- knn

    def knn(self, query: np.ndarray, k: int) -> list[tuple[int, float]]:
        """Up to k nearest live primitives as (id, distance), ascending.

        Exact: shells of grid cells are scanned outward until the kth-best
        distance is provably final.  Ties break toward the smaller id.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        n = len(self)
        if n == 0:
            return []
        query = np.asarray(query, dtype=np.float64)
        if n <= k or self._index_cell is None:
            return self._knn_brute(query, k)

        cell = self._cell_of(query)
        best: list[tuple[float, int]] = []  # max-heap via negated distance
        occupied = self._cells
        # Bound on how far shells can be pushed before all cells are exhausted:
        span = 0
        if self._cell_lo is not None:
            lo, hi = self._cell_lo, self._cell_hi
            span = max(
                abs(cell[0] - lo[0]), abs(hi[0] - cell[0]),
                abs(cell[1] - lo[1]), abs(hi[1] - cell[1]),
                abs(cell[2] - lo[2]), abs(hi[2] - cell[2]),
            )

        def scan(key):
            bucket = occupied.get(key)
            if not bucket:
                return
            for pid in bucket:
                row = self._id_to_row[pid]
                d = float(np.linalg.norm(self.positions[row] - query))
                item = (-d, -pid)
                if len(best) < k:
                    heapq.heappush(best, item)
                elif item > best[0]:
                    heapq.heapreplace(best, item)

        r = 0
        while True:
            if r == 0:
                scan(cell)
            else:
                lo0, hi0 = cell[0] - r, cell[0] + r
                lo1, hi1 = cell[1] - r, cell[1] + r
                lo2, hi2 = cell[2] - r, cell[2] + r
                for i in range(lo0, hi0 + 1):
                    for j in range(lo1, hi1 + 1):
                        on_face = i in (lo0, hi0) or j in (lo1, hi1)
                        if on_face:
                            for m in range(lo2, hi2 + 1):
                                scan((i, j, m))
                        else:
                            scan((i, j, lo2))
                            scan((i, j, hi2))
            # After scanning Chebyshev radius <= r, any unscanned point lies
            # at distance >= r * cell_size from the query.
            if len(best) == k and -best[0][0] <= r * self._index_cell:
                break
            if r > span:
                break
            r += 1
        out = sorted((-d, -nid) for d, nid in best)
        return [(nid, d) for d, nid in out]

    def _knn_brute(self, query: np.ndarray, k: int) -> list[tuple[int, float]]:
        d = np.linalg.norm(self.positions - query, axis=1)
        order = np.lexsort((self.ids, d))[:k]
        return [(int(self.ids[i]), float(d[i])) for i in order]

    # ------------------------------------------------------------ insertion

    def is_redundant(self, candidate_pos: np.ndarray, k: int = DEFAULT_KNN_K,
                     lam: float = 1.0) -> bool:
        """True iff the map has >= k primitives and the candidate lies within
        lam * r_i of ALL of its k nearest, where r_i = min scale component."""
        if lam <= 0:
            # lam == 0 disables filtering (a distance can never be < 0)
            if lam < 0:
                raise ValueError("lambda must be >= 0")
            return False
        if len(self) < k:
            return False
        neighbors = self.knn(candidate_pos, k)
        for pid, dist in neighbors:
            row = self._id_to_row[pid]
            r_i = float(np.exp(self.log_scales[row]).min())
            if not dist < lam * r_i:
                return False
        return True

    def _append_rows(self, positions, log_scales, rotations, opacity_logits, colors) -> np.ndarray:
        n_new = positions.shape[0]
        start_row = len(self)
        new_ids = np.arange(self._next_id, self._next_id + n_new, dtype=np.int64)
        self._next_id += n_new
        self.positions = np.concatenate([self.positions, positions])
        self.log_scales = np.concatenate([self.log_scales, log_scales])
        self.rotations = np.concatenate([self.rotations, rotations])
        self.opacity_logits = np.concatenate([self.opacity_logits, opacity_logits])
        self.colors = np.concatenate([self.colors, colors])
        self.ids = np.concatenate([self.ids, new_ids])
        self.grad_accum = np.concatenate([self.grad_accum, np.zeros(n_new)])
        self.grad_count = np.concatenate([self.grad_count, np.zeros(n_new, dtype=np.int64)])
        self.observe_count = np.concatenate([self.observe_count, np.zeros(n_new, dtype=np.int64)])
        for i, pid in enumerate(new_ids):
            self._id_to_row[int(pid)] = start_row + i
            self._index_add(int(pid), positions[i])
        return new_ids

    def insert_filtered(
        self,
        positions: np.ndarray,
        colors: np.ndarray,
        depths: np.ndarray | None = None,
        k: int = DEFAULT_KNN_K,
        lam: float = 1.0,
    ) -> np.ndarray:
        """Insert candidates one by one, skipping redundant ones.

        Candidates are tested in order against the current map, including
        candidates accepted earlier in the same call.  New primitives are
        seeded isotropic: scale = distance to the nearest existing primitive
        (or 2% of the candidate's camera depth into an empty map), opacity
        0.5, identity rotation, source-pixel color.  Returns inserted ids.
        """
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
        if depths is None:
            depths = np.linalg.norm(positions, axis=1)
        depths = np.asarray(depths, dtype=np.float64).reshape(-1)
        self._ensure_index_cell(positions)

        inserted: list[int] = []
        for i in range(positions.shape[0]):
            pos = positions[i]
            if lam > 0 and self.is_redundant(pos, k=k, lam=lam):
                continue
            if len(self) > 0:
                _, d_nn = self.knn(pos, 1)[0]
                scale = max(SEED_SCALE_FLOOR, d_nn)
            else:
                scale = max(SEED_SCALE_FLOOR, 0.02 * depths[i])
            scale = min(scale, MAX_SCALE)
            new_id = self._append_rows(
                pos[None, :],
                np.full((1, 3), np.log(scale)),
                np.array([[1.0, 0.0, 0.0, 0.0]]),
                np.zeros(1),  # logit(0.5) = 0
                colors[i][None, :],
            )[0]
            inserted.append(int(new_id))
        return np.array(inserted, dtype=np.int64)

    def insert_raw(self, positions, log_scales, rotations, opacity_logits, colors) -> np.ndarray:
        """Unfiltered bulk insert of fully specified primitives (ids returned)."""
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        self._ensure_index_cell(positions)
        return self._append_rows(
            positions,
            np.asarray(log_scales, dtype=np.float64).reshape(-1, 3),
            np.asarray(rotations, dtype=np.float64).reshape(-1, 4),
            np.asarray(opacity_logits, dtype=np.float64).reshape(-1),
            np.asarray(colors, dtype=np.float64).reshape(-1, 3),
        )

    # ------------------------------------------------------- prune / densify

    def _apply_keep_mask(self, keep: np.ndarray) -> None:
        self.positions = self.positions[keep]
        self.log_scales = self.log_scales[keep]
        self.rotations = self.rotations[keep]
        self.opacity_logits = self.opacity_logits[keep]
        self.colors = self.colors[keep]
        self.ids = self.ids[keep]
        self.grad_accum = self.grad_accum[keep]
        self.grad_count = self.grad_count[keep]
        self.observe_count = self.observe_count[keep]
        self._id_to_row = {int(pid): row for row, pid in enumerate(self.ids)}
        # positions may have drifted since insertion, so the cell each row was
        # registered under is unreliable: rebuild instead of removing rows
        if self._index_cell is not None:
            self.rebuild_index()

    def prune(self, opacity_floor: float, observed_min: int) -> tuple[np.ndarray, np.ndarray]:
        """Remove primitives with opacity < floor seen at least observed_min
        times.  Returns (removed ids, keep mask over the previous rows)."""
        alpha = sigmoid(self.opacity_logits)
        remove = (alpha < opacity_floor) & (self.observe_count >= observed_min)
        removed_ids = self.ids[remove].copy()
        keep = ~remove
        if remove.any():
            self._apply_keep_mask(keep)
        return removed_ids, keep

    def densify(
        self,
        grad_threshold: float,
        split_size: float,
        rng: np.random.Generator,
    ) -> tuple[np.ndarray, np.ndarray, int]:
        """Split or clone primitives with large accumulated position gradients.

        Mean accumulated gradient magnitude above ``grad_threshold`` selects a
        primitive; if its largest scale exceeds ``split_size`` it is split into
        two copies offset by +/- one draw from its own covariance with scales
        divided by 1.6 (parent removed), otherwise it is cloned in place.
        Gradient stats are reset.  Returns (new ids, keep mask, appended count).
        """
        n = len(self)
        if n == 0:
            return np.empty(0, dtype=np.int64), np.ones(0, dtype=bool), 0
        denom = np.maximum(self.grad_count, 1)
        mean_grad = self.grad_accum / denom
        selected = (mean_grad > grad_threshold) & (self.grad_count > 0)

        scales = np.exp(self.log_scales)
        split = selected & (scales.max(axis=1) > split_size)
        clone = selected & ~split

        new_pos, new_ls, new_rot, new_op, new_col = [], [], [], [], []
        for row in np.nonzero(split)[0]:
            R = quat_to_rot(self.rotations[row])
            offset = R @ (scales[row] * rng.standard_normal(3))
            for sign in (1.0, -1.0):
                new_pos.append(self.positions[row] + sign * offset)
                new_ls.append(self.log_scales[row] - np.log(1.6))
                new_rot.append(self.rotations[row])
                new_op.append(self.opacity_logits[row])
                new_col.append(self.colors[row])
        for row in np.nonzero(clone)[0]:
            new_pos.append(self.positions[row].copy())
            new_ls.append(self.log_scales[row].copy())
            new_rot.append(self.rotations[row].copy())
            new_op.append(self.opacity_logits[row])
            new_col.append(self.colors[row].copy())

        keep = ~split
        if split.any():
            self._apply_keep_mask(keep)
        appended = len(new_pos)
        if appended:
            new_ids = self._append_rows(
                np.array(new_pos), np.array(new_ls), np.array(new_rot),
                np.array(new_op), np.array(new_col),
            )
        else:
            new_ids = np.empty(0, dtype=np.int64)
        self.grad_accum[:] = 0.0
        self.grad_count[:] = 0
        return new_ids, keep, appended

    # ------------------------------------------------------------- accessors

    def get(self, pid: int) -> GaussianPrimitive:
        row = self._id_to_row[pid]
        return GaussianPrimitive(
            position=self.positions[row].copy(),
            log_scale=self.log_scales[row].copy(),
            rotation=self.rotations[row].copy(),
            opacity_logit=float(self.opacity_logits[row]),
            color=self.colors[row].copy(),
        )

    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    def model_bytes(self) -> int:
        """Storage footprint of the splat interchange layout: 14 float32 per
        primitive."""
        return len(self) * 14 * 4
