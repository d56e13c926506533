"""The mapping engine: keyframe registration and windowed map optimization.

Every ``keyframe_stride``-th input frame becomes a keyframe.  RGB-D frames
seed primitives from adaptively sampled pixels back-projected through the
sensor depth; monocular frames bootstrap from a sparse point cloud, refine
it on the new frame alone, then densify from the rendered depth.  After
registration the map is optimized over randomly drawn keyframe windows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from splatmap.config import RunConfig
from splatmap.geometry import Intrinsics, Pose, back_project_many
from splatmap.gmap import GaussianMap
from splatmap.keyframes import (
    CovisPartition,
    EmptyFrame,
    Keyframe,
    KeyframeRegistry,
    NoSparsePoints,
    build_fixed_window,
    build_window,
    covisibility_partition,
)
from splatmap.optim import (
    LossWeights,
    OptimizerState,
    geometric_grad,
    loss_geometric,
    loss_isotropic,
    loss_isotropic_grad,
    loss_photometric,
    photometric_grad,
    step,
)
from splatmap.renderer import GradientBuffer, render_arrays, render_backward
from splatmap.sampling import QuadtreeParams, adaptive_sample, dense_sample

MIN_SCENE_EXTENT = 1e-3


@dataclass
class IterationRecord:
    iteration: int
    l_pho: float
    l_geo: float
    l_iso: float
    total: float
    primitive_count: int


class MappingEngine:
    def __init__(self, config: RunConfig, intr: Intrinsics):
        self.config = config
        self.intr = intr
        self.gmap = GaussianMap(
            index_cell=config.knn_cell_size if config.knn_cell_size > 0 else None
        )
        self.registry = KeyframeRegistry()
        self.opt_state = OptimizerState()
        self.rng = np.random.default_rng(config.seed)
        self.weights = LossWeights(config.lambda_pho, config.lambda_iso)
        self.global_iteration = 0
        self.scene_extent = 1.0
        self.partitions: dict[int, CovisPartition] = {}
        self.loss_history: dict[int, list[IterationRecord]] = {}
        # per-keyframe (depth, alpha) rendered right after mono initialization
        self.init_renders: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self.background = np.asarray(config.background, dtype=np.float64)

    # ---------------------------------------------------------------- helpers

    @property
    def _eim_on(self) -> bool:
        return self.config.use_adaptive_sampling

    def _effective_lambda(self) -> float:
        return self.config.lam if self._eim_on else 0.0

    def _sample_frame(self, color: np.ndarray):
        if self._eim_on:
            params = QuadtreeParams(c=self.config.c, tau=self.config.tau)
            return adaptive_sample(color, params)
        return dense_sample(color, stride=self.config.dense_stride)

    def _insert_candidates(self, positions, colors, depths) -> int:
        if len(self.gmap) and self.gmap.index_cell is not None:
            # optimization moves primitives; refresh cells before KNN checks
            self.gmap.rebuild_index()
        inserted = self.gmap.insert_filtered(
            positions, colors, depths=depths,
            k=self.config.knn_k, lam=self._effective_lambda(),
        )
        self.opt_state.ensure(len(self.gmap) - inserted.size)
        self.opt_state.append_rows(inserted.size)
        return inserted.size

    def _recompute_extent(self) -> None:
        pts = [kf.pose.camera_center() for kf in self.registry]
        if len(self.gmap):
            pts.append(self.gmap.positions)
        stacked = np.vstack([np.atleast_2d(p) for p in pts])
        diag = float(np.linalg.norm(stacked.max(axis=0) - stacked.min(axis=0)))
        self.scene_extent = max(diag, MIN_SCENE_EXTENT)

    def _register(self, kf: Keyframe) -> int:
        kf_id = self.registry.add(kf)
        self._recompute_extent()
        self.partitions[kf_id] = covisibility_partition(
            kf, self.registry, self.intr, self.config.theta
        )
        return kf_id

    # ----------------------------------------------------------- registration

    def register_keyframe_rgbd(self, color: np.ndarray, depth: np.ndarray,
                               pose: Pose, frame_index: int = -1) -> int:
        """Sample, back-project through sensor depth, filter-insert, register."""
        color = np.asarray(color, dtype=np.float64)
        depth = np.asarray(depth, dtype=np.float64)
        samples = self._sample_frame(color)
        u, v = samples.pixels[:, 0], samples.pixels[:, 1]
        d = depth[v, u]
        valid = d > 0
        if not valid.any():
            raise EmptyFrame(f"frame {frame_index}: no sample has valid depth")
        pixels = samples.pixels[valid].astype(np.float64)
        depths = d[valid]
        positions = back_project_many(pixels, depths, pose, self.intr)
        colors = color[v[valid], u[valid]]
        self._insert_candidates(positions, colors, depths)
        kf = Keyframe(
            kf_id=-1, color=color, pose=pose, depth=depth,
            anchor_points=positions, anchor_depths=depths, frame_index=frame_index,
        )
        return self._register(kf)

    def register_keyframe_mono(
        self,
        color: np.ndarray,
        pose: Pose,
        sparse_points: np.ndarray | None,
        sparse_colors: np.ndarray | None,
        frame_index: int = -1,
        init_iters: int | None = None,
    ) -> int:
        """Monocular registration: seed sparse points, refine on this frame,
        then densify from the rendered depth (or random-depth seeding when
        the initialization module is disabled)."""
        color = np.asarray(color, dtype=np.float64)
        if init_iters is None:
            init_iters = self.config.init_iters
        n_sparse = 0 if sparse_points is None else np.asarray(sparse_points).shape[0]
        if n_sparse == 0 and len(self.gmap) == 0:
            raise NoSparsePoints(f"frame {frame_index}: no sparse points and empty map")

        sparse_depth_med = 1.0
        if n_sparse:
            sparse_points = np.asarray(sparse_points, dtype=np.float64).reshape(-1, 3)
            if sparse_colors is None:
                sparse_colors = np.full((n_sparse, 3), 0.5)
            sparse_colors = np.asarray(sparse_colors, dtype=np.float64).reshape(-1, 3)
            cam_z = pose.world_to_camera(sparse_points)[:, 2]
            sparse_depth_med = float(np.median(cam_z[cam_z > 0])) if (cam_z > 0).any() else 1.0

        if self.config.use_mono_init:
            kf_id = self._register_mono_initialized(
                color, pose, sparse_points if n_sparse else None,
                sparse_colors if n_sparse else None, frame_index, init_iters,
            )
        else:
            kf_id = self._register_mono_random_depth(
                color, pose, sparse_depth_med, frame_index,
            )
        return kf_id

    def _register_mono_initialized(self, color, pose, sparse_points, sparse_colors,
                                   frame_index, init_iters) -> int:
        anchors = []
        anchor_depths = []
        if sparse_points is not None:
            cam = pose.world_to_camera(sparse_points)
            self._insert_candidates(sparse_points, sparse_colors, cam[:, 2])
            anchors.append(sparse_points)
            anchor_depths.append(cam[:, 2])

        kf = Keyframe(
            kf_id=-1, color=color, pose=pose,
            sparse_points=sparse_points, sparse_colors=sparse_colors,
            anchor_points=np.vstack(anchors) if anchors else np.empty((0, 3)),
            anchor_depths=np.concatenate(anchor_depths) if anchor_depths else np.empty(0),
            frame_index=frame_index,
        )
        kf_id = self.registry.add(kf)
        self._recompute_extent()

        # refine the sparse seed on this frame alone
        history = self.loss_history.setdefault(kf_id, [])
        for _ in range(init_iters):
            history.append(self._optimize_iteration([kf_id], allow_densify=False))

        # densify guided by the refined rendering
        _, depth_r, alpha_r, _ = render_arrays(self.gmap, pose, self.intr, self.background)
        self.init_renders[kf_id] = (depth_r, alpha_r)
        samples = self._sample_frame(color)
        u, v = samples.pixels[:, 0], samples.pixels[:, 1]
        confident = alpha_r[v, u] > 0.5
        if confident.any():
            pix = samples.pixels[confident].astype(np.float64)
            depths = depth_r[v[confident], u[confident]]
            positive = depths > 0
            if positive.any():
                pix, depths = pix[positive], depths[positive]
                positions = back_project_many(pix, depths, pose, self.intr)
                colors = color[pix[:, 1].astype(int), pix[:, 0].astype(int)]
                self._insert_candidates(positions, colors, depths)
                kf.anchor_points = np.vstack([kf.anchor_points, positions])
                kf.anchor_depths = np.concatenate([kf.anchor_depths, depths])

        self._recompute_extent()
        self.partitions[kf_id] = covisibility_partition(
            kf, self.registry, self.intr, self.config.theta
        )
        return kf_id

    def _register_mono_random_depth(self, color, pose, depth_scale, frame_index) -> int:
        samples = self._sample_frame(color)
        u, v = samples.pixels[:, 0], samples.pixels[:, 1]
        depths = depth_scale * self.rng.uniform(0.5, 1.5, size=u.shape[0])
        pixels = samples.pixels.astype(np.float64)
        positions = back_project_many(pixels, depths, pose, self.intr)
        colors = color[v, u]
        self._insert_candidates(positions, colors, depths)
        kf = Keyframe(
            kf_id=-1, color=color, pose=pose,
            anchor_points=positions, anchor_depths=depths, frame_index=frame_index,
        )
        return self._register(kf)

    # ----------------------------------------------------------- optimization

    def _optimize_iteration(self, members: list[int], allow_densify: bool) -> IterationRecord:
        """Render every window member, accumulate the joint loss gradient,
        take one optimizer step, and (on schedule) densify/prune."""
        cfg = self.config
        self.global_iteration += 1
        n = len(self.gmap)
        grads = GradientBuffer.zeros(n)
        l_pho_sum = 0.0
        l_geo_sum = 0.0
        visible = np.zeros(n, dtype=bool)
        rgbd = cfg.mode == "rgbd"
        pho_weight = self.weights.lambda_pho if rgbd else 1.0

        for kf_id in members:
            kf = self.registry.get(kf_id)
            color_r, depth_r, alpha_r, cache = render_arrays(
                self.gmap, kf.pose, self.intr, self.background
            )
            rows = cache.proj.rows
            self.gmap.observe_count[rows] += 1
            visible[rows] = True

            l_pho = loss_photometric(color_r, kf.color)
            dL_dcolor = pho_weight * photometric_grad(color_r, kf.color)
            dL_ddepth = None
            if rgbd and kf.depth is not None:
                l_geo = loss_geometric(depth_r, kf.depth, alpha_r)
                dL_ddepth = (1.0 - self.weights.lambda_pho) * geometric_grad(
                    depth_r, kf.depth, alpha_r
                )
                l_geo_sum += l_geo
            l_pho_sum += l_pho

            g = render_backward(cache, dL_dcolor, dL_ddepth)
            grads.position += g.position
            grads.log_scale += g.log_scale
            grads.rotation += g.rotation
            grads.opacity_logit += g.opacity_logit
            grads.color += g.color

        vis_rows = np.nonzero(visible)[0]
        l_iso = loss_isotropic(self.gmap.log_scales[vis_rows])
        if vis_rows.size:
            grads.log_scale[vis_rows] += self.weights.lambda_iso * loss_isotropic_grad(
                self.gmap.log_scales[vis_rows]
            )

        if rgbd:
            total = (
                self.weights.lambda_pho * l_pho_sum
                + (1.0 - self.weights.lambda_pho) * l_geo_sum
                + self.weights.lambda_iso * l_iso
            )
        else:
            total = l_pho_sum + self.weights.lambda_iso * l_iso

        # densify bookkeeping: accumulated position-gradient magnitude
        self.gmap.grad_accum += np.linalg.norm(grads.position, axis=1)
        self.gmap.grad_count += visible.astype(np.int64)

        step(
            self.gmap, grads, self.opt_state,
            lrs=cfg.lrs(), scene_extent=self.scene_extent,
            iteration=self.global_iteration,
            position_lr_horizon=cfg.position_lr_horizon,
        )

        if (
            allow_densify
            and cfg.densify_start <= self.global_iteration <= cfg.densify_stop
            and self.global_iteration % cfg.densify_interval == 0
        ):
            _, keep, appended = self.gmap.densify(
                cfg.densify_grad_threshold,
                cfg.densify_split_ratio * self.scene_extent,
                self.rng,
            )
            self.opt_state.apply_keep_mask(keep)
            self.opt_state.append_rows(appended)
            _, keep = self.gmap.prune(cfg.prune_opacity_floor, cfg.prune_observed_min)
            self.opt_state.apply_keep_mask(keep)

        return IterationRecord(
            iteration=self.global_iteration,
            l_pho=l_pho_sum, l_geo=l_geo_sum, l_iso=l_iso, total=total,
            primitive_count=len(self.gmap),
        )

    def optimize_keyframe(self, kf_id: int, iterations: int | None = None) -> list[IterationRecord]:
        """Optimize the map over dynamic windows anchored at ``kf_id``."""
        cfg = self.config
        if iterations is None:
            iterations = cfg.iters_per_kf
        partition = self.partitions[kf_id]
        history = self.loss_history.setdefault(kf_id, [])
        records = []
        for _ in range(iterations):
            if cfg.use_dynamic_window:
                window = build_window(kf_id, partition, cfg.k1, cfg.k2, self.rng)
            else:
                window = build_fixed_window(kf_id, self.registry, cfg.k1 + cfg.k2)
            rec = self._optimize_iteration(window.members, allow_densify=True)
            records.append(rec)
            history.append(rec)
        return records

    # ------------------------------------------------------------------ runs

    def process_frame_rgbd(self, color, depth, pose, frame_index) -> int | None:
        """Stride-gated keyframe intake; returns the keyframe id when one was
        created (and optimized), else None."""
        if frame_index % self.config.keyframe_stride != 0:
            return None
        kf_id = self.register_keyframe_rgbd(color, depth, pose, frame_index)
        self.optimize_keyframe(kf_id)
        return kf_id

    def process_frame_mono(self, color, pose, sparse_points, sparse_colors,
                           frame_index) -> int | None:
        if frame_index % self.config.keyframe_stride != 0:
            return None
        kf_id = self.register_keyframe_mono(
            color, pose, sparse_points, sparse_colors, frame_index
        )
        self.optimize_keyframe(kf_id)
        return kf_id
