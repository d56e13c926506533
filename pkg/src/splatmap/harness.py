"""Experiment harness: full mapping runs and the ablation drivers.

`run_mapping` consumes a posed frame sequence, feeds it through the
engine, evaluates the final map against the sensor images at every
keyframe, and (optionally) writes all artifacts — rendered views, the
splat PLY, metrics.json, per-keyframe loss CSVs, and a timings sidecar.
Wall-clock numbers live only in timings.json so metrics.json stays
bit-identical across repeated seeded runs.
"""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np

from splatmap.config import RunConfig, with_updates
from splatmap.dataio import (
    DatasetSequence,
    save_alpha_png,
    save_color_png,
    save_depth_png,
    write_loss_csv,
    write_metrics,
    write_table_csv,
)
from splatmap.engine import MappingEngine
from splatmap.metrics import psnr, ssim
from splatmap.plyio import write_splat_ply
from splatmap.renderer import render_arrays


def evaluate_map(gmap, sequence: DatasetSequence, frame_indices: list[int],
                 background=None) -> dict:
    """Render a map at the given frames and score against the sensor color
    images."""
    if background is None:
        background = np.zeros(3)
    per_view = []
    for i in frame_indices:
        color_r, _, _, _ = render_arrays(
            gmap, sequence.frames[i].pose, sequence.intrinsics, background
        )
        target = sequence.color(i)
        per_view.append(
            {
                "frame": i,
                "psnr": psnr(color_r, target),
                "ssim": ssim(color_r, target),
            }
        )
    return {
        "per_view": per_view,
        "psnr_mean": float(np.mean([v["psnr"] for v in per_view])) if per_view else 0.0,
        "ssim_mean": float(np.mean([v["ssim"] for v in per_view])) if per_view else 0.0,
    }


def run_mapping(sequence: DatasetSequence, config: RunConfig, out_dir=None,
                max_frames: int | None = None) -> dict:
    """Map a sequence end to end; returns the evaluation report."""
    engine = MappingEngine(config, sequence.intrinsics)
    n_frames = len(sequence) if max_frames is None else min(max_frames, len(sequence))

    t0 = time.perf_counter()
    keyframe_frames: list[int] = []
    timeline: list[dict] = []
    for i in range(n_frames):
        pose = sequence.frames[i].pose
        color = sequence.color(i)
        if config.mode == "rgbd":
            kf_id = engine.process_frame_rgbd(color, sequence.depth(i), pose, i)
        else:
            if i % config.keyframe_stride != 0:
                continue
            sparse_pts, sparse_cols = sequence.sparse_points(i, config.sparse_point_count)
            kf_id = engine.process_frame_mono(color, pose, sparse_pts, sparse_cols, i)
        if kf_id is not None:
            keyframe_frames.append(i)
            timeline.append(
                {
                    "kf_id": kf_id,
                    "frame": i,
                    "primitive_count": len(engine.gmap),
                    "model_bytes": engine.gmap.model_bytes(),
                }
            )
    mapping_seconds = time.perf_counter() - t0

    report = evaluate_map(engine.gmap, sequence, keyframe_frames, engine.background)
    report.update(
        {
            "mode": config.mode,
            "frames_processed": n_frames,
            "keyframes": len(keyframe_frames),
            "primitive_count": len(engine.gmap),
            "model_bytes": engine.gmap.model_bytes(),
            "timeline": timeline,
            "config": {
                "c": config.c,
                "tau": config.tau,
                "lam": config.lam,
                "k1": config.k1,
                "k2": config.k2,
                "iters_per_kf": config.iters_per_kf,
                "seed": config.seed,
                "use_adaptive_sampling": config.use_adaptive_sampling,
                "use_mono_init": config.use_mono_init,
                "use_dynamic_window": config.use_dynamic_window,
            },
        }
    )

    if out_dir is not None:
        out_dir = Path(out_dir)
        renders = out_dir / "renders"
        renders.mkdir(parents=True, exist_ok=True)
        for i in keyframe_frames:
            color_r, depth_r, alpha_r, _ = render_arrays(
                engine.gmap, sequence.frames[i].pose, sequence.intrinsics, engine.background
            )
            save_color_png(renders / f"frame_{i:06d}_color.png", color_r)
            save_depth_png(renders / f"frame_{i:06d}_depth.png", depth_r)
            save_alpha_png(renders / f"frame_{i:06d}_alpha.png", alpha_r)
        write_splat_ply(out_dir / "map.ply", engine.gmap)
        write_metrics(out_dir / "metrics.json", report)
        write_metrics(out_dir / "timings.json", {"mapping_seconds": mapping_seconds})
        for kf_id, records in sorted(engine.loss_history.items()):
            write_loss_csv(out_dir / f"losses_kf{kf_id:04d}.csv", records)

    report["engine"] = engine  # handed back for in-process callers; not serialized
    return report


def _strip_engine(report: dict) -> dict:
    return {k: v for k, v in report.items() if k != "engine"}


def ablate_cell_size(sequence: DatasetSequence, config: RunConfig,
                     cell_sizes=(4.0, 8.0, 16.0), out_dir=None,
                     max_frames: int | None = None) -> dict:
    """Sweep the quadtree minimum cell size; larger cells mean coarser
    sampling, fewer seeded primitives, and a smaller model."""
    rows = []
    for c in cell_sizes:
        rep = run_mapping(sequence, with_updates(config, c=float(c)), max_frames=max_frames)
        rows.append(
            {
                "c": float(c),
                "primitive_count": rep["primitive_count"],
                "model_bytes": rep["model_bytes"],
                "psnr_mean": rep["psnr_mean"],
                "ssim_mean": rep["ssim_mean"],
            }
        )
    result = {"sweep": "cell_size", "rows": rows}
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_metrics(out_dir / "ablate_cells.json", result)
        write_table_csv(out_dir / "ablate_cells.csv", rows)
    return result


def first_third_psnr(engine: MappingEngine, sequence: DatasetSequence,
                     keyframe_frames: list[int]) -> float:
    """Mean PSNR over the first third of the keyframes — the part of the
    scene mapped earliest, and the part a recency-only window forgets."""
    n = max(1, len(keyframe_frames) // 3)
    rep = evaluate_map(engine.gmap, sequence, keyframe_frames[:n], engine.background)
    return rep["psnr_mean"]


def ablate_window(sequence: DatasetSequence, config: RunConfig, out_dir=None,
                  max_frames: int | None = None) -> dict:
    """Dynamic random window vs. fixed recency window, scored overall and on
    the earliest-mapped third of the keyframes."""
    rows = []
    for label, flag in (("dynamic", True), ("fixed", False)):
        rep = run_mapping(
            sequence, with_updates(config, use_dynamic_window=flag), max_frames=max_frames
        )
        engine = rep["engine"]
        kf_frames = [t["frame"] for t in rep["timeline"]]
        rows.append(
            {
                "window": label,
                "psnr_mean": rep["psnr_mean"],
                "ssim_mean": rep["ssim_mean"],
                "first_third_psnr": first_third_psnr(engine, sequence, kf_frames),
                "primitive_count": rep["primitive_count"],
            }
        )
    result = {"sweep": "window", "rows": rows}
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_metrics(out_dir / "ablate_window.json", result)
        write_table_csv(out_dir / "ablate_window.csv", rows)
    return result


MODULE_VARIANTS = (
    ("all_off", dict(use_adaptive_sampling=False, use_mono_init=False, use_dynamic_window=False)),
    ("sampling_only", dict(use_adaptive_sampling=True, use_mono_init=False, use_dynamic_window=False)),
    ("init_only", dict(use_adaptive_sampling=False, use_mono_init=True, use_dynamic_window=False)),
    ("window_only", dict(use_adaptive_sampling=False, use_mono_init=False, use_dynamic_window=True)),
    ("all_on", dict(use_adaptive_sampling=True, use_mono_init=True, use_dynamic_window=True)),
)


def ablate_modules(sequence: DatasetSequence, config: RunConfig, out_dir=None,
                   max_frames: int | None = None) -> dict:
    """Toggle the three optional modules (adaptive sampling, monocular
    initialization, dynamic window) one at a time and all together.
    Runs in monocular mode, where all three modules are in play."""
    rows = []
    for label, toggles in MODULE_VARIANTS:
        rep = run_mapping(
            sequence,
            with_updates(config, mode="mono", **toggles),
            max_frames=max_frames,
        )
        rows.append(
            {
                "variant": label,
                "psnr_mean": rep["psnr_mean"],
                "ssim_mean": rep["ssim_mean"],
                "primitive_count": rep["primitive_count"],
                "model_bytes": rep["model_bytes"],
            }
        )
    result = {"sweep": "modules", "rows": rows}
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_metrics(out_dir / "ablate_modules.json", result)
        write_table_csv(out_dir / "ablate_modules.csv", rows)
    return result
