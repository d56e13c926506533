"""Command-line entry point.

Subcommands::

    run             map a dataset end to end (renders, PLY, metrics, loss CSVs)
    synth           generate a synthetic scene bundle
    eval            score a saved splat PLY against a dataset's sensor images
    ablate-cells    sweep the quadtree minimum cell size
    ablate-window   dynamic vs fixed keyframe window
    ablate-modules  toggle sampling / initialization / window modules
    export          render per-view PNG dumps from a saved splat PLY

Exit codes: 0 success, 1 runtime failure, 2 configuration/flag error,
3 dataset error.  Config-file values are overridden by flags.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from splatmap.config import ConfigError, load_config, with_updates
from splatmap.dataio import (
    DatasetError,
    load_dataset,
    save_alpha_png,
    save_color_png,
    save_depth_png,
    write_metrics,
)
from splatmap.harness import (
    ablate_cell_size,
    ablate_modules,
    ablate_window,
    evaluate_map,
    run_mapping,
)
from splatmap.plyio import MalformedScene, map_from_arrays, read_splat_ply
from splatmap.renderer import render_arrays
from splatmap.synth import make_bundle

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_DATASET = 3


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", required=True, help="dataset directory")
    p.add_argument("--config", required=True, help="key=value config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--mode", choices=["mono", "rgbd"], default=None,
                   help="override the config's sensor mode")
    p.add_argument("--seed", type=int, default=None, help="override the config's seed")
    p.add_argument("--max-frames", type=int, default=None,
                   help="process only the first N frames")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splatmap", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    _add_run_flags(sub.add_parser("run", help="map a dataset end to end"))

    p_synth = sub.add_parser("synth", help="generate a synthetic scene bundle")
    p_synth.add_argument("--scene", required=True, choices=["planar", "rooms", "random"])
    p_synth.add_argument("--gaussians", required=True, type=int, help="primitive count")
    p_synth.add_argument("--views", required=True, type=int, help="trajectory length")
    p_synth.add_argument("--out", required=True, help="bundle directory")
    p_synth.add_argument("--seed", type=int, default=0)

    p_eval = sub.add_parser("eval", help="score a saved map against a dataset")
    p_eval.add_argument("--map", required=True, help="splat PLY file")
    p_eval.add_argument("--dataset", required=True)
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--mode", choices=["mono", "rgbd"], default="rgbd")

    for name in ("ablate-cells", "ablate-window", "ablate-modules"):
        p = sub.add_parser(name, help=f"{name.replace('-', ' ')} ablation")
        _add_run_flags(p)
        if name == "ablate-cells":
            p.add_argument("--cells", type=float, nargs="+", default=[4.0, 8.0, 16.0])

    p_export = sub.add_parser("export", help="render PNG dumps from a saved map")
    p_export.add_argument("--map", required=True, help="splat PLY file")
    p_export.add_argument("--dataset", required=True)
    p_export.add_argument("--out", required=True)
    p_export.add_argument("--frames", type=int, nargs="*", default=None,
                          help="frame indices (default: all)")

    return parser


def _load_run_config(args):
    overrides = {"mode": args.mode, "seed": args.seed}
    return load_config(args.config, overrides=overrides)


def _cmd_run(args) -> int:
    config = _load_run_config(args)
    sequence = load_dataset(args.dataset, config.mode)
    run_mapping(sequence, config, out_dir=args.out, max_frames=args.max_frames)
    return EXIT_OK


def _cmd_synth(args) -> int:
    if args.gaussians < 1 or args.views < 1:
        raise ConfigError("--gaussians and --views must be at least 1")
    make_bundle(args.out, kind=args.scene, n_gaussians=args.gaussians,
                n_frames=args.views, seed=args.seed)
    return EXIT_OK


def _load_map_file(path):
    if not Path(path).exists():
        raise DatasetError(f"map file not found: {path}")
    return map_from_arrays(read_splat_ply(path))


def _cmd_eval(args) -> int:
    gmap = _load_map_file(args.map)
    sequence = load_dataset(args.dataset, args.mode)
    report = evaluate_map(gmap, sequence, list(range(len(sequence))))
    report["primitive_count"] = len(gmap)
    report["model_bytes"] = gmap.model_bytes()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics(out / "metrics.json", report)
    return EXIT_OK


def _cmd_ablate_cells(args) -> int:
    config = _load_run_config(args)
    sequence = load_dataset(args.dataset, config.mode)
    ablate_cell_size(sequence, config, cell_sizes=args.cells, out_dir=args.out,
                     max_frames=args.max_frames)
    return EXIT_OK


def _cmd_ablate_window(args) -> int:
    config = _load_run_config(args)
    sequence = load_dataset(args.dataset, config.mode)
    ablate_window(sequence, config, out_dir=args.out, max_frames=args.max_frames)
    return EXIT_OK


def _cmd_ablate_modules(args) -> int:
    config = _load_run_config(args)
    sequence = load_dataset(args.dataset, config.mode)
    ablate_modules(sequence, config, out_dir=args.out, max_frames=args.max_frames)
    return EXIT_OK


def _cmd_export(args) -> int:
    gmap = _load_map_file(args.map)
    sequence = load_dataset(args.dataset, "mono")
    frames = args.frames if args.frames else list(range(len(sequence)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in frames:
        if not 0 <= i < len(sequence):
            raise ConfigError(f"frame index {i} outside [0, {len(sequence)})")
        color, depth, alpha, _ = render_arrays(
            gmap, sequence.frames[i].pose, sequence.intrinsics, np.zeros(3)
        )
        save_color_png(out / f"frame_{i:06d}_color.png", color)
        save_depth_png(out / f"frame_{i:06d}_depth.png", depth)
        save_alpha_png(out / f"frame_{i:06d}_alpha.png", alpha)
    return EXIT_OK


_HANDLERS = {
    "run": _cmd_run,
    "synth": _cmd_synth,
    "eval": _cmd_eval,
    "ablate-cells": _cmd_ablate_cells,
    "ablate-window": _cmd_ablate_window,
    "ablate-modules": _cmd_ablate_modules,
    "export": _cmd_export,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # argparse exits 2 on flag errors
    try:
        return _HANDLERS[args.command](args)
    except ConfigError as exc:
        print(f"splatmap: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, MalformedScene) as exc:
        print(f"splatmap: dataset error: {exc}", file=sys.stderr)
        return EXIT_DATASET
    except Exception as exc:  # noqa: BLE001 — CLI boundary
        print(f"splatmap: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
