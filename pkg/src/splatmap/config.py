"""Run configuration: defaults, flat key=value file parsing, validation."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path


class ConfigError(ValueError):
    """Base class for configuration problems (maps to CLI exit code 2)."""


class UnknownKeyError(ConfigError):
    pass


class ConfigValueError(ConfigError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """All tunables of a mapping run, with the standard settings as defaults."""

    mode: str = "rgbd"  # or "mono"
    c: float = 8.0  # quadtree base minimum cell size, pixels
    tau: float = 15.0  # quadtree base variance threshold
    lam: float = 1.0  # KNN redundancy radius multiplier (0 disables)
    knn_k: int = 3
    k1: int = 5  # covisible keyframes per window
    k2: int = 3  # other keyframes per window
    iters_per_kf: int = 100
    init_iters: int = 50  # monocular initialization iterations
    keyframe_stride: int = 10
    theta: float = 0.3  # covisibility overlap threshold
    lambda_pho: float = 0.9
    lambda_iso: float = 10.0
    lr_position: float = 1.6e-4  # scaled by scene extent, decayed
    lr_log_scale: float = 5e-3
    lr_rotation: float = 1e-3
    lr_opacity: float = 5e-2
    lr_color: float = 2.5e-3
    position_lr_horizon: int = 15000
    densify_grad_threshold: float = 2e-4
    densify_interval: int = 150
    densify_start: int = 500
    densify_stop: int = 15000
    densify_split_ratio: float = 0.01  # split-size = ratio * scene extent
    prune_opacity_floor: float = 5e-3
    prune_observed_min: int = 3
    background: tuple = (0.0, 0.0, 0.0)
    seed: int = 0
    knn_cell_size: float = 0.0  # 0 = auto (2x median seed spacing)
    sparse_point_count: int = 200  # synthesized sparse points per mono keyframe
    dense_stride: int = 2  # grid stride when adaptive sampling is disabled
    # module toggles (used by the ablation harnesses)
    use_adaptive_sampling: bool = True  # off -> dense grid, no KNN filter
    use_mono_init: bool = True  # off -> random-depth seeding
    use_dynamic_window: bool = True  # off -> fixed recency window

    def lrs(self) -> dict:
        return {
            "position": self.lr_position,
            "log_scale": self.lr_log_scale,
            "rotation": self.lr_rotation,
            "opacity_logit": self.lr_opacity,
            "color": self.lr_color,
        }


_RANGES = {
    "c": lambda v: v >= 1,
    "tau": lambda v: v >= 0,
    "lam": lambda v: v >= 0,
    "knn_k": lambda v: v >= 1,
    "k1": lambda v: v >= 0,
    "k2": lambda v: v >= 0,
    "iters_per_kf": lambda v: v >= 0,
    "init_iters": lambda v: v >= 0,
    "keyframe_stride": lambda v: v >= 1,
    "theta": lambda v: 0 <= v <= 1,
    "lambda_pho": lambda v: 0 <= v <= 1,
    "lambda_iso": lambda v: v >= 0,
    "mode": lambda v: v in ("mono", "rgbd"),
    "prune_opacity_floor": lambda v: 0 <= v < 1,
    "dense_stride": lambda v: v >= 1,
    "sparse_point_count": lambda v: v >= 1,
}


def _parse_value(name: str, kind: type, raw: str, lineno: int):
    raw = raw.strip()
    try:
        if kind is bool:
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is tuple:
            parts = [float(p) for p in raw.replace(",", " ").split()]
            if len(parts) != 3:
                raise ValueError(raw)
            return tuple(parts)
        return raw  # str
    except ValueError:
        raise ConfigValueError(
            f"line {lineno}: cannot parse {name} = {raw!r} as {kind.__name__}"
        ) from None


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Parse a flat ``key = value`` file ('#' comments, blank lines allowed).

    Unknown keys and out-of-range values raise ConfigError subclasses with
    line numbers; an empty file yields all defaults.
    """
    known = {f.name: f.type for f in fields(RunConfig)}
    types = {
        f.name: type(getattr(RunConfig(), f.name)) for f in fields(RunConfig)
    }
    values: dict = {}
    if path is not None:
        text = Path(path).read_text()
        for lineno, line in enumerate(text.splitlines(), start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigValueError(f"line {lineno}: expected key = value, got {line!r}")
            key, raw = stripped.split("=", 1)
            key = key.strip()
            if key not in known:
                raise UnknownKeyError(f"line {lineno}: unknown key {key!r}")
            values[key] = _parse_value(key, types[key], raw, lineno)
            if key in _RANGES and not _RANGES[key](values[key]):
                raise ConfigValueError(f"line {lineno}: {key} = {values[key]} out of range")
    if overrides:
        for key, val in overrides.items():
            if val is None:
                continue
            if key not in known:
                raise UnknownKeyError(f"unknown config key {key!r}")
            values[key] = val
            if key in _RANGES and not _RANGES[key](val):
                raise ConfigValueError(f"{key} = {val} out of range")
    return RunConfig(**values)


def with_updates(config: RunConfig, **updates) -> RunConfig:
    return replace(config, **updates)
