"""Mapping losses and the first-order (adaptive-moment) optimizer.

The training objective combines an L1 photometric term, an optional L1
geometric (depth) term masked to confident, sensor-valid pixels, and an
isotropy regularizer that penalizes each primitive's scale vector for
straying from its own mean (discouraging needle-like splats):

    rgbd:  total = lambda_pho * L_pho + (1 - lambda_pho) * L_geo + lambda_iso * L_iso
    mono:  total = L_pho + lambda_iso * L_iso
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from splatmap.gmap import MAX_SCALE, MIN_SCALE, GaussianMap


class ShapeMismatch(ValueError):
    """Raised when two buffers entering a loss differ in shape."""


@dataclass(frozen=True)
class LossWeights:
    lambda_pho: float = 0.9
    lambda_iso: float = 10.0

    def __post_init__(self):
        if not 0.0 <= self.lambda_pho <= 1.0:
            raise ValueError("lambda_pho must be in [0, 1]")
        if self.lambda_iso < 0:
            raise ValueError("lambda_iso must be >= 0")


@dataclass
class LossReport:
    l_pho: float
    l_geo: float
    l_iso: float
    total: float
    primitive_count: int = 0
    per_keyframe: dict = field(default_factory=dict)


def _as_array(buf) -> np.ndarray:
    data = getattr(buf, "data", buf)
    return np.asarray(data, dtype=np.float64)


def _check_shapes(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"shape {a.shape} vs {b.shape}")


def loss_photometric(rendered, target) -> float:
    """Mean absolute difference over all pixels and channels."""
    a, b = _as_array(rendered), _as_array(target)
    _check_shapes(a, b)
    return float(np.mean(np.abs(a - b)))


def loss_geometric(rendered_depth, target_depth, alpha) -> float:
    """Mean |depth error| over pixels with valid sensor depth and alpha > 0.5.

    Returns 0 when no pixel qualifies.
    """
    d, t = _as_array(rendered_depth), _as_array(target_depth)
    a = _as_array(alpha)
    _check_shapes(d, t)
    _check_shapes(d, a)
    mask = (t > 0) & (a > 0.5)
    if not mask.any():
        return 0.0
    return float(np.mean(np.abs(d[mask] - t[mask])))


def loss_isotropic(log_scales: np.ndarray) -> float:
    """Sum over primitives of ||s - mean(s) * 1||_1 with s = exp(log_scale)."""
    ls = np.asarray(log_scales, dtype=np.float64).reshape(-1, 3)
    if ls.size == 0:
        return 0.0
    s = np.exp(ls)
    dev = s - s.mean(axis=1, keepdims=True)
    return float(np.abs(dev).sum())


def loss_isotropic_grad(log_scales: np.ndarray) -> np.ndarray:
    """Subgradient of ``loss_isotropic`` w.r.t. the log-scales."""
    ls = np.asarray(log_scales, dtype=np.float64).reshape(-1, 3)
    s = np.exp(ls)
    sgn = np.sign(s - s.mean(axis=1, keepdims=True))
    ds = sgn - sgn.mean(axis=1, keepdims=True)
    return ds * s


def loss_total(l_pho: float, l_geo: float, l_iso: float, weights: LossWeights,
               mode: str) -> float:
    """Weighted composition; monocular mode has no depth term and keeps the
    photometric term unweighted."""
    if mode == "rgbd":
        return (
            weights.lambda_pho * l_pho
            + (1.0 - weights.lambda_pho) * l_geo
            + weights.lambda_iso * l_iso
        )
    if mode == "mono":
        return l_pho + weights.lambda_iso * l_iso
    raise ValueError(f"unknown mode {mode!r}")


def photometric_grad(rendered: np.ndarray, target: np.ndarray) -> np.ndarray:
    """d(mean L1)/d(rendered): sign / N with N = all pixels * channels."""
    diff = rendered - target
    return np.sign(diff) / diff.size


def geometric_grad(rendered_depth: np.ndarray, target_depth: np.ndarray,
                   alpha: np.ndarray) -> np.ndarray:
    """d(masked mean L1)/d(rendered depth); zero where the mask is off."""
    mask = (target_depth > 0) & (alpha > 0.5)
    grad = np.zeros_like(rendered_depth)
    count = int(mask.sum())
    if count:
        grad[mask] = np.sign(rendered_depth[mask] - target_depth[mask]) / count
    return grad


# --------------------------------------------------------------- optimizer

PARAM_GROUPS = ("position", "log_scale", "rotation", "opacity_logit", "color")

DEFAULT_LRS = {
    "position": 1.6e-4,  # multiplied by scene extent, decayed exponentially
    "log_scale": 5e-3,
    "rotation": 1e-3,
    "opacity_logit": 5e-2,
    "color": 2.5e-3,
}
POSITION_LR_FINAL_RATIO = 1e-2  # 1.6e-4 -> 1.6e-6 over the decay horizon


@dataclass
class OptimizerState:
    """Per-parameter-group adaptive-moment accumulators.

    Moment arrays stay row-aligned with the map; ``append_rows`` and
    ``apply_keep_mask`` mirror the map's structural edits.
    """

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def ensure(self, n: int) -> None:
        shapes = {
            "position": (n, 3), "log_scale": (n, 3), "rotation": (n, 4),
            "opacity_logit": (n,), "color": (n, 3),
        }
        for g in PARAM_GROUPS:
            if g not in self.m:
                self.m[g] = np.zeros(shapes[g])
                self.v[g] = np.zeros(shapes[g])

    def append_rows(self, count: int) -> None:
        for g in PARAM_GROUPS:
            pad = np.zeros((count,) + self.m[g].shape[1:])
            self.m[g] = np.concatenate([self.m[g], pad])
            self.v[g] = np.concatenate([self.v[g], pad])

    def apply_keep_mask(self, keep: np.ndarray) -> None:
        for g in PARAM_GROUPS:
            self.m[g] = self.m[g][keep]
            self.v[g] = self.v[g][keep]


def position_lr(base: float, extent: float, iteration: int, horizon: int) -> float:
    """Exponentially decayed position step size, scaled by scene extent."""
    frac = min(1.0, iteration / max(1, horizon))
    return base * extent * (POSITION_LR_FINAL_RATIO ** frac)


def step(
    gmap: GaussianMap,
    grads,
    state: OptimizerState,
    lrs: dict | None = None,
    scene_extent: float = 1.0,
    iteration: int = 0,
    position_lr_horizon: int = 15000,
) -> None:
    """One adaptive-moment update (bias-corrected) on every parameter group,
    followed by the feasibility projections: log-scale clamp, quaternion
    renormalization, color clamp to [0, 1]."""
    lrs = dict(DEFAULT_LRS, **(lrs or {}))
    state.ensure(len(gmap))
    state.step_count += 1
    t = state.step_count
    b1, b2, eps = state.beta1, state.beta2, state.eps

    params = {
        "position": gmap.positions,
        "log_scale": gmap.log_scales,
        "rotation": gmap.rotations,
        "opacity_logit": gmap.opacity_logits,
        "color": gmap.colors,
    }
    grad_arrays = {
        "position": grads.position,
        "log_scale": grads.log_scale,
        "rotation": grads.rotation,
        "opacity_logit": grads.opacity_logit,
        "color": grads.color,
    }
    for g in PARAM_GROUPS:
        lr = lrs[g]
        if g == "position":
            lr = position_lr(lr, scene_extent, iteration, position_lr_horizon)
        grad = grad_arrays[g]
        state.m[g] = b1 * state.m[g] + (1 - b1) * grad
        state.v[g] = b2 * state.v[g] + (1 - b2) * grad * grad
        m_hat = state.m[g] / (1 - b1**t)
        v_hat = state.v[g] / (1 - b2**t)
        params[g] -= lr * m_hat / (np.sqrt(v_hat) + eps)

    # projections back to the feasible set
    np.clip(gmap.log_scales, np.log(MIN_SCALE), np.log(MAX_SCALE), out=gmap.log_scales)
    norms = np.linalg.norm(gmap.rotations, axis=1, keepdims=True)
    np.divide(gmap.rotations, norms, out=gmap.rotations, where=norms > 0)
    np.clip(gmap.colors, 0.0, 1.0, out=gmap.colors)
