"""Differentiable tile-based Gaussian-splat rasterizer (CPU, numpy).

Forward: primitives are projected to 2D Gaussians (EWA-style, with the
projection Jacobian), binned into 16x16 pixel tiles, sorted front-to-back,
and alpha-composited into color, depth, and accumulated-opacity buffers.
Backward: the analytic chain rule runs from per-pixel color/depth
gradients back to every primitive parameter (position, log-scale,
quaternion, opacity logit, color).

A naive reference renderer (global sort, no alpha floor, no early
termination) shares the projection/footprint stage and is used by tests
and as the synthetic-sensor source, so the tiled path is never compared
against itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from splatmap import _kernels
from splatmap.geometry import ImageBuffer, Intrinsics, Pose, Z_NEAR, quats_to_rots
from splatmap.gmap import GaussianMap, sigmoid

TILE = 16
DILATION = 0.3  # px^2 added to the 2D covariance diagonal (low-pass)
ALPHA_CLAMP = 0.99
ALPHA_MIN = 1.0 / 255.0
T_MIN = 1e-4
FOOTPRINT_SIGMA = 3.0


@dataclass
class RenderOutput:
    """Rasterizer output buffers (float32)."""

    color: ImageBuffer
    depth: ImageBuffer
    alpha: ImageBuffer


@dataclass
class Projected:
    """Projection-stage cache: visible splats plus backward intermediates."""

    rows: np.ndarray  # (M,) map row of each visible splat
    mean2d: np.ndarray  # (M, 2)
    conic: np.ndarray  # (M, 3): (a, b, c) of the 2x2 inverse covariance
    depth: np.ndarray  # (M,) camera-frame Z of the mean
    opacity: np.ndarray  # (M,)
    color: np.ndarray  # (M, 3)
    radius: np.ndarray  # (M,) footprint half-width, pixels
    # intermediates retained for the backward pass
    t_cam: np.ndarray  # (M, 3)
    M2: np.ndarray  # (M, 2, 3) = J @ R_cw
    cov_world: np.ndarray  # (M, 3, 3)
    R_cw: np.ndarray  # (3, 3)
    Rq: np.ndarray  # (M, 3, 3) rotations of the (normalized) quaternions
    scales: np.ndarray  # (M, 3) exp(log_scale)
    quat_unit: np.ndarray  # (M, 4)
    quat_norm: np.ndarray  # (M,)
    n_total: int  # rows in the source map


@dataclass
class GradientBuffer:
    """Loss gradients per map row; culled primitives hold exact zeros."""

    position: np.ndarray
    log_scale: np.ndarray
    rotation: np.ndarray
    opacity_logit: np.ndarray
    color: np.ndarray

    @staticmethod
    def zeros(n: int) -> "GradientBuffer":
        return GradientBuffer(
            position=np.zeros((n, 3)),
            log_scale=np.zeros((n, 3)),
            rotation=np.zeros((n, 4)),
            opacity_logit=np.zeros(n),
            color=np.zeros((n, 3)),
        )


def project_splats(gmap: GaussianMap, pose: Pose, intr: Intrinsics) -> Projected:
    """Project map primitives to screen-space 2D Gaussians.

    Culls primitives behind the near plane or whose footprint (3 sigma of
    the dilated 2D covariance, as an axis-aligned square) misses the image.
    """
    n = len(gmap)
    R_wc = pose.rotation()
    R_cw = R_wc.T
    empty = lambda: Projected(
        rows=np.empty(0, dtype=np.int64), mean2d=np.empty((0, 2)), conic=np.empty((0, 3)),
        depth=np.empty(0), opacity=np.empty(0), color=np.empty((0, 3)),
        radius=np.empty(0), t_cam=np.empty((0, 3)), M2=np.empty((0, 2, 3)),
        cov_world=np.empty((0, 3, 3)), R_cw=R_cw, Rq=np.empty((0, 3, 3)),
        scales=np.empty((0, 3)), quat_unit=np.empty((0, 4)), quat_norm=np.empty(0),
        n_total=n,
    )
    if n == 0:
        return empty()

    t_cam_all = gmap.positions @ R_wc - (pose.trans @ R_wc)
    front = t_cam_all[:, 2] > Z_NEAR
    rows = np.nonzero(front)[0]
    if rows.size == 0:
        return empty()

    t_cam = t_cam_all[rows]
    X, Y, Z = t_cam[:, 0], t_cam[:, 1], t_cam[:, 2]
    mean2d = np.stack([intr.fx * X / Z + intr.cx, intr.fy * Y / Z + intr.cy], axis=1)

    J = np.zeros((rows.size, 2, 3))
    J[:, 0, 0] = intr.fx / Z
    J[:, 0, 2] = -intr.fx * X / (Z * Z)
    J[:, 1, 1] = intr.fy / Z
    J[:, 1, 2] = -intr.fy * Y / (Z * Z)

    quat_raw = gmap.rotations[rows]
    quat_norm = np.linalg.norm(quat_raw, axis=1)
    quat_unit = quat_raw / quat_norm[:, None]
    Rq = quats_to_rots(quat_unit)
    scales = np.exp(gmap.log_scales[rows])
    cov_world = np.einsum("mij,mj,mkj->mik", Rq, scales**2, Rq)

    M2 = np.einsum("mij,jk->mik", J, R_cw)
    cov2d = np.einsum("mij,mjk,mlk->mil", M2, cov_world, M2)
    cov2d[:, 0, 0] += DILATION
    cov2d[:, 1, 1] += DILATION

    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    mid = 0.5 * (a + c)
    lam1 = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radius = np.ceil(FOOTPRINT_SIGMA * np.sqrt(lam1))

    visible = (
        (mean2d[:, 0] + radius >= 0)
        & (mean2d[:, 0] - radius <= intr.width - 1)
        & (mean2d[:, 1] + radius >= 0)
        & (mean2d[:, 1] - radius <= intr.height - 1)
        & (det > 0)
    )
    keep = np.nonzero(visible)[0]

    inv_det = 1.0 / det[keep]
    conic = np.stack([c[keep] * inv_det, -b[keep] * inv_det, a[keep] * inv_det], axis=1)

    return Projected(
        rows=rows[keep],
        mean2d=mean2d[keep],
        conic=conic,
        depth=Z[keep],
        opacity=sigmoid(gmap.opacity_logits[rows[keep]]),
        color=gmap.colors[rows[keep]],
        radius=radius[keep],
        t_cam=t_cam[keep],
        M2=M2[keep],
        cov_world=cov_world[keep],
        R_cw=R_cw,
        Rq=Rq[keep],
        scales=scales[keep],
        quat_unit=quat_unit[keep],
        quat_norm=quat_norm[keep],
        n_total=n,
    )


@dataclass
class ForwardCache:
    """Everything the backward pass needs to replay the forward blend."""

    proj: Projected
    tiles: dict  # (ty, tx) -> sorted array of projected-splat indices
    intr: Intrinsics
    background: np.ndarray


def _bin_tiles(proj: Projected, intr: Intrinsics) -> dict:
    """Assign each visible splat to the tiles its square footprint overlaps,
    front-to-back sorted (depth, then map row) within each tile."""
    W, H = intr.width, intr.height
    n = proj.rows.size
    if n == 0:
        return {}
    mx, my, r = proj.mean2d[:, 0], proj.mean2d[:, 1], proj.radius
    x0 = np.maximum(np.ceil(mx - r), 0).astype(np.int64)
    x1 = np.minimum(np.floor(mx + r), W - 1).astype(np.int64)
    y0 = np.maximum(np.ceil(my - r), 0).astype(np.int64)
    y1 = np.minimum(np.floor(my + r), H - 1).astype(np.int64)
    ok = (x1 >= x0) & (y1 >= y0)
    tx0, ty0 = x0 // TILE, y0 // TILE
    nx = np.where(ok, x1 // TILE - tx0 + 1, 0)
    ny = np.where(ok, y1 // TILE - ty0 + 1, 0)
    counts = nx * ny
    total = int(counts.sum())
    if total == 0:
        return {}

    # expand each splat into its (tile, splat) pairs, in splat order
    splat = np.repeat(np.arange(n), counts)
    k = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    nx_e = np.repeat(nx, counts)
    ty = np.repeat(ty0, counts) + k // nx_e
    tx = np.repeat(tx0, counts) + k % nx_e
    n_tx = (W + TILE - 1) // TILE
    key = ty * n_tx + tx

    # lexsort is stable, so equal (tile, depth) keeps splat order
    order = np.lexsort((proj.depth[splat], key))
    key_s = key[order]
    splat_s = splat[order]
    bounds = np.nonzero(np.diff(key_s))[0] + 1
    starts = np.concatenate([[0], bounds])
    ends = np.concatenate([bounds, [total]])
    out = {}
    for s, e in zip(starts, ends):
        kk = int(key_s[s])
        out[(kk // n_tx, kk % n_tx)] = splat_s[s:e]
    return out


def _tile_alpha(proj: Projected, idx: np.ndarray, px: np.ndarray, py: np.ndarray):
    """(S, P) per-splat, per-pixel opacity after footprint, clamp, and floor.

    Returns (alpha, alpha_full, G, dx, dy) where alpha_full is the
    pre-clamp value op*G and G the Gaussian falloff.
    """
    mean = proj.mean2d[idx]
    con = proj.conic[idx]
    r = proj.radius[idx]
    dx = px[None, :] - mean[:, 0, None]
    dy = py[None, :] - mean[:, 1, None]
    power = -0.5 * (
        con[:, 0, None] * dx * dx + 2.0 * con[:, 1, None] * dx * dy + con[:, 2, None] * dy * dy
    )
    G = np.exp(power)
    inside = (np.abs(dx) <= r[:, None]) & (np.abs(dy) <= r[:, None])
    alpha_full = np.where(inside, proj.opacity[idx, None] * G, 0.0)
    alpha = np.minimum(alpha_full, ALPHA_CLAMP)
    alpha = np.where(alpha >= ALPHA_MIN, alpha, 0.0)
    return alpha, alpha_full, G, dx, dy


def _transmittance(alpha: np.ndarray):
    """Front-to-back transmittance terms and the contribution weights.

    The compositing stops before the splat that would push transmittance
    below T_MIN: contribution mask m_i = (T_incl_i >= T_MIN) is a prefix
    because T_incl is non-increasing.
    """
    T_incl = np.cumprod(1.0 - alpha, axis=0)
    T_before = np.vstack([np.ones((1, alpha.shape[1])), T_incl[:-1]])
    m = T_incl >= T_MIN
    w = np.where(m, alpha * T_before, 0.0)
    T_final = np.where(m, T_incl, 1.0).min(axis=0)
    return T_incl, T_before, m, w, T_final


def render_arrays(
    gmap: GaussianMap,
    pose: Pose,
    intr: Intrinsics,
    background: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, ForwardCache]:
    """Tiled forward pass; float64 (color, depth, alpha) plus backward cache."""
    bg = np.zeros(3) if background is None else np.asarray(background, dtype=np.float64)
    proj = project_splats(gmap, pose, intr)
    H, W = intr.height, intr.width
    color = np.empty((H, W, 3))
    color[:] = bg
    depth = np.zeros((H, W))
    alpha_out = np.zeros((H, W))
    tiles = _bin_tiles(proj, intr)

    for (ty, tx), idx in sorted(tiles.items()):
        yy0, xx0 = ty * TILE, tx * TILE
        yy1, xx1 = min(yy0 + TILE, H), min(xx0 + TILE, W)
        th, tw = yy1 - yy0, xx1 - xx0

        if _kernels.AVAILABLE:
            tile_color = np.empty((th * tw, 3))
            tile_depth = np.empty(th * tw)
            tile_alpha = np.empty(th * tw)
            _kernels.forward_tile(
                proj.mean2d[idx], proj.conic[idx], proj.radius[idx],
                proj.opacity[idx], proj.color[idx], proj.depth[idx],
                xx0, yy0, th, tw, bg,
                ALPHA_CLAMP, ALPHA_MIN, T_MIN,
                tile_color, tile_depth, tile_alpha,
            )
            color[yy0:yy1, xx0:xx1] = tile_color.reshape(th, tw, 3)
            depth[yy0:yy1, xx0:xx1] = tile_depth.reshape(th, tw)
            alpha_out[yy0:yy1, xx0:xx1] = tile_alpha.reshape(th, tw)
            continue

        ys = np.arange(yy0, yy1)
        xs = np.arange(xx0, xx1)
        py, px = np.meshgrid(ys, xs, indexing="ij")
        px = px.ravel().astype(np.float64)
        py = py.ravel().astype(np.float64)

        alpha, _, _, _, _ = _tile_alpha(proj, idx, px, py)
        _, _, _, w, T_final = _transmittance(alpha)

        tile_color = w.T @ proj.color[idx] + bg[None, :] * T_final[:, None]
        tile_depth = w.T @ proj.depth[idx]
        color[yy0:yy1, xx0:xx1] = tile_color.reshape(th, tw, 3)
        depth[yy0:yy1, xx0:xx1] = tile_depth.reshape(th, tw)
        alpha_out[yy0:yy1, xx0:xx1] = (1.0 - T_final).reshape(th, tw)

    cache = ForwardCache(proj=proj, tiles=tiles, intr=intr, background=bg)
    return color, depth, alpha_out, cache


def render(
    gmap: GaussianMap, pose: Pose, intr: Intrinsics, background: np.ndarray | None = None
) -> RenderOutput:
    """Tiled forward pass packaged as float32 image buffers."""
    color, depth, alpha, _ = render_arrays(gmap, pose, intr, background)
    return RenderOutput(
        color=ImageBuffer(color.astype(np.float32)),
        depth=ImageBuffer(depth.astype(np.float32)),
        alpha=ImageBuffer(alpha.astype(np.float32)),
    )


def render_reference_arrays(
    gmap: GaussianMap,
    pose: Pose,
    intr: Intrinsics,
    background: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Naive renderer: one global front-to-back sort, full per-pixel blend.

    Shares the projection/footprint stage with the tiled path but applies
    no alpha floor and no early termination, so differences against the
    tiled renderer isolate exactly those stability thresholds.
    """
    bg = np.zeros(3) if background is None else np.asarray(background, dtype=np.float64)
    proj = project_splats(gmap, pose, intr)
    H, W = intr.height, intr.width
    if proj.rows.size == 0:
        color = np.empty((H, W, 3))
        color[:] = bg
        return color, np.zeros((H, W)), np.zeros((H, W))

    order = np.argsort(proj.depth, kind="stable")
    py, px = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    px = px.ravel().astype(np.float64)
    py = py.ravel().astype(np.float64)

    mean = proj.mean2d[order]
    con = proj.conic[order]
    r = proj.radius[order]
    dx = px[None, :] - mean[:, 0, None]
    dy = py[None, :] - mean[:, 1, None]
    power = -0.5 * (
        con[:, 0, None] * dx * dx + 2.0 * con[:, 1, None] * dx * dy + con[:, 2, None] * dy * dy
    )
    inside = (np.abs(dx) <= r[:, None]) & (np.abs(dy) <= r[:, None])
    alpha = np.where(inside, proj.opacity[order, None] * np.exp(power), 0.0)
    alpha = np.minimum(alpha, ALPHA_CLAMP)

    T_incl = np.cumprod(1.0 - alpha, axis=0)
    T_before = np.vstack([np.ones((1, alpha.shape[1])), T_incl[:-1]])
    w = alpha * T_before
    T_final = T_incl[-1]

    color = (w.T @ proj.color[order] + bg[None, :] * T_final[:, None]).reshape(H, W, 3)
    depth = (w.T @ proj.depth[order]).reshape(H, W)
    alpha_out = (1.0 - T_final).reshape(H, W)
    return color, depth, alpha_out


def render_reference(
    gmap: GaussianMap, pose: Pose, intr: Intrinsics, background: np.ndarray | None = None
) -> RenderOutput:
    color, depth, alpha = render_reference_arrays(gmap, pose, intr, background)
    return RenderOutput(
        color=ImageBuffer(color.astype(np.float32)),
        depth=ImageBuffer(depth.astype(np.float32)),
        alpha=ImageBuffer(alpha.astype(np.float32)),
    )


# ------------------------------------------------------------------ backward

# Per-component derivatives of the rotation matrix w.r.t. a unit quaternion
# (w, x, y, z); validated against finite differences in the test suite.


def _rotation_quat_grads(q: np.ndarray) -> np.ndarray:
    """(M, 4, 3, 3) stack of dR/dq_k for unit quaternions (M, 4)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    zero = np.zeros_like(w)
    dRw = np.stack(
        [zero, -z, y, z, zero, -x, -y, x, zero], axis=1
    ).reshape(-1, 3, 3)
    dRx = np.stack(
        [zero, y, z, y, -2 * x, -w, z, w, -2 * x], axis=1
    ).reshape(-1, 3, 3)
    dRy = np.stack(
        [-2 * y, x, w, x, zero, z, -w, z, -2 * y], axis=1
    ).reshape(-1, 3, 3)
    dRz = np.stack(
        [-2 * z, -w, x, w, -2 * z, y, x, y, zero], axis=1
    ).reshape(-1, 3, 3)
    return 2.0 * np.stack([dRw, dRx, dRy, dRz], axis=1)


def render_backward(
    cache: ForwardCache,
    dL_dcolor: np.ndarray,
    dL_ddepth: np.ndarray | None = None,
) -> GradientBuffer:
    """Analytic gradients of a scalar loss through the tiled forward pass.

    ``dL_dcolor`` is (H, W, 3); ``dL_ddepth`` (H, W) or None.  Returns
    per-map-row gradients (zeros for culled primitives).  Gradient does not
    flow through clamped (alpha' at 0.99) or floored (alpha' < 1/255)
    contributions, matching the forward's piecewise definition.
    """
    proj = cache.proj
    intr = cache.intr
    bg = cache.background
    M = proj.rows.size
    grads = GradientBuffer.zeros(proj.n_total)
    if M == 0:
        return grads
    dL_dcolor = np.asarray(dL_dcolor, dtype=np.float64)
    if dL_ddepth is None:
        dL_ddepth = np.zeros((intr.height, intr.width))
    else:
        dL_ddepth = np.asarray(dL_ddepth, dtype=np.float64)

    # Pixel-space accumulators per visible splat
    g_mean2d = np.zeros((M, 2))
    g_conic = np.zeros((M, 3))
    g_op = np.zeros(M)
    g_z = np.zeros(M)
    g_col = np.zeros((M, 3))

    for (ty, tx), idx in sorted(cache.tiles.items()):
        yy0, xx0 = ty * TILE, tx * TILE
        yy1 = min(yy0 + TILE, intr.height)
        xx1 = min(xx0 + TILE, intr.width)
        th, tw = yy1 - yy0, xx1 - xx0

        dC = np.ascontiguousarray(dL_dcolor[yy0:yy1, xx0:xx1]).reshape(-1, 3)
        dD = np.ascontiguousarray(dL_ddepth[yy0:yy1, xx0:xx1]).reshape(-1)

        if _kernels.AVAILABLE:
            S = idx.size
            t_mean = np.zeros((S, 2))
            t_conic = np.zeros((S, 3))
            t_op = np.zeros(S)
            t_z = np.zeros(S)
            t_col = np.zeros((S, 3))
            _kernels.backward_tile(
                proj.mean2d[idx], proj.conic[idx], proj.radius[idx],
                proj.opacity[idx], proj.color[idx], proj.depth[idx],
                xx0, yy0, th, tw, bg, dC, dD,
                ALPHA_CLAMP, ALPHA_MIN, T_MIN,
                t_mean, t_conic, t_op, t_z, t_col,
            )
            g_mean2d[idx] += t_mean
            g_conic[idx] += t_conic
            g_op[idx] += t_op
            g_z[idx] += t_z
            g_col[idx] += t_col
            continue

        ys = np.arange(yy0, yy1)
        xs = np.arange(xx0, xx1)
        py, px = np.meshgrid(ys, xs, indexing="ij")
        px = px.ravel().astype(np.float64)
        py = py.ravel().astype(np.float64)

        alpha, alpha_full, G, dx, dy = _tile_alpha(proj, idx, px, py)
        _, T_before, m, w, T_final = _transmittance(alpha)
        S = idx.size
        cols = proj.color[idx]  # (S, 3)
        zs = proj.depth[idx]  # (S,)

        # direct color / depth contributions
        g_col[idx] += w @ dC
        g_z[idx] += w @ dD

        # d(blend)/d(alpha_i): T_before_i * value_i - suffix_i / (1 - alpha_i)
        wc = w[:, :, None] * cols[:, None, :]  # (S, P, 3)
        suffix_c = (wc.sum(axis=0)[None] - np.cumsum(wc, axis=0)) + bg[None, None, :] * T_final[
            None, :, None
        ]
        wz = w * zs[:, None]
        suffix_z = wz.sum(axis=0)[None] - np.cumsum(wz, axis=0)

        active = m & (alpha > 0.0)
        one_minus = np.where(active, 1.0 - alpha, 1.0)
        dblend_dalpha = (
            (T_before[:, :, None] * cols[:, None, :] - suffix_c / one_minus[:, :, None])
            * dC[None, :, :]
        ).sum(axis=2)
        dblend_dalpha += (T_before * zs[:, None] - suffix_z / one_minus) * dD[None, :]
        dL_dalpha = np.where(active, dblend_dalpha, 0.0)

        # through the clamp: no gradient where alpha_full hit 0.99
        flow = active & (alpha_full < ALPHA_CLAMP)
        dL_dalpha_eff = np.where(flow, dL_dalpha, 0.0)

        g_op[idx] += (G * dL_dalpha_eff).sum(axis=1)
        dL_dpower = proj.opacity[idx, None] * G * dL_dalpha_eff  # = alpha_full * dL/dalpha

        con = proj.conic[idx]
        g_mean2d[idx, 0] += (dL_dpower * (con[:, 0, None] * dx + con[:, 1, None] * dy)).sum(axis=1)
        g_mean2d[idx, 1] += (dL_dpower * (con[:, 1, None] * dx + con[:, 2, None] * dy)).sum(axis=1)
        g_conic[idx, 0] += (dL_dpower * (-0.5 * dx * dx)).sum(axis=1)
        g_conic[idx, 1] += (dL_dpower * (-dx * dy)).sum(axis=1)
        g_conic[idx, 2] += (dL_dpower * (-0.5 * dy * dy)).sum(axis=1)

    # ---- chain from screen-space quantities to primitive parameters ----
    X, Y, Z = proj.t_cam[:, 0], proj.t_cam[:, 1], proj.t_cam[:, 2]
    fx, fy = intr.fx, intr.fy

    # conic = inverse of cov2d: dL/dCov = -Q dL/dQ Q (full-matrix form)
    Q = np.empty((M, 2, 2))
    Q[:, 0, 0] = proj.conic[:, 0]
    Q[:, 0, 1] = Q[:, 1, 0] = proj.conic[:, 1]
    Q[:, 1, 1] = proj.conic[:, 2]
    dL_dQ = np.empty((M, 2, 2))
    dL_dQ[:, 0, 0] = g_conic[:, 0]
    dL_dQ[:, 0, 1] = dL_dQ[:, 1, 0] = 0.5 * g_conic[:, 1]
    dL_dQ[:, 1, 1] = g_conic[:, 2]
    dL_dcov2d = -np.einsum("mij,mjk,mkl->mil", Q, dL_dQ, Q)

    # cov2d = M2 cov_world M2^T (+ dilation): dL/dM2 = 2 dL_dcov2d M2 cov_world
    dL_dM2 = 2.0 * np.einsum("mij,mjk,mkl->mil", dL_dcov2d, proj.M2, proj.cov_world)
    dL_dcov_world = np.einsum("mji,mjk,mkl->mil", proj.M2, dL_dcov2d, proj.M2)

    # M2 = J R_cw: J carries the camera-point dependence
    dL_dJ = np.einsum("mij,kj->mik", dL_dM2, proj.R_cw)
    Z2 = Z * Z
    dL_dt = np.zeros((M, 3))
    dL_dt[:, 0] = dL_dJ[:, 0, 2] * (-fx / Z2)
    dL_dt[:, 1] = dL_dJ[:, 1, 2] * (-fy / Z2)
    dL_dt[:, 2] = (
        dL_dJ[:, 0, 0] * (-fx / Z2)
        + dL_dJ[:, 1, 1] * (-fy / Z2)
        + dL_dJ[:, 0, 2] * (2.0 * fx * X / (Z2 * Z))
        + dL_dJ[:, 1, 2] * (2.0 * fy * Y / (Z2 * Z))
    )
    # mean2d = (fx X / Z + cx, fy Y / Z + cy)
    dL_dt[:, 0] += g_mean2d[:, 0] * fx / Z
    dL_dt[:, 1] += g_mean2d[:, 1] * fy / Z
    dL_dt[:, 2] += -g_mean2d[:, 0] * fx * X / Z2 - g_mean2d[:, 1] * fy * Y / Z2
    # blended depth is the camera-frame Z itself
    dL_dt[:, 2] += g_z

    dL_dposition = dL_dt @ proj.R_cw

    # cov_world = M3 M3^T with M3 = R(q) diag(s)
    M3 = proj.Rq * proj.scales[:, None, :]
    dL_dM3 = 2.0 * np.einsum("mij,mjk->mik", dL_dcov_world, M3)
    dL_ds = np.einsum("mjk,mjk->mk", dL_dM3, proj.Rq)
    dL_dlog_scale = proj.scales * dL_ds
    dL_dRq = dL_dM3 * proj.scales[:, None, :]

    dR_dq = _rotation_quat_grads(proj.quat_unit)
    dL_dq_unit = np.einsum("mij,mkij->mk", dL_dRq, dR_dq)
    # through normalization q_unit = q / |q|
    radial = np.einsum("mk,mk->m", proj.quat_unit, dL_dq_unit)
    dL_dquat = (dL_dq_unit - proj.quat_unit * radial[:, None]) / proj.quat_norm[:, None]

    dL_dopacity_logit = g_op * proj.opacity * (1.0 - proj.opacity)

    grads.position[proj.rows] = dL_dposition
    grads.log_scale[proj.rows] = dL_dlog_scale
    grads.rotation[proj.rows] = dL_dquat
    grads.opacity_logit[proj.rows] = dL_dopacity_logit
    grads.color[proj.rows] = g_col
    return grads
