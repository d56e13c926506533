"""Compiled per-tile rasterization kernels.

The tiled renderer's inner loops (per-pixel front-to-back compositing and
its adjoint) dominate mapping runtime, so they are JIT-compiled when numba
is importable; ``renderer`` falls back to equivalent vectorized numpy
otherwise.  Kernels take the stability thresholds as arguments — they are
read from ``renderer`` at call time, never frozen at compile time.

Inside a tile, splats are bucketed per pixel row (a splat enters a row's
bucket iff its square footprint reaches that row), preserving the
front-to-back order, so each pixel walks only plausibly-overlapping
splats.  Both passes are strictly sequential per pixel, so results are
deterministic and match the numpy path to floating-point reordering
noise.
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit

    AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba
    AVAILABLE = False

    def njit(*args, **kwargs):  # type: ignore[misc]
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


@njit(cache=True)
def _row_buckets(mean_y, radius, py0, h):
    """Depth-ordered splat indices per pixel row of the tile.

    Row y holds splat i iff |y - mean_y[i]| <= radius[i].  Returns
    (buckets, counts): buckets[r, :counts[r]] are the indices for row r in
    the original (front-to-back) order.
    """
    S = mean_y.shape[0]
    counts = np.zeros(h, dtype=np.int64)
    buckets = np.empty((h, S), dtype=np.int64)
    for i in range(S):
        lo = int(math.ceil(mean_y[i] - radius[i])) - py0
        hi = int(math.floor(mean_y[i] + radius[i])) - py0
        if lo < 0:
            lo = 0
        if hi > h - 1:
            hi = h - 1
        for r in range(lo, hi + 1):
            buckets[r, counts[r]] = i
            counts[r] += 1
    return buckets, counts


@njit(cache=True)
def forward_tile(
    mean,  # (S, 2) screen-space centers, front-to-back order
    conic,  # (S, 3) inverse-covariance entries (a, b, c)
    radius,  # (S,) square footprint half-width, px
    opacity,  # (S,)
    color,  # (S, 3)
    z,  # (S,) camera depth of the mean
    px0, py0, h, w,  # tile origin and extent
    bg,  # (3,)
    alpha_clamp, alpha_min, t_min,
    out_color,  # (h*w, 3)
    out_depth,  # (h*w,)
    out_alpha,  # (h*w,)
):
    buckets, counts = _row_buckets(mean[:, 1], radius, py0, h)
    for row in range(h):
        py = float(py0 + row)
        n_row = counts[row]
        for col in range(w):
            px = float(px0 + col)
            T = 1.0
            c0 = 0.0
            c1 = 0.0
            c2 = 0.0
            d = 0.0
            for j in range(n_row):
                i = buckets[row, j]
                dx = px - mean[i, 0]
                if abs(dx) > radius[i]:
                    continue
                dy = py - mean[i, 1]
                power = -0.5 * (
                    conic[i, 0] * dx * dx
                    + 2.0 * conic[i, 1] * dx * dy
                    + conic[i, 2] * dy * dy
                )
                a = opacity[i] * math.exp(power)
                if a > alpha_clamp:
                    a = alpha_clamp
                if a < alpha_min:
                    continue
                T_new = T * (1.0 - a)
                if T_new < t_min:  # compositing stops; the crossing splat is dropped
                    break
                wgt = a * T
                c0 += wgt * color[i, 0]
                c1 += wgt * color[i, 1]
                c2 += wgt * color[i, 2]
                d += wgt * z[i]
                T = T_new
            p = row * w + col
            out_color[p, 0] = c0 + bg[0] * T
            out_color[p, 1] = c1 + bg[1] * T
            out_color[p, 2] = c2 + bg[2] * T
            out_depth[p] = d
            out_alpha[p] = 1.0 - T


@njit(cache=True)
def backward_tile(
    mean, conic, radius, opacity, color, z,
    px0, py0, h, w,
    bg,
    dC,  # (h*w, 3) upstream color gradient
    dD,  # (h*w,) upstream depth gradient
    alpha_clamp, alpha_min, t_min,
    g_mean,  # (S, 2) accumulators, updated in place
    g_conic,  # (S, 3)
    g_op,  # (S,)
    g_z,  # (S,)
    g_col,  # (S, 3)
):
    S = mean.shape[0]
    buckets, counts = _row_buckets(mean[:, 1], radius, py0, h)
    hit_i = np.empty(S, dtype=np.int64)
    hit_v = np.empty((S, 4))  # dx, dy, G, pre-clamp alpha
    for row in range(h):
        py = float(py0 + row)
        n_row = counts[row]
        for col in range(w):
            px = float(px0 + col)
            p = row * w + col

            # forward sweep: transmittance plus the composited-splat record
            T = 1.0
            n_hit = 0
            for j in range(n_row):
                i = buckets[row, j]
                dx = px - mean[i, 0]
                if abs(dx) > radius[i]:
                    continue
                dy = py - mean[i, 1]
                power = -0.5 * (
                    conic[i, 0] * dx * dx
                    + 2.0 * conic[i, 1] * dx * dy
                    + conic[i, 2] * dy * dy
                )
                G = math.exp(power)
                a = opacity[i] * G
                if a > alpha_clamp:
                    a = alpha_clamp
                if a < alpha_min:
                    continue
                T_new = T * (1.0 - a)
                if T_new < t_min:
                    break
                hit_i[n_hit] = i
                hit_v[n_hit, 0] = dx
                hit_v[n_hit, 1] = dy
                hit_v[n_hit, 2] = G
                hit_v[n_hit, 3] = opacity[i] * G
                n_hit += 1
                T = T_new
            T_final = T

            dc0 = dC[p, 0]
            dc1 = dC[p, 1]
            dc2 = dC[p, 2]
            dd = dD[p]

            # adjoint sweep, back to front: suffix blends rebuilt incrementally
            T_run = T_final
            ac0 = 0.0
            ac1 = 0.0
            ac2 = 0.0
            az = 0.0
            for hh in range(n_hit - 1, -1, -1):
                i = hit_i[hh]
                dx = hit_v[hh, 0]
                dy = hit_v[hh, 1]
                G = hit_v[hh, 2]
                a_full = hit_v[hh, 3]
                a = a_full
                if a > alpha_clamp:
                    a = alpha_clamp
                om = 1.0 - a
                T_before = T_run / om
                wgt = a * T_before

                g_col[i, 0] += wgt * dc0
                g_col[i, 1] += wgt * dc1
                g_col[i, 2] += wgt * dc2
                g_z[i] += wgt * dd

                dbl = (
                    (T_before * color[i, 0] - (ac0 + bg[0] * T_final) / om) * dc0
                    + (T_before * color[i, 1] - (ac1 + bg[1] * T_final) / om) * dc1
                    + (T_before * color[i, 2] - (ac2 + bg[2] * T_final) / om) * dc2
                    + (T_before * z[i] - az / om) * dd
                )
                if a_full < alpha_clamp:  # clamp blocks the gradient
                    dpow = a_full * dbl
                    g_op[i] += G * dbl
                    g_mean[i, 0] += dpow * (conic[i, 0] * dx + conic[i, 1] * dy)
                    g_mean[i, 1] += dpow * (conic[i, 1] * dx + conic[i, 2] * dy)
                    g_conic[i, 0] += dpow * (-0.5 * dx * dx)
                    g_conic[i, 1] += dpow * (-dx * dy)
                    g_conic[i, 2] += dpow * (-0.5 * dy * dy)

                ac0 += wgt * color[i, 0]
                ac1 += wgt * color[i, 1]
                ac2 += wgt * color[i, 2]
                az += wgt * z[i]
                T_run = T_before
