"""Numba kernels for tile-based alpha compositing of projected splats.

Splat arrays are indexed in depth order. ``tile_ptr``/``tile_ids`` is a CSR list
of splat indices per tile, each list ascending (so front-to-back). A splat only
touches pixels inside its integer bounding box ``bbox = (x0, x1, y0, y1)``
(inclusive), so results do not depend on tiling or thread scheduling.
"""

import numba
import numpy as np
from numba import prange

ALPHA_MAX = 0.999
T_MIN = 1e-4


def _bin_tiles(bbox, tile, n_tx, n_ty):
    n = bbox.shape[0]
    counts = np.zeros(n_tx * n_ty + 1, dtype=np.int64)
    for i in range(n):
        for ty in range(bbox[i, 2] // tile, bbox[i, 3] // tile + 1):
            for tx in range(bbox[i, 0] // tile, bbox[i, 1] // tile + 1):
                counts[ty * n_tx + tx + 1] += 1
    ptr = np.cumsum(counts)
    fill = ptr[:-1].copy()
    ids = np.empty(ptr[-1], dtype=np.int64)
    for i in range(n):
        for ty in range(bbox[i, 2] // tile, bbox[i, 3] // tile + 1):
            for tx in range(bbox[i, 0] // tile, bbox[i, 1] // tile + 1):
                t = ty * n_tx + tx
                ids[fill[t]] = i
                fill[t] += 1
    return ptr, ids


def _forward(width, height, tile, n_tx, tile_ptr, tile_ids, bbox, mean2d, conic, opacity, color, bg,
             image, t_final, n_contrib):
    n_tiles = tile_ptr.shape[0] - 1
    for t in prange(n_tiles):
        tx0 = (t % n_tx) * tile
        ty0 = (t // n_tx) * tile
        start = tile_ptr[t]
        stop = tile_ptr[t + 1]
        for py in range(ty0, min(ty0 + tile, height)):
            fy = py + 0.5
            for px in range(tx0, min(tx0 + tile, width)):
                fx = px + 0.5
                T = 1.0
                c0 = 0.0
                c1 = 0.0
                c2 = 0.0
                used = 0
                for k in range(start, stop):
                    i = tile_ids[k]
                    if px < bbox[i, 0] or px > bbox[i, 1] or py < bbox[i, 2] or py > bbox[i, 3]:
                        continue
                    if T < T_MIN:
                        break
                    dx = fx - mean2d[i, 0]
                    dy = fy - mean2d[i, 1]
                    power = -0.5 * (conic[i, 0] * dx * dx + conic[i, 2] * dy * dy) - conic[i, 1] * dx * dy
                    a = opacity[i] * np.exp(power)
                    if a > ALPHA_MAX:
                        a = ALPHA_MAX
                    w = a * T
                    c0 += w * color[i, 0]
                    c1 += w * color[i, 1]
                    c2 += w * color[i, 2]
                    T = T * (1.0 - a)
                    used += 1
                image[py, px, 0] = c0 + T * bg[0]
                image[py, px, 1] = c1 + T * bg[1]
                image[py, px, 2] = c2 + T * bg[2]
                t_final[py, px] = T
                n_contrib[py, px] = used


def _backward(width, height, tile, n_tx, tile_ptr, tile_ids, bbox, mean2d, conic, opacity, color, bg,
              grad_image, max_list, partial):
    """Per tile-list slot gradients ``partial[k] = (d mean2d(2), d conic(3), d opacity, d color(3))``."""
    n_tiles = tile_ptr.shape[0] - 1
    for t in prange(n_tiles):
        tx0 = (t % n_tx) * tile
        ty0 = (t // n_tx) * tile
        start = tile_ptr[t]
        stop = tile_ptr[t + 1]
        slot = np.empty(max_list, dtype=np.int64)
        alphas = np.empty(max_list)
        gauss = np.empty(max_list)
        trans = np.empty(max_list)
        clamped = np.empty(max_list, dtype=np.bool_)
        for py in range(ty0, min(ty0 + tile, height)):
            fy = py + 0.5
            for px in range(tx0, min(tx0 + tile, width)):
                fx = px + 0.5
                # forward re-run, caching per-splat transmittance
                T = 1.0
                c0 = 0.0
                c1 = 0.0
                c2 = 0.0
                m = 0
                for k in range(start, stop):
                    i = tile_ids[k]
                    if px < bbox[i, 0] or px > bbox[i, 1] or py < bbox[i, 2] or py > bbox[i, 3]:
                        continue
                    if T < T_MIN:
                        break
                    dx = fx - mean2d[i, 0]
                    dy = fy - mean2d[i, 1]
                    power = -0.5 * (conic[i, 0] * dx * dx + conic[i, 2] * dy * dy) - conic[i, 1] * dx * dy
                    g = np.exp(power)
                    a = opacity[i] * g
                    cl = a > ALPHA_MAX
                    if cl:
                        a = ALPHA_MAX
                    w = a * T
                    c0 += w * color[i, 0]
                    c1 += w * color[i, 1]
                    c2 += w * color[i, 2]
                    slot[m] = k
                    alphas[m] = a
                    gauss[m] = g
                    trans[m] = T
                    clamped[m] = cl
                    m += 1
                    T = T * (1.0 - a)
                v0 = c0 + T * bg[0]
                v1 = c1 + T * bg[1]
                v2 = c2 + T * bg[2]
                # gradient is blocked where the final [0, 1] clamp is active
                g0 = grad_image[py, px, 0] if 0.0 <= v0 <= 1.0 else 0.0
                g1 = grad_image[py, px, 1] if 0.0 <= v1 <= 1.0 else 0.0
                g2 = grad_image[py, px, 2] if 0.0 <= v2 <= 1.0 else 0.0
                if g0 == 0.0 and g1 == 0.0 and g2 == 0.0:
                    continue
                r0 = bg[0]
                r1 = bg[1]
                r2 = bg[2]
                for j in range(m - 1, -1, -1):
                    k = slot[j]
                    i = tile_ids[k]
                    a = alphas[j]
                    Ti = trans[j]
                    w = a * Ti
                    partial[k, 6] += w * g0
                    partial[k, 7] += w * g1
                    partial[k, 8] += w * g2
                    dl_da = Ti * ((color[i, 0] - r0) * g0 + (color[i, 1] - r1) * g1 + (color[i, 2] - r2) * g2)
                    r0 = a * color[i, 0] + (1.0 - a) * r0
                    r1 = a * color[i, 1] + (1.0 - a) * r1
                    r2 = a * color[i, 2] + (1.0 - a) * r2
                    if clamped[j]:
                        continue
                    partial[k, 5] += dl_da * gauss[j]
                    dl_dp = dl_da * a
                    dx = fx - mean2d[i, 0]
                    dy = fy - mean2d[i, 1]
                    partial[k, 0] += dl_dp * (conic[i, 0] * dx + conic[i, 1] * dy)
                    partial[k, 1] += dl_dp * (conic[i, 1] * dx + conic[i, 2] * dy)
                    partial[k, 2] += dl_dp * (-0.5 * dx * dx)
                    partial[k, 3] += dl_dp * (-dx * dy)
                    partial[k, 4] += dl_dp * (-0.5 * dy * dy)


def _reduce(tile_ids, partial, n_splats):
    out = np.zeros((n_splats, partial.shape[1]))
    for k in range(tile_ids.shape[0]):
        i = tile_ids[k]
        for c in range(partial.shape[1]):
            out[i, c] += partial[k, c]
    return out


bin_tiles = numba.njit(cache=True)(_bin_tiles)
reduce_partials = numba.njit(cache=True)(_reduce)
forward_serial = numba.njit(cache=True)(_forward)
forward_parallel = numba.njit(cache=True, parallel=True)(_forward)
backward_serial = numba.njit(cache=True)(_backward)
backward_parallel = numba.njit(cache=True, parallel=True)(_backward)
