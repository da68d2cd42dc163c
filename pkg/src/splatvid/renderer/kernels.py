"""Numba kernels for tiled front-to-back compositing and its reverse pass.

Pixel ``(x, y)`` samples the image plane at ``(x + 0.5, y + 0.5)``. Tiles are
independent, so both passes run ``prange`` over tiles; every per-entry output
is owned by exactly one tile and merged afterwards in a fixed serial order.
"""

import math

import numpy as np
from numba import config, njit, prange

# skip the TBB probe; omp/workqueue give the same results
config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

ALPHA_MIN = 1.0 / 255.0
ALPHA_MAX = 0.99
T_MIN = 1e-4
# entry gradient columns
G_MX, G_MY, G_CA, G_CB, G_CC, G_R, G_G, G_B, G_OP = range(9)


@njit(cache=True)
def _gather(start, n, ids, means, conics, colors, opac, box, buf, ibox):
    """Copy a tile's splats into contiguous scratch rows, front to back."""
    for j in range(n):
        i = ids[start + j]
        buf[j, 0] = means[i, 0]
        buf[j, 1] = means[i, 1]
        buf[j, 2] = conics[i, 0]
        buf[j, 3] = conics[i, 1]
        buf[j, 4] = conics[i, 2]
        buf[j, 5] = colors[i, 0]
        buf[j, 6] = colors[i, 1]
        buf[j, 7] = colors[i, 2]
        buf[j, 8] = opac[i]
        # below this power the alpha cutoff fails for sure, so exp can be skipped;
        # the margin leaves the exact comparison to the borderline cases
        buf[j, 9] = math.log(ALPHA_MIN / opac[i]) - 1e-6 if opac[i] > 0 else -math.inf
        for c in range(4):
            ibox[j, c] = box[i, c]


@njit(cache=True)
def _row_list(n, y, ibox, rows):
    """Tile-local indices, in blend order, of splats whose pixel box covers row ``y``."""
    m = 0
    for j in range(n):
        if ibox[j, 2] <= y and y <= ibox[j, 3]:
            rows[m] = j
            m += 1
    return m


@njit(cache=True, parallel=True)
def composite_tiles(means, conics, colors, opac, offsets, ids, box, H, W, tile, tiles_x,
                    image, final_T, n_contrib, entry_weight):
    """Forward blend. ``n_contrib`` counts processed entries of the pixel's row list."""
    n_tiles = offsets.size - 1
    for t in prange(n_tiles):
        x0 = (t % tiles_x) * tile
        y0 = (t // tiles_x) * tile
        start = offsets[t]
        n = offsets[t + 1] - start
        buf = np.empty((n, 10), dtype=means.dtype)
        ibox = np.empty((n, 4), dtype=np.int64)
        rows = np.empty(n, dtype=np.int64)
        _gather(start, n, ids, means, conics, colors, opac, box, buf, ibox)
        for y in range(y0, min(y0 + tile, H)):
            py = y + 0.5
            m = _row_list(n, y, ibox, rows)
            for x in range(x0, min(x0 + tile, W)):
                px = x + 0.5
                T = 1.0
                cr = 0.0
                cg = 0.0
                cb = 0.0
                last = 0
                for q in range(m):
                    j = rows[q]
                    if x < ibox[j, 0] or x > ibox[j, 1]:
                        continue
                    dx = px - buf[j, 0]
                    dy = py - buf[j, 1]
                    power = -0.5 * (buf[j, 2] * dx * dx + buf[j, 4] * dy * dy) - buf[j, 3] * dx * dy
                    if power > 0.0 or power < buf[j, 9]:
                        continue
                    a = buf[j, 8] * math.exp(power)
                    if a > ALPHA_MAX:
                        a = ALPHA_MAX
                    if a < ALPHA_MIN:
                        continue
                    w = a * T
                    cr += buf[j, 5] * w
                    cg += buf[j, 6] * w
                    cb += buf[j, 7] * w
                    e = start + j
                    if w > entry_weight[e]:
                        entry_weight[e] = w
                    T *= 1.0 - a
                    last = q + 1
                    if T < T_MIN:
                        break
                image[y, x, 0] = cr
                image[y, x, 1] = cg
                image[y, x, 2] = cb
                final_T[y, x] = T
                n_contrib[y, x] = last


@njit(cache=True, parallel=True)
def composite_tiles_backward(means, conics, colors, opac, offsets, ids, box, H, W, tile, tiles_x,
                             n_contrib, grad_image, entry_grads):
    n_tiles = offsets.size - 1
    for t in prange(n_tiles):
        x0 = (t % tiles_x) * tile
        y0 = (t // tiles_x) * tile
        start = offsets[t]
        n = offsets[t + 1] - start
        buf = np.empty((n, 10), dtype=means.dtype)
        ibox = np.empty((n, 4), dtype=np.int64)
        rows = np.empty(n, dtype=np.int64)
        alphas = np.empty(n)
        gauss = np.empty(n)
        Ts = np.empty(n)
        _gather(start, n, ids, means, conics, colors, opac, box, buf, ibox)
        for y in range(y0, min(y0 + tile, H)):
            py = y + 0.5
            m = -1
            for x in range(x0, min(x0 + tile, W)):
                cnt = n_contrib[y, x]
                if cnt == 0:
                    continue
                if m < 0:
                    m = _row_list(n, y, ibox, rows)
                px = x + 0.5
                # replay the blend sequence of this pixel
                T = 1.0
                for q in range(cnt):
                    j = rows[q]
                    a = 0.0
                    if ibox[j, 0] <= x and x <= ibox[j, 1]:
                        dx = px - buf[j, 0]
                        dy = py - buf[j, 1]
                        power = -0.5 * (buf[j, 2] * dx * dx + buf[j, 4] * dy * dy) - buf[j, 3] * dx * dy
                        if power <= 0.0 and power >= buf[j, 9]:
                            G = math.exp(power)
                            gauss[q] = G
                            a = buf[j, 8] * G
                            if a > ALPHA_MAX:
                                a = ALPHA_MAX
                            if a < ALPHA_MIN:
                                a = 0.0
                    alphas[q] = a
                    Ts[q] = T
                    T *= 1.0 - a
                gr = grad_image[y, x, 0]
                gg = grad_image[y, x, 1]
                gb = grad_image[y, x, 2]
                Sr = 0.0
                Sg = 0.0
                Sb = 0.0
                for q in range(cnt - 1, -1, -1):
                    a = alphas[q]
                    if a == 0.0:
                        continue
                    j = rows[q]
                    e = start + j
                    T = Ts[q]
                    w = a * T
                    c0 = buf[j, 5]
                    c1 = buf[j, 6]
                    c2 = buf[j, 7]
                    entry_grads[e, G_R] += gr * w
                    entry_grads[e, G_G] += gg * w
                    entry_grads[e, G_B] += gb * w
                    d_alpha = T * (gr * c0 + gg * c1 + gb * c2) - (gr * Sr + gg * Sg + gb * Sb) / (1.0 - a)
                    Sr += c0 * w
                    Sg += c1 * w
                    Sb += c2 * w
                    dx = px - buf[j, 0]
                    dy = py - buf[j, 1]
                    A = buf[j, 2]
                    B = buf[j, 3]
                    C = buf[j, 4]
                    G = gauss[q]
                    if buf[j, 8] * G > ALPHA_MAX:
                        continue  # clamped: locally constant
                    entry_grads[e, G_OP] += d_alpha * G
                    d_power = d_alpha * a
                    entry_grads[e, G_MX] += d_power * (A * dx + B * dy)
                    entry_grads[e, G_MY] += d_power * (B * dx + C * dy)
                    entry_grads[e, G_CA] += -0.5 * d_power * dx * dx
                    entry_grads[e, G_CB] += -d_power * dx * dy
                    entry_grads[e, G_CC] += -0.5 * d_power * dy * dy


@njit(cache=True)
def reduce_entries(ids, entry_values, n_splats):
    out = np.zeros((n_splats, entry_values.shape[1]), dtype=entry_values.dtype)
    for e in range(ids.size):
        i = ids[e]
        for c in range(entry_values.shape[1]):
            out[i, c] += entry_values[e, c]
    return out


@njit(cache=True)
def reduce_entries_max(ids, entry_values, n_splats):
    out = np.zeros(n_splats, dtype=entry_values.dtype)
    for e in range(ids.size):
        i = ids[e]
        if entry_values[e] > out[i]:
            out[i] = entry_values[e]
    return out
