"""Projection, tile binning and differentiable compositing of 2-D splats."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from . import kernels
from .kernels import ALPHA_MIN

NEAR_PLANE = 0.01
COV_DILATION = 0.3
DEFAULT_TILE = 16


@dataclass
class Splats:
    """Projected Gaussians, one row per splat.

    ``cov2d`` and ``conic`` hold the unique entries ``(xx, xy, yy)`` of the
    2-D covariance and its inverse; ``extent`` is the half-width/half-height
    of the pixel box outside which the splat never passes the alpha cutoff.
    """

    mean2d: np.ndarray
    cov2d: np.ndarray
    conic: np.ndarray
    depth: np.ndarray
    rgb: np.ndarray
    base_alpha: np.ndarray
    source_index: np.ndarray
    extent: np.ndarray

    def __len__(self):
        return self.mean2d.shape[0]

    @classmethod
    def from_arrays(cls, mean2d, cov2d, depth, rgb, base_alpha, source_index=None):
        mean2d = np.ascontiguousarray(mean2d, dtype=np.float64).reshape(-1, 2)
        cov2d = np.ascontiguousarray(cov2d, dtype=np.float64).reshape(-1, 3)
        base_alpha = np.ascontiguousarray(base_alpha, dtype=np.float64).ravel()
        if source_index is None:
            source_index = np.arange(mean2d.shape[0])
        return cls(
            mean2d, cov2d, conic_from_cov(cov2d), np.asarray(depth, dtype=np.float64).ravel(),
            np.ascontiguousarray(rgb, dtype=np.float64).reshape(-1, 3), base_alpha,
            np.asarray(source_index, dtype=np.int64), splat_extent(cov2d, base_alpha),
        )


@dataclass
class TileBins:
    """CSR layout: tile ``k`` owns ``ids[offsets[k]:offsets[k+1]]``, front to back.

    ``pixel_box`` holds each splat's inclusive pixel range
    ``(x_lo, x_hi, y_lo, y_hi)``, padded by one pixel and clipped to the image.
    """

    offsets: np.ndarray
    ids: np.ndarray
    tiles_x: int
    tiles_y: int
    tile_size: int
    pixel_box: np.ndarray

    def tile_list(self, tx: int, ty: int) -> np.ndarray:
        k = ty * self.tiles_x + tx
        return self.ids[self.offsets[k] : self.offsets[k + 1]]


@dataclass
class RenderOutput:
    image: np.ndarray  # (H, W, 3)
    final_transmittance: np.ndarray  # (H, W)
    contrib_count: np.ndarray  # per splat: max over pixels of alpha * T


def conic_from_cov(cov):
    # the determinant of a thin, large splat cancels catastrophically in
    # float32, so it is always formed in float64
    if isinstance(cov, torch.Tensor):
        a, b, c = cov.double().unbind(-1)
        det = a * c - b * b
        return torch.stack([c / det, -b / det, a / det], dim=-1).to(cov.dtype)
    cov = np.asarray(cov)
    a, b, c = (cov[..., i].astype(np.float64) for i in range(3))
    det = a * c - b * b
    return np.stack([c / det, -b / det, a / det], axis=-1).astype(cov.dtype)


def cutoff_sigmas(base_alpha):
    """Mahalanobis radius beyond which ``base_alpha * exp(-r^2/2) < 1/255``, at least 3."""
    ba = np.asarray(base_alpha, dtype=np.float64)
    k2 = 2.0 * np.log(np.maximum(ba / ALPHA_MIN, 1.0))
    return np.maximum(3.0, np.sqrt(k2))


def splat_extent(cov2d, base_alpha):
    k = cutoff_sigmas(base_alpha)
    cov2d = np.asarray(cov2d, dtype=np.float64)
    return np.stack([k * np.sqrt(cov2d[:, 0]), k * np.sqrt(cov2d[:, 2])], axis=-1)


def project_points(mu, sigma, R, T, fx, fy, cx, cy):
    """EWA projection of camera-visible points; works on torch tensors with autograd.

    Returns 2-D means, unique 2-D covariance entries (dilated) and depths.
    """
    p = mu @ R.transpose(0, 1) + T
    x, y, z = p.unbind(-1)
    inv_z = 1.0 / z
    mean2d = torch.stack([fx * x * inv_z + cx, fy * y * inv_z + cy], dim=-1)
    zeros = torch.zeros_like(z)
    J = torch.stack(
        [
            torch.stack([fx * inv_z, zeros, -fx * x * inv_z * inv_z], dim=-1),
            torch.stack([zeros, fy * inv_z, -fy * y * inv_z * inv_z], dim=-1),
        ],
        dim=-2,
    )
    Wm = J @ R
    cov = Wm @ sigma @ Wm.transpose(-1, -2)
    cov2d = torch.stack(
        [cov[:, 0, 0] + COV_DILATION, 0.5 * (cov[:, 0, 1] + cov[:, 1, 0]), cov[:, 1, 1] + COV_DILATION], dim=-1
    )
    return mean2d, cov2d, z


def project(mu, sigma, R, T, k):
    """Project one Gaussian; returns a single-row :class:`Splats` or ``None`` when culled."""
    t = lambda a: torch.as_tensor(np.asarray(a, dtype=np.float64))  # noqa: E731
    mu, sigma, R, T = t(mu), t(sigma), t(R), t(T)
    depth = float((R @ mu + T)[2])
    if depth <= NEAR_PLANE:
        return None
    m, c, z = project_points(mu[None], sigma[None], R, T, k.fx, k.fy, k.cx, k.cy)
    m, c = m.numpy(), c.numpy()
    ext = 3.0 * np.sqrt(c[:, [0, 2]])
    if not _box_hits_image(m, ext, k.width, k.height)[0]:
        return None
    return Splats.from_arrays(m, c, z.numpy(), np.ones((1, 3)), np.ones(1))


def _box_hits_image(mean2d, extent, W, H):
    lo = mean2d - extent
    hi = mean2d + extent
    return (hi[:, 0] >= 0) & (lo[:, 0] <= W) & (hi[:, 1] >= 0) & (lo[:, 1] <= H)


def tile_bin(splats: Splats, H: int, W: int, tile_size: int = DEFAULT_TILE) -> TileBins:
    """Assign splats to every tile their extent box touches, sorted by (depth, index)."""
    if tile_size < 1:
        raise ValueError(f"tile size must be >= 1, got {tile_size}")
    tiles_x = -(-W // tile_size)
    tiles_y = -(-H // tile_size)
    n_tiles = tiles_x * tiles_y
    m, ext = splats.mean2d, splats.extent
    # pixel indices whose centers can lie inside the box, padded by one pixel
    x_lo = np.clip(np.floor(m[:, 0] - ext[:, 0] - 0.5) - 1, 0, W - 1)
    x_hi = np.clip(np.ceil(m[:, 0] + ext[:, 0] - 0.5) + 1, 0, W - 1)
    y_lo = np.clip(np.floor(m[:, 1] - ext[:, 1] - 0.5) - 1, 0, H - 1)
    y_hi = np.clip(np.ceil(m[:, 1] + ext[:, 1] - 0.5) + 1, 0, H - 1)
    hit = _box_hits_image(m, ext, W, H) & np.isfinite(ext).all(axis=1)
    tx0 = (x_lo // tile_size).astype(np.int64)
    tx1 = (x_hi // tile_size).astype(np.int64)
    ty0 = (y_lo // tile_size).astype(np.int64)
    ty1 = (y_hi // tile_size).astype(np.int64)
    nx = np.where(hit, tx1 - tx0 + 1, 0)
    ny = np.where(hit, ty1 - ty0 + 1, 0)
    counts = nx * ny
    total = int(counts.sum())
    splat = np.repeat(np.arange(len(splats)), counts)
    local = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    nx_r = np.repeat(nx, counts)
    tile_ids = (np.repeat(ty0, counts) + local // np.maximum(nx_r, 1)) * tiles_x + np.repeat(tx0, counts) + local % np.maximum(nx_r, 1)
    order = np.lexsort((splats.source_index[splat], splats.depth[splat], tile_ids))
    ids = splat[order].astype(np.int64)
    offsets = np.zeros(n_tiles + 1, dtype=np.int64)
    np.cumsum(np.bincount(tile_ids, minlength=n_tiles), out=offsets[1:])
    box = np.stack([x_lo, x_hi, y_lo, y_hi], axis=1)
    box = np.where(np.isfinite(box), box, 0).astype(np.int64)
    return TileBins(offsets, ids, tiles_x, tiles_y, tile_size, np.ascontiguousarray(box))


@dataclass
class CompositeCache:
    splats: Splats
    bins: TileBins
    H: int
    W: int
    n_contrib: np.ndarray


def composite_forward(splats: Splats, bins: TileBins, H: int, W: int):
    """Blend tile lists front to back. Returns ``(RenderOutput, CompositeCache)``."""
    image, final_T, n_contrib, entry_w = _run_forward(
        splats.mean2d, splats.conic, splats.rgb, splats.base_alpha, bins, H, W
    )
    contrib = kernels.reduce_entries_max(bins.ids, entry_w, len(splats))
    out = RenderOutput(image, final_T, contrib)
    return out, CompositeCache(splats, bins, H, W, n_contrib)


def _run_forward(means, conics, colors, opac, bins, H, W):
    dtype = means.dtype
    image = np.zeros((H, W, 3), dtype=dtype)
    final_T = np.ones((H, W), dtype=dtype)
    n_contrib = np.zeros((H, W), dtype=np.int64)
    entry_w = np.zeros(bins.ids.size, dtype=dtype)
    if bins.ids.size:
        kernels.composite_tiles(
            means, conics, colors, opac, bins.offsets, bins.ids, bins.pixel_box, H, W, bins.tile_size, bins.tiles_x,
            image, final_T, n_contrib, entry_w,
        )
    return image, final_T, n_contrib, entry_w


def _run_backward(means, conics, colors, opac, bins, H, W, n_contrib, grad_image):
    entry_grads = np.zeros((bins.ids.size, 9), dtype=means.dtype)
    if bins.ids.size:
        kernels.composite_tiles_backward(
            means, conics, colors, opac, bins.offsets, bins.ids, bins.pixel_box, H, W, bins.tile_size, bins.tiles_x,
            n_contrib, np.ascontiguousarray(grad_image, dtype=means.dtype), entry_grads,
        )
    return kernels.reduce_entries(bins.ids, entry_grads, means.shape[0])


def conic_grad_to_cov(cov, conic, g_conic):
    """Chain ``dL/d(conic)`` to ``dL/d(cov)`` on the unique symmetric entries."""
    A, B, C = conic[:, 0], conic[:, 1], conic[:, 2]
    gA, gB, gC = g_conic[:, 0], 0.5 * g_conic[:, 1], g_conic[:, 2]
    # -Q G Q with Q = [[A, B], [B, C]], G = [[gA, gB], [gB, gC]]
    m00 = A * (A * gA + B * gB) + B * (A * gB + B * gC)
    m01 = A * (B * gA + C * gB) + B * (B * gB + C * gC)
    m11 = B * (B * gA + C * gB) + C * (B * gB + C * gC)
    return -np.stack([m00, 2.0 * m01, m11], axis=-1)


def composite_backward(output_grad, cache: CompositeCache) -> dict[str, np.ndarray]:
    """Exact gradients of the composite w.r.t. every splat field."""
    s = cache.splats
    g = _run_backward(s.mean2d, s.conic, s.rgb, s.base_alpha, cache.bins, cache.H, cache.W,
                      cache.n_contrib, output_grad)
    g_conic = g[:, 2:5]
    return {
        "mean2d": g[:, 0:2],
        "conic": g_conic,
        "cov2d": conic_grad_to_cov(s.cov2d, s.conic, g_conic),
        "rgb": g[:, 5:8],
        "base_alpha": g[:, 8],
    }


class RasterizeFunction(torch.autograd.Function):
    """Torch bridge around the tile kernels; inputs are already-binned splats.

    Outputs the image plus two non-differentiable side products: final
    transmittance per pixel and the max blend weight of every tile entry.
    """

    @staticmethod
    def forward(ctx, means, conics, colors, opac, bins, H, W):
        np_in = [x.detach().cpu().contiguous().numpy() for x in (means, conics, colors, opac)]
        image, final_T, n_contrib, entry_w = _run_forward(*np_in, bins, H, W)
        ctx.np_in = np_in
        ctx.bins, ctx.H, ctx.W, ctx.n_contrib = bins, H, W, n_contrib
        final_T = torch.from_numpy(final_T)
        entry_w = torch.from_numpy(entry_w)
        ctx.mark_non_differentiable(final_T, entry_w)
        return torch.from_numpy(image), final_T, entry_w

    @staticmethod
    def backward(ctx, grad_image, _g_T, _g_w):
        g = _run_backward(*ctx.np_in, ctx.bins, ctx.H, ctx.W, ctx.n_contrib, grad_image.detach().cpu().numpy())
        g = torch.from_numpy(g)
        return g[:, 0:2], g[:, 2:5], g[:, 5:8], g[:, 8], None, None, None


def rasterize(means, conics, colors, opac, bins, H, W):
    """Differentiable ``(image, final_T, entry_weight)`` for binned splats."""
    return RasterizeFunction.apply(means, conics, colors, opac, bins, H, W)
