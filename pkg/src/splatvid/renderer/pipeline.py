"""Scene + camera -> image, differentiable end to end."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..camera import CameraModel, Intrinsics
from ..gaussians import GaussianSet, eval_covariance, sh_to_rgb
from . import kernels
from .raster import (
    DEFAULT_TILE,
    NEAR_PLANE,
    RenderOutput,
    Splats,
    conic_from_cov,
    project_points,
    rasterize,
    splat_extent,
    tile_bin,
)


@dataclass
class Frame:
    """A differentiable render plus bookkeeping for densification and warping."""

    image: torch.Tensor  # (H, W, 3)
    final_transmittance: np.ndarray
    contrib_count: np.ndarray  # (G,) max alpha*T over pixels, 0 for culled
    visible: np.ndarray  # indices of splatted Gaussians
    R: torch.Tensor
    T: torch.Tensor
    intrinsics: Intrinsics

    def to_output(self) -> RenderOutput:
        return RenderOutput(self.image.detach().numpy(), self.final_transmittance, self.contrib_count)


def _intrinsic_tensors(camera: CameraModel, level: int, k: Intrinsics | None):
    if k is None:
        (fx, fy, cx, cy), (w, h) = camera.intrinsics_tensors(level)
        return fx, fy, cx, cy, w, h
    return k.fx, k.fy, k.cx, k.cy, k.width, k.height


def render(scene: GaussianSet, camera: CameraModel, t: float, level: int = 0,
           intrinsics: Intrinsics | None = None, tile_size: int = DEFAULT_TILE, pose=None) -> Frame:
    """Render ``scene`` at normalized time ``t``.

    ``intrinsics`` overrides the camera's own (learned) intrinsics, which is
    how spatial resampling is done; ``pose`` overrides the integrated pose
    with an ``(R, T)`` pair.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"render time must lie in [0, 1], got {t}")
    R, T = camera.view(t) if pose is None else pose
    fx, fy, cx, cy, W, H = _intrinsic_tensors(camera, level, intrinsics)

    mu = scene.positions(t)
    with torch.no_grad():
        depth_all = (mu @ R.transpose(0, 1) + T)[:, 2]
        in_front = torch.nonzero(depth_all > NEAR_PLANE).flatten()

    mu_v = mu[in_front]
    sigma_v = eval_covariance(scene.scale_coeffs[in_front], scene.rotation_coeffs[in_front], t)
    mean2d, cov2d, depth = project_points(mu_v, sigma_v, R, T, fx, fy, cx, cy)
    opac = torch.sigmoid(scene.raw_opacity[in_front])

    with torch.no_grad():
        cov_np = cov2d.detach().numpy().astype(np.float64)
        ext = splat_extent(cov_np, opac.detach().numpy())
        m_np = mean2d.detach().numpy().astype(np.float64)
        det = cov_np[:, 0] * cov_np[:, 2] - cov_np[:, 1] ** 2
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            conic_ok = np.isfinite(conic_from_cov(cov_np).astype(mean2d.detach().numpy().dtype)).all(axis=1)
        keep = (
            (m_np[:, 0] + ext[:, 0] >= 0) & (m_np[:, 0] - ext[:, 0] <= W)
            & (m_np[:, 1] + ext[:, 1] >= 0) & (m_np[:, 1] - ext[:, 1] <= H)
            & np.isfinite(ext).all(axis=1) & (det > 0) & conic_ok
        )
        keep_idx = torch.from_numpy(np.nonzero(keep)[0])

    visible = in_front[keep_idx]
    mean2d = mean2d[keep_idx]
    cov2d = cov2d[keep_idx]
    opac = opac[keep_idx]
    depth = depth[keep_idx]

    cam_center = -(R.transpose(0, 1) @ T)
    dirs = mu_v[keep_idx] - cam_center
    dirs = dirs / dirs.norm(dim=-1, keepdim=True).clamp_min(1e-12)
    rgb = sh_to_rgb(scene.sh[visible], dirs)
    conic = conic_from_cov(cov2d)

    splats = Splats(
        m_np[keep], cov_np[keep], None, depth.detach().numpy(), None, None,
        visible.numpy(), ext[keep],
    )
    bins = tile_bin(splats, H, W, tile_size)
    image, final_T, entry_w = rasterize(mean2d, conic, rgb, opac, bins, H, W)

    contrib = np.zeros(len(scene), dtype=np.float64)
    if len(visible):
        contrib[visible.numpy()] = kernels.reduce_entries_max(bins.ids, entry_w.numpy(), len(visible))
    if intrinsics is None:
        fx, fy, cx, cy = (float(v.detach()) for v in (fx, fy, cx, cy))
        intrinsics = Intrinsics(fx, fy, cx, cy, int(W), int(H))
    return Frame(image, final_T.numpy(), contrib, visible.numpy(), R, T, intrinsics)


def render_frame(scene: GaussianSet, cam: CameraModel, t: float, k: Intrinsics | None = None,
                 tile_size: int = DEFAULT_TILE) -> RenderOutput:
    """Non-differentiable convenience wrapper returning numpy arrays."""
    with torch.no_grad():
        return render(scene, cam, t, intrinsics=k, tile_size=tile_size).to_output()
