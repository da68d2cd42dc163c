"""Procedural test videos with known geometry.

All generators are deterministic, return float32 frames (K, H, W, 3) in
[0, 1] and anti-alias by supersampling each pixel on an ``ss x ss`` grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class SyntheticVideo:
    frames: np.ndarray
    centers: np.ndarray | None = None  # (K, 2) pixel coordinates of the tracked object, if any


def _grid(h: int, w: int, ss: int):
    off = (np.arange(ss) + 0.5) / ss
    ys = (np.arange(h)[:, None] + off[None, :]).ravel()
    xs = (np.arange(w)[:, None] + off[None, :]).ravel()
    return np.meshgrid(xs, ys)


def _downsample(img: np.ndarray, ss: int) -> np.ndarray:
    h, w = img.shape[0] // ss, img.shape[1] // ss
    return img.reshape(h, ss, w, ss, -1).mean(axis=(1, 3))


def disc_frame(size, center, radius, ss=8, color=(1.0, 1.0, 1.0)) -> np.ndarray:
    h, w = (size, size) if np.isscalar(size) else size
    X, Y = _grid(h, w, ss)
    inside = ((X - center[0]) ** 2 + (Y - center[1]) ** 2 <= radius ** 2).astype(np.float64)
    img = inside[..., None] * np.asarray(color, dtype=np.float64)
    return _downsample(img, ss)


def u_path(t, length: float = 1.0, r: float = 0.5) -> np.ndarray:
    """Arc-length parametrized U: down the left side, around the bottom, up the right."""
    total = 2 * length + np.pi * r
    out = []
    for s in np.atleast_1d(t) * total:
        if s < length:
            out.append((-r, length - s))
        elif s < length + np.pi * r:
            a = (s - length) / r
            out.append((-r * np.cos(a), -r * np.sin(a)))
        else:
            out.append((r, s - length - np.pi * r))
    return np.array(out)


def u_disc(size: int = 32, frames: int = 24, radius: float = 3.0) -> SyntheticVideo:
    """White disc on black tracing a U; the middle frame sits at the bottom."""
    t = np.arange(frames) / (frames - 1)
    scale = 14.0 / 32 * size
    p = u_path(t)
    centers = np.stack([size / 2 + p[:, 0] * scale, size / 2 - (p[:, 1] - 0.25) * scale], axis=1)
    imgs = np.stack([disc_frame(size, c, radius) for c in centers])
    return SyntheticVideo(imgs.astype(np.float32), centers)


def linear_disc(size: int = 32, frames: int = 9, radius: float = 4.0, start=(8.0, 12.0), end=(24.0, 20.0),
                color=(1.0, 0.8, 0.3), background=(0.1, 0.2, 0.4)) -> SyntheticVideo:
    t = np.arange(frames) / (frames - 1)
    centers = np.asarray(start)[None] + t[:, None] * (np.asarray(end) - np.asarray(start))[None]
    bg = np.asarray(background, dtype=np.float64)
    imgs = []
    for c in centers:
        m = disc_frame(size, c, radius, color=(1, 1, 1))
        imgs.append(bg * (1 - m) + m * np.asarray(color))
    return SyntheticVideo(np.stack(imgs).astype(np.float32), centers)


def _texture(X, Y, seed: int, base):
    rng = np.random.default_rng(seed)
    out = np.broadcast_to(np.asarray(base, dtype=np.float64), X.shape + (3,)).copy()
    for _ in range(3):
        k = rng.uniform(0.12, 0.3, size=2) * rng.choice([-1, 1], size=2)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.05, 0.12, size=3)
        out += amp * np.sin(k[0] * X + k[1] * Y + phase)[..., None]
    return out


def textured_quads(size: int = 96, frames: int = 16, seed: int = 0, num_quads: int = 3, ss: int = 4) -> SyntheticVideo:
    """Smoothly textured squares sliding over a textured background."""
    rng = np.random.default_rng(seed)
    X, Y = _grid(size, size, ss)
    background = _texture(X / 2, Y / 2, seed + 100, (0.35, 0.4, 0.45))
    quads = []
    for q in range(num_quads):
        half = rng.uniform(0.12, 0.2) * size
        start = rng.uniform(0.25, 0.75, size=2) * size
        vel = rng.uniform(-0.2, 0.2, size=2) * size
        base = rng.uniform(0.15, 0.85, size=3)
        quads.append((half, start, vel, base, seed + q))
    imgs = []
    for k in range(frames):
        t = k / (frames - 1)
        img = background.copy()
        for half, start, vel, base, qseed in quads:
            c = start + vel * (t - 0.5)
            lx, ly = X - c[0], Y - c[1]
            inside = (np.abs(lx) <= half) & (np.abs(ly) <= half)
            tex = _texture(lx, ly, qseed, base)
            img[inside] = tex[inside]
        imgs.append(_downsample(np.clip(img, 0, 1), ss))
    return SyntheticVideo(np.stack(imgs).astype(np.float32))


def panning_layers(size: int = 64, frames: int = 16, pan: float = 0.5, seed: int = 0, ss: int = 4) -> SyntheticVideo:
    """Static textured planes seen by a camera translating along x.

    Default intrinsics (focal = size, principal point at the center); the
    camera moves ``pan`` world units over the clip with a smooth ease, so
    near layers slide faster than far ones (parallax).
    """
    rng = np.random.default_rng(seed)
    f = float(size)
    X, Y = _grid(size, size, ss)
    rx, ry = (X - size / 2) / f, (Y - size / 2) / f
    layers = []
    for depth in (1.0, 1.5):
        lo = rng.uniform(-0.6, 0.3, size=2)
        ext = rng.uniform(0.25, 0.4, size=2)
        layers.append((depth, lo, ext, rng.uniform(0.2, 0.9, size=3), int(rng.integers(1 << 30))))
    imgs = []
    for k in range(frames):
        t = k / (frames - 1)
        cam_x = pan * (0.5 - 0.5 * np.cos(np.pi * t)) - pan / 2
        wx_bg, wy_bg = cam_x + rx * 3.0, ry * 3.0
        img = _texture(wx_bg * 40, wy_bg * 40, seed + 7, (0.45, 0.45, 0.4))
        for depth, lo, ext, base, lseed in sorted(layers, key=lambda l: -l[0]):
            wx, wy = cam_x + rx * depth, ry * depth
            inside = (wx >= lo[0]) & (wx <= lo[0] + ext[0] * 2) & (wy >= lo[1]) & (wy <= lo[1] + ext[1] * 2)
            tex = _texture(wx * 40, wy * 40, lseed, base)
            img[inside] = tex[inside]
        imgs.append(_downsample(np.clip(img, 0, 1), ss))
    return SyntheticVideo(np.stack(imgs).astype(np.float32))
