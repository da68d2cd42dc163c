"""Run configuration: every tunable in one JSON-serializable record."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # model
    num_gaussians: int = 5000
    num_control_points: int | None = None  # None: derived from clip duration
    position_model: str = "spline"  # or "polynomial" (ablation)
    sh_degree: int = 1
    time_varying_scale: bool = True
    # camera
    camera_mode: str = "ode"  # "ode", "static", "none"
    ode_hidden: int = 64
    ode_steps: int = 64
    camera_lr_mult: float = 0.1
    # optimizer
    total_steps: int = 3000
    lr: float = 0.01
    gamma: float = 0.99995
    betas: tuple = (0.98, 0.92, 0.99)
    eps: float = 1e-8
    # schedule, as fractions of total_steps
    pyramid_levels: int = 2
    pyramid_switch: float = 0.3
    temporal_strides: tuple = (4, 2, 1)
    temporal_fractions: tuple = (0.0, 0.15, 0.3)
    densify_fraction: float = 0.25
    warp_period: float = 0.1
    warp_stop: float = 0.6
    camera_freeze: float = 0.6
    knot_refine: bool = False
    spatial_hierarchy: bool = True
    temporal_hierarchy: bool = True
    warping: bool = True
    warp_threshold: float = 1.0 / 255.0
    warp_error: str = "frame0"  # or "all"
    # initialization
    init_radius: float = 3.0
    init_depth: tuple = (0.5, 2.0)
    init_opacity: float = 0.1
    # rendering and bookkeeping
    tile_size: int = 16
    fps: float = 30.0
    seed: int = 0
    log_every: int = 100

    def __post_init__(self):
        for name in ("betas", "temporal_strides", "temporal_fractions", "init_depth"):
            setattr(self, name, tuple(getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.num_gaussians >= 1, "num_gaussians must be >= 1")
        need(self.total_steps >= 1, "total_steps must be >= 1")
        need(self.position_model in ("spline", "polynomial"), f"unknown position_model {self.position_model!r}")
        need(self.camera_mode in ("ode", "static", "none"), f"unknown camera_mode {self.camera_mode!r}")
        need(self.warp_error in ("frame0", "all"), f"unknown warp_error {self.warp_error!r}")
        need(0 <= self.sh_degree <= 3, "sh_degree must be in [0, 3]")
        need(self.pyramid_levels >= 1, "pyramid_levels must be >= 1")
        need(self.num_control_points is None or self.num_control_points >= 4,
             "num_control_points must be >= 4")
        for name in ("pyramid_switch", "densify_fraction", "warp_period", "warp_stop", "camera_freeze"):
            v = getattr(self, name)
            need(0 <= v <= 1, f"{name} must lie in [0, 1], got {v}")
        need(self.warp_period > 0, "warp_period must be positive")
        s, f = self.temporal_strides, self.temporal_fractions
        need(len(s) == len(f) and len(s) >= 1, "temporal_strides and temporal_fractions differ in length")
        need(all(isinstance(x, int) and x >= 1 for x in s), "temporal strides must be positive integers")
        need(all(a > b for a, b in zip(s, s[1:])) and s[-1] == 1, "temporal strides must decrease to 1")
        need(f[0] == 0 and all(a < b for a, b in zip(f, f[1:])) and f[-1] <= 1,
             "temporal fractions must start at 0 and increase")
        need(len(self.betas) == 3 and all(0 <= b < 1 for b in self.betas), "betas must be three values in [0, 1)")
        need(self.init_depth[0] > 0 and self.init_depth[1] >= self.init_depth[0], "bad init_depth range")
        need(0 < self.init_opacity < 1, "init_opacity must lie in (0, 1)")
        need(self.tile_size >= 1 and self.log_every >= 1 and self.ode_steps >= 1, "sizes must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from e
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        return cls.from_dict(data)

    def replace(self, **changes) -> "RunConfig":
        d = asdict(self)
        d.update(changes)
        return RunConfig.from_dict(d)
