"""Synthetic convex-probe shadows: annular sectors injected multiplicatively.

A shadow is an annular sector around the probe apex, darkening every pixel
it covers by a constant attenuation factor in [0, 1), with a linear angular
ramp of configurable softness at its edges. Masks have background exactly
1.0 so the shadow region is recoverable as ``values < 1``.

Angles are radians measured from the image-down axis (+row direction),
positive toward +col; radii are pixels from the apex, which may sit above
the image.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor, hadamard

__all__ = [
    "FanGeometry",
    "SectorSpec",
    "ShadowConfig",
    "ShadowMask",
    "sample_sectors",
    "rasterize_mask",
    "inject",
    "shadow_region",
    "inside_fan",
]


@dataclass(frozen=True)
class FanGeometry:
    """Convex-probe field of view: apex point, angular span, radial span."""

    apex: tuple[float, float]  # (row, col), row may be negative
    theta_min: float
    theta_max: float
    r_min: float
    r_max: float

    def __post_init__(self):
        if not self.theta_min < self.theta_max:
            raise ValueError(f"theta_min {self.theta_min} must be < theta_max {self.theta_max}")
        if not 0 <= self.r_min < self.r_max:
            raise ValueError(f"need 0 <= r_min < r_max, got [{self.r_min}, {self.r_max}]")

    def to_dict(self) -> dict:
        return {
            "apex": [float(self.apex[0]), float(self.apex[1])],
            "theta_min": self.theta_min,
            "theta_max": self.theta_max,
            "r_min": self.r_min,
            "r_max": self.r_max,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FanGeometry":
        extra = set(d) - {"apex", "theta_min", "theta_max", "r_min", "r_max"}
        if extra:
            raise ValueError(f"unknown FanGeometry keys {sorted(extra)}")
        return cls(
            apex=(float(d["apex"][0]), float(d["apex"][1])),
            theta_min=float(d["theta_min"]),
            theta_max=float(d["theta_max"]),
            r_min=float(d["r_min"]),
            r_max=float(d["r_max"]),
        )


@dataclass(frozen=True)
class SectorSpec:
    """One annular-sector shadow."""

    theta_center: float
    theta_width: float
    r_start: float
    r_end: float
    attenuation: float  # mask value inside the sector; 0 = black, 1-eps = faint
    edge_softness: float = 0.0  # radians of linear ramp outside the nominal edge

    def __post_init__(self):
        if self.theta_width <= 0:
            raise ValueError(f"theta_width must be > 0, got {self.theta_width}")
        if not self.r_start < self.r_end:
            raise ValueError(f"need r_start < r_end, got [{self.r_start}, {self.r_end}]")
        if not 0.0 <= self.attenuation < 1.0:
            raise ValueError(f"attenuation must be in [0, 1), got {self.attenuation}")
        if self.edge_softness < 0:
            raise ValueError("edge_softness must be >= 0")

    def to_dict(self) -> dict:
        return {
            "theta_center": self.theta_center,
            "theta_width": self.theta_width,
            "r_start": self.r_start,
            "r_end": self.r_end,
            "attenuation": self.attenuation,
            "edge_softness": self.edge_softness,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SectorSpec":
        extra = set(d) - {
            "theta_center",
            "theta_width",
            "r_start",
            "r_end",
            "attenuation",
            "edge_softness",
        }
        if extra:
            raise ValueError(f"unknown SectorSpec keys {sorted(extra)}")
        return cls(**{k: float(v) for k, v in d.items()})


@dataclass(frozen=True)
class ShadowConfig:
    """Uniform sampling ranges for random sectors.

    ``r_start``/``r_end`` of None pin the sector to the fan's radial span,
    which matches how acoustic shadows run from an occluder to the far
    field.
    """

    count: tuple[int, int] = (1, 3)
    theta_width: tuple[float, float] = (0.05, 0.35)
    attenuation: tuple[float, float] = (0.05, 0.6)
    r_start: tuple[float, float] | None = None
    r_end: tuple[float, float] | None = None
    edge_softness: float = 0.02

    def to_dict(self) -> dict:
        return {
            "count": list(self.count),
            "theta_width": list(self.theta_width),
            "attenuation": list(self.attenuation),
            "r_start": None if self.r_start is None else list(self.r_start),
            "r_end": None if self.r_end is None else list(self.r_end),
            "edge_softness": self.edge_softness,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ShadowConfig":
        known = {"count", "theta_width", "attenuation", "r_start", "r_end", "edge_softness"}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown ShadowConfig keys {sorted(extra)}")
        kwargs = dict(d)
        if "count" in kwargs:
            kwargs["count"] = (int(kwargs["count"][0]), int(kwargs["count"][1]))
        for key in ("theta_width", "attenuation", "r_start", "r_end"):
            if kwargs.get(key) is not None:
                kwargs[key] = (float(kwargs[key][0]), float(kwargs[key][1]))
        return cls(**kwargs)


@dataclass
class ShadowMask:
    """Per-pixel multiplicative attenuation map in [0, 1], background exactly 1."""

    values: np.ndarray  # [H, W] float64

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def region(self) -> np.ndarray:
        return shadow_region(self)

    def save(self, path) -> None:
        from . import imageio

        imageio.save(self.values, path)


def _check_range(name: str, lo: float, hi: float) -> None:
    if not lo <= hi:
        raise ValueError(f"{name} range is inverted: [{lo}, {hi}]")


def validate_config(cfg: ShadowConfig, geom: FanGeometry) -> None:
    """Reject configurations whose ranges are empty or exceed the geometry."""
    c_lo, c_hi = cfg.count
    if c_lo < 0 or c_lo > c_hi:
        raise ValueError(f"bad sector count range [{c_lo}, {c_hi}]")
    _check_range("theta_width", *cfg.theta_width)
    _check_range("attenuation", *cfg.attenuation)
    if cfg.theta_width[0] <= 0:
        raise ValueError("theta_width range must be positive")
    if not (0.0 <= cfg.attenuation[0] and cfg.attenuation[1] < 1.0):
        raise ValueError(f"attenuation range {cfg.attenuation} must lie in [0, 1)")
    span = geom.theta_max - geom.theta_min
    if cfg.theta_width[1] > span:
        raise ValueError(
            f"max theta_width {cfg.theta_width[1]} exceeds fan angular span {span:.4g}"
        )
    r_start = cfg.r_start or (geom.r_min, geom.r_min)
    r_end = cfg.r_end or (geom.r_max, geom.r_max)
    _check_range("r_start", *r_start)
    _check_range("r_end", *r_end)
    if r_start[0] < geom.r_min or r_end[1] > geom.r_max:
        raise ValueError("sector radial ranges must lie within the fan radial span")
    if not r_start[1] < r_end[0]:
        raise ValueError(
            f"r_start range {r_start} must end before r_end range {r_end} begins"
        )


def sample_sectors(
    geom: FanGeometry, rng: np.random.Generator, cfg: ShadowConfig | None = None
) -> list[SectorSpec]:
    """Draw a random list of sectors; every field is uniform over its range."""
    cfg = cfg or ShadowConfig()
    validate_config(cfg, geom)
    count = int(rng.integers(cfg.count[0], cfg.count[1] + 1))
    r_start_range = cfg.r_start or (geom.r_min, geom.r_min)
    r_end_range = cfg.r_end or (geom.r_max, geom.r_max)
    sectors = []
    for _ in range(count):
        width = float(rng.uniform(*cfg.theta_width))
        center = float(rng.uniform(geom.theta_min + width / 2, geom.theta_max - width / 2))
        attenuation = float(rng.uniform(*cfg.attenuation))
        r_start = float(rng.uniform(*r_start_range))
        r_end = float(rng.uniform(*r_end_range))
        sectors.append(
            SectorSpec(
                theta_center=center,
                theta_width=width,
                r_start=r_start,
                r_end=r_end,
                attenuation=attenuation,
                edge_softness=cfg.edge_softness,
            )
        )
    return sectors


def _polar_grid(geom: FanGeometry, width: int, height: int) -> tuple[np.ndarray, np.ndarray]:
    rows = np.arange(height, dtype=np.float64)[:, None] - geom.apex[0]
    cols = np.arange(width, dtype=np.float64)[None, :] - geom.apex[1]
    radius = np.hypot(rows, cols)
    theta = np.arctan2(np.broadcast_to(cols, radius.shape), np.broadcast_to(rows, radius.shape))
    return radius, theta


def rasterize_mask(
    sectors: list[SectorSpec], geom: FanGeometry, width: int, height: int
) -> ShadowMask:
    """Render sectors to an [H, W] mask; overlaps combine by pixelwise minimum."""
    if width <= 0 or height <= 0:
        raise ValueError(f"mask extent must be positive, got {width}x{height}")
    values = np.ones((height, width), dtype=np.float64)
    if not sectors:
        return ShadowMask(values)
    radius, theta = _polar_grid(geom, width, height)
    for sector in sectors:
        angular_dist = np.abs(theta - sector.theta_center)
        half = sector.theta_width / 2
        if sector.edge_softness > 0:
            coverage = np.clip((half + sector.edge_softness - angular_dist) / sector.edge_softness, 0.0, 1.0)
            coverage[angular_dist <= half] = 1.0
        else:
            coverage = (angular_dist <= half).astype(np.float64)
        coverage[(radius < sector.r_start) | (radius > sector.r_end)] = 0.0
        np.minimum(values, 1.0 - (1.0 - sector.attenuation) * coverage, out=values)
    return ShadowMask(values)


def shadow_region(mask: ShadowMask | np.ndarray) -> np.ndarray:
    """Boolean map of the shadowed area: every pixel whose mask value is < 1."""
    values = mask.values if isinstance(mask, ShadowMask) else np.asarray(mask)
    return values < 1.0


def inject(x: Tensor, mask: ShadowMask) -> Tensor:
    """Multiply a [0, 1] image tensor by a shadow mask (x-tilde = x * x_s)."""
    plane = mask.values if isinstance(mask, ShadowMask) else np.asarray(mask)
    if x.shape[-2:] != plane.shape:
        raise ValueError(f"image spatial shape {x.shape[-2:]} != mask shape {plane.shape}")
    mask_t = Tensor(np.broadcast_to(plane, x.shape).astype(x.dtype, copy=True), dtype=x.dtype)
    return hadamard(x, mask_t)


def inside_fan(geom: FanGeometry, width: int, height: int) -> np.ndarray:
    """Boolean map of pixels inside the fan's angular and radial span."""
    radius, theta = _polar_grid(geom, width, height)
    mask = (
        (radius >= geom.r_min)
        & (radius <= geom.r_max)
        & (theta >= geom.theta_min)
        & (theta <= geom.theta_max)
    )
    return mask


def sectors_to_json(sectors: list[SectorSpec], path) -> None:
    Path(path).write_text(json.dumps([s.to_dict() for s in sectors], indent=2) + "\n")


def sectors_from_json(path) -> list[SectorSpec]:
    return [SectorSpec.from_dict(d) for d in json.loads(Path(path).read_text())]
