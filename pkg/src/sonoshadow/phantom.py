"""Ultrasound-like phantom images with known shadow ground truth.

Stands in for clinical recordings so the whole pipeline can run at desk
scale: a fan-shaped field of view over a speckled background with smooth
elliptical blobs (some darker than the background, mimicking fluid-filled
cavities that real shadow detectors confuse with shadows), optionally
darkened by true annular-sector shadows whose region is the ground truth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.ndimage import gaussian_filter

from . import imageio
from .autodiff import Tensor
from .rng import spawn_seeds
from .shadows import (
    FanGeometry,
    SectorSpec,
    ShadowConfig,
    inside_fan,
    rasterize_mask,
    sample_sectors,
    shadow_region,
)

__all__ = [
    "PhantomSpec",
    "PhantomSample",
    "generate_phantom",
    "build_corpus",
    "load_manifest",
    "load_images",
    "load_truths",
    "default_geometry",
    "default_spec",
    "CorpusEntry",
    "CorpusManifest",
]

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"


def default_geometry(height: int = 64, width: int = 64) -> FanGeometry:
    """Fan that fills most of a height x width image from an apex above it."""
    return FanGeometry(
        apex=(-height / 8.0, (width - 1) / 2.0),
        theta_min=-0.55,
        theta_max=0.55,
        r_min=0.1875 * height,
        r_max=1.1875 * height,
    )


def default_spec(height: int = 64, width: int = 64) -> "PhantomSpec":
    return PhantomSpec(geometry=default_geometry(height, width), image_size=(height, width))


@dataclass(frozen=True)
class PhantomSpec:
    geometry: FanGeometry
    image_size: tuple[int, int] = (64, 64)  # (height, width)
    num_blobs: int = 6
    blob_intensity: tuple[float, float] = (0.05, 0.9)
    blob_radius: tuple[float, float] = (3.0, 11.0)
    speckle_strength: float = 0.35
    background_level: float = 0.35
    shadow_prob: float = 0.5
    shadow_cfg: ShadowConfig = field(default_factory=ShadowConfig)
    true_shadows: tuple[SectorSpec, ...] | None = None

    def __post_init__(self):
        if self.image_size[0] <= 0 or self.image_size[1] <= 0:
            raise ValueError(f"bad image size {self.image_size}")
        if self.num_blobs < 0:
            raise ValueError("num_blobs must be >= 0")
        for name, (lo, hi) in (
            ("blob_intensity", self.blob_intensity),
            ("blob_radius", self.blob_radius),
        ):
            if not lo <= hi:
                raise ValueError(f"{name} range [{lo}, {hi}] is inverted")
        if not (0.0 <= self.blob_intensity[0] and self.blob_intensity[1] <= 1.0):
            raise ValueError("blob intensities must lie in [0, 1]")
        if self.speckle_strength < 0:
            raise ValueError("speckle_strength must be >= 0")
        if not 0.0 <= self.background_level <= 1.0:
            raise ValueError("background_level must lie in [0, 1]")
        if not 0.0 <= self.shadow_prob <= 1.0:
            raise ValueError("shadow_prob must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "geometry": self.geometry.to_dict(),
            "image_size": list(self.image_size),
            "num_blobs": self.num_blobs,
            "blob_intensity": list(self.blob_intensity),
            "blob_radius": list(self.blob_radius),
            "speckle_strength": self.speckle_strength,
            "background_level": self.background_level,
            "shadow_prob": self.shadow_prob,
            "shadow_cfg": self.shadow_cfg.to_dict(),
            "true_shadows": None
            if self.true_shadows is None
            else [s.to_dict() for s in self.true_shadows],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        known = {
            "geometry",
            "image_size",
            "num_blobs",
            "blob_intensity",
            "blob_radius",
            "speckle_strength",
            "background_level",
            "shadow_prob",
            "shadow_cfg",
            "true_shadows",
        }
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown PhantomSpec keys {sorted(extra)}")
        kwargs = dict(d)
        kwargs["geometry"] = FanGeometry.from_dict(d["geometry"])
        if "image_size" in kwargs:
            kwargs["image_size"] = (int(d["image_size"][0]), int(d["image_size"][1]))
        for key in ("blob_intensity", "blob_radius"):
            if key in kwargs:
                kwargs[key] = (float(d[key][0]), float(d[key][1]))
        if "shadow_cfg" in kwargs:
            kwargs["shadow_cfg"] = ShadowConfig.from_dict(d["shadow_cfg"])
        if kwargs.get("true_shadows") is not None:
            kwargs["true_shadows"] = tuple(SectorSpec.from_dict(s) for s in d["true_shadows"])
        return cls(**kwargs)


class PhantomSample(NamedTuple):
    image: Tensor  # [H, W], float32, zeros outside the fan
    truth: np.ndarray  # [H, W] bool, true where a true shadow darkens the scene
    sectors: list[SectorSpec]


def _render_blobs(img: np.ndarray, spec: PhantomSpec, rng: np.random.Generator) -> None:
    height, width = img.shape
    rows = np.arange(height, dtype=np.float64)[:, None]
    cols = np.arange(width, dtype=np.float64)[None, :]
    for _ in range(spec.num_blobs):
        row = rng.uniform(0, height)
        col = rng.uniform(0, width)
        semi_a = rng.uniform(*spec.blob_radius)
        semi_b = rng.uniform(*spec.blob_radius)
        angle = rng.uniform(0, np.pi)
        intensity = rng.uniform(*spec.blob_intensity)
        du = (rows - row) * np.cos(angle) + (cols - col) * np.sin(angle)
        dv = -(rows - row) * np.sin(angle) + (cols - col) * np.cos(angle)
        dist2 = (du / semi_a) ** 2 + (dv / semi_b) ** 2
        alpha = np.exp(-3.0 * dist2)
        img *= 1.0 - alpha
        img += intensity * alpha


def generate_phantom(spec: PhantomSpec, rng: np.random.Generator) -> PhantomSample:
    """Render one phantom. Consumes rng in a fixed order (shadows, blobs, speckle)."""
    height, width = spec.image_size
    if spec.true_shadows is not None:
        sectors = list(spec.true_shadows)
    elif spec.shadow_prob > 0:
        has_shadow = rng.uniform() < spec.shadow_prob
        sectors = sample_sectors(spec.geometry, rng, spec.shadow_cfg) if has_shadow else []
    else:
        sectors = []

    img = np.full((height, width), spec.background_level, dtype=np.float64)
    _render_blobs(img, spec, rng)

    if spec.speckle_strength > 0:
        grain = rng.standard_normal((height, width))
        grain = gaussian_filter(grain, sigma=1.0)
        grain = (grain - grain.mean()) / grain.std()
        img *= 1.0 + spec.speckle_strength * grain
    np.clip(img, 0.0, 1.0, out=img)

    mask = rasterize_mask(sectors, spec.geometry, width, height)
    img *= mask.values
    img[~inside_fan(spec.geometry, width, height)] = 0.0

    return PhantomSample(
        image=Tensor(img.astype(np.float32)),
        truth=shadow_region(mask),
        sectors=sectors,
    )


@dataclass(frozen=True)
class CorpusEntry:
    role: str  # "train" or "eval"
    image: str  # path relative to the manifest directory
    seed: int
    truth: str | None = None
    sectors: tuple[SectorSpec, ...] = ()

    def to_dict(self) -> dict:
        d = {"role": self.role, "image": self.image, "seed": self.seed}
        if self.truth is not None:
            d["truth"] = self.truth
        d["sectors"] = [s.to_dict() for s in self.sectors]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusEntry":
        extra = set(d) - {"role", "image", "seed", "truth", "sectors"}
        if extra:
            raise ValueError(f"unknown corpus entry keys {sorted(extra)}")
        return cls(
            role=d["role"],
            image=d["image"],
            seed=int(d["seed"]),
            truth=d.get("truth"),
            sectors=tuple(SectorSpec.from_dict(s) for s in d.get("sectors", [])),
        )


@dataclass
class CorpusManifest:
    root: Path
    spec: PhantomSpec
    entries: list[CorpusEntry]
    version: int = MANIFEST_VERSION

    def by_role(self, role: str) -> list[CorpusEntry]:
        return [e for e in self.entries if e.role == role]

    def path_of(self, relative: str) -> Path:
        return self.root / relative


def _eval_spec(spec: PhantomSpec) -> PhantomSpec:
    # evaluation phantoms always carry at least one true shadow
    cfg = spec.shadow_cfg
    return replace(
        spec,
        true_shadows=None,
        shadow_prob=1.0,
        shadow_cfg=replace(cfg, count=(max(1, cfg.count[0]), max(1, cfg.count[1]))),
    )


def build_corpus(
    spec: PhantomSpec, n_train: int, n_eval: int, seed: int, out_dir
) -> Path:
    """Write train/eval phantoms plus a JSON manifest; returns the manifest path."""
    if n_train <= 0 or n_eval <= 0:
        raise ValueError(f"corpus counts must be positive, got {n_train}/{n_eval}")
    root = Path(out_dir)
    root.mkdir(exist_ok=True)  # parent must already exist
    (root / "train").mkdir(exist_ok=True)
    (root / "eval").mkdir(exist_ok=True)

    entries: list[CorpusEntry] = []
    train_seeds = spawn_seeds(seed, "corpus-train", n_train)
    eval_seeds = spawn_seeds(seed, "corpus-eval", n_eval)
    eval_spec = _eval_spec(spec)

    for i, img_seed in enumerate(train_seeds):
        sample = generate_phantom(spec, np.random.default_rng(img_seed))
        rel = f"train/img_{i:05d}.png"
        imageio.save(sample.image, root / rel)
        entries.append(
            CorpusEntry(role="train", image=rel, seed=img_seed, sectors=tuple(sample.sectors))
        )

    for i, img_seed in enumerate(eval_seeds):
        sample = generate_phantom(eval_spec, np.random.default_rng(img_seed))
        rel = f"eval/img_{i:05d}.png"
        rel_truth = f"eval/truth_{i:05d}.png"
        imageio.save(sample.image, root / rel)
        imageio.save(sample.truth.astype(np.float64), root / rel_truth)
        entries.append(
            CorpusEntry(
                role="eval", image=rel, seed=img_seed, truth=rel_truth, sectors=tuple(sample.sectors)
            )
        )

    manifest = {
        "version": MANIFEST_VERSION,
        "spec": spec.to_dict(),
        "entries": [e.to_dict() for e in entries],
    }
    manifest_path = root / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest_path


def load_manifest(path) -> CorpusManifest:
    """Parse a corpus manifest. `path` may be the manifest file or its directory."""
    p = Path(path)
    if p.is_dir():
        p = p / MANIFEST_NAME
    if not p.is_file():
        raise FileNotFoundError(f"corpus manifest not found at {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"corrupt corpus manifest {p}: {exc}") from None
    if data.get("version") != MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest version {data.get('version')!r}")
    return CorpusManifest(
        root=p.parent,
        spec=PhantomSpec.from_dict(data["spec"]),
        entries=[CorpusEntry.from_dict(e) for e in data["entries"]],
    )


def load_images(manifest: CorpusManifest, role: str) -> np.ndarray:
    """Decode every image of a role into an [n, 1, H, W] float32 stack."""
    entries = manifest.by_role(role)
    if not entries:
        raise ValueError(f"corpus has no {role!r} entries")
    height, width = manifest.spec.image_size
    stack = np.empty((len(entries), 1, height, width), dtype=np.float32)
    for i, entry in enumerate(entries):
        tensor = imageio.load(manifest.path_of(entry.image))
        if tensor.shape[2:] != (height, width):
            raise ValueError(
                f"{entry.image}: shape {tensor.shape[2:]} does not match corpus size {(height, width)}"
            )
        stack[i] = tensor.data[0]
    return stack


def load_truths(manifest: CorpusManifest) -> list[np.ndarray]:
    """Decode the eval ground-truth masks as boolean [H, W] arrays."""
    truths = []
    for entry in manifest.by_role("eval"):
        if entry.truth is None:
            raise ValueError(f"eval entry {entry.image} has no truth mask")
        img = imageio.load_gray(manifest.path_of(entry.truth))
        arr = np.frombuffer(img.pixels, dtype=np.uint8).reshape(img.height, img.width)
        truths.append(arr == 255)
    return truths
