"""Self-supervised training loop.

Every step takes a batch of clean phantoms, multiplies in freshly sampled
synthetic shadow fields, and asks the model to reconstruct the corrupted
image while its shadow head recovers the injected field. Parameters move
by momentum SGD: v <- mu * v - lr * g; p <- p + v.

All randomness is drawn from named substreams of one seed. Shuffling is
keyed by epoch index and shadow injection by absolute step number, so a
longer run reproduces a shorter one exactly up to the shared prefix, and
a run resumed from a checkpoint is bit-identical to one that never
stopped.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .autodiff import Tensor, hadamard
from .losses import LossBreakdown, LossWeights, loss_total
from .network import (
    ArchConfig,
    ModelParams,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .phantom import load_images, load_manifest
from .rng import substream
from .shadows import ShadowConfig, rasterize_mask, sample_sectors

__all__ = [
    "TrainConfig",
    "TrainingDiverged",
    "FitResult",
    "train_step",
    "fit",
]

LOG_NAME = "train_log.csv"
CONFIG_ECHO_NAME = "train_config.json"
FINAL_CHECKPOINT = "model.ckpt"
LOG_HEADER = "step,epoch,loss_ae,loss_shadow,loss_sreg,loss_content,loss_total"


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    corpus: str
    out_dir: str
    epochs: int = 30
    batch_size: int = 8
    lr: float = 0.1
    momentum: float = 0.9
    seed: int = 0
    checkpoint_every: int = 0  # 0: only the final checkpoint
    inject_prob: float = 1.0
    weights: LossWeights = field(default_factory=LossWeights)
    shadows: ShadowConfig | None = None  # None: reuse the corpus settings
    arch: ArchConfig | None = None  # None: default stack sized to the corpus

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum {self.momentum} outside [0, 1)")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")
        if not 0.0 <= self.inject_prob <= 1.0:
            raise ValueError("inject_prob must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "corpus": self.corpus,
            "out_dir": self.out_dir,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "momentum": self.momentum,
            "seed": self.seed,
            "checkpoint_every": self.checkpoint_every,
            "inject_prob": self.inject_prob,
            "weights": self.weights.to_dict(),
            "shadows": None if self.shadows is None else self.shadows.to_dict(),
            "arch": None if self.arch is None else self.arch.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {
            "corpus",
            "out_dir",
            "epochs",
            "batch_size",
            "lr",
            "momentum",
            "seed",
            "checkpoint_every",
            "inject_prob",
            "weights",
            "shadows",
            "arch",
        }
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown TrainConfig keys {sorted(extra)}")
        kwargs = dict(d)
        if isinstance(kwargs.get("weights"), dict):
            kwargs["weights"] = LossWeights.from_dict(kwargs["weights"])
        if isinstance(kwargs.get("shadows"), dict):
            kwargs["shadows"] = ShadowConfig.from_dict(kwargs["shadows"])
        if isinstance(kwargs.get("arch"), dict):
            kwargs["arch"] = ArchConfig.from_dict(kwargs["arch"])
        return cls(**kwargs)


def train_step(
    params: ModelParams,
    velocities: dict[str, np.ndarray],
    clean: Tensor,
    injected: Tensor,
    weights: LossWeights,
    lr: float,
    momentum: float,
    step: int | None = None,
) -> LossBreakdown:
    """One optimization step on a batch; mutates params and velocities."""
    noisy = hadamard(clean, injected)
    out = forward(params, noisy)
    total, breakdown = loss_total(out.recon, out.shadow, out.content, noisy, injected, weights)
    if not math.isfinite(breakdown.total):
        where = "" if step is None else f" at step {step}"
        raise TrainingDiverged(f"non-finite loss{where}: {breakdown}")
    params.zero_grad()
    total.backward()
    for name, p in params.named_parameters():
        grad = p.grad if p.grad is not None else np.zeros_like(p.data)
        v = velocities[name]
        v *= momentum
        v -= lr * grad.astype(v.dtype, copy=False)
        p.data += v
    return breakdown


def _sample_batch_masks(
    n: int,
    size: tuple[int, int],
    geometry,
    shadow_cfg: ShadowConfig,
    inject_prob: float,
    rng: np.random.Generator,
) -> np.ndarray:
    height, width = size
    masks = np.ones((n, 1, height, width), dtype=np.float32)
    for j in range(n):
        if rng.uniform() < inject_prob:
            sectors = sample_sectors(geometry, rng, shadow_cfg)
            masks[j, 0] = rasterize_mask(sectors, geometry, width, height).values.astype(
                np.float32
            )
    return masks


class FitResult(NamedTuple):
    params: ModelParams
    steps: int
    log_path: Path
    checkpoint_path: Path


def fit(cfg: TrainConfig, resume_from=None) -> FitResult:
    """Train on the corpus named by cfg; optionally continue a checkpoint.

    Resuming replays the interrupted run exactly: the epoch permutation is
    recomputed from the epoch index and injection picks up at the stored
    absolute step, so the final parameters match an uninterrupted run bit
    for bit.
    """
    manifest = load_manifest(cfg.corpus)
    images = load_images(manifest, "train")
    n_images = images.shape[0]
    size = manifest.spec.image_size
    geometry = manifest.spec.geometry
    shadow_cfg = cfg.shadows if cfg.shadows is not None else manifest.spec.shadow_cfg
    arch = cfg.arch if cfg.arch is not None else ArchConfig(input_size=size)

    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(exist_ok=True)
    (out_dir / CONFIG_ECHO_NAME).write_text(
        json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"
    )

    if resume_from is not None:
        params, extra, meta = load_checkpoint(resume_from)
        if params.arch != arch:
            raise ValueError(
                f"checkpoint architecture {params.arch} does not match config {arch}"
            )
        velocities = {}
        for name, p in params.named_parameters():
            stored = extra.get(f"opt.{name}")
            velocities[name] = (
                stored.copy() if stored is not None else np.zeros_like(p.data)
            )
        done_steps = int(meta.get("step", 0))
    else:
        params = init_params(arch, substream(cfg.seed, "init"))
        velocities = {name: np.zeros_like(p.data) for name, p in params.named_parameters()}
        done_steps = 0

    steps_per_epoch = -(-n_images // cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    start_epoch = done_steps // steps_per_epoch

    log_path = out_dir / LOG_NAME
    log_fh = open(log_path, "a" if resume_from is not None else "w")
    with log_fh:
        if resume_from is None:
            log_fh.write(LOG_HEADER + "\n")
        step = done_steps
        for epoch in range(start_epoch, cfg.epochs):
            order = substream(cfg.seed, "shuffle", epoch).permutation(n_images)
            start_batch = step - epoch * steps_per_epoch
            for b in range(start_batch, steps_per_epoch):
                idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
                step += 1
                clean = Tensor(images[idx])
                masks = _sample_batch_masks(
                    len(idx),
                    size,
                    geometry,
                    shadow_cfg,
                    cfg.inject_prob,
                    substream(cfg.seed, "inject", step),
                )
                breakdown = train_step(
                    params,
                    velocities,
                    clean,
                    Tensor(masks),
                    cfg.weights,
                    cfg.lr,
                    cfg.momentum,
                    step=step,
                )
                log_fh.write(
                    f"{step},{epoch},{breakdown.ae!r},{breakdown.shadow!r},"
                    f"{breakdown.sreg!r},{breakdown.content!r},{breakdown.total!r}\n"
                )
                if cfg.checkpoint_every and step % cfg.checkpoint_every == 0 and step < total_steps:
                    ckpt_dir = out_dir / "checkpoints"
                    ckpt_dir.mkdir(exist_ok=True)
                    _save_state(ckpt_dir / f"step_{step:06d}.ckpt", params, velocities, step, epoch)

    final_path = out_dir / FINAL_CHECKPOINT
    last_epoch = max(cfg.epochs - 1, 0)
    _save_state(final_path, params, velocities, step, last_epoch)
    return FitResult(params=params, steps=step, log_path=log_path, checkpoint_path=final_path)


def _save_state(path, params, velocities, step, epoch) -> None:
    extra = {f"opt.{name}": v for name, v in velocities.items()}
    save_checkpoint(path, params, extra=extra, meta={"step": step, "epoch": epoch})
