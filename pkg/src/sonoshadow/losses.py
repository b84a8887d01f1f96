"""Training objective for the shadow-aware autoencoder.

Four terms balance reconstruction against shadow supervision:

* ``loss_ae`` -- mean squared error between the reconstruction and the
  shadow-injected input.
* ``loss_shadow`` -- squared error of the shadow head against the known
  injected field, counted only where that field actually darkens pixels
  but normalized by the full image area.
* ``loss_sreg`` -- mean absolute pull of the shadow map toward 1 (no
  shadow), so the head stays quiet off the injected region.
* ``loss_content`` -- negative log-likelihood of the content map under a
  Beta prior, discouraging the content head from hiding shadow structure
  in mid-gray values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

from .autodiff import (
    Tensor,
    abs_val,
    add,
    add_const,
    clamp,
    hadamard,
    log,
    mean_all,
    scale,
    sub,
    sum_all,
)

__all__ = [
    "LossWeights",
    "LossBreakdown",
    "loss_ae",
    "loss_shadow",
    "loss_sreg",
    "loss_content",
    "loss_total",
]


@dataclass(frozen=True)
class LossWeights:
    ae: float = 1.0
    shadow: float = 10.0
    sreg: float = 0.5
    content: float = 1e-4
    alpha: float = 2.0
    beta: float = 2.0
    eps: float = 1e-6

    def __post_init__(self):
        for name in ("ae", "shadow", "sreg", "content"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be >= 0")
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("beta-prior parameters must be positive")
        if not 0.0 < self.eps < 0.5:
            raise ValueError(f"eps {self.eps} outside (0, 0.5)")

    def to_dict(self) -> dict:
        return {
            "ae": self.ae,
            "shadow": self.shadow,
            "sreg": self.sreg,
            "content": self.content,
            "alpha": self.alpha,
            "beta": self.beta,
            "eps": self.eps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        extra = set(d) - {"ae", "shadow", "sreg", "content", "alpha", "beta", "eps"}
        if extra:
            raise ValueError(f"unknown LossWeights keys {sorted(extra)}")
        return cls(**{k: float(v) for k, v in d.items()})


class LossBreakdown(NamedTuple):
    ae: float
    shadow: float
    sreg: float
    content: float
    total: float


def loss_ae(recon: Tensor, target: Tensor) -> Tensor:
    d = sub(recon, target)
    return mean_all(hadamard(d, d))


def loss_shadow(pred: Tensor, injected: Tensor) -> Tensor:
    """Masked MSE against the injected shadow field.

    Pixels the field leaves untouched (value exactly 1) do not contribute,
    but the sum is still divided by batch * height * width, so sparse
    shadows yield proportionally small losses.
    """
    if pred.shape != injected.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {injected.shape}")
    inside = (injected.data != 1.0).astype(pred.data.dtype)
    n, _, height, width = pred.shape
    d = sub(pred, injected)
    masked = hadamard(hadamard(d, d), Tensor(inside))
    return scale(sum_all(masked), 1.0 / (n * height * width))


def loss_sreg(pred: Tensor) -> Tensor:
    return mean_all(abs_val(add_const(scale(pred, -1.0), 1.0)))


def loss_content(pred: Tensor, weights: LossWeights) -> Tensor:
    """Beta(alpha, beta) negative log-likelihood, summed per image.

    Predictions are clamped into [eps, 1 - eps] before the logs; the
    normalizer ln B(alpha, beta) is folded in as a constant so the value
    matches the exact density.
    """
    a, b = weights.alpha, weights.beta
    ln_beta_fn = math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
    n, _, height, width = pred.shape
    c = clamp(pred, weights.eps, 1.0 - weights.eps)
    one_minus = clamp(add_const(scale(pred, -1.0), 1.0), weights.eps, 1.0 - weights.eps)
    ll = add(scale(log(c), a - 1.0), scale(log(one_minus), b - 1.0))
    return add_const(scale(sum_all(ll), -1.0 / n), height * width * ln_beta_fn)


def loss_total(
    recon: Tensor,
    shadow: Tensor,
    content: Tensor,
    noisy: Tensor,
    injected: Tensor,
    weights: LossWeights,
) -> tuple[Tensor, LossBreakdown]:
    """Weighted sum of the four terms; returns the graph node and the floats."""
    l_ae = loss_ae(recon, noisy)
    l_s = loss_shadow(shadow, injected)
    l_reg = loss_sreg(shadow)
    l_c = loss_content(content, weights)
    total = add(
        add(scale(l_ae, weights.ae), scale(l_s, weights.shadow)),
        add(scale(l_reg, weights.sreg), scale(l_c, weights.content)),
    )
    breakdown = LossBreakdown(
        ae=l_ae.item(),
        shadow=l_s.item(),
        sreg=l_reg.item(),
        content=l_c.item(),
        total=total.item(),
    )
    return total, breakdown
