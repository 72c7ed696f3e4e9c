"""Adversarial losses and the (selective) mode-seeking regularizers.

Every function accepts single items or batches; with ``batched=True`` the
leading axis is the item axis and per-item values are returned.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import torch
import torch.nn.functional as F

from .errors import InvalidArgumentError

REGULARIZERS = ("none", "ms", "sdi")
DISTANCE_MODES = ("pixel", "encoder_feature")
# distance used when LossConfig.distance_mode is left unset
DEFAULT_DISTANCE = {"none": "pixel", "ms": "pixel", "sdi": "encoder_feature"}


@dataclass(frozen=True)
class LossConfig:
    lambda_div: float = 1.0
    epsilon: float = 1e-5
    reg_clamp: float = 1e4
    distance_mode: Optional[str] = None
    regularizer_mode: str = "sdi"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidArgumentError("epsilon must be > 0")
        if not self.reg_clamp > 0:
            raise InvalidArgumentError("reg_clamp must be > 0")
        if not self.lambda_div >= 0:
            raise InvalidArgumentError("lambda_div must be >= 0")
        if self.regularizer_mode not in REGULARIZERS:
            raise InvalidArgumentError(f"regularizer_mode must be one of {REGULARIZERS}")
        if self.distance_mode is not None and self.distance_mode not in DISTANCE_MODES:
            raise InvalidArgumentError(f"distance_mode must be one of {DISTANCE_MODES}")

    @property
    def distance(self) -> str:
        return self.distance_mode or DEFAULT_DISTANCE[self.regularizer_mode]


def _tensor(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(x, dtype=torch.float64)


def l1_distance(a, b, batched: bool = False) -> torch.Tensor:
    """Mean absolute elementwise difference."""
    a, b = _tensor(a), _tensor(b)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    diff = (a - b).abs()
    if batched:
        return diff.flatten(1).mean(dim=1)
    return diff.mean()


def adversarial_losses(real_logits, fake_logits) -> Tuple[torch.Tensor, torch.Tensor]:
    """Discriminator loss and non-saturating generator loss from logits.

    ``-log sigmoid(x) = softplus(-x)`` and ``-log(1 - sigmoid(x)) = softplus(x)``
    keep both terms finite for any finite logit.
    """
    real_logits, fake_logits = _tensor(real_logits), _tensor(fake_logits)
    d_loss = F.softplus(-real_logits).mean() + F.softplus(fake_logits).mean()
    g_loss = F.softplus(-fake_logits).mean()
    return d_loss, g_loss


def ms_regularizer(sample1, sample2, z1, z2, cfg: LossConfig, batched: bool = False) -> torch.Tensor:
    """Latent distance over output distance, stabilized and clamped.

    ``sample1``/``sample2`` are whatever representation the distance is taken
    on: generated samples in pixel mode, encoder features otherwise.
    """
    d_out = l1_distance(sample1, sample2, batched)
    d_z = l1_distance(z1, z2, batched)
    return torch.clamp(d_z / (d_out + cfg.epsilon), max=cfg.reg_clamp)


def sdi_regularizer(f_c, features1, features2, z1, z2, cfg: LossConfig, batched: bool = False) -> torch.Tensor:
    """Mode-seeking term scaled by the condition's normalized diversity."""
    f_c = _tensor(f_c)
    if torch.any((f_c < 0) | (f_c > 1)):
        raise InvalidArgumentError("f_div must lie in [0, 1]")
    return f_c.to(features1.dtype if isinstance(features1, torch.Tensor) else f_c.dtype) * ms_regularizer(
        features1, features2, z1, z2, cfg, batched
    )


def total_generator_loss(g_adv, reg, cfg: LossConfig):
    return g_adv + cfg.lambda_div * reg
