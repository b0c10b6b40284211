"""Composite training objective: L2 + perceptual + masked GAN terms.

The perceptual distance uses a fixed randomly-initialized feature extractor
with channel-unit-normalized activations.  The discriminator keeps a frozen
feature backbone and trains only K independent classifier heads, one per
feature level.  GAN terms apply exclusively to samples whose targets are
positive (real HR); masked-out samples contribute exactly zero loss and
zero generator gradient.

Reduction convention: GAN losses are summed over heads and masked samples,
then divided by the full batch size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import InputError


@dataclass
class LossWeights:
    lambda_l2: float = 2.0
    lambda_lpips: float = 5.0
    lambda_gan: float = 0.5

    def __post_init__(self):
        if min(self.lambda_l2, self.lambda_lpips, self.lambda_gan) < 0:
            raise InputError("loss weights must be >= 0")

    def to_dict(self) -> dict:
        return self.__dict__.copy()

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        return cls(**d)


class PerceptualFeatures(nn.Module):
    """Fixed random conv stack; distances on its normalized features."""

    def __init__(self, seed: int = 0):
        super().__init__()
        self.c1 = nn.Conv2d(3, 16, 4, 4, 0)
        self.c2 = nn.Conv2d(16, 32, 3, 2, 1)
        self.c3 = nn.Conv2d(32, 64, 3, 2, 1)
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for conv in (self.c1, self.c2, self.c3):
                fan_in = conv.in_channels * conv.kernel_size[0] ** 2
                conv.weight.copy_(
                    torch.randn(conv.weight.shape, generator=gen) * math.sqrt(2.0 / fan_in)
                )
                conv.bias.zero_()
        for p in self.parameters():
            p.requires_grad_(False)

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        h1 = F.leaky_relu(self.c1(x), 0.2)
        h2 = F.leaky_relu(self.c2(h1), 0.2)
        h3 = F.leaky_relu(self.c3(h2), 0.2)
        return [h1, h2, h3]


def _unit_normalize(f: torch.Tensor) -> torch.Tensor:
    return f / torch.sqrt((f * f).sum(dim=1, keepdim=True) + 1e-8)


_default_features: PerceptualFeatures | None = None


def default_features() -> PerceptualFeatures:
    global _default_features
    if _default_features is None:
        _default_features = PerceptualFeatures(seed=0)
    return _default_features


def perceptual_distance(
    pred: torch.Tensor, target: torch.Tensor, features: PerceptualFeatures | None = None
) -> torch.Tensor:
    """Mean squared distance between unit-normalized feature maps."""
    net = features or default_features()
    fp = net.features(pred)
    with torch.no_grad():
        ft = net.features(target)
    dist = pred.new_zeros(())
    for a, b in zip(fp, ft):
        dist = dist + F.mse_loss(_unit_normalize(a), _unit_normalize(b))
    return dist / len(fp)


def reconstruction_loss(
    pred: torch.Tensor,
    target: torch.Tensor,
    weights: LossWeights,
    features: PerceptualFeatures | None = None,
) -> tuple[torch.Tensor, dict]:
    """lambda_l2 * MSE + lambda_lpips * perceptual distance, with breakdown."""
    if pred.shape != target.shape:
        raise InputError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    l2 = F.mse_loss(pred, target)
    percep = perceptual_distance(pred, target, features)
    total = weights.lambda_l2 * l2 + weights.lambda_lpips * percep
    return total, {"l2": l2.item(), "lpips": percep.item()}


class Discriminator(nn.Module):
    """Frozen feature backbone + K independent trainable classifier heads."""

    def __init__(self, feature_backbone: nn.Module, tap_channels: list[int], seed: int = 0):
        super().__init__()
        self.backbone = feature_backbone
        for p in self.backbone.parameters():
            p.requires_grad_(False)
        self.backbone.eval()
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.heads = nn.ModuleList(
                nn.Sequential(
                    nn.Conv2d(ch, 32, 3, 2, 1),
                    nn.LeakyReLU(0.2),
                    nn.Conv2d(32, 32, 3, 1, 1),
                    nn.LeakyReLU(0.2),
                    nn.AdaptiveAvgPool2d(1),
                    nn.Flatten(),
                    nn.Linear(32, 1),
                )
                for ch in tap_channels
            )

    @property
    def num_heads(self) -> int:
        return len(self.heads)

    def head_logits(self, x: torch.Tensor, backbone_grad: bool = False) -> torch.Tensor:
        """(B, 3, H, W) -> (K, B) scalar logits, one row per head."""
        if backbone_grad:
            taps = self.backbone.features(x)
        else:
            with torch.no_grad():
                taps = self.backbone.features(x)
        return torch.stack([head(tap).squeeze(-1) for head, tap in zip(self.heads, taps)])


def generator_gan_loss(
    disc: Discriminator, fake: torch.Tensor, positive_mask: torch.Tensor
) -> torch.Tensor:
    """Non-saturating generator loss over positive-target samples only."""
    batch = fake.shape[0]
    pos = positive_mask.bool()
    if int(pos.sum()) == 0:
        return fake.new_zeros(())
    logits = disc.head_logits(fake[pos], backbone_grad=True)
    return F.binary_cross_entropy_with_logits(
        logits, torch.ones_like(logits), reduction="sum"
    ) / batch


def discriminator_loss(
    disc: Discriminator,
    real: torch.Tensor,
    fake_detached: torch.Tensor,
    positive_mask: torch.Tensor,
) -> torch.Tensor:
    """BCE(real -> 1) + BCE(fake -> 0) over positive pairs, per head."""
    batch = real.shape[0]
    pos = positive_mask.bool()
    if int(pos.sum()) == 0:
        return real.new_zeros(())
    real_logits = disc.head_logits(real[pos])
    fake_logits = disc.head_logits(fake_detached[pos])
    loss = F.binary_cross_entropy_with_logits(
        real_logits, torch.ones_like(real_logits), reduction="sum"
    ) + F.binary_cross_entropy_with_logits(
        fake_logits, torch.zeros_like(fake_logits), reduction="sum"
    )
    return loss / batch


def gan_losses(
    disc: Discriminator,
    real_batch: torch.Tensor,
    fake_batch: torch.Tensor,
    positive_mask: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Generator and discriminator GAN losses under positive-target masking.

    An empty positive set yields exact zeros for both (training then proceeds
    on the reconstruction terms alone).
    """
    if real_batch.shape != fake_batch.shape:
        raise InputError(
            f"shape mismatch: {tuple(real_batch.shape)} vs {tuple(fake_batch.shape)}"
        )
    g = generator_gan_loss(disc, fake_batch, positive_mask)
    d = discriminator_loss(disc, real_batch, fake_batch.detach(), positive_mask)
    return g, d


def total_generator_loss(
    pred: torch.Tensor,
    target: torch.Tensor,
    disc: Discriminator,
    positive_mask: torch.Tensor,
    weights: LossWeights,
    features: PerceptualFeatures | None = None,
) -> tuple[torch.Tensor, dict]:
    """Full objective; reconstruction covers all samples, GAN only positives."""
    recon, comps = reconstruction_loss(pred, target, weights, features)
    g_gan = generator_gan_loss(disc, pred, positive_mask)
    total = recon + weights.lambda_gan * g_gan
    comps["g_gan"] = g_gan.item()
    return total, comps
