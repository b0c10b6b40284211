"""Toy latent backbone: encoder, block-structured UNet, frozen decoder.

The backbone is a small stand-in for a latent diffusion stack.  The encoder
maps 128x128x3 images to an 8-channel 32x32 latent, the UNet refines latents
in one evaluation under prompt conditioning (feature-wise affine modulation
from a learned prompt vector), and the decoder maps latents back to images.
Blocks carry stable indices so degradation-guided adapters can be attached
per block:

    encoder   blocks 1-2
    unet      blocks 3-10   (4 down-side, 1 mid, 3 up-side)
    decoder   blocks 11-12

Input/output projections are structural glue and carry no adapters.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import images
from .dglora import AdaptableConv2d, AdapterRegistry, Condition
from .errors import InputError, StateError


@dataclass
class BackboneConfig:
    image_size: int = 128
    latent_channels: int = 8
    enc_width: int = 32
    enc_width2: int = 48
    unet_width: int = 32
    unet_width2: int = 48
    dec_width: int = 48
    prompt_dim: int = 64

    def to_dict(self) -> dict:
        return self.__dict__.copy()

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        return cls(**d)


class ForwardCounter:
    """Per-call instrumentation for inference paths."""

    def __init__(self):
        self.unet_forwards = 0
        self.estimator_calls = 0

    def tick_unet(self):
        self.unet_forwards += 1

    def tick_estimator(self):
        self.estimator_calls += 1


class PromptEmbedding(nn.Module):
    """Two learned vectors standing in for positive / negative text prompts."""

    def __init__(self, dim: int = 64):
        super().__init__()
        self.t_pos = nn.Parameter(torch.randn(dim) * 0.1)
        self.t_neg = nn.Parameter(torch.randn(dim) * 0.1)

    def select(self, positive_mask: torch.Tensor) -> torch.Tensor:
        """(B,) bool mask -> (B, dim) per-item prompt vectors."""
        mask = positive_mask.view(-1, 1).to(self.t_pos.dtype)
        return mask * self.t_pos + (1.0 - mask) * self.t_neg

    def get(self, which: str) -> torch.Tensor:
        if which == "pos":
            return self.t_pos.unsqueeze(0)
        if which == "neg":
            return self.t_neg.unsqueeze(0)
        raise InputError(f"prompt must be 'pos' or 'neg', got {which!r}")


class FiLM(nn.Module):
    """Feature-wise affine modulation from the prompt vector (zero-init)."""

    def __init__(self, prompt_dim: int, channels: int):
        super().__init__()
        self.proj = nn.Linear(prompt_dim, 2 * channels)
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def forward(self, h: torch.Tensor, prompt: torch.Tensor) -> torch.Tensor:
        gamma, beta = self.proj(prompt).chunk(2, dim=-1)
        return h * (1.0 + gamma[:, :, None, None]) + beta[:, :, None, None]


class Encoder(nn.Module):
    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        # patchify stem: one 4x4/stride-4 conv takes 128^2 straight to latent res
        self.b1 = AdaptableConv2d(
            3, cfg.enc_width, kernel_size=4, stride=4, padding=0,
            surface="encoder", block_index=1,
        )
        self.b2 = AdaptableConv2d(
            cfg.enc_width, cfg.enc_width2, surface="encoder", block_index=2
        )
        self.latent_head = nn.Conv2d(cfg.enc_width2, cfg.latent_channels, 3, 1, 1)

    def features(self, x: torch.Tensor, cond: Condition | None = None) -> list[torch.Tensor]:
        h1 = F.silu(self.b1(x, cond))
        h2 = F.silu(self.b2(h1, cond))
        z = self.latent_head(h2)
        return [h1, h2, z]

    def forward(self, x: torch.Tensor, cond: Condition | None = None) -> torch.Tensor:
        return self.features(x, cond)[-1]


class UNetBlock(nn.Module):
    def __init__(
        self,
        in_ch: int,
        out_ch: int,
        prompt_dim: int,
        block_index: int,
        stride: int = 1,
        residual: bool = True,
        second_conv: bool = False,
    ):
        super().__init__()
        self.conv = AdaptableConv2d(
            in_ch, out_ch, stride=stride, surface="unet", block_index=block_index
        )
        self.conv2 = (
            AdaptableConv2d(out_ch, out_ch, surface="unet", block_index=block_index)
            if second_conv
            else None
        )
        self.film = FiLM(prompt_dim, out_ch)
        self.residual = residual and in_ch == out_ch and stride == 1

    def forward(self, x, prompt, cond=None):
        h = F.silu(self.conv(x, cond))
        if self.conv2 is not None:
            h = F.silu(self.conv2(h, cond))
        h = self.film(h, prompt)
        return x + h if self.residual else h


class UNet(nn.Module):
    """Eight-block latent refiner with skip connections and a global residual."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        w, w2, p = cfg.unet_width, cfg.unet_width2, cfg.prompt_dim
        self.in_proj = nn.Conv2d(cfg.latent_channels, w, 3, 1, 1)
        self.b1 = UNetBlock(w, w, p, block_index=3)
        self.b2 = UNetBlock(w, w, p, block_index=4)
        self.b3 = UNetBlock(w, w2, p, block_index=5, stride=2)
        self.b4 = UNetBlock(w2, w2, p, block_index=6)
        self.mid = UNetBlock(w2, w2, p, block_index=7, second_conv=True)
        self.b6 = UNetBlock(w2, w2, p, block_index=8)
        self.b7 = UNetBlock(w2, w, p, block_index=9, residual=False)
        self.b8 = UNetBlock(w, w, p, block_index=10)
        self.out_proj = nn.Conv2d(w, cfg.latent_channels, 3, 1, 1)

    def forward(
        self,
        z: torch.Tensor,
        prompt: torch.Tensor,
        cond: Condition | None = None,
        counter: ForwardCounter | None = None,
    ) -> torch.Tensor:
        if counter is not None:
            counter.tick_unet()
        h = F.silu(self.in_proj(z))
        h = self.b1(h, prompt, cond)
        s0 = h = self.b2(h, prompt, cond)
        h = self.b3(h, prompt, cond)
        s1 = h = self.b4(h, prompt, cond)
        h = self.mid(h, prompt, cond)
        h = self.b6(h, prompt, cond) + s1
        h = F.interpolate(h, scale_factor=2, mode="nearest")
        h = self.b7(h, prompt, cond) + s0
        h = self.b8(h, prompt, cond)
        return z + self.out_proj(h)


class Decoder(nn.Module):
    """Latent -> image; frozen after pretraining."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        w = cfg.dec_width
        self.b1 = AdaptableConv2d(
            cfg.latent_channels, w, surface="decoder", block_index=11
        )
        self.b2 = AdaptableConv2d(w, 32, surface="decoder", block_index=12)
        self.up1 = nn.Conv2d(32, 12 * 4, 3, 1, 1)
        self.up2 = nn.Conv2d(12, 3 * 4, 3, 1, 1)

    def forward(self, z: torch.Tensor, cond: Condition | None = None) -> torch.Tensor:
        h = F.silu(self.b1(z, cond))
        h = F.silu(self.b2(h, cond))
        h = F.silu(F.pixel_shuffle(self.up1(h), 2))
        return F.pixel_shuffle(self.up2(h), 2)


class ToyBackbone(nn.Module):
    NUM_BLOCKS = 12

    def __init__(self, config: BackboneConfig | None = None, seed: int = 0):
        super().__init__()
        self.config = config or BackboneConfig()
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.encoder = Encoder(self.config)
            self.unet = UNet(self.config)
            self.decoder = Decoder(self.config)
            self.prompts = PromptEmbedding(self.config.prompt_dim)
        self.pretrained = False

    @property
    def num_blocks(self) -> int:
        return self.NUM_BLOCKS

    def adaptable_convs(self):
        """Yield (surface, block_index, name, layer) for every attachable weight."""
        for name, module in self.named_modules():
            if isinstance(module, AdaptableConv2d) and module.adaptable:
                yield module.surface, module.block_index, name, module

    def encode(self, x: torch.Tensor, cond: Condition | None = None) -> torch.Tensor:
        return self.encoder(x, cond)

    def denoise(
        self,
        z: torch.Tensor,
        prompt: torch.Tensor,
        cond: Condition | None = None,
        counter: ForwardCounter | None = None,
    ) -> torch.Tensor:
        return self.unet(z, prompt, cond, counter)

    def decode(self, z: torch.Tensor, cond: Condition | None = None) -> torch.Tensor:
        return self.decoder(z, cond)

    def freeze_decoder(self) -> None:
        for p in self.decoder.parameters():
            p.requires_grad_(False)

    def freeze_base(self) -> None:
        """Freeze everything except the prompt embeddings (adapters live outside)."""
        for p in self.parameters():
            p.requires_grad_(False)
        for p in self.prompts.parameters():
            p.requires_grad_(True)


# ---------------------------------------------------------------------------
# One-step inference paths


def _prepare_input(
    backbone: ToyBackbone,
    lr_up: np.ndarray,
    noise_sigma_start: float,
    seed: int | None,
) -> torch.Tensor:
    if noise_sigma_start < 0:
        raise InputError(f"noise_sigma_start must be >= 0, got {noise_sigma_start}")
    x = images.to_tensor(images.validate_image(lr_up, "lr"))
    if noise_sigma_start > 0:
        gen = torch.Generator().manual_seed(0 if seed is None else int(seed))
        x = x + noise_sigma_start * torch.randn(x.shape, generator=gen)
    return x


def one_step_sr(
    backbone: ToyBackbone,
    registry: AdapterRegistry,
    lr_up: np.ndarray,
    d,
    prompt: str = "pos",
    noise_sigma_start: float = 0.0,
    seed: int | None = None,
    counter: ForwardCounter | None = None,
) -> np.ndarray:
    """Single-prompt SR: decode(unet(encode(lr + eta), t_prompt)); one UNet pass."""
    if registry is None:
        raise StateError("adapters missing: inject() a registry before one_step_sr")
    with torch.no_grad():
        x = _prepare_input(backbone, lr_up, noise_sigma_start, seed)
        cond = registry.condition(d)
        z = backbone.encode(x, cond)
        z_out = backbone.denoise(z, backbone.prompts.get(prompt), cond, counter)
        y = backbone.decode(z_out)
    return images.clamp_image(images.from_tensor(y))


def cfg_infer(
    backbone: ToyBackbone,
    registry: AdapterRegistry,
    lr_up: np.ndarray,
    d,
    lambda_cfg: float = 1.1,
    noise_sigma_start: float = 0.0,
    seed: int | None = None,
    counter: ForwardCounter | None = None,
    capture: dict | None = None,
) -> np.ndarray:
    """Guided SR fusing positive / negative prompt branches in latent space.

    z_out = z_neg + lambda * (z_pos - z_neg); lambda == 1 short-circuits to the
    positive branch (one UNet evaluation instead of two).
    """
    if registry is None:
        raise StateError("adapters missing: inject() a registry before cfg_infer")
    if lambda_cfg < 0:
        raise InputError(f"lambda_cfg must be >= 0, got {lambda_cfg}")
    with torch.no_grad():
        x = _prepare_input(backbone, lr_up, noise_sigma_start, seed)
        cond = registry.condition(d)
        z = backbone.encode(x, cond)
        if lambda_cfg == 1.0:
            z_out = backbone.denoise(z, backbone.prompts.get("pos"), cond, counter)
            if capture is not None:
                capture.update(z_pos=z_out.clone(), z_neg=None, z_out=z_out.clone())
        else:
            z_pos = backbone.denoise(z, backbone.prompts.get("pos"), cond, counter)
            z_neg = backbone.denoise(z, backbone.prompts.get("neg"), cond, counter)
            z_out = z_neg + lambda_cfg * (z_pos - z_neg)
            if capture is not None:
                capture.update(
                    z_pos=z_pos.clone(), z_neg=z_neg.clone(), z_out=z_out.clone()
                )
        y = backbone.decode(z_out)
    return images.clamp_image(images.from_tensor(y))


# ---------------------------------------------------------------------------
# Pretraining


@dataclass
class PretrainConfig:
    ae_steps: int = 2000
    unet_steps: int = 1000
    batch_size: int = 16
    lr: float = 2e-3
    seed: int = 0
    latent_noise_max: float = 0.5
    val_items: int = 32
    backbone: BackboneConfig = field(default_factory=BackboneConfig)


def _load_hr_batch(dataset, idx: np.ndarray) -> torch.Tensor:
    arr = np.stack([dataset.hr(int(i)) for i in idx])
    return images.batch_to_tensor(arr)


def pretrain_base(dataset, config: PretrainConfig | None = None) -> tuple[ToyBackbone, list[dict]]:
    """Train the autoencoder and the one-step latent denoiser on clean images.

    Returns the backbone with a frozen decoder plus the training log.  The
    last ``val_items`` images are held out and used for the reconstruction
    quality entries in the log.
    """
    cfg = config or PretrainConfig()
    if len(dataset) == 0:
        raise InputError("pretraining dataset is empty")
    if len(dataset) <= cfg.val_items:
        raise InputError(
            f"dataset has {len(dataset)} items; needs more than val_items={cfg.val_items}"
        )
    backbone = ToyBackbone(cfg.backbone, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    n_train = len(dataset) - cfg.val_items
    log: list[dict] = []

    # Phase A: encoder + decoder as an autoencoder.
    ae_params = list(backbone.encoder.parameters()) + list(backbone.decoder.parameters())
    opt = torch.optim.Adam(ae_params, lr=cfg.lr)
    for step in range(cfg.ae_steps):
        idx = rng.integers(0, n_train, size=cfg.batch_size)
        x = _load_hr_batch(dataset, idx)
        recon = backbone.decode(backbone.encode(x))
        loss = F.mse_loss(recon, x)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % 200 == 0 or step == cfg.ae_steps - 1:
            log.append({"phase": "ae", "step": step, "mse": loss.item()})

    # Phase B: UNet as a one-step latent denoiser (frozen autoencoder).
    for p in ae_params:
        p.requires_grad_(False)
    unet_params = list(backbone.unet.parameters()) + list(backbone.prompts.parameters())
    opt = torch.optim.Adam(unet_params, lr=cfg.lr)
    noise_gen = torch.Generator().manual_seed(cfg.seed)
    for step in range(cfg.unet_steps):
        idx = rng.integers(0, n_train, size=cfg.batch_size)
        x = _load_hr_batch(dataset, idx)
        with torch.no_grad():
            z = backbone.encode(x)
        sigmas = torch.from_numpy(
            rng.uniform(0, cfg.latent_noise_max, size=cfg.batch_size).astype(np.float32)
        ).view(-1, 1, 1, 1)
        z_in = z + sigmas * torch.randn(z.shape, generator=noise_gen)
        mask = torch.from_numpy(rng.random(cfg.batch_size) < 0.5)
        pred = backbone.denoise(z_in, backbone.prompts.select(mask))
        loss = F.mse_loss(pred, z)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % 200 == 0 or step == cfg.unet_steps - 1:
            log.append({"phase": "unet", "step": step, "mse": loss.item()})

    for p in backbone.parameters():
        p.requires_grad_(True)
    backbone.freeze_decoder()
    backbone.pretrained = True
    backbone.eval()

    val_psnr = reconstruction_psnr(
        backbone, dataset, range(n_train, len(dataset))
    )
    log.append({"phase": "eval", "recon_psnr_y": val_psnr})
    return backbone, log


def reconstruction_psnr(backbone: ToyBackbone, dataset, indices) -> float:
    """Mean autoencoder PSNR-Y over the given dataset indices."""
    from . import metrics

    vals = []
    with torch.no_grad():
        for i in indices:
            x = dataset.hr(int(i))
            recon = images.from_tensor(backbone.decode(backbone.encode(images.to_tensor(x))))
            vals.append(
                metrics.psnr_y(images.quantize(recon), images.quantize(x))
            )
    return float(np.mean(vals))


def clone_frozen_encoder(backbone: ToyBackbone) -> Encoder:
    """Deep copy of the encoder with parameters frozen (discriminator backbone).

    Any adapters attached to the source encoder are stripped from the clone;
    the discriminator sees the plain pretrained features.
    """
    enc = copy.deepcopy(backbone.encoder)
    for module in enc.modules():
        if isinstance(module, AdaptableConv2d):
            module.adapter = None
    for p in enc.parameters():
        p.requires_grad_(False)
    enc.eval()
    return enc
