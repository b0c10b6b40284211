"""Lightweight degradation estimation network.

A small convolutional regressor mapping an upscaled LR image to the
two-component degradation vector, squashed into [0,1]^2 with a sigmoid
head.  Trained separately against the exact synthetic labels, then frozen
before SR training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import data_synth, images
from .data_synth import DegradationVector
from .errors import InputError


class DegradationEstimator(nn.Module):
    """Five stride-2 conv blocks, global average pool, 2-unit sigmoid head."""

    def __init__(self, width: int = 32, seed: int = 0):
        super().__init__()
        self.width = width
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            w = width
            self.convs = nn.ModuleList(
                [
                    nn.Conv2d(3, w // 2, 3, 2, 1),
                    nn.Conv2d(w // 2, w, 3, 2, 1),
                    nn.Conv2d(w, 2 * w, 3, 2, 1),
                    nn.Conv2d(2 * w, 2 * w, 3, 2, 1),
                    nn.Conv2d(2 * w, 2 * w, 3, 2, 1),
                ]
            )
            self.head = nn.Linear(2 * w, 2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise InputError(f"expected (B, 3, H, W) input, got shape {tuple(x.shape)}")
        h = x
        for conv in self.convs:
            h = F.leaky_relu(conv(h), 0.2)
        h = h.mean(dim=(2, 3))
        return torch.sigmoid(self.head(h))


def estimate(model: DegradationEstimator, lr_up: np.ndarray) -> DegradationVector:
    """Predict the degradation vector of one upscaled LR image."""
    img = images.validate_image(lr_up, "lr_up")
    model.eval()
    with torch.no_grad():
        out = model(images.to_tensor(img))[0]
    return DegradationVector(d_n=float(out[0]), d_b=float(out[1]))


def estimate_batch(model: DegradationEstimator, x: torch.Tensor) -> torch.Tensor:
    """(B, 3, H, W) -> (B, 2) predictions in eval mode, no gradients."""
    model.eval()
    with torch.no_grad():
        return model(x)


@dataclass
class EstimatorConfig:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 2e-3
    lr_final: float = 1e-4  # cosine-decayed to this by the last step
    seed: int = 0
    val_fraction: float = 0.1
    width: int = 32
    checkpoint_interval: int = 0  # steps; 0 disables periodic checkpoints
    checkpoint_dir: str | None = None


def train_estimator(
    dataset, config: EstimatorConfig | None = None
) -> tuple[DegradationEstimator, list[dict]]:
    """Fit the estimator to synthetic labels by mean absolute error.

    Returns the trained model and a training log with per-epoch train MAE
    and held-out validation MAE.
    """
    cfg = config or EstimatorConfig()
    n = len(dataset)
    if n == 0:
        raise InputError("estimator training dataset is empty")
    cached = dataset if isinstance(dataset, data_synth.CachedDataset) else data_synth.CachedDataset(dataset)

    n_val = int(n * cfg.val_fraction)
    n_train = n - n_val
    if n_train == 0:
        raise InputError("no training items left after validation split")

    model = DegradationEstimator(width=cfg.width, seed=cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    total_steps = max(1, cfg.epochs * ((n_train + cfg.batch_size - 1) // cfg.batch_size))
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(
        opt, T_max=total_steps, eta_min=min(cfg.lr_final, cfg.lr)
    )
    rng = np.random.default_rng(cfg.seed)
    log: list[dict] = []

    def batch_tensors(idx: np.ndarray) -> tuple[torch.Tensor, torch.Tensor]:
        ups = np.stack(
            [data_synth.upscale_lr(cached.lr(int(i)), cached.scale) for i in idx]
        )
        labels = np.stack([cached.label(int(i)).as_array() for i in idx])
        return images.batch_to_tensor(ups), torch.from_numpy(labels)

    step = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n_train)
        model.train()
        epoch_mae = []
        for start in range(0, n_train, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            x, y = batch_tensors(idx)
            pred = model(x)
            loss = F.l1_loss(pred, y)
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
            epoch_mae.append(loss.item())
            step += 1
            if (
                cfg.checkpoint_interval
                and cfg.checkpoint_dir
                and step % cfg.checkpoint_interval == 0
            ):
                from . import bundle

                bundle.save_estimator(
                    model, f"{cfg.checkpoint_dir}/estimator_step{step}.pt"
                )
        entry = {"epoch": epoch, "train_mae": float(np.mean(epoch_mae))}
        if n_val:
            entry["val_mae"] = evaluate_mae(model, cached, range(n_train, n))
        log.append(entry)

    model.eval()
    return model, log


def evaluate_mae(model: DegradationEstimator, dataset, indices) -> float:
    """Mean absolute error per component, averaged over the two components."""
    cached = dataset if isinstance(dataset, data_synth.CachedDataset) else data_synth.CachedDataset(dataset)
    errs = []
    for i in indices:
        up = data_synth.upscale_lr(cached.lr(int(i)), cached.scale)
        pred = estimate(model, up)
        label = cached.label(int(i))
        errs.append([abs(pred.d_n - label.d_n), abs(pred.d_b - label.d_b)])
    return float(np.mean(errs))


def evaluate_mae_components(model: DegradationEstimator, dataset, indices) -> tuple[float, float]:
    """(MAE d_n, MAE d_b) over the given indices."""
    cached = dataset if isinstance(dataset, data_synth.CachedDataset) else data_synth.CachedDataset(dataset)
    errs = []
    for i in indices:
        up = data_synth.upscale_lr(cached.lr(int(i)), cached.scale)
        pred = estimate(model, up)
        label = cached.label(int(i))
        errs.append([abs(pred.d_n - label.d_n), abs(pred.d_b - label.d_b)])
    arr = np.asarray(errs)
    return float(arr[:, 0].mean()), float(arr[:, 1].mean())
