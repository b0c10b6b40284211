"""SR fine-tuning loop with online negative prompting.

Each batch mixes positive items (target = HR, positive prompt) with
negative items drawn at probability p_n (target = the item's own upscaled
LR, negative prompt).  The degradation vector per item comes from the
frozen estimator, the generator update covers adapters, conditioning nets
and prompt embeddings, and a separate step trains the discriminator heads
on positive pairs only.  Base weights, decoder, estimator and the
discriminator feature backbone stay frozen throughout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import torch

from . import bundle as bundle_io
from . import data_synth, images, losses, metrics
from .backbone import ToyBackbone, clone_frozen_encoder
from .degest import DegradationEstimator
from .dglora import AdapterRegistry, inject
from .errors import InputError, StateError
from .losses import Discriminator, LossWeights, PerceptualFeatures


@dataclass
class TrainConfig:
    p_n: float = 0.05
    batch_size: int = 64
    lr: float = 2e-5
    disc_lr: float | None = None  # None: same rate as the generator
    max_steps: int = 30000
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    rank_map: dict = field(default_factory=lambda: {"encoder": 16, "unet": 32})
    surfaces: tuple = ("encoder", "unet")
    modulation: str = "unshared"  # unshared | shared | vanilla
    use_gt_labels: bool = False
    checkpoint_interval: int = 1000
    eval_interval: int = 500
    val_items: int = 64
    estimator_checkpoint: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.p_n <= 1.0:
            raise InputError(f"p_n must be in [0, 1], got {self.p_n}")

    def to_dict(self) -> dict:
        d = self.__dict__.copy()
        d["weights"] = self.weights.to_dict()
        d["surfaces"] = list(self.surfaces)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "weights" in d:
            d["weights"] = LossWeights.from_dict(d["weights"])
        if "surfaces" in d:
            d["surfaces"] = tuple(d["surfaces"])
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    @classmethod
    def profile(cls, name: str) -> "TrainConfig":
        """Load a shipped config profile ('desk' or 'full')."""
        ref = resources.files("dgsr") / "configs" / f"{name}.json"
        if not ref.is_file():
            raise InputError(f"unknown config profile {name!r}")
        return cls.from_dict(json.loads(ref.read_text()))


class TrainCorpus:
    """Training view of a dataset: cached HR / upscaled-LR / labels per item."""

    def __init__(self, dataset):
        self.cached = (
            dataset
            if isinstance(dataset, data_synth.CachedDataset)
            else data_synth.CachedDataset(dataset)
        )
        self._lr_up: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.cached)

    def item(self, i: int) -> "TrainItem":
        if i not in self._lr_up:
            self._lr_up[i] = data_synth.upscale_lr(self.cached.lr(i), self.cached.scale)
        return TrainItem(
            index=i,
            hr=self.cached.hr(i),
            lr_up=self._lr_up[i],
            label=self.cached.label(i).as_array(),
        )


@dataclass
class TrainItem:
    index: int
    hr: np.ndarray
    lr_up: np.ndarray
    label: np.ndarray


@dataclass
class Batch:
    inputs: np.ndarray  # (B, H, W, 3) upscaled LR, always the model input
    targets: np.ndarray  # (B, H, W, 3) HR for positives, upscaled LR for negatives
    positive_mask: np.ndarray  # (B,) bool; also selects the prompt embedding
    labels: np.ndarray  # (B, 2) exact degradation labels
    indices: list[int]


def assemble_batch(items: list[TrainItem], p_n: float, rng: np.random.Generator) -> Batch:
    """Online negative prompting: each item flips to a negative target w.p. p_n."""
    inputs, targets, mask, labels, indices = [], [], [], [], []
    for it in items:
        negative = rng.random() < p_n
        inputs.append(it.lr_up)
        targets.append(it.lr_up if negative else it.hr)
        mask.append(not negative)
        labels.append(it.label)
        indices.append(it.index)
    return Batch(
        inputs=np.stack(inputs),
        targets=np.stack(targets),
        positive_mask=np.asarray(mask, dtype=bool),
        labels=np.stack(labels),
        indices=indices,
    )


@dataclass
class TrainState:
    config: TrainConfig
    backbone: ToyBackbone
    registry: AdapterRegistry
    estimator: DegradationEstimator
    disc: Discriminator
    features: PerceptualFeatures
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    rng: np.random.Generator
    step: int = 0
    d_cache: dict[int, np.ndarray] = field(default_factory=dict)


def _estimate_label(state: TrainState, idx: int, lr_up: np.ndarray) -> np.ndarray:
    """Frozen-estimator prediction for one item, memoized by item index.

    Estimation always runs on a single-image batch so cached values never
    depend on which items happened to share a batch (keeps resumed runs
    bit-identical to uninterrupted ones).
    """
    if idx not in state.d_cache:
        with torch.no_grad():
            state.d_cache[idx] = state.estimator(images.to_tensor(lr_up))[0].numpy()
    return state.d_cache[idx]


def _estimate_labels(state: TrainState, batch: Batch) -> torch.Tensor:
    return torch.from_numpy(
        np.stack(
            [
                _estimate_label(state, idx, batch.inputs[pos])
                for pos, idx in enumerate(batch.indices)
            ]
        )
    )


def train_step(state: TrainState, batch: Batch) -> dict:
    """One generator update followed by one discriminator-head update."""
    cfg = state.config
    inputs = images.batch_to_tensor(batch.inputs)
    targets = images.batch_to_tensor(batch.targets)
    mask = torch.from_numpy(batch.positive_mask)

    if cfg.use_gt_labels:
        d = torch.from_numpy(batch.labels)
    else:
        d = _estimate_labels(state, batch)

    cond = state.registry.condition(d)
    prompt_vec = state.backbone.prompts.select(mask)
    z = state.backbone.encode(inputs, cond)
    z_out = state.backbone.denoise(z, prompt_vec, cond)
    pred = state.backbone.decode(z_out)

    total, comps = losses.total_generator_loss(
        pred, targets, state.disc, mask, cfg.weights, state.features
    )
    if not torch.isfinite(total):
        raise StateError(
            f"non-finite generator loss at step {state.step}; "
            f"components={comps}, batch indices={batch.indices}"
        )
    state.opt_g.zero_grad()
    total.backward()
    state.opt_g.step()

    d_loss = losses.discriminator_loss(state.disc, targets, pred.detach(), mask)
    if not torch.isfinite(d_loss):
        raise StateError(
            f"non-finite discriminator loss at step {state.step}; "
            f"batch indices={batch.indices}"
        )
    if d_loss.requires_grad:
        state.opt_d.zero_grad()
        d_loss.backward()
        state.opt_d.step()

    state.step += 1
    n_pos = int(batch.positive_mask.sum())
    return {
        "step": state.step,
        "l2": comps["l2"],
        "lpips": comps["lpips"],
        "g_gan": comps["g_gan"],
        "d_gan": d_loss.item(),
        "n_pos": n_pos,
        "n_neg": len(batch.indices) - n_pos,
    }


def build_state(
    config: TrainConfig,
    backbone: ToyBackbone,
    estimator: DegradationEstimator,
) -> TrainState:
    """Wire up adapters, discriminator and optimizers around a frozen prior."""
    if not backbone.pretrained:
        raise StateError("backbone prior is not pretrained")
    backbone.freeze_base()
    backbone.train(False)
    estimator.eval()
    for p in estimator.parameters():
        p.requires_grad_(False)

    registry = inject(
        backbone,
        surfaces=config.surfaces,
        rank_map=config.rank_map,
        mode=config.modulation,
        seed=config.seed,
    )
    disc = Discriminator(
        clone_frozen_encoder(backbone),
        tap_channels=[
            backbone.config.enc_width,
            backbone.config.enc_width2,
            backbone.config.latent_channels,
        ],
        seed=config.seed,
    )
    # Fixed extractor (seed-independent) so perceptual values compare across runs.
    features = losses.default_features()
    gen_params = list(registry.trainable_parameters()) + list(
        backbone.prompts.parameters()
    )
    for p in gen_params:
        p.requires_grad_(True)
    opt_g = torch.optim.Adam(gen_params, lr=config.lr, betas=(0.9, 0.999))
    opt_d = torch.optim.Adam(
        [p for h in disc.heads for p in h.parameters()],
        lr=config.disc_lr if config.disc_lr is not None else config.lr,
        betas=(0.9, 0.999),
    )
    return TrainState(
        config=config,
        backbone=backbone,
        registry=registry,
        estimator=estimator,
        disc=disc,
        features=features,
        opt_g=opt_g,
        opt_d=opt_d,
        rng=np.random.default_rng(config.seed),
    )


def save_train_state(state: TrainState, path) -> None:
    bundle_io._save(
        path,
        "train_state",
        {
            "step": state.step,
            "config": state.config.to_dict(),
            "adapters_record": bundle_io.adapters_record(
                state.registry, state.backbone.prompts
            ),
            "disc_heads": state.disc.heads.state_dict(),
            "opt_g": state.opt_g.state_dict(),
            "opt_d": state.opt_d.state_dict(),
            "rng_state": state.rng.bit_generator.state,
        },
    )


def restore_train_state(state: TrainState, path) -> TrainState:
    """Load step counter, parameters, optimizer and RNG state into a fresh state."""
    record = bundle_io._load(path, "train_state")
    registry = bundle_io.registry_from_record(state.backbone, record["adapters_record"])
    state.registry = registry
    gen_params = list(registry.trainable_parameters()) + list(
        state.backbone.prompts.parameters()
    )
    for p in gen_params:
        p.requires_grad_(True)
    state.opt_g = torch.optim.Adam(
        gen_params, lr=state.config.lr, betas=(0.9, 0.999)
    )
    state.disc.heads.load_state_dict(record["disc_heads"])
    state.opt_g.load_state_dict(record["opt_g"])
    state.opt_d.load_state_dict(record["opt_d"])
    state.rng = np.random.default_rng()
    state.rng.bit_generator.state = record["rng_state"]
    state.step = record["step"]
    state.d_cache.clear()
    return state


@dataclass
class FitResult:
    checkpoint_path: Path
    log_path: Path
    history: list[dict]


def evaluate(
    state: TrainState, corpus: TrainCorpus, indices, features: PerceptualFeatures
) -> dict:
    """Validation PSNR-Y / perceptual distance plus the bicubic baseline."""
    psnrs, base_psnrs, perceps = [], [], []
    with torch.no_grad():
        for i in indices:
            it = corpus.item(int(i))
            x = images.to_tensor(it.lr_up)
            if state.config.use_gt_labels:
                d = torch.from_numpy(it.label).unsqueeze(0)
            else:
                d = torch.from_numpy(
                    _estimate_label(state, it.index, it.lr_up)
                ).unsqueeze(0)
            cond = state.registry.condition(d)
            z = state.backbone.encode(x, cond)
            z_out = state.backbone.denoise(z, state.backbone.prompts.get("pos"), cond)
            pred_t = state.backbone.decode(z_out)
            pred = images.clamp_image(images.from_tensor(pred_t))
            hr8 = images.quantize(it.hr)
            psnrs.append(metrics.psnr_y(images.quantize(pred), hr8))
            base_psnrs.append(metrics.psnr_y(images.quantize(it.lr_up), hr8))
            perceps.append(
                float(
                    losses.perceptual_distance(
                        images.to_tensor(pred), images.to_tensor(it.hr), features
                    )
                )
            )
    return {
        "val_psnr_y": float(np.mean(psnrs)),
        "baseline_psnr_y": float(np.mean(base_psnrs)),
        "val_percep": float(np.mean(perceps)),
    }


def fit(
    config: TrainConfig,
    dataset,
    prior_checkpoint,
    out_dir,
    resume_from=None,
) -> FitResult:
    """Run the fine-tuning loop to max_steps with periodic checkpoint/eval."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    backbone = bundle_io.load_backbone(prior_checkpoint)
    if config.estimator_checkpoint is None:
        raise InputError("config.estimator_checkpoint is required")
    estimator = bundle_io.load_estimator(config.estimator_checkpoint)

    state = build_state(config, backbone, estimator)
    corpus = TrainCorpus(dataset)
    if len(corpus) <= config.val_items:
        raise InputError(
            f"dataset has {len(corpus)} items; needs more than val_items={config.val_items}"
        )
    n_train = len(corpus) - config.val_items
    val_indices = range(n_train, len(corpus))

    log_path = out / "train_log.jsonl"
    mode = "w"
    if resume_from is not None:
        state = restore_train_state(state, resume_from)
        mode = "a"
    history: list[dict] = []

    with open(log_path, mode, encoding="utf-8") as log_f:
        while state.step < config.max_steps:
            idx = state.rng.integers(0, n_train, size=config.batch_size)
            items = [corpus.item(int(i)) for i in idx]
            batch = assemble_batch(items, config.p_n, state.rng)
            rec = train_step(state, batch)
            log_f.write(json.dumps(rec, sort_keys=True) + "\n")

            if config.eval_interval and (
                state.step % config.eval_interval == 0 or state.step == config.max_steps
            ):
                ev = evaluate(state, corpus, val_indices, state.features)
                ev["step"] = state.step
                ev["type"] = "eval"
                history.append(ev)
                log_f.write(json.dumps(ev, sort_keys=True) + "\n")

            if config.checkpoint_interval and state.step % config.checkpoint_interval == 0:
                save_train_state(state, out / f"state_step{state.step:06d}.pt")

    ckpt_path = out / "adapters.pt"
    bundle_io.save_adapters(
        state.registry,
        state.backbone.prompts,
        ckpt_path,
        meta={"steps": state.step, "config": config.to_dict()},
    )
    save_train_state(state, out / "state_final.pt")
    return FitResult(checkpoint_path=ckpt_path, log_path=log_path, history=history)
