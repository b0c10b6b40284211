"""Checkpoint containers and the inference model bundle.

All checkpoints share one container family: a torch-serialized dict with a
format tag, a version, a kind tag, architecture hyperparameters, parameter
tensors and free-form metadata.  A model bundle is a directory holding the
backbone prior, the adapter checkpoint and the degradation estimator.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import torch

from .backbone import BackboneConfig, ToyBackbone
from .degest import DegradationEstimator
from .dglora import (
    AdapterRegistry,
    ConvSpec,
    DGLoRAAdapter,
    FourierEmbedder,
    ModulationNet,
)
from .errors import StateError

CKPT_FORMAT = "dgsr-checkpoint"
CKPT_VERSION = 1

BUNDLE_MANIFEST = "bundle.json"
BACKBONE_FILE = "backbone.pt"
ADAPTERS_FILE = "adapters.pt"
ESTIMATOR_FILE = "estimator.pt"


def _save(path, kind: str, payload: dict) -> None:
    record = {"format": CKPT_FORMAT, "version": CKPT_VERSION, "kind": kind}
    record.update(payload)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(record, path)


def _load(path, expect_kind: str) -> dict:
    path = Path(path)
    if not path.is_file():
        raise StateError(f"checkpoint not found: {path}")
    try:
        record = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise StateError(f"corrupt checkpoint {path}: {exc}") from exc
    if not isinstance(record, dict) or record.get("format") != CKPT_FORMAT:
        raise StateError(f"{path} is not a recognized checkpoint container")
    if record.get("kind") != expect_kind:
        raise StateError(
            f"{path} holds kind {record.get('kind')!r}, expected {expect_kind!r}"
        )
    return record


# ---------------------------------------------------------------------------
# Backbone


def save_backbone(backbone: ToyBackbone, path, meta: dict | None = None) -> None:
    _save(
        path,
        "backbone",
        {
            "arch": backbone.config.to_dict(),
            "pretrained": backbone.pretrained,
            "state_dict": backbone.state_dict(),
            "meta": meta or {},
        },
    )


def load_backbone(path) -> ToyBackbone:
    record = _load(path, "backbone")
    backbone = ToyBackbone(BackboneConfig.from_dict(record["arch"]))
    backbone.load_state_dict(record["state_dict"])
    backbone.pretrained = record.get("pretrained", False)
    if backbone.pretrained:
        backbone.freeze_decoder()
    backbone.eval()
    return backbone


# ---------------------------------------------------------------------------
# Estimator


def save_estimator(model: DegradationEstimator, path, meta: dict | None = None) -> None:
    _save(
        path,
        "degradation_estimator",
        {
            "arch": {"width": model.width},
            "state_dict": model.state_dict(),
            "meta": meta or {},
        },
    )


def load_estimator(path) -> DegradationEstimator:
    record = _load(path, "degradation_estimator")
    model = DegradationEstimator(width=record["arch"]["width"])
    model.load_state_dict(record["state_dict"])
    model.eval()
    return model


# ---------------------------------------------------------------------------
# Adapters (+ conditioning networks + prompt embeddings)


def adapters_record(registry: AdapterRegistry, prompts) -> dict:
    """Serializable record of adapters, conditioning nets and prompt embeddings."""
    adapters = [
        {
            "target": a.target,
            "block_index": a.block_index,
            "rank": a.rank,
            "d_out": a.d_out,
            "d_in": a.d_in,
            "conv": a.conv.__dict__.copy() if a.conv else None,
            "A": a.A.detach().clone(),
            "B": a.B.detach().clone(),
        }
        for a in registry.adapters
    ]
    return {
        "mode": registry.mode,
        "rank_map": registry.rank_map,
        "surfaces": list(registry.surfaces),
        "embed_m": registry.embedder.m,
        "modnet_arch": {
            "embed_width": registry.embedder.out_width,
            "num_blocks": registry.modnet.num_blocks,
            "max_rank": registry.modnet.max_rank,
            "block_embed_dim": registry.modnet.block_embed_dim,
        },
        "adapters": adapters,
        "embedder_state": registry.embedder.state_dict(),
        "modnet_state": registry.modnet.state_dict(),
        "prompts_state": prompts.state_dict(),
    }


def save_adapters(
    registry: AdapterRegistry, prompts, path, meta: dict | None = None
) -> None:
    payload = adapters_record(registry, prompts)
    payload["meta"] = meta or {}
    _save(path, "adapters", payload)


def registry_from_record(backbone: ToyBackbone, record: dict) -> AdapterRegistry:
    """Rebuild a registry from a record and attach it to the backbone."""
    layer_by_name = {name: layer for _, _, name, layer in backbone.adaptable_convs()}
    for layer in layer_by_name.values():
        layer.adapter = None

    adapters = []
    for entry in record["adapters"]:
        if entry["target"] not in layer_by_name:
            raise StateError(
                f"adapter target {entry['target']!r} not present in backbone"
            )
        adapter = DGLoRAAdapter(
            target=entry["target"],
            block_index=entry["block_index"],
            rank=entry["rank"],
            d_out=entry["d_out"],
            d_in=entry["d_in"],
            conv=ConvSpec(**entry["conv"]) if entry["conv"] else None,
        )
        with torch.no_grad():
            adapter.A.copy_(entry["A"])
            adapter.B.copy_(entry["B"])
        layer_by_name[entry["target"]].adapter = adapter
        adapters.append(adapter)

    embedder = FourierEmbedder(m=record["embed_m"])
    embedder.load_state_dict(record["embedder_state"])
    arch = record["modnet_arch"]
    modnet = ModulationNet(
        embed_width=arch["embed_width"],
        num_blocks=arch["num_blocks"],
        max_rank=arch["max_rank"],
        block_embed_dim=arch["block_embed_dim"],
    )
    modnet.load_state_dict(record["modnet_state"])
    backbone.prompts.load_state_dict(record["prompts_state"])

    return AdapterRegistry(
        adapters,
        embedder,
        modnet,
        mode=record["mode"],
        rank_map=record["rank_map"],
        surfaces=tuple(record["surfaces"]),
    )


def load_adapters(backbone: ToyBackbone, path) -> AdapterRegistry:
    return registry_from_record(backbone, _load(path, "adapters"))


# ---------------------------------------------------------------------------
# Bundle directory


@dataclass
class ModelBundle:
    backbone: ToyBackbone
    registry: AdapterRegistry
    estimator: DegradationEstimator
    meta: dict
    scale: int = 4


def save_bundle(
    out_dir,
    backbone: ToyBackbone,
    registry: AdapterRegistry,
    estimator: DegradationEstimator,
    meta: dict | None = None,
) -> Path:
    import json

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_backbone(backbone, out / BACKBONE_FILE)
    save_adapters(registry, backbone.prompts, out / ADAPTERS_FILE)
    save_estimator(estimator, out / ESTIMATOR_FILE)
    manifest = {"format": "dgsr-bundle", "version": CKPT_VERSION, "scale": 4}
    manifest.update(meta or {})
    with open(out / BUNDLE_MANIFEST, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return out


def load_bundle(bundle_dir) -> ModelBundle:
    import json

    root = Path(bundle_dir)
    if not root.is_dir():
        raise StateError(f"bundle directory not found: {root}")
    missing = [
        name
        for name in (BUNDLE_MANIFEST, BACKBONE_FILE, ADAPTERS_FILE, ESTIMATOR_FILE)
        if not (root / name).is_file()
    ]
    if missing:
        raise StateError(f"bundle at {root} is missing components: {missing}")
    with open(root / BUNDLE_MANIFEST, encoding="utf-8") as f:
        meta = json.load(f)
    backbone = load_backbone(root / BACKBONE_FILE)
    registry = load_adapters(backbone, root / ADAPTERS_FILE)
    estimator = load_estimator(root / ESTIMATOR_FILE)
    backbone.eval()
    registry.eval()
    return ModelBundle(
        backbone=backbone,
        registry=registry,
        estimator=estimator,
        meta=meta,
        scale=meta.get("scale", 4),
    )
