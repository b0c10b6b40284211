import numpy as np
import pytest
import torch

from dgsr import bundle, data_synth, degest, training
from dgsr.backbone import PretrainConfig, pretrain_base

torch.set_num_threads(2)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data") / "small"
    return data_synth.make_dataset(root, n=96, seed=0)


@pytest.fixture(scope="session")
def cached_small_dataset(small_dataset):
    return data_synth.CachedDataset(small_dataset)


@pytest.fixture(scope="session")
def tiny_prior(cached_small_dataset, tmp_path_factory):
    """Briefly pretrained backbone; valid plumbing, not a quality model."""
    backbone, _ = pretrain_base(
        cached_small_dataset,
        PretrainConfig(ae_steps=120, unet_steps=60, val_items=16, seed=0),
    )
    path = tmp_path_factory.mktemp("ckpt") / "prior.pt"
    bundle.save_backbone(backbone, path)
    return path


@pytest.fixture(scope="session")
def tiny_estimator(small_dataset, tmp_path_factory):
    model, _ = degest.train_estimator(
        small_dataset, degest.EstimatorConfig(epochs=1, seed=0)
    )
    path = tmp_path_factory.mktemp("ckpt") / "estimator.pt"
    bundle.save_estimator(model, path)
    return path


@pytest.fixture()
def quick_train_config(tiny_estimator):
    cfg = training.TrainConfig.profile("desk")
    cfg.max_steps = 4
    cfg.checkpoint_interval = 2
    cfg.eval_interval = 2
    cfg.val_items = 16
    cfg.estimator_checkpoint = str(tiny_estimator)
    return cfg


@pytest.fixture(scope="session")
def tiny_bundle(tiny_prior, tiny_estimator, tmp_path_factory):
    """Untrained but complete model bundle for inference/service plumbing."""
    from dgsr import dglora

    backbone = bundle.load_backbone(tiny_prior)
    registry = dglora.inject(backbone, surfaces=("encoder", "unet"), seed=0)
    estimator = bundle.load_estimator(tiny_estimator)
    out = tmp_path_factory.mktemp("bundle") / "toy"
    bundle.save_bundle(out, backbone, registry, estimator, meta={"name": "toy"})
    return out


def random_image(shape=(32, 32, 3), seed=0, dtype=np.float32):
    rng = np.random.default_rng(seed)
    return rng.uniform(-1.0, 1.0, size=shape).astype(dtype)
