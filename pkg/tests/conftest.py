import dataclasses
import os

import pytest
import torch

from garb import config as config_mod
from garb import flatshop


@pytest.fixture(autouse=True)
def _torch_determinism():
    torch.manual_seed(0)


def tiny_run_config(data_root: str, out_dir: str) -> config_mod.RunConfig:
    """32px everything: fast enough for CLI round-trip tests."""
    cfg = config_mod.default_config()
    return dataclasses.replace(
        cfg,
        data=dataclasses.replace(cfg.data, root=data_root, n_train=6, n_test=6,
                                 image_size=32),
        codec=dataclasses.replace(cfg.codec, image_size=32,
                                  hidden_channels=[16, 24]),
        codec_train=dataclasses.replace(cfg.codec_train, epochs=1),
        cond=dataclasses.replace(cfg.cond, image_size=32, patch_size=8,
                                 encoder_dim=32, n_tokens=4, token_dim=32,
                                 embed_dim=48, n_timesteps=100),
        denoiser=dataclasses.replace(cfg.denoiser, base_channels=16, n_heads=2,
                                     d_k=8, d_v=8, cond_dim=32, timestep_dim=48),
        schedule=dataclasses.replace(cfg.schedule, T=100),
        train=dataclasses.replace(cfg.train, total_steps=4, warmup_steps=2,
                                  batch_size=4),
        sampler=dataclasses.replace(cfg.sampler, n_steps=3),
        out_dir=out_dir,
        checkpoint_every=2,
    )


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    root = str(tmp_path_factory.mktemp("tiny_data"))
    train_m, test_m = flatshop.generate_dataset(6, 6, 32, 0, root)
    return root, train_m, test_m


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory, tiny_dataset):
    """A trained-for-a-few-steps checkpoint for CLI/pipeline tests."""
    from garb import pipelines

    root, _, _ = tiny_dataset
    out_dir = str(tmp_path_factory.mktemp("tiny_run"))
    cfg = tiny_run_config(root, out_dir)
    pipelines.run_train(cfg, log=lambda *a, **k: None)
    return os.path.join(out_dir, "checkpoint"), cfg
