"""Trainable convolutional autoencoder used as a frozen latent codec.

Deterministic (no KL term); a single global scale computed from the training
set normalizes latents to roughly unit variance.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .errors import ConfigurationError, ContractError, TrainingError
from . import flatshop


@dataclass
class CodecConfig:
    image_size: int = 64
    downsample_factor: int = 4
    latent_channels: int = 4
    hidden_channels: list = field(default_factory=lambda: [32, 64])

    def __post_init__(self):
        f = self.downsample_factor
        if f < 1 or (f & (f - 1)) != 0:
            raise ConfigurationError(f"downsample_factor must be a power of 2, got {f}")
        if self.image_size % f != 0:
            raise ConfigurationError("image_size must be divisible by downsample_factor")
        if self.latent_channels < 1:
            raise ConfigurationError("latent_channels must be >= 1")
        if len(self.hidden_channels) != int(math.log2(f)):
            raise ConfigurationError("need one hidden channel count per downsampling stage")


@dataclass
class LatentTensor:
    data: torch.Tensor  # (latent_channels, H/f, W/f), scale-normalized
    scale: float


class Codec(nn.Module):
    def __init__(self, config: CodecConfig):
        super().__init__()
        self.config = config
        chans = [3] + list(config.hidden_channels)
        enc = []
        for cin, cout in zip(chans[:-1], chans[1:]):
            enc += [nn.Conv2d(cin, cout, 3, stride=2, padding=1), nn.SiLU()]
        enc += [nn.Conv2d(chans[-1], config.latent_channels, 3, padding=1)]
        self.encoder = nn.Sequential(*enc)
        dec_chans = list(reversed(config.hidden_channels))
        dec = [nn.Conv2d(config.latent_channels, dec_chans[0], 3, padding=1), nn.SiLU()]
        cur = dec_chans[0]
        for cout in dec_chans[1:] + [dec_chans[-1]]:
            dec += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(cur, cout, 3, padding=1),
                nn.SiLU(),
            ]
            cur = cout
        dec += [nn.Conv2d(cur, 3, 3, padding=1)]
        self.decoder = nn.Sequential(*dec)
        # scale is a buffer so it travels with the state dict
        self.register_buffer("latent_scale", torch.tensor(1.0))

    def encode_raw(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.config.image_size or x.shape[-2] != self.config.image_size:
            raise ContractError(
                f"expected {self.config.image_size}px input, got {tuple(x.shape)}")
        return self.encoder(x)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        """Image batch (B,3,H,W) in [0,1] -> scale-normalized latents."""
        return self.encode_raw(x) / self.latent_scale

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        f = self.config.downsample_factor
        want = (self.config.latent_channels, self.config.image_size // f,
                self.config.image_size // f)
        if tuple(z.shape[-3:]) != want:
            raise ContractError(f"expected latent shape {want}, got {tuple(z.shape)}")
        return self.decoder(z * self.latent_scale)


def image_to_tensor(image: np.ndarray) -> torch.Tensor:
    """uint8 HxWx3 -> float32 (3,H,W) in [0,1]."""
    return torch.from_numpy(image.astype(np.float32) / 255.0).permute(2, 0, 1)


def tensor_to_image(x: torch.Tensor) -> np.ndarray:
    arr = x.detach().clamp(0, 1).permute(1, 2, 0).numpy()
    return np.rint(arr * 255.0).astype(np.uint8)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    mse = np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2)
    if mse == 0:
        return float("inf")
    return 10.0 * math.log10(255.0 ** 2 / mse)


def load_garment_batch(manifest: flatshop.DatasetManifest) -> torch.Tensor:
    imgs = []
    for e in manifest.entries:
        img = flatshop.load_png(os.path.join(manifest.root_path, e.garment_file))
        imgs.append(image_to_tensor(img))
    return torch.stack(imgs)


def train_codec(manifest: flatshop.DatasetManifest, config: CodecConfig,
                epochs: int, seed: int, lr: float = 2e-3,
                batch_size: int = 32) -> Codec:
    """Minimize pixel MSE on the manifest's garment images; freeze the result
    and store the latent normalization scale."""
    if not manifest.entries:
        raise ContractError("manifest is empty")
    torch.manual_seed(seed)
    codec = Codec(config)
    data = load_garment_batch(manifest)
    n = data.shape[0]
    opt = torch.optim.Adam(codec.parameters(), lr=lr)
    order_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xC0DE]))
    for _ in range(epochs):
        perm = torch.from_numpy(order_rng.permutation(n))
        for i in range(0, n, batch_size):
            batch = data[perm[i:i + batch_size]]
            recon = codec.decoder(codec.encoder(batch))
            loss = torch.mean((recon - batch) ** 2)
            if not torch.isfinite(loss):
                raise TrainingError(f"codec loss became non-finite ({loss.item()})")
            opt.zero_grad()
            loss.backward()
            opt.step()
    with torch.no_grad():
        lat = []
        for i in range(0, n, batch_size):
            lat.append(codec.encoder(data[i:i + batch_size]))
        scale = torch.cat(lat).std().clamp_min(1e-8)
        codec.latent_scale.fill_(scale.item())
    codec.eval()
    for p in codec.parameters():
        p.requires_grad_(False)
    return codec
