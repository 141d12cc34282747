"""Full conditional noise predictor: token encoder + adapter + embedding
tables + U-Net, bundled so training and checkpointing see one parameter set."""

from __future__ import annotations

import torch
from torch import nn

from .conditioning import (Adapter, ClassEmbeddingTable, CondConfig, NullCondition,
                           TimestepEmbeddingTable, TokenEncoder, condition_timestep)
from .denoiser import DenoiserConfig, UNet
from .errors import ConfigurationError


class MgtModel(nn.Module):
    def __init__(self, cond_config: CondConfig, denoiser_config: DenoiserConfig):
        super().__init__()
        if denoiser_config.cond_dim != cond_config.token_dim:
            raise ConfigurationError("denoiser cond_dim must equal conditioning token_dim")
        if denoiser_config.timestep_dim != cond_config.embed_dim:
            raise ConfigurationError("denoiser timestep_dim must equal embedding dim")
        self.cond_config = cond_config
        self.denoiser_config = denoiser_config
        self.token_encoder = TokenEncoder(cond_config.image_size, cond_config.patch_size,
                                          cond_config.encoder_dim)
        self.adapter = Adapter(cond_config.raw_tokens, cond_config.n_tokens,
                               cond_config.encoder_dim, cond_config.token_dim)
        self.null_cond = NullCondition(cond_config.n_tokens, cond_config.token_dim,
                                       cond_config.null_mode)
        self.class_table = ClassEmbeddingTable(cond_config.embed_dim)
        self.time_table = TimestepEmbeddingTable(cond_config.n_timesteps,
                                                 cond_config.embed_dim)
        self.unet = UNet(denoiser_config)

    def encode_condition(self, images: torch.Tensor) -> torch.Tensor:
        """Reference image batch (B,3,H,W) -> adapted tokens (B, n, m)."""
        return self.adapter(self.token_encoder(images))

    def predict_noise(self, x_t: torch.Tensor, t, cond: torch.Tensor, c) -> torch.Tensor:
        """Noise prediction for latents x_t at timestep(s) t, image tokens
        cond, and garment class index c (1-indexed)."""
        t = torch.as_tensor(t, device=x_t.device)
        c = torch.as_tensor(c, device=x_t.device)
        if t.dim() == 0:
            t = t.expand(x_t.shape[0])
        if c.dim() == 0:
            c = c.expand(x_t.shape[0])
        e = condition_timestep(self.time_table(t), self.class_table(c))
        return self.unet(x_t, cond, e)

    def forward(self, x_t, t, cond, c):
        return self.predict_noise(x_t, t, cond, c)
