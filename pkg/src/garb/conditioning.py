"""Image-token conditioning and garment-class timestep conditioning.

Tokens: patch encoder -> adapter (token-axis linear + feature linear + LN).
Classes and timesteps: learnable lookup tables of equal width, combined by
element-wise addition before injection into the denoiser's residual blocks.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigurationError, ContractError


@dataclass
class CondConfig:
    image_size: int = 64
    patch_size: int = 8
    encoder_dim: int = 128   # d_in of the raw token sequence
    n_tokens: int = 16       # n_out after the adapter
    token_dim: int = 128     # m
    embed_dim: int = 256     # d, shared by class and timestep tables
    n_timesteps: int = 1000  # T
    null_mode: str = "learned"  # or "zero"
    cond_dropout: float = 0.1

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise ConfigurationError("image_size must be divisible by patch_size")
        if self.null_mode not in ("learned", "zero"):
            raise ConfigurationError(f"unknown null_mode {self.null_mode!r}")
        if not 0.0 <= self.cond_dropout < 1.0:
            raise ConfigurationError("cond_dropout must be in [0,1)")

    @property
    def raw_tokens(self) -> int:
        return (self.image_size // self.patch_size) ** 2


# Paper-scale values, recorded for documentation and shape tests.
PAPER_SCALE = {
    "image_size": 512,
    "patch_size": 16,
    "raw_tokens": 1024,
    "encoder_dim": 768,
    "n_tokens": 77,
    "token_dim": 768,
    "embed_dim": 1280,
    "n_timesteps": 1000,
    "lr": 5e-5,
    "warmup_steps": 15000,
    "weight_decay": 0.01,
    "inference_steps": 20,
    "guidance_scale": 1.5,
}


class TokenEncoder(nn.Module):
    """Trainable patch-token encoder standing in for a frozen pretrained
    image backbone: patch projection plus learned position embeddings."""

    def __init__(self, image_size: int, patch_size: int, embed_dim: int):
        super().__init__()
        if image_size % patch_size != 0:
            raise ConfigurationError("image size not divisible by patch size")
        self.patch_size = patch_size
        self.proj = nn.Conv2d(3, embed_dim, patch_size, stride=patch_size)
        n = (image_size // patch_size) ** 2
        self.pos = nn.Parameter(torch.zeros(n, embed_dim))
        nn.init.normal_(self.pos, std=0.02)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] % self.patch_size != 0 or x.shape[-2] % self.patch_size != 0:
            raise ContractError("input size not divisible by patch size")
        h = self.proj(x)  # (B, D, H/p, W/p)
        tokens = h.flatten(2).transpose(1, 2)  # (B, n, D)
        if tokens.shape[1] != self.pos.shape[0]:
            raise ContractError(
                f"got {tokens.shape[1]} patches, position table has {self.pos.shape[0]}")
        return tokens + self.pos


class Adapter(nn.Module):
    """Token-axis contraction, feature projection, then per-token LayerNorm."""

    def __init__(self, n_in: int, n_out: int, d_in: int, m: int):
        super().__init__()
        self.n_in, self.n_out, self.d_in, self.m = n_in, n_out, d_in, m
        self.token_mix = nn.Linear(n_in, n_out)
        self.feature_map = nn.Linear(d_in, m)
        self.norm = nn.LayerNorm(m)

    def forward(self, raw: torch.Tensor) -> torch.Tensor:
        if raw.shape[-2] != self.n_in or raw.shape[-1] != self.d_in:
            raise ContractError(
                f"adapter expects (*, {self.n_in}, {self.d_in}), got {tuple(raw.shape)}")
        h = self.token_mix(raw.transpose(-1, -2)).transpose(-1, -2)  # (*, n_out, d_in)
        h = self.feature_map(h)  # (*, n_out, m)
        return self.norm(h)


class ClassEmbeddingTable(nn.Module):
    N_CLASSES = 3

    def __init__(self, embed_dim: int):
        super().__init__()
        self.table = nn.Embedding(self.N_CLASSES, embed_dim)

    def forward(self, c: torch.Tensor) -> torch.Tensor:
        return lookup_class(c, self)


class TimestepEmbeddingTable(nn.Module):
    def __init__(self, n_timesteps: int, embed_dim: int):
        super().__init__()
        self.n_timesteps = n_timesteps
        self.table = nn.Embedding(n_timesteps, embed_dim)

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        return lookup_timestep(t, self)


def lookup_class(c, table: ClassEmbeddingTable) -> torch.Tensor:
    """Row for class index c in {1,2,3} (1-indexed)."""
    c = torch.as_tensor(c)
    if torch.any(c < 1) or torch.any(c > table.N_CLASSES):
        raise ContractError(f"class index out of range 1..{table.N_CLASSES}: {c}")
    return table.table(c - 1)


def lookup_timestep(t, table: TimestepEmbeddingTable) -> torch.Tensor:
    """Row for timestep t in {1..T} (1-indexed)."""
    t = torch.as_tensor(t)
    if torch.any(t < 1) or torch.any(t > table.n_timesteps):
        raise ContractError(f"timestep out of range 1..{table.n_timesteps}")
    return table.table(t - 1)


def condition_timestep(e_t: torch.Tensor, e_c: torch.Tensor) -> torch.Tensor:
    """Element-wise sum of the timestep and garment-class embeddings."""
    if e_t.shape[-1] != e_c.shape[-1]:
        raise ContractError(
            f"embedding widths differ: {e_t.shape[-1]} vs {e_c.shape[-1]}")
    return e_t + e_c


class NullCondition(nn.Module):
    """Token block substituted for the image tokens in the unconditional
    branch. The class embedding is retained in both branches."""

    def __init__(self, n_tokens: int, token_dim: int, mode: str = "learned"):
        super().__init__()
        if mode == "learned":
            self.tokens = nn.Parameter(torch.zeros(n_tokens, token_dim))
        elif mode == "zero":
            self.register_buffer("tokens", torch.zeros(n_tokens, token_dim))
        else:
            raise ConfigurationError(f"unknown null mode {mode!r}")

    def forward(self, batch_size: int) -> torch.Tensor:
        return self.tokens.unsqueeze(0).expand(batch_size, -1, -1)
