"""Latent-space U-Net noise predictor.

Residual blocks receive the conditioned timestep embedding as per-channel
additive modulation; cross-attention layers read keys and values from the
adapted image tokens. The final output convolution is zero-initialized so a
fresh model predicts exactly zero noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import nn

from .errors import ConfigurationError, ContractError, NumericalError


@dataclass
class DenoiserConfig:
    latent_channels: int = 4
    base_channels: int = 32
    channel_multipliers: tuple = (1, 2)
    attention_levels: tuple = (0, 1)
    n_heads: int = 2
    d_k: int = 16
    d_v: int = 16
    cond_dim: int = 128    # m, token feature width
    timestep_dim: int = 256  # d, conditioned timestep embedding width
    norm_groups: int = 8

    def __post_init__(self):
        top = self.base_channels * max(self.channel_multipliers)
        if self.d_k * self.n_heads > top:
            raise ConfigurationError("d_k * n_heads exceeds the widest feature size")
        for lvl in self.attention_levels:
            if not 0 <= lvl < len(self.channel_multipliers):
                raise ConfigurationError(f"attention level {lvl} out of range")


class CrossAttention(nn.Module):
    """Pre-norm multi-head cross-attention over spatial positions, with the
    keys/values computed from the conditioning tokens; residual output."""

    def __init__(self, channels: int, cond_dim: int, n_heads: int, d_k: int, d_v: int,
                 norm_groups: int = 8):
        super().__init__()
        self.n_heads, self.d_k, self.d_v = n_heads, d_k, d_v
        self.cond_dim = cond_dim
        self.norm = nn.GroupNorm(min(norm_groups, channels), channels)
        self.to_q = nn.Linear(channels, n_heads * d_k, bias=False)
        self.to_k = nn.Linear(cond_dim, n_heads * d_k, bias=False)
        self.to_v = nn.Linear(cond_dim, n_heads * d_v, bias=False)
        self.to_out = nn.Linear(n_heads * d_v, channels)

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        if cond.shape[-1] != self.cond_dim:
            raise ContractError(
                f"conditioning width {cond.shape[-1]} != expected {self.cond_dim}")
        b, c, h, w = x.shape
        q = self.to_q(self.norm(x).flatten(2).transpose(1, 2))  # (B, HW, H*dk)
        k = self.to_k(cond)  # (B, n, H*dk)
        v = self.to_v(cond)  # (B, n, H*dv)

        def split(t, d):
            return t.view(b, -1, self.n_heads, d).transpose(1, 2)  # (B, H, L, d)

        q, k, v = split(q, self.d_k), split(k, self.d_k), split(v, self.d_v)
        attn = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(self.d_k), dim=-1)
        out = attn @ v  # (B, H, HW, dv)
        out = out.transpose(1, 2).reshape(b, h * w, self.n_heads * self.d_v)
        out = self.to_out(out).transpose(1, 2).view(b, c, h, w)
        return x + out


class ResidualBlock(nn.Module):
    """x + Conv(act(norm(x)) + proj(e)), with a 1x1 skip on channel change."""

    def __init__(self, in_channels: int, out_channels: int, timestep_dim: int,
                 norm_groups: int = 8):
        super().__init__()
        self.timestep_dim = timestep_dim
        self.norm = nn.GroupNorm(min(norm_groups, in_channels), in_channels)
        self.act = nn.SiLU()
        self.proj = nn.Linear(timestep_dim, in_channels)
        self.conv = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.skip = (nn.Identity() if in_channels == out_channels
                     else nn.Conv2d(in_channels, out_channels, 1))

    def forward(self, x: torch.Tensor, e_t_cond: torch.Tensor) -> torch.Tensor:
        if e_t_cond.shape[-1] != self.timestep_dim:
            raise ContractError(
                f"timestep embedding width {e_t_cond.shape[-1]} != {self.timestep_dim}")
        h = self.act(self.norm(x))
        h = h + self.proj(e_t_cond)[:, :, None, None]
        return self.skip(x) + self.conv(h)


class UNet(nn.Module):
    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        cfg = config
        chans = [cfg.base_channels * m for m in cfg.channel_multipliers]
        g = cfg.norm_groups

        def attn(ch):
            return CrossAttention(ch, cfg.cond_dim, cfg.n_heads, cfg.d_k, cfg.d_v, g)

        self.in_conv = nn.Conv2d(cfg.latent_channels, chans[0], 3, padding=1)
        self.down_res = nn.ModuleList()
        self.down_attn = nn.ModuleList()
        self.downsample = nn.ModuleList()
        cur = chans[0]
        for lvl, ch in enumerate(chans):
            self.down_res.append(ResidualBlock(cur, ch, cfg.timestep_dim, g))
            self.down_attn.append(attn(ch) if lvl in cfg.attention_levels else None)
            cur = ch
            if lvl < len(chans) - 1:
                self.downsample.append(nn.Conv2d(ch, ch, 3, stride=2, padding=1))
        self.mid_res1 = ResidualBlock(cur, cur, cfg.timestep_dim, g)
        self.mid_attn = attn(cur)
        self.mid_res2 = ResidualBlock(cur, cur, cfg.timestep_dim, g)
        self.up_res = nn.ModuleList()
        self.up_attn = nn.ModuleList()
        self.upsample = nn.ModuleList()
        for lvl in reversed(range(len(chans))):
            ch = chans[lvl]
            self.up_res.append(ResidualBlock(cur + ch, ch, cfg.timestep_dim, g))
            self.up_attn.append(attn(ch) if lvl in cfg.attention_levels else None)
            if lvl > 0:
                self.upsample.append(nn.Sequential(
                    nn.Upsample(scale_factor=2, mode="nearest"),
                    nn.Conv2d(ch, ch, 3, padding=1)))
            cur = ch
        self.out_norm = nn.GroupNorm(min(g, chans[0]), chans[0])
        self.out_conv = nn.Conv2d(chans[0], cfg.latent_channels, 3, padding=1)
        nn.init.zeros_(self.out_conv.weight)
        nn.init.zeros_(self.out_conv.bias)

    def forward(self, x: torch.Tensor, cond: torch.Tensor,
                e_t_cond: torch.Tensor) -> torch.Tensor:
        n_levels = len(self.config.channel_multipliers)
        h = self.in_conv(x)
        skips = []
        for lvl in range(n_levels):
            h = self.down_res[lvl](h, e_t_cond)
            if self.down_attn[lvl] is not None:
                h = self.down_attn[lvl](h, cond)
            skips.append(h)
            if lvl < n_levels - 1:
                h = self.downsample[lvl](h)
        h = self.mid_res1(h, e_t_cond)
        h = self.mid_attn(h, cond)
        h = self.mid_res2(h, e_t_cond)
        for i, lvl in enumerate(reversed(range(n_levels))):
            h = torch.cat([h, skips[lvl]], dim=1)
            h = self.up_res[i](h, e_t_cond)
            if self.up_attn[i] is not None:
                h = self.up_attn[i](h, cond)
            if lvl > 0:
                h = self.upsample[i](h)
        out = self.out_conv(nn.functional.silu(self.out_norm(h)))
        if not torch.isfinite(out).all():
            raise NumericalError("non-finite activations in U-Net output")
        return out
