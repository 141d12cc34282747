"""Noise schedules, forward diffusion, the training objective, classifier-free
guidance, and the deterministic Euler sampler over a sigma grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import ConfigurationError, ContractError, NumericalError, TrainingError


@dataclass
class NoiseSchedule:
    T: int
    betas: np.ndarray
    alphas_bar: np.ndarray
    sigmas: np.ndarray  # sqrt((1 - abar) / abar)


@dataclass
class SamplerConfig:
    n_steps: int = 20
    guidance_scale: float = 1.5
    seed: int = 0
    sigma_rule: str = "karras-rho7"  # or "linear-index"

    def __post_init__(self):
        if self.n_steps < 1:
            raise ConfigurationError("n_steps must be >= 1")
        if self.guidance_scale < 0:
            raise ConfigurationError("guidance_scale must be >= 0")
        if self.sigma_rule not in ("karras-rho7", "linear-index"):
            raise ConfigurationError(f"unknown sigma rule {self.sigma_rule!r}")


@dataclass
class TrainConfig:
    lr: float = 2e-3
    warmup_steps: int = 2000
    total_steps: int = 20000
    weight_decay: float = 0.01
    batch_size: int = 16
    cond_dropout: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.warmup_steps > self.total_steps:
            raise ConfigurationError("warmup_steps must not exceed total_steps")
        if not 0.0 <= self.cond_dropout < 1.0:
            raise ConfigurationError("cond_dropout must be in [0,1)")


def build_schedule(kind: str, T: int, beta_start: float = 0.00085,
                   beta_end: float = 0.012) -> NoiseSchedule:
    if T < 1:
        raise ConfigurationError("T must be >= 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigurationError("need 0 < beta_start <= beta_end < 1")
    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, T)
    elif kind == "scaled_linear":
        betas = np.linspace(beta_start ** 0.5, beta_end ** 0.5, T) ** 2
    else:
        raise ConfigurationError(f"unknown schedule kind {kind!r}")
    alphas_bar = np.cumprod(1.0 - betas)
    sigmas = np.sqrt((1.0 - alphas_bar) / alphas_bar)
    return NoiseSchedule(T, betas, alphas_bar, sigmas)


def forward_diffuse(x0: torch.Tensor, t, eps: torch.Tensor,
                    schedule: NoiseSchedule) -> torch.Tensor:
    """x_t = sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps, t in {1..T}."""
    if eps.shape != x0.shape:
        raise ContractError(f"eps shape {tuple(eps.shape)} != x0 {tuple(x0.shape)}")
    t = torch.as_tensor(t)
    if torch.any(t < 1) or torch.any(t > schedule.T):
        raise ContractError(f"t out of range 1..{schedule.T}")
    ab = torch.as_tensor(schedule.alphas_bar, dtype=x0.dtype)[t - 1]
    while ab.dim() < x0.dim():
        ab = ab.unsqueeze(-1)
    return torch.sqrt(ab) * x0 + torch.sqrt(1.0 - ab) * eps


def cfg_combine(eps_uncond: torch.Tensor, eps_cond: torch.Tensor,
                s: float) -> torch.Tensor:
    if eps_uncond.shape != eps_cond.shape:
        raise ContractError("cfg_combine shapes differ")
    return eps_uncond + s * (eps_cond - eps_uncond)


def sigma_grid(schedule: NoiseSchedule, n_steps: int,
               rule: str = "karras-rho7") -> np.ndarray:
    """Strictly decreasing grid of length n_steps + 1: sigma_max ... 0."""
    if n_steps < 1:
        raise ConfigurationError("n_steps must be >= 1")
    s_min, s_max = float(schedule.sigmas[0]), float(schedule.sigmas[-1])
    if n_steps == 1:
        return np.array([s_max, 0.0])
    if rule == "karras-rho7":
        rho = 7.0
        ramp = np.linspace(0.0, 1.0, n_steps)
        grid = (s_max ** (1 / rho) + ramp * (s_min ** (1 / rho) - s_max ** (1 / rho))) ** rho
    elif rule == "linear-index":
        idx = np.linspace(schedule.T - 1, 0, n_steps).round().astype(int)
        grid = schedule.sigmas[idx]
    else:
        raise ConfigurationError(f"unknown sigma rule {rule!r}")
    # pin the endpoints exactly: (s**(1/rho))**rho reintroduces rounding
    grid[0], grid[-1] = s_max, s_min
    return np.append(grid, 0.0)


def timestep_for_sigma(schedule: NoiseSchedule, sigma: float) -> int:
    """Nearest schedule index (1-indexed) to a sigma value; the learnable
    timestep table is discrete so sampling needs a rounding rule."""
    return int(np.argmin(np.abs(schedule.sigmas - sigma))) + 1


def euler_core(denoised_fn, shape, schedule: NoiseSchedule,
               config: SamplerConfig, device=None) -> torch.Tensor:
    """Deterministic Euler recurrence over the sigma grid.

    denoised_fn(x, sigma, t) returns the denoised estimate D for the raw
    sigma-space state x. The Euler step with slope d = (x - D)/sigma,
    x <- x + (sigma_next - sigma)*d, is computed in the algebraically
    identical form x <- D + (sigma_next/sigma)*(x - D) so that the final
    step (sigma_next = 0) lands on D exactly; a denoiser whose estimate is
    identically zero therefore yields an exactly zero latent.
    """
    grid = sigma_grid(schedule, config.n_steps, config.sigma_rule)
    gen = torch.Generator(device="cpu").manual_seed(config.seed)
    x = torch.randn(shape, generator=gen) * grid[0]
    if device is not None:
        x = x.to(device)
    for i in range(len(grid) - 1):
        sigma, sigma_next = float(grid[i]), float(grid[i + 1])
        denoised = denoised_fn(x, sigma, timestep_for_sigma(schedule, sigma))
        x = denoised + (sigma_next / sigma) * (x - denoised)
        if not torch.isfinite(x).all():
            raise NumericalError(f"non-finite sampler state at step {i}")
    return x


def euler_sample(model, tokens: torch.Tensor, c, schedule: NoiseSchedule,
                 config: SamplerConfig, latent_shape) -> torch.Tensor:
    """Sample latents with classifier-free guidance. The model input is
    rescaled by 1/sqrt(sigma^2+1) so the denoiser sees the same variance it
    was trained on; the class embedding is retained in both branches."""
    eval_count = [0]
    batch = latent_shape[0]
    null_tokens = model.null_cond(batch).to(tokens.dtype)
    s = config.guidance_scale

    def denoised_fn(x, sigma, t):
        u = x / (sigma ** 2 + 1.0) ** 0.5
        with torch.no_grad():
            eps_c = model.predict_noise(u, t, tokens, c)
            eval_count[0] += 1
            if s == 1.0:
                eps_hat = eps_c
            else:
                eps_u = model.predict_noise(u, t, null_tokens, c)
                eval_count[0] += 1
                eps_hat = cfg_combine(eps_u, eps_c, s)
        return x - sigma * eps_hat

    out = euler_core(denoised_fn, latent_shape, schedule, config)
    out.eval_count = eval_count[0]
    return out


class Trainer:
    """Single-writer diffusion training loop state: decoupled-weight-decay
    adaptive optimizer, linear warmup then linear decay to zero, conditional
    dropout with an instrumented null-condition counter."""

    def __init__(self, model, train_config: TrainConfig, schedule: NoiseSchedule):
        self.model = model
        self.config = train_config
        self.schedule = schedule
        decay, no_decay = [], []
        for p in model.parameters():
            if not p.requires_grad:
                continue
            # biases and normalization gains are 1-D; exclude them from decay
            (no_decay if p.ndim <= 1 else decay).append(p)
        self.optimizer = torch.optim.AdamW(
            [{"params": decay, "weight_decay": train_config.weight_decay},
             {"params": no_decay, "weight_decay": 0.0}],
            lr=train_config.lr)
        self.scheduler = torch.optim.lr_scheduler.LambdaLR(self.optimizer, self._lr_factor)
        self.generator = torch.Generator(device="cpu").manual_seed(train_config.seed)
        self.step_count = 0
        self.null_count = 0

    def _lr_factor(self, step: int) -> float:
        cfg = self.config
        if cfg.warmup_steps > 0 and step <= cfg.warmup_steps:
            return step / cfg.warmup_steps
        if cfg.total_steps == cfg.warmup_steps:
            return 1.0
        return max(0.0, (cfg.total_steps - step) / (cfg.total_steps - cfg.warmup_steps))

    def current_lr(self) -> float:
        return self.scheduler.get_last_lr()[0]

    def training_step(self, latents: torch.Tensor, references: torch.Tensor,
                      classes: torch.Tensor) -> float:
        """One optimizer step of the noise-MSE objective; returns the loss."""
        if latents.shape[0] == 0:
            raise ContractError("empty batch")
        model, cfg = self.model, self.config
        b = latents.shape[0]
        t = torch.randint(1, self.schedule.T + 1, (b,), generator=self.generator)
        eps = torch.randn(latents.shape, generator=self.generator)
        x_t = forward_diffuse(latents, t, eps, self.schedule)
        tokens = model.encode_condition(references)
        if cfg.cond_dropout > 0:
            drop = torch.rand(b, generator=self.generator) < cfg.cond_dropout
            if drop.any():
                null = model.null_cond(b)
                tokens = torch.where(drop[:, None, None], null, tokens)
                self.null_count += int(drop.sum())
        pred = model.predict_noise(x_t, t, tokens, classes)
        loss = torch.mean((pred - eps) ** 2)
        if not torch.isfinite(loss):
            raise TrainingError(
                f"non-finite loss at step {self.step_count} "
                f"(lr={self.scheduler.get_last_lr()[0]:.3e})")
        self.optimizer.zero_grad()
        loss.backward()
        self.optimizer.step()
        self.scheduler.step()
        self.step_count += 1
        return float(loss.detach())
