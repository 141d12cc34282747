"""Run configuration: one JSON-serializable record holding every constant the
pipelines use. `default_config()` is the desk-scale smoke setup; paper-scale
reference values live in `conditioning.PAPER_SCALE`."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .codec import CodecConfig
from .conditioning import CondConfig
from .denoiser import DenoiserConfig
from .diffusion import SamplerConfig, TrainConfig
from .errors import ConfigurationError
from .metrics import MetricConfig


@dataclass
class ScheduleConfig:
    kind: str = "scaled_linear"
    T: int = 1000
    beta_start: float = 0.00085
    beta_end: float = 0.012


@dataclass
class DataConfig:
    root: str = "data"
    n_train: int = 300
    n_test: int = 90
    image_size: int = 64
    seed: int = 0


@dataclass
class CodecTrainConfig:
    epochs: int = 40
    lr: float = 2e-3
    batch_size: int = 32
    seed: int = 0


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    codec: CodecConfig = field(default_factory=CodecConfig)
    codec_train: CodecTrainConfig = field(default_factory=CodecTrainConfig)
    cond: CondConfig = field(default_factory=CondConfig)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    out_dir: str = "runs/default"
    checkpoint_every: int = 1000

    def __post_init__(self):
        if self.denoiser.cond_dim != self.cond.token_dim:
            raise ConfigurationError("denoiser.cond_dim must equal cond.token_dim")
        if self.denoiser.timestep_dim != self.cond.embed_dim:
            raise ConfigurationError("denoiser.timestep_dim must equal cond.embed_dim")
        if self.cond.image_size != self.codec.image_size:
            raise ConfigurationError("cond.image_size must equal codec.image_size")
        if self.cond.n_timesteps != self.schedule.T:
            raise ConfigurationError("cond.n_timesteps must equal schedule.T")


def default_config() -> RunConfig:
    return RunConfig()


def to_dict(config: RunConfig) -> dict:
    d = dataclasses.asdict(config)
    # tuples are not JSON-stable; store them as lists
    return json.loads(json.dumps(d))


def from_dict(d: dict) -> RunConfig:
    base = default_config()
    unknown_top = set(d) - {f.name for f in dataclasses.fields(RunConfig)}
    if unknown_top:
        raise ConfigurationError(f"unknown config sections {sorted(unknown_top)}")
    out = {}
    for f in dataclasses.fields(RunConfig):
        sub = d.get(f.name)
        if sub is None:
            out[f.name] = getattr(base, f.name)
        elif dataclasses.is_dataclass(getattr(base, f.name)):
            defaults = dataclasses.asdict(getattr(base, f.name))
            merged = {**defaults, **sub}
            cls = type(getattr(base, f.name))
            # restore tuple-typed fields
            for k, v in merged.items():
                if isinstance(defaults.get(k), tuple) and isinstance(v, list):
                    merged[k] = tuple(v)
            unknown = set(sub) - set(defaults)
            if unknown:
                raise ConfigurationError(
                    f"unknown keys {sorted(unknown)} in config section {f.name!r}")
            out[f.name] = cls(**merged)
        else:
            out[f.name] = sub
    return RunConfig(**out)


def save_config(config: RunConfig, path: str) -> None:
    with open(path, "w") as f:
        json.dump(to_dict(config), f, indent=2, sort_keys=True)
        f.write("\n")


def load_config(path: str) -> RunConfig:
    with open(path) as f:
        return from_dict(json.load(f))
