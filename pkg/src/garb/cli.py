"""Command line interface.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
"""

from __future__ import annotations

import dataclasses
import json
import os
import sys

import click

from . import config as config_mod
from . import flatshop, pipelines
from .errors import ConfigurationError, ContractError, GarbError


def _fail(exc: Exception):
    click.echo(f"error: {exc}", err=True)
    code = 2 if isinstance(exc, (ConfigurationError, ContractError)) else 1
    sys.exit(code)


@click.group()
def main():
    """Virtual try-off at desk scale: data generation, training, sampling,
    evaluation, sweeps, and p2p composition."""


@main.command("gen-data")
@click.option("--train", "n_train", type=int, required=True)
@click.option("--test", "n_test", type=int, required=True)
@click.option("--size", type=int, default=64, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def gen_data(n_train, n_test, size, seed, out):
    """Generate the synthetic paired dataset and its manifests."""
    try:
        train_m, test_m = flatshop.generate_dataset(n_train, n_test, size, seed, out)
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    except GarbError as exc:
        _fail(exc)
    click.echo(f"wrote {len(train_m.entries)} train and {len(test_m.entries)} "
               f"test pairs under {out}")


@main.command("print-config")
@click.option("--out", type=click.Path(), default=None,
              help="Write the default config JSON here instead of stdout.")
def print_config(out):
    """Emit the full default configuration (single source of truth)."""
    cfg = config_mod.default_config()
    text = json.dumps(config_mod.to_dict(cfg), indent=2, sort_keys=True)
    if out:
        with open(out, "w") as f:
            f.write(text + "\n")
    else:
        click.echo(text)


def _load_cfg(config_path, **overrides):
    try:
        cfg = (config_mod.load_config(config_path) if config_path
               else config_mod.default_config())
        updates = {k: v for k, v in overrides.items() if v is not None}
        if updates:
            cfg = dataclasses.replace(cfg, **updates)
        return cfg
    except (GarbError, json.JSONDecodeError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)


@main.command("train")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--out-dir", type=click.Path(), default=None)
@click.option("--steps", type=int, default=None, help="Override total training steps.")
def train(config_path, out_dir, steps):
    """Train the codec (stage 1) then the diffusion model (stage 2)."""
    cfg = _load_cfg(config_path, out_dir=out_dir)
    if steps is not None:
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train,
                                                                 total_steps=steps))
    try:
        pipelines.run_train(cfg, log=click.echo)
    except GarbError as exc:
        _fail(exc)
    click.echo(f"checkpoint written to {os.path.join(cfg.out_dir, 'checkpoint')}")


@main.command("sample")
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--image", "images", type=click.Path(exists=True), multiple=True,
              required=True)
@click.option("--class", "class_name",
              type=click.Choice(flatshop.CLASS_NAMES), required=True)
@click.option("--steps", type=int, default=None)
@click.option("--guidance", type=float, default=None)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def sample(checkpoint, images, class_name, steps, guidance, seed, out):
    """Reconstruct flat garment images from reference photos."""
    from . import diffusion

    try:
        model, codec, cfg = pipelines.load_model_checkpoint(checkpoint)
        schedule = diffusion.build_schedule(cfg.schedule.kind, cfg.schedule.T,
                                            cfg.schedule.beta_start,
                                            cfg.schedule.beta_end)
        os.makedirs(out, exist_ok=True)
        for i, path in enumerate(images):
            overrides = {"seed": seed + i}
            if steps is not None:
                overrides["n_steps"] = steps
            if guidance is not None:
                overrides["guidance_scale"] = guidance
            sampler_cfg = dataclasses.replace(cfg.sampler, **overrides)
            ref = flatshop.load_png(path)
            garment = pipelines.sample_garment(model, codec, schedule,
                                               sampler_cfg, ref, class_name)
            dest = os.path.join(out, os.path.basename(path))
            flatshop.save_png(garment, dest)
            click.echo(dest)
    except GarbError as exc:
        _fail(exc)


@main.command("eval")
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--manifest", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--extractor", type=click.Choice(["identity", "classifier"]),
              default="identity", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--steps", type=int, default=None)
@click.option("--guidance", type=float, default=None)
@click.option("--times100", is_flag=True,
              help="Also print aggregate metrics scaled by 100.")
def eval_cmd(checkpoint, manifest, out, extractor, seed, steps, guidance, times100):
    """Sample one prediction per test entry and run the full metric suite."""
    overrides = {}
    if steps is not None:
        overrides["n_steps"] = steps
    if guidance is not None:
        overrides["guidance_scale"] = guidance
    try:
        report = pipelines.run_eval(checkpoint, manifest, out, extractor, seed,
                                    overrides or None, log=click.echo)
    except GarbError as exc:
        _fail(exc)
    scale = 100.0 if times100 else 1.0
    for key, value in report.aggregate.items():
        click.echo(f"{key}: {value * scale:.6f}" if times100
                   else f"{key}: {value:.6f}")


@main.command("sweep")
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--manifest", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--scales", default="1.0,1.5,2.0,2.5,3.0", show_default=True)
@click.option("--steps", default="5,10,20,50", show_default=True)
@click.option("--extractor", type=click.Choice(["identity", "classifier"]),
              default="identity", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--plot", type=click.Path(), default=None,
              help="Optional path for a DISTS/FID curve figure.")
def sweep(checkpoint, manifest, out, scales, steps, extractor, seed, plot):
    """Guidance-scale x inference-steps grid emitting DISTS/FID per cell."""
    try:
        scale_list = tuple(float(s) for s in scales.split(","))
        step_list = tuple(int(s) for s in steps.split(","))
    except ValueError as exc:
        click.echo(f"error: bad grid value: {exc}", err=True)
        sys.exit(2)
    try:
        pipelines.run_sweep(checkpoint, manifest, out, scale_list, step_list,
                            extractor, seed, plot, log=click.echo)
    except GarbError as exc:
        _fail(exc)
    click.echo(os.path.join(out, "sweep.csv"))


@main.command("p2p")
@click.option("--checkpoint", type=click.Path(exists=True), required=True)
@click.option("--pairs", type=click.Path(exists=True), required=True)
@click.option("--manifest", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--ground-truth", is_flag=True,
              help="Bypass diffusion and transfer the true garments (oracle).")
def p2p(checkpoint, pairs, manifest, out, seed, ground_truth):
    """Person-to-person transfer: try-off the owner, try-on the source."""
    try:
        outputs = pipelines.run_p2p(checkpoint, pairs, manifest, out, seed,
                                    ground_truth, log=click.echo)
    except GarbError as exc:
        _fail(exc)
    click.echo(f"wrote {len(outputs)} composites under {out}")


if __name__ == "__main__":
    main()
