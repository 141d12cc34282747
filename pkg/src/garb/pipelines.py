"""End-to-end pipelines shared by the CLI and the tests: two-stage training,
sampling, evaluation with per-class summaries, the guidance/steps sweep, and
the p2p composition chain."""

from __future__ import annotations

import os
import shutil

import numpy as np
import torch

from . import checkpoint as ckpt_io
from . import codec as codec_mod
from . import config as config_mod
from . import diffusion, flatshop, metrics
from .errors import CheckpointError, ContractError
from .model import MgtModel


# --- checkpoint bundling ---------------------------------------------------


def save_model_checkpoint(model: MgtModel, codec: codec_mod.Codec,
                          cfg: config_mod.RunConfig, path: str) -> None:
    arrays = {}
    for k, v in model.state_dict().items():
        arrays[f"model.{k}"] = v.detach().cpu().numpy()
    for k, v in codec.state_dict().items():
        arrays[f"codec.{k}"] = v.detach().cpu().numpy()
    ckpt_io.save_checkpoint(arrays, config_mod.to_dict(cfg), path)


def load_model_checkpoint(path: str):
    arrays, cfg_dict = ckpt_io.load_checkpoint(path)
    cfg = config_mod.from_dict(cfg_dict)
    model = MgtModel(cfg.cond, cfg.denoiser)
    codec = codec_mod.Codec(cfg.codec)
    model_sd = {k[len("model."):]: torch.from_numpy(v)
                for k, v in arrays.items() if k.startswith("model.")}
    codec_sd = {k[len("codec."):]: torch.from_numpy(v)
                for k, v in arrays.items() if k.startswith("codec.")}
    model.load_state_dict(model_sd)
    codec.load_state_dict(codec_sd)
    model.eval()
    codec.eval()
    for p in codec.parameters():
        p.requires_grad_(False)
    return model, codec, cfg


# --- training --------------------------------------------------------------


def load_split(cfg: config_mod.RunConfig, split: str) -> flatshop.DatasetManifest:
    path = os.path.join(cfg.data.root, f"manifest_{split}.tsv")
    if not os.path.exists(path):
        raise ContractError(f"manifest not found: {path}")
    return flatshop.read_manifest(path, split, cfg.data.image_size)


def _load_training_tensors(manifest: flatshop.DatasetManifest):
    refs, gars, classes = [], [], []
    for e in manifest.entries:
        refs.append(codec_mod.image_to_tensor(
            flatshop.load_png(os.path.join(manifest.root_path, e.reference_file))))
        gars.append(codec_mod.image_to_tensor(
            flatshop.load_png(os.path.join(manifest.root_path, e.garment_file))))
        classes.append(flatshop.CLASS_IDS[e.class_name])
    return torch.stack(refs), torch.stack(gars), torch.tensor(classes)


def run_train(cfg: config_mod.RunConfig, log=print):
    """Stage 1: train and freeze the latent codec. Stage 2: train the token
    encoder, adapter, embedding tables, and U-Net on the noise-MSE objective.
    Emits loss.csv (one row per step) and periodic checkpoints."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    manifest = load_split(cfg, "train")
    log(f"stage 1: training codec on {len(manifest.entries)} garments")
    codec = codec_mod.train_codec(manifest, cfg.codec, cfg.codec_train.epochs,
                                  cfg.codec_train.seed, cfg.codec_train.lr,
                                  cfg.codec_train.batch_size)
    codec_checksum = ckpt_io.params_checksum(codec)

    refs, gars, classes = _load_training_tensors(manifest)
    with torch.no_grad():
        latents = torch.cat([codec.encode(gars[i:i + 64])
                             for i in range(0, gars.shape[0], 64)])

    torch.manual_seed(cfg.train.seed)
    model = MgtModel(cfg.cond, cfg.denoiser)
    schedule = diffusion.build_schedule(cfg.schedule.kind, cfg.schedule.T,
                                        cfg.schedule.beta_start, cfg.schedule.beta_end)
    trainer = diffusion.Trainer(model, cfg.train, schedule)
    batch_rng = np.random.default_rng(
        np.random.SeedSequence([int(cfg.train.seed), 0xBA7C]))
    ckpt_path = os.path.join(cfg.out_dir, "checkpoint")
    loss_path = os.path.join(cfg.out_dir, "loss.csv")
    n = latents.shape[0]
    with open(loss_path, "w") as loss_f:
        loss_f.write("step,loss,lr\n")
        for step in range(cfg.train.total_steps):
            idx = torch.from_numpy(
                batch_rng.integers(0, n, size=cfg.train.batch_size))
            loss = trainer.training_step(latents[idx], refs[idx], classes[idx])
            loss_f.write(f"{step},{loss:.6f},{trainer.current_lr():.8e}\n")
            if (step + 1) % cfg.checkpoint_every == 0 or step + 1 == cfg.train.total_steps:
                save_model_checkpoint(model, codec, cfg, ckpt_path)
            if (step + 1) % 500 == 0:
                log(f"step {step + 1}/{cfg.train.total_steps} loss {loss:.4f}")
    if ckpt_io.params_checksum(codec) != codec_checksum:
        raise ContractError("codec parameters changed during diffusion training")
    return model, codec, trainer


# --- sampling --------------------------------------------------------------


def preprocess_reference(image: np.ndarray, size: int) -> np.ndarray:
    return flatshop.resize_bilinear(flatshop.pad_to_square(image), size)


def sample_garment(model: MgtModel, codec: codec_mod.Codec,
                   schedule: diffusion.NoiseSchedule,
                   sampler_cfg: diffusion.SamplerConfig,
                   reference: np.ndarray, class_name: str) -> np.ndarray:
    """Reference photo + class label -> flat garment PNG array."""
    klass = flatshop.garment_class(class_name)
    size = model.cond_config.image_size
    ref = preprocess_reference(reference, size)
    ref_t = codec_mod.image_to_tensor(ref).unsqueeze(0)
    with torch.no_grad():
        tokens = model.encode_condition(ref_t)
    f = codec.config.downsample_factor
    shape = (1, codec.config.latent_channels, size // f, size // f)
    latent = diffusion.euler_sample(model, tokens, klass.id, schedule,
                                    sampler_cfg, shape)
    with torch.no_grad():
        img = codec.decode(latent)[0]
    return codec_mod.tensor_to_image(img)


def _replace(cfg, **kw):
    import dataclasses

    return dataclasses.replace(cfg, **kw)


def sample_manifest_predictions(model, codec, schedule, sampler_cfg, manifest,
                                pred_dir: str, ref_dir: str, global_seed: int):
    """One prediction per manifest entry with per-entry seed global_seed+i;
    ground-truth garments are mirrored into ref_dir under the same names."""
    os.makedirs(pred_dir, exist_ok=True)
    os.makedirs(ref_dir, exist_ok=True)
    for i, e in enumerate(manifest.entries):
        name = f"{i:05d}.png"
        ref_img = flatshop.load_png(os.path.join(manifest.root_path, e.reference_file))
        cell_cfg = _replace(sampler_cfg, seed=global_seed + i)
        pred = sample_garment(model, codec, schedule, cell_cfg, ref_img, e.class_name)
        flatshop.save_png(pred, os.path.join(pred_dir, name))
        shutil.copyfile(os.path.join(manifest.root_path, e.garment_file),
                        os.path.join(ref_dir, name))


# --- evaluation & sweep ----------------------------------------------------


def make_extractor(kind: str, manifest=None, seed: int = 0):
    if kind == "identity":
        return metrics.IdentityExtractor()
    if kind == "classifier":
        from . import features

        if manifest is None:
            raise ContractError("classifier extractor needs a training manifest")
        return features.ClassifierExtractor(
            features.train_classifier(manifest, seed=seed))
    raise ContractError(f"unknown extractor kind {kind!r}")


def eval_cell(model, codec, schedule, sampler_cfg, manifest, workdir: str,
              global_seed: int, extractor,
              metric_cfg: metrics.MetricConfig) -> metrics.MetricReport:
    """Sample the manifest then run the metric suite. cmd_eval and cmd_sweep
    both go through here so a 1-cell sweep equals an eval exactly."""
    pred_dir = os.path.join(workdir, "preds")
    ref_dir = os.path.join(workdir, "refs")
    sample_manifest_predictions(model, codec, schedule, sampler_cfg, manifest,
                                pred_dir, ref_dir, global_seed)
    return metrics.evaluate_pairs(pred_dir, ref_dir, extractor, metric_cfg)


def run_eval(ckpt_path: str, manifest_path: str, out_dir: str,
             extractor_kind: str = "identity", global_seed: int = 0,
             sampler_overrides: dict = None, log=print):
    model, codec, cfg = load_model_checkpoint(ckpt_path)
    manifest = flatshop.read_manifest(manifest_path, "test", cfg.data.image_size)
    schedule = diffusion.build_schedule(cfg.schedule.kind, cfg.schedule.T,
                                        cfg.schedule.beta_start, cfg.schedule.beta_end)
    sampler_cfg = cfg.sampler
    if sampler_overrides:
        sampler_cfg = _replace(sampler_cfg, **sampler_overrides)
    extractor = make_extractor(extractor_kind, manifest, global_seed)
    os.makedirs(out_dir, exist_ok=True)
    report = eval_cell(model, codec, schedule, sampler_cfg, manifest, out_dir,
                       global_seed, extractor, cfg.metrics)
    metrics.write_report_csv(report, os.path.join(out_dir, "report.csv"))

    # per-class summary (three class rows plus overall), Table-1 style
    by_class = {name: [] for name in flatshop.CLASS_NAMES}
    for row, entry in zip(report.per_pair, manifest.entries):
        by_class[entry.class_name].append(row)
    pred_dir, ref_dir = os.path.join(out_dir, "preds"), os.path.join(out_dir, "refs")
    summary_path = os.path.join(out_dir, "summary.csv")
    with open(summary_path, "w") as f:
        f.write("class,n,ssim,ms_ssim,cw_ssim,dists,fid,kid\n")
        for cname in flatshop.CLASS_NAMES:
            rows = by_class[cname]
            f.write(_summary_line(cname, rows, pred_dir, ref_dir, extractor,
                                  report.config))
        f.write(_summary_line("overall", report.per_pair, pred_dir, ref_dir,
                              extractor, report.config))
    log(f"evaluated {report.n_pairs} pairs -> {summary_path}")
    return report


def _summary_line(label, rows, pred_dir, ref_dir, extractor, metric_cfg):
    if not rows:
        return f"{label},0,nan,nan,nan,nan,nan,nan\n"
    arr = np.array([r[1:] for r in rows], dtype=np.float64)
    names = [r[0] for r in rows]
    if len(names) >= 2:
        preds = [flatshop.load_png(os.path.join(pred_dir, n)) for n in names]
        refs = [flatshop.load_png(os.path.join(ref_dir, n)) for n in names]
        f_val = metrics.fid(metrics.feature_stats(preds, extractor),
                            metrics.feature_stats(refs, extractor))
        k_val = metrics.kid(np.stack([extractor.embed(p) for p in preds]),
                            np.stack([extractor.embed(r) for r in refs]),
                            metric_cfg.kid_block)
    else:
        f_val = k_val = float("nan")
    means = ",".join(f"{v:.6f}" for v in arr.mean(axis=0))
    return f"{label},{len(rows)},{means},{f_val:.6f},{k_val:.6f}\n"


def run_sweep(ckpt_path: str, manifest_path: str, out_dir: str,
              scales=(1.0, 1.5, 2.0, 2.5, 3.0), step_counts=(5, 10, 20, 50),
              extractor_kind: str = "identity", global_seed: int = 0,
              plot_path: str = None, log=print):
    """Grid over (guidance scale, inference steps); per cell emit DISTS and
    FID computed on the test manifest with identical per-entry seeds."""
    if not scales or not step_counts:
        raise ContractError("sweep grid must be non-empty")
    model, codec, cfg = load_model_checkpoint(ckpt_path)
    manifest = flatshop.read_manifest(manifest_path, "test", cfg.data.image_size)
    schedule = diffusion.build_schedule(cfg.schedule.kind, cfg.schedule.T,
                                        cfg.schedule.beta_start, cfg.schedule.beta_end)
    extractor = make_extractor(extractor_kind, manifest, global_seed)
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "sweep.csv")
    results = []
    with open(csv_path, "w") as f:
        f.write("s,n,dists,fid\n")
        for s in scales:
            for n in step_counts:
                cell_dir = os.path.join(out_dir, f"cell_s{s}_n{n}")
                cell_cfg = _replace(cfg.sampler, guidance_scale=float(s),
                                    n_steps=int(n))
                try:
                    report = eval_cell(model, codec, schedule, cell_cfg, manifest,
                                       cell_dir, global_seed, extractor, cfg.metrics)
                    d, fi = report.aggregate["dists"], report.aggregate["fid"]
                    f.write(f"{s},{n},{d:.6f},{fi:.6f}\n")
                    results.append((s, n, d, fi))
                except Exception as exc:  # record and continue with other cells
                    f.write(f"{s},{n},error,{type(exc).__name__}\n")
                    log(f"cell (s={s}, n={n}) failed: {exc}")
                f.flush()
    if plot_path and results:
        _plot_sweep(results, plot_path)
    return results


def _plot_sweep(results, plot_path: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    by_n = {}
    for s, n, d, fi in results:
        by_n.setdefault(n, []).append((s, d, fi))
    for n, rows in sorted(by_n.items()):
        rows.sort()
        axes[0].plot([r[0] for r in rows], [r[1] for r in rows], marker="o",
                     label=f"n={n}")
        axes[1].plot([r[0] for r in rows], [r[2] for r in rows], marker="o",
                     label=f"n={n}")
    axes[0].set_xlabel("guidance scale"), axes[0].set_ylabel("DISTS")
    axes[1].set_xlabel("guidance scale"), axes[1].set_ylabel("FID")
    axes[0].legend()
    fig.tight_layout()
    fig.savefig(plot_path)
    plt.close(fig)


# --- p2p composition -------------------------------------------------------


def run_p2p(ckpt_path: str, pairing_path: str, manifest_path: str, out_dir: str,
            global_seed: int = 0, use_ground_truth: bool = False, log=print):
    """For each pairing line: try-off the garment owner's photo, then paint
    the reconstructed garment onto the source person. With use_ground_truth
    the diffusion stage is bypassed (oracle path)."""
    model, codec, cfg = load_model_checkpoint(ckpt_path)
    manifest = flatshop.read_manifest(manifest_path, "test", cfg.data.image_size)
    pairing = flatshop.read_pairing_file(pairing_path)
    by_ref = {e.reference_file: e for e in manifest.entries}
    schedule = diffusion.build_schedule(cfg.schedule.kind, cfg.schedule.T,
                                        cfg.schedule.beta_start, cfg.schedule.beta_end)
    os.makedirs(out_dir, exist_ok=True)
    outputs = []
    for i, (src_file, owner_file, cname) in enumerate(pairing.lines):
        if src_file not in by_ref or owner_file not in by_ref:
            log(f"skipping line {i}: file not in manifest (non-synthetic input)")
            continue
        owner = by_ref[owner_file]
        src_img = flatshop.load_png(os.path.join(manifest.root_path, src_file))
        if use_ground_truth:
            garment = flatshop.load_png(
                os.path.join(manifest.root_path, owner.garment_file))
        else:
            owner_img = flatshop.load_png(
                os.path.join(manifest.root_path, owner_file))
            cell_cfg = _replace(cfg.sampler, seed=global_seed + i)
            garment = sample_garment(model, codec, schedule, cell_cfg,
                                     owner_img, cname)
        composed = flatshop.try_on(src_img, garment, cname, cfg.data.image_size)
        gar_path = os.path.join(out_dir, f"{i:05d}_garment.png")
        comp_path = os.path.join(out_dir, f"{i:05d}_composite.png")
        flatshop.save_png(garment, gar_path)
        flatshop.save_png(np.concatenate([src_img, garment, composed], axis=1),
                          comp_path)
        outputs.append((gar_path, comp_path))
    return outputs
