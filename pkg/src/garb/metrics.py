"""Full-reference image quality metrics: SSIM, MS-SSIM, CW-SSIM, DISTS, and
the set-level FID/KID distances over a pluggable feature extractor.

Color images are reduced to luma with BT.601 weights for the SSIM family.
No pretrained backbone is used anywhere: the shipped extractors are an
identity/downsampling pyramid and a tiny convolutional classifier trained on
the synthetic dataset's class labels.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .errors import ContractError

LUMA_WEIGHTS = (0.299, 0.587, 0.114)
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


@dataclass
class MetricConfig:
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    cw_levels: int = 2
    cw_orientations: int = 4
    cw_K: float = 0.01
    dists_alpha: float = 0.5
    dists_beta: float = 0.5
    kid_block: int = 0  # 0 -> single block over the whole set


@dataclass
class FeatureStats:
    mu: np.ndarray
    sigma: np.ndarray
    count: int


@dataclass
class MetricReport:
    per_pair: list  # of (pair_id, ssim, ms_ssim, cw_ssim, dists)
    aggregate: dict  # means plus fid, kid
    n_pairs: int
    config: MetricConfig


def to_luma(image: np.ndarray) -> np.ndarray:
    """RGB (HxWx3, uint8 or float in [0,1]) or grayscale -> float64 [0,1]."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3:
        if np.issubdtype(np.asarray(image).dtype, np.integer):
            arr = arr / 255.0
        return (LUMA_WEIGHTS[0] * arr[..., 0] + LUMA_WEIGHTS[1] * arr[..., 1]
                + LUMA_WEIGHTS[2] * arr[..., 2])
    if np.issubdtype(np.asarray(image).dtype, np.integer):
        arr = arr / 255.0
    return arr


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def _windowed_stats(x, y, window, sigma):
    w = _gaussian_window(window, sigma)
    mu_x = signal.convolve2d(x, w, mode="valid")
    mu_y = signal.convolve2d(y, w, mode="valid")
    xx = signal.convolve2d(x * x, w, mode="valid")
    yy = signal.convolve2d(y * y, w, mode="valid")
    xy = signal.convolve2d(x * y, w, mode="valid")
    var_x = xx - mu_x * mu_x
    var_y = yy - mu_y * mu_y
    cov = xy - mu_x * mu_y
    return mu_x, mu_y, var_x, var_y, cov


def ssim(x, y, window: int = 11, sigma: float = 1.5, L: float = 1.0) -> float:
    """Mean local SSIM over Gaussian-weighted valid windows."""
    x, y = to_luma(x), to_luma(y)
    if x.shape != y.shape:
        raise ContractError("ssim inputs must share a shape")
    if min(x.shape) < window:
        raise ContractError(f"image smaller than the {window}px window")
    c1, c2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    mu_x, mu_y, var_x, var_y, cov = _windowed_stats(x, y, window, sigma)
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def _contrast_structure(x, y, window, sigma, c2):
    _, _, var_x, var_y, cov = _windowed_stats(x, y, window, sigma)
    return float(np.mean((2 * cov + c2) / (var_x + var_y + c2)))


def _downsample2(x):
    h, w = x.shape[0] // 2 * 2, x.shape[1] // 2 * 2
    x = x[:h, :w]
    return (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2]) / 4.0


def ms_ssim(x, y, weights=MS_SSIM_WEIGHTS, window: int = 11,
            sigma: float = 1.5, L: float = 1.0) -> float:
    """Multi-scale SSIM. When the image is too small for all scales, trailing
    scales are dropped and the remaining weights renormalized to sum 1.
    Negative contrast-structure terms are clipped at 0 before exponentiation."""
    x, y = to_luma(x), to_luma(y)
    if x.shape != y.shape:
        raise ContractError("ms_ssim inputs must share a shape")
    n_scales = len(weights)
    while n_scales > 1 and min(x.shape) // (2 ** (n_scales - 1)) < window:
        n_scales -= 1
    if min(x.shape) < window:
        raise ContractError(f"image smaller than the {window}px window")
    w = np.asarray(weights[:n_scales], dtype=np.float64)
    w = w / w.sum()
    c2 = (0.03 * L) ** 2
    value = 1.0
    for j in range(n_scales):
        if j == n_scales - 1:
            term = ssim(x, y, window, sigma, L)
        else:
            term = _contrast_structure(x, y, window, sigma, c2)
            x, y = _downsample2(x), _downsample2(y)
        value *= max(term, 0.0) ** w[j]
    return float(value)


def gabor_kernel(orientation_idx: int, n_orientations: int, size: int = 7,
                 sigma: float = 1.5, omega: float = np.pi / 2) -> np.ndarray:
    """Complex Gabor kernel with an isotropic Gaussian envelope; separable as
    the outer product of two 1-D complex kernels."""
    theta = np.pi * orientation_idx / n_orientations
    a, b = omega * np.cos(theta), omega * np.sin(theta)
    r = np.arange(size) - (size - 1) / 2.0
    env = np.exp(-(r ** 2) / (2 * sigma ** 2))
    kx = env * np.exp(1j * a * r)
    ky = env * np.exp(1j * b * r)
    k = np.outer(ky, kx)
    return k / np.abs(k).sum()


def cw_ssim(x, y, levels: int = 2, orientations: int = 4, K: float = 0.01,
            kernel_size: int = 7) -> float:
    """CW-SSIM over a separable complex Gabor filter bank: per band
    (2|sum c_x conj(c_y)| + K) / (sum|c_x|^2 + sum|c_y|^2 + K), averaged."""
    x, y = to_luma(x), to_luma(y)
    if x.shape != y.shape:
        raise ContractError("cw_ssim inputs must share a shape")
    scores = []
    for level in range(levels):
        if min(x.shape) < kernel_size:
            raise ContractError(
                f"image too small for {levels} pyramid levels of size {kernel_size}")
        for o in range(orientations):
            k = gabor_kernel(o, orientations, kernel_size)
            cx = signal.fftconvolve(x, k, mode="valid")
            cy = signal.fftconvolve(y, k, mode="valid")
            cross = np.abs(np.sum(cx * np.conj(cy)))
            energy = np.sum(np.abs(cx) ** 2) + np.sum(np.abs(cy) ** 2)
            scores.append((2 * cross + K) / (energy + K))
        x, y = _downsample2(x), _downsample2(y)
    return float(np.mean(scores))


# --- feature extractors ----------------------------------------------------


class IdentityExtractor:
    """Downsampling pyramid over raw channels; no learned parameters.
    `stages` feeds DISTS, `embed` feeds FID/KID."""

    def __init__(self, n_stages: int = 3, embed_size: int = 8):
        self.n_stages = n_stages
        self.embed_size = embed_size

    def stages(self, image: np.ndarray):
        arr = np.asarray(image, dtype=np.float64)
        if np.issubdtype(np.asarray(image).dtype, np.integer):
            arr = arr / 255.0
        if arr.ndim == 2:
            arr = arr[..., None]
        maps = np.moveaxis(arr, -1, 0)  # (C,H,W)
        out = [maps]
        for _ in range(self.n_stages - 1):
            maps = np.stack([_downsample2(m) for m in maps])
            out.append(maps)
        return out

    def embed(self, image: np.ndarray) -> np.ndarray:
        g = to_luma(image)
        while min(g.shape) > self.embed_size:
            g = _downsample2(g)
        return g.reshape(-1)


def dists(x, y, extractor, alpha: float = 0.5, beta: float = 0.5) -> float:
    """1 - sum over feature maps of (alpha*texture + beta*structure) with
    SSIM-style stabilized ratios over global per-map statistics; map weights
    are uniform so the total weight mass alpha+beta must be 1."""
    if alpha < 0 or beta < 0 or abs(alpha + beta - 1.0) > 1e-9:
        raise ContractError("need alpha, beta >= 0 with alpha + beta = 1")
    sx, sy = extractor.stages(x), extractor.stages(y)
    if len(sx) != len(sy) or any(a.shape != b.shape for a, b in zip(sx, sy)):
        raise ContractError("extractor outputs differ between the two images")
    c1 = c2 = 1e-6
    terms = []
    for stage_x, stage_y in zip(sx, sy):
        for mx, my in zip(stage_x, stage_y):
            mu_x, mu_y = mx.mean(), my.mean()
            dx, dy = mx - mu_x, my - mu_y
            # shared expression shape keeps dists(x, x) exactly 0
            var_x, var_y = (dx * dx).mean(), (dy * dy).mean()
            cov = (dx * dy).mean()
            texture = (2 * mu_x * mu_y + c1) / (mu_x ** 2 + mu_y ** 2 + c1)
            structure = (2 * cov + c2) / (var_x + var_y + c2)
            terms.append(alpha * texture + beta * structure)
    return float(1.0 - np.mean(terms))


def feature_stats(images, extractor) -> FeatureStats:
    feats = np.stack([extractor.embed(im) for im in images])
    if feats.shape[0] < 2:
        raise ContractError("feature_stats needs at least 2 images")
    if not np.all(np.isfinite(feats)):
        raise ContractError("non-finite features")
    mu = feats.mean(axis=0)
    sigma = np.cov(feats, rowvar=False, ddof=1)
    sigma = np.atleast_2d(sigma)
    return FeatureStats(mu, (sigma + sigma.T) / 2.0, feats.shape[0])


def fid(a: FeatureStats, b: FeatureStats) -> float:
    """Frechet distance between Gaussian moment sets; the matrix square root
    comes from an eigendecomposition of the symmetrized covariance product
    with negative eigenvalues clipped at 0."""
    if not (np.all(np.isfinite(a.mu)) and np.all(np.isfinite(b.mu))
            and np.all(np.isfinite(a.sigma)) and np.all(np.isfinite(b.sigma))):
        raise ContractError("non-finite feature statistics")
    diff = a.mu - b.mu
    prod = a.sigma @ b.sigma
    prod = (prod + prod.T) / 2.0
    eigvals = np.linalg.eigvalsh(prod)
    tr_sqrt = np.sum(np.sqrt(np.clip(eigvals, 0.0, None)))
    value = diff @ diff + np.trace(a.sigma) + np.trace(b.sigma) - 2.0 * tr_sqrt
    return float(max(value, 0.0))


def _poly_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    dim = x.shape[1]
    return (x @ y.T / dim + 1.0) ** 3


def kid(features_a: np.ndarray, features_b: np.ndarray, block_size: int = 0) -> float:
    """Unbiased polynomial-kernel MMD^2 averaged over consecutive blocks; can
    be slightly negative by construction."""
    fa, fb = np.asarray(features_a, float), np.asarray(features_b, float)
    if fa.shape[0] < 2 or fb.shape[0] < 2:
        raise ContractError("kid needs at least 2 samples per set")
    n = min(fa.shape[0], fb.shape[0])
    block = block_size if block_size and block_size >= 2 else n
    estimates = []
    for start in range(0, n - block + 1, block):
        xa = fa[start:start + block]
        xb = fb[start:start + block]
        m, k = xa.shape[0], xb.shape[0]
        kxx = _poly_kernel(xa, xa)
        kyy = _poly_kernel(xb, xb)
        kxy = _poly_kernel(xa, xb)
        term_x = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
        term_y = (kyy.sum() - np.trace(kyy)) / (k * (k - 1))
        estimates.append(term_x + term_y - 2.0 * kxy.mean())
    return float(np.mean(estimates))


# --- batch evaluation ------------------------------------------------------


def evaluate_pairs(pred_dir: str, ref_dir: str, extractor,
                   config: MetricConfig = None) -> MetricReport:
    """Per-pair SSIM family and DISTS plus set-level FID/KID over directories
    with matching filename sets."""
    from . import flatshop

    config = config or MetricConfig()
    preds = sorted(f for f in os.listdir(pred_dir) if f.endswith(".png"))
    refs = sorted(f for f in os.listdir(ref_dir) if f.endswith(".png"))
    if preds != refs:
        missing = sorted(set(preds) ^ set(refs))
        raise ContractError(f"mismatched filename sets, unpaired: {missing}")
    if not preds:
        raise ContractError("no images to evaluate")
    per_pair = []
    pred_images, ref_images = [], []
    for name in preds:
        p = flatshop.load_png(os.path.join(pred_dir, name))
        r = flatshop.load_png(os.path.join(ref_dir, name))
        pred_images.append(p)
        ref_images.append(r)
        per_pair.append((
            name,
            ssim(p, r, config.ssim_window, config.ssim_sigma),
            ms_ssim(p, r, window=config.ssim_window, sigma=config.ssim_sigma),
            cw_ssim(p, r, config.cw_levels, config.cw_orientations, config.cw_K),
            dists(p, r, extractor, config.dists_alpha, config.dists_beta),
        ))
    arr = np.array([row[1:] for row in per_pair], dtype=np.float64)
    aggregate = {
        "ssim": float(arr[:, 0].mean()),
        "ms_ssim": float(arr[:, 1].mean()),
        "cw_ssim": float(arr[:, 2].mean()),
        "dists": float(arr[:, 3].mean()),
    }
    if len(pred_images) >= 2:
        aggregate["fid"] = fid(feature_stats(pred_images, extractor),
                               feature_stats(ref_images, extractor))
        fa = np.stack([extractor.embed(im) for im in pred_images])
        fb = np.stack([extractor.embed(im) for im in ref_images])
        aggregate["kid"] = kid(fa, fb, config.kid_block)
    else:
        aggregate["fid"] = float("nan")
        aggregate["kid"] = float("nan")
    return MetricReport(per_pair, aggregate, len(per_pair), config)


def write_report_csv(report: MetricReport, path: str) -> None:
    with open(path, "w") as f:
        f.write("pair_id,ssim,ms_ssim,cw_ssim,dists\n")
        for pair_id, s, ms, cw, d in report.per_pair:
            f.write(f"{pair_id},{s:.6f},{ms:.6f},{cw:.6f},{d:.6f}\n")
        f.write(f"fid,{report.aggregate['fid']:.6f}\n")
        f.write(f"kid,{report.aggregate['kid']:.6f}\n")
