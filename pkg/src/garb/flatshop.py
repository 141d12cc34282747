"""FlatShop: procedural paired (person, flat garment) image generator.

Every render is a pure function of (seed, class, size). The flat garment and
the garment painted on the person share pixel-identical local patterns: the
on-person slot is a pure integer translation of the flat placement, which is
what makes the toy try-on stage exactly invertible.
"""

from __future__ import annotations

import colorsys
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
from PIL import Image

from .errors import ConfigurationError, ContractError

CLASS_NAMES = ("upper_body", "lower_body", "dresses")
CLASS_IDS = {name: i + 1 for i, name in enumerate(CLASS_NAMES)}

REFERENCE_BG = (235, 235, 235)
GARMENT_BG = (255, 255, 255)

# All coordinates are sixteenths of the image size S (S must be divisible by
# 16 so every entry lands on an integer pixel). Rects are (x0, y0, x1, y1),
# end-exclusive. "slot" is the on-person placement, "flat" the catalog one;
# the two rects of a class always have equal width/height.
GEOMETRY = {
    "head_center": (8, 2),
    "head_radius_frac": 1.0,  # sixteenths
    "torso": (5, 3, 11, 8),
    "arm_left": (4, 4, 5, 8),
    "arm_right": (11, 4, 12, 8),
    "leg_left": (6, 8, 7, 15),
    "leg_right": (9, 8, 10, 15),
    "slot": {
        "upper_body": (5, 4, 11, 8),
        "lower_body": (6, 8, 10, 13),
        "dresses": (5, 4, 11, 12),
    },
    "flat": {
        "upper_body": (5, 6, 11, 10),
        "lower_body": (6, 6, 10, 11),
        "dresses": (5, 4, 11, 12),
    },
}

PATTERN_KINDS = ("flat", "stripes", "checker")

# 3x5 glyph bitmaps for the optional two-letter logo.
_GLYPHS = {
    "A": ["010", "101", "111", "101", "101"],
    "B": ["110", "101", "110", "101", "110"],
    "C": ["011", "100", "100", "100", "011"],
    "E": ["111", "100", "110", "100", "111"],
    "F": ["111", "100", "110", "100", "100"],
    "H": ["101", "101", "111", "101", "101"],
    "I": ["111", "010", "010", "010", "111"],
    "L": ["100", "100", "100", "100", "111"],
    "O": ["010", "101", "101", "101", "010"],
    "T": ["111", "010", "010", "010", "010"],
    "X": ["101", "101", "010", "101", "101"],
    "Z": ["111", "001", "010", "100", "111"],
}
_LETTERS = sorted(_GLYPHS)


@dataclass(frozen=True)
class GarmentClass:
    id: int
    name: str


def garment_class(name_or_id) -> GarmentClass:
    if isinstance(name_or_id, GarmentClass):
        return name_or_id
    if isinstance(name_or_id, int):
        if not 1 <= name_or_id <= 3:
            raise ContractError(f"garment class id must be in 1..3, got {name_or_id}")
        return GarmentClass(name_or_id, CLASS_NAMES[name_or_id - 1])
    if name_or_id not in CLASS_IDS:
        raise ContractError(f"unknown garment class {name_or_id!r}")
    return GarmentClass(CLASS_IDS[name_or_id], name_or_id)


@dataclass
class ImagePair:
    reference: np.ndarray  # uint8 HxWx3
    garment: np.ndarray  # uint8 HxWx3, white outside the garment mask
    garment_class: GarmentClass
    seed: int
    person_params: dict


@dataclass(frozen=True)
class ManifestEntry:
    reference_file: str
    garment_file: str
    class_name: str
    seed: int


@dataclass
class DatasetManifest:
    root_path: str
    entries: list
    split: str
    image_size: int


@dataclass
class PairingFile:
    lines: list  # of (source_person_file, garment_owner_file, class_name)


def _hsv_u8(h, s, v):
    r, g, b = colorsys.hsv_to_rgb(h % 1.0, s, v)
    return (int(round(r * 255)), int(round(g * 255)), int(round(b * 255)))


def _sample_slot(rng, hue):
    kind = PATTERN_KINDS[rng.integers(len(PATTERN_KINDS))]
    sat = 0.55 + 0.4 * rng.random()
    val = 0.5 + 0.4 * rng.random()
    base = _hsv_u8(hue, sat, val)
    alt = _hsv_u8(hue, sat, val * 0.55)
    logo = bool(rng.random() < 0.4)
    letters = "".join(_LETTERS[rng.integers(len(_LETTERS))] for _ in range(2))
    return {
        "kind": kind,
        "base": base,
        "alt": alt,
        "hue": float(hue % 1.0),
        "logo": logo,
        "letters": letters,
        "logo_color": (40, 40, 40),
    }


def person_params_for(seed: int, size: int) -> dict:
    """Pose/color record for a person; shared by all classes of one seed."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(size), 0xF1A7]))
    skin_hue = 0.06 + 0.03 * rng.random()
    skin = _hsv_u8(skin_hue, 0.25 + 0.2 * rng.random(), 0.55 + 0.35 * rng.random())
    hue_u = rng.random()
    hue_l = (hue_u + 1.0 / 3.0 + rng.random() / 3.0) % 1.0
    hue_d = rng.random()
    return {
        "skin": skin,
        "slots": {
            "upper_body": _sample_slot(rng, hue_u),
            "lower_body": _sample_slot(rng, hue_l),
            "dresses": _sample_slot(rng, hue_d),
        },
    }


def _rect_px(rect, size):
    u = size // 16
    x0, y0, x1, y1 = rect
    return x0 * u, y0 * u, x1 * u, y1 * u


def _paint_garment(canvas: np.ndarray, rect, params: dict, size: int) -> None:
    """Fill rect with the slot pattern, indexed in rect-local coordinates."""
    x0, y0, x1, y1 = _rect_px(rect, size)
    h, w = y1 - y0, x1 - x0
    yy, xx = np.mgrid[0:h, 0:w]
    block = np.empty((h, w, 3), dtype=np.uint8)
    block[...] = params["base"]
    cell = max(2, size // 16)
    if params["kind"] == "stripes":
        mask = (yy // cell) % 2 == 1
        block[mask] = params["alt"]
    elif params["kind"] == "checker":
        mask = ((yy // cell) + (xx // cell)) % 2 == 1
        block[mask] = params["alt"]
    if params["logo"]:
        _paint_logo(block, params["letters"], params["logo_color"], size)
    canvas[y0:y1, x0:x1] = block


def _paint_logo(block: np.ndarray, letters: str, color, size: int) -> None:
    scale = max(1, size // 32)
    glyph_w, glyph_h, gap = 3 * scale, 5 * scale, scale
    total_w = glyph_w * len(letters) + gap * (len(letters) - 1)
    h, w = block.shape[:2]
    if total_w > w or glyph_h > h:
        return
    x = (w - total_w) // 2
    y = (h - glyph_h) // 2
    for ch in letters:
        bitmap = _GLYPHS[ch]
        for r, row in enumerate(bitmap):
            for c, bit in enumerate(row):
                if bit == "1":
                    block[y + r * scale:y + (r + 1) * scale,
                          x + c * scale:x + (c + 1) * scale] = color
        x += glyph_w + gap


def _paint_rect(canvas, rect, size, color):
    x0, y0, x1, y1 = _rect_px(rect, size)
    canvas[y0:y1, x0:x1] = color


def render_person_base(params: dict, size: int) -> np.ndarray:
    """Person silhouette (skin only, no garments) on the reference background."""
    canvas = np.empty((size, size, 3), dtype=np.uint8)
    canvas[...] = REFERENCE_BG
    skin = params["skin"]
    u = size // 16
    cx, cy = GEOMETRY["head_center"]
    r = int(GEOMETRY["head_radius_frac"] * u)
    yy, xx = np.mgrid[0:size, 0:size]
    head = (xx - cx * u) ** 2 + (yy - cy * u) ** 2 <= r * r
    canvas[head] = skin
    for key in ("torso", "arm_left", "arm_right", "leg_left", "leg_right"):
        _paint_rect(canvas, GEOMETRY[key], size, skin)
    return canvas


def render_reference(params: dict, klass: GarmentClass, size: int) -> np.ndarray:
    canvas = render_person_base(params, size)
    if klass.name == "dresses":
        _paint_garment(canvas, GEOMETRY["slot"]["dresses"], params["slots"]["dresses"], size)
    else:
        _paint_garment(canvas, GEOMETRY["slot"]["upper_body"], params["slots"]["upper_body"], size)
        _paint_garment(canvas, GEOMETRY["slot"]["lower_body"], params["slots"]["lower_body"], size)
    return canvas


def render_flat_garment(params: dict, klass: GarmentClass, size: int) -> np.ndarray:
    canvas = np.empty((size, size, 3), dtype=np.uint8)
    canvas[...] = GARMENT_BG
    _paint_garment(canvas, GEOMETRY["flat"][klass.name], params["slots"][klass.name], size)
    return canvas


def render_pair(seed: int, klass, size: int) -> ImagePair:
    klass = garment_class(klass)
    if size < 32 or size % 16 != 0:
        raise ConfigurationError(f"size must be >= 32 and divisible by 16, got {size}")
    if seed < 0:
        raise ConfigurationError(f"seed must be >= 0, got {seed}")
    params = person_params_for(seed, size)
    return ImagePair(
        reference=render_reference(params, klass, size),
        garment=render_flat_garment(params, klass, size),
        garment_class=klass,
        seed=seed,
        person_params=params,
    )


def try_on(person_image: np.ndarray, garment_image: np.ndarray, klass, size: int) -> np.ndarray:
    """Toy try-on: translate the flat garment's non-white pixels into the
    person's slot rect. Exact inverse of the generator's garment placement."""
    klass = garment_class(klass)
    fx0, fy0, fx1, fy1 = _rect_px(GEOMETRY["flat"][klass.name], size)
    sx0, sy0, sx1, sy1 = _rect_px(GEOMETRY["slot"][klass.name], size)
    patch = garment_image[fy0:fy1, fx0:fx1]
    mask = np.any(patch != 255, axis=-1)
    out = person_image.copy()
    region = out[sy0:sy1, sx0:sx1]
    region[mask] = patch[mask]
    return out


# --- preprocessing ---------------------------------------------------------


def pad_to_square(image: np.ndarray, fill=(255, 255, 255)) -> np.ndarray:
    h, w = image.shape[:2]
    if h < 1 or w < 1:
        raise ContractError("empty image")
    s = max(h, w)
    if h == w:
        return image.copy()
    out = np.empty((s, s, 3), dtype=image.dtype)
    out[...] = fill
    top = (s - h) // 2
    left = (s - w) // 2
    out[top:top + h, left:left + w] = image
    return out


def resize_bilinear(image: np.ndarray, target: int) -> np.ndarray:
    """Bilinear resize of a square image, corners-aligned: source coordinate
    of output index i is i*(S-1)/(T-1)."""
    h, w = image.shape[:2]
    if h != w:
        raise ContractError(f"resize_bilinear requires a square input, got {h}x{w}")
    if target == h:
        return image.copy()
    src = image.astype(np.float64)
    if target == 1:
        coords = np.array([0.0])
    else:
        coords = np.arange(target) * (h - 1) / (target - 1)
    lo = np.floor(coords).astype(int)
    hi = np.minimum(lo + 1, h - 1)
    frac = coords - lo
    # rows then columns (separable)
    rows = src[lo] * (1 - frac)[:, None, None] + src[hi] * frac[:, None, None]
    out = (rows[:, lo] * (1 - frac)[None, :, None]
           + rows[:, hi] * frac[None, :, None])
    if np.issubdtype(image.dtype, np.integer):
        return np.clip(np.rint(out), 0, 255).astype(image.dtype)
    return out.astype(image.dtype)


# --- hue oracle ------------------------------------------------------------


def rgb_to_hsv_array(rgb: np.ndarray) -> np.ndarray:
    """Vectorized uint8 RGB -> HSV in [0,1]."""
    arr = rgb.astype(np.float64) / 255.0
    r, g, b = arr[..., 0], arr[..., 1], arr[..., 2]
    maxc = arr.max(axis=-1)
    minc = arr.min(axis=-1)
    v = maxc
    delta = maxc - minc
    s = np.where(maxc > 0, delta / np.maximum(maxc, 1e-12), 0.0)
    h = np.zeros_like(maxc)
    nz = delta > 0
    rc = np.where(nz, (maxc - r) / np.maximum(delta, 1e-12), 0.0)
    gc = np.where(nz, (maxc - g) / np.maximum(delta, 1e-12), 0.0)
    bc = np.where(nz, (maxc - b) / np.maximum(delta, 1e-12), 0.0)
    h = np.where(maxc == r, bc - gc, h)
    h = np.where((maxc == g) & (maxc != r), 2.0 + rc - bc, h)
    h = np.where((maxc == b) & (maxc != r) & (maxc != g), 4.0 + gc - rc, h)
    h = (h / 6.0) % 1.0
    return np.stack([h, s, v], axis=-1)


def dominant_hue(image: np.ndarray, mask: Optional[np.ndarray] = None,
                 bins: int = 36) -> Optional[float]:
    """Mode of the hue histogram over saturated, non-extreme pixels.
    Returns hue in [0,1) or None when no pixel qualifies."""
    hsv = rgb_to_hsv_array(image)
    keep = (hsv[..., 1] > 0.25) & (hsv[..., 2] > 0.1) & (hsv[..., 2] < 0.99)
    if mask is not None:
        keep &= mask
    hues = hsv[..., 0][keep]
    if hues.size == 0:
        return None
    hist, edges = np.histogram(hues, bins=bins, range=(0.0, 1.0))
    i = int(np.argmax(hist))
    return float((edges[i] + edges[i + 1]) / 2.0)


def hue_distance(a: float, b: float) -> float:
    """Circular distance between hues in [0,1)."""
    d = abs(a - b) % 1.0
    return min(d, 1.0 - d)


# --- dataset & manifests ---------------------------------------------------


def write_manifest(manifest: DatasetManifest, path: str) -> None:
    with open(path, "w") as f:
        for e in manifest.entries:
            f.write(f"{e.reference_file}\t{e.garment_file}\t{e.class_name}\t{e.seed}\n")


def read_manifest(path: str, split: str = "train",
                  image_size: Optional[int] = None) -> DatasetManifest:
    root = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path) as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            ref, gar, cname, seed = line.split("\t")
            entries.append(ManifestEntry(ref, gar, cname, int(seed)))
    if image_size is None and entries:
        with Image.open(os.path.join(root, entries[0].reference_file)) as im:
            image_size = im.size[0]
    return DatasetManifest(root, entries, split, image_size or 0)


def save_png(image: np.ndarray, path: str) -> None:
    Image.fromarray(image, mode="RGB").save(path, format="PNG")


def load_png(path: str) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def generate_dataset(n_train: int, n_test: int, size: int, seed0: int, out: str):
    """Write train/test splits under `out` and return both manifests.

    Classes cycle 1,2,3 so each split is balanced within one sample; test
    seeds continue after the train range so the two sets never overlap.
    """
    if n_train < 1 or n_test < 1:
        raise ConfigurationError("n_train and n_test must be >= 1")
    if size < 32 or size % 16 != 0:
        raise ConfigurationError(f"size must be >= 32 and divisible by 16, got {size}")
    os.makedirs(os.path.join(out, "images"), exist_ok=True)
    manifests = []
    offset = 0
    for split, n in (("train", n_train), ("test", n_test)):
        entries = []
        for i in range(n):
            seed = seed0 + offset + i
            klass = garment_class(i % 3 + 1)
            pair = render_pair(seed, klass, size)
            ref_name = f"images/{split}_{i:05d}_ref.png"
            gar_name = f"images/{split}_{i:05d}_gar.png"
            save_png(pair.reference, os.path.join(out, ref_name))
            save_png(pair.garment, os.path.join(out, gar_name))
            entries.append(ManifestEntry(ref_name, gar_name, klass.name, seed))
        manifest = DatasetManifest(os.path.abspath(out), entries, split, size)
        write_manifest(manifest, os.path.join(out, f"manifest_{split}.tsv"))
        manifests.append(manifest)
        offset += n
    return tuple(manifests)


def make_p2p_pairs(manifest: DatasetManifest, seed: int) -> PairingFile:
    n = len(manifest.entries)
    if n < 2:
        raise ContractError("p2p pairing needs at least 2 manifest entries")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x9A1B]))
    lines = []
    for i, e in enumerate(manifest.entries):
        j = int(rng.integers(n - 1))
        if j >= i:
            j += 1
        owner = manifest.entries[j]
        lines.append((e.reference_file, owner.reference_file, owner.class_name))
    return PairingFile(lines)


def write_pairing_file(pairing: PairingFile, path: str) -> None:
    with open(path, "w") as f:
        for src, owner, cname in pairing.lines:
            f.write(f"{src}\t{owner}\t{cname}\n")


def read_pairing_file(path: str) -> PairingFile:
    lines = []
    with open(path) as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            src, owner, cname = line.split("\t")
            if cname not in CLASS_IDS:
                raise ContractError(f"invalid class name {cname!r} in pairing file")
            lines.append((src, owner, cname))
    return PairingFile(lines)
