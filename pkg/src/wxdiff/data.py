"""Dataset synthesis: procedural clean images, case recipes, PNG IO, and
reproducible manifests."""

import enum
import hashlib
import json
from pathlib import Path

import numpy as np
from PIL import Image

from .degrade import (
    HAZE_TIERS,
    DegradationRecipe,
    HazeParams,
    RaindropParams,
    SnowParams,
    StreakParams,
    compose_mixed,
)


class CaseId(enum.IntEnum):
    """The six mixed-degradation evaluation cases."""

    RAIN = 1                     # rain streak
    RAIN_SNOW = 2                # rain streak + snow
    RAIN_LIGHT_HAZE = 3          # rain streak + light haze
    RAIN_HEAVY_HAZE = 4          # rain streak + heavy haze
    RAIN_MOD_HAZE_DROP = 5       # rain streak + moderate haze + raindrop
    RAIN_SNOW_MOD_HAZE_DROP = 6  # rain streak + snow + moderate haze + raindrop


def case_recipe(case, seed, size=32):
    """Recipe for one of the six cases, scaled to the given image size.

    Mask-generator parameters scale with image area so coverage fractions
    stay comparable across sizes (reference size 32).
    """
    case = CaseId(case)
    s = size / 32.0
    streaks = StreakParams(
        count=max(1, round(14 * s * s)), length_px=10.0 * s, angle_deg=70.0, thickness_px=1.4
    )
    snow = SnowParams(flake_count=max(1, round(18 * s * s)), radius_range_px=(1.0, 2.2 * s))
    drops = RaindropParams(
        drop_count=max(1, round(5 * s * s)), radius_range_px=(1.5 * s, 3.0 * s)
    )
    kwargs = {"streaks": streaks, "seed": int(seed)}
    if case == CaseId.RAIN_SNOW:
        kwargs["snow"] = snow
    elif case == CaseId.RAIN_LIGHT_HAZE:
        kwargs["haze"] = HazeParams(beta=HAZE_TIERS["light"])
    elif case == CaseId.RAIN_HEAVY_HAZE:
        kwargs["haze"] = HazeParams(beta=HAZE_TIERS["heavy"])
    elif case == CaseId.RAIN_MOD_HAZE_DROP:
        kwargs["haze"] = HazeParams(beta=HAZE_TIERS["moderate"])
        kwargs["raindrops"] = drops
    elif case == CaseId.RAIN_SNOW_MOD_HAZE_DROP:
        kwargs["haze"] = HazeParams(beta=HAZE_TIERS["moderate"])
        kwargs["snow"] = snow
        kwargs["raindrops"] = drops
    return DegradationRecipe(**kwargs)


# -- procedural clean sources --------------------------------------------


def _gradient_field(rng, h, w, c):
    ys, xs = np.mgrid[0:h, 0:w]
    ys = ys / max(h - 1, 1)
    xs = xs / max(w - 1, 1)
    img = np.empty((h, w, c))
    for ch in range(c):
        gx, gy = rng.uniform(-1, 1, size=2)
        phase = rng.uniform(0, 1)
        img[..., ch] = gx * xs + gy * ys + phase
    lo, hi = img.min(), img.max()
    return (img - lo) / max(hi - lo, 1e-9)


def _shape_collage(rng, h, w, c):
    img = _gradient_field(rng, h, w, c) * 0.5
    ys, xs = np.mgrid[0:h, 0:w]
    for _ in range(rng.integers(2, 5)):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        r = rng.uniform(0.15, 0.35) * min(h, w)
        color = rng.uniform(0.1, 0.9, size=c)
        if rng.random() < 0.5:
            inside = np.hypot(ys - cy, xs - cx) <= r
        else:
            inside = (np.abs(ys - cy) <= r) & (np.abs(xs - cx) <= r)
        img[inside] = color
    return np.clip(img, 0.0, 1.0)


def _checker_texture(rng, h, w, c):
    period = int(rng.integers(4, 9))
    ys, xs = np.mgrid[0:h, 0:w]
    tile = ((ys // period + xs // period) % 2).astype(np.float64)
    lo = rng.uniform(0.05, 0.3)
    hi = rng.uniform(0.5, 0.8)
    base = lo + (hi - lo) * tile
    img = np.repeat(base[:, :, None], c, axis=2)
    tint = rng.uniform(0.9, 1.1, size=c)
    return np.clip(img * tint, 0.0, 1.0)


_CLEAN_KINDS = (_gradient_field, _shape_collage, _checker_texture)


def clean_image(rng, h=32, w=32, c=3):
    """Random procedural clean image: gradient field, shape collage, or
    checker texture."""
    kind = _CLEAN_KINDS[rng.integers(len(_CLEAN_KINDS))]
    return kind(rng, h, w, c)


# -- PNG IO ---------------------------------------------------------------


def save_image(img, path):
    """Write a [0,1] float image (H,W,C) or map (H,W) as 8-bit PNG."""
    arr = np.clip(np.asarray(img), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[:, :, 0]
    Image.fromarray(data).save(path)


def load_image(path):
    """Read a PNG back to [0,1] floats; grayscale stays (H,W)."""
    arr = np.asarray(Image.open(path))
    return arr.astype(np.float64) / 255.0


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- dataset synthesis ----------------------------------------------------


def sample_seed(root_seed, index):
    """Derived per-sample seed so batch synthesis order does not matter."""
    return int(np.random.SeedSequence([root_seed, index]).generate_state(1)[0])


def synth_dataset(out_dir, cases, count_per_case, seed, size=32, clean_dir=None):
    """Synthesize a degraded/clean paired dataset and write its manifest.

    Clean sources are procedural unless ``clean_dir`` points at a directory
    of PNGs (cycled through deterministically). Every file written is
    hashed into the manifest. Returns the manifest dict.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    clean_pool = None
    if clean_dir is not None:
        clean_pool = sorted(Path(clean_dir).glob("*.png"))
        if not clean_pool:
            raise ValueError(f"no PNG files in {clean_dir}")
    records = []
    index = 0
    for case in cases:
        case = CaseId(case)
        for k in range(count_per_case):
            sseed = sample_seed(seed, index)
            rng = np.random.default_rng(sseed)
            if clean_pool is not None:
                clean = load_image(clean_pool[index % len(clean_pool)])
                if clean.ndim == 2:
                    clean = clean[:, :, None]
            else:
                clean = clean_image(rng, size, size)
            recipe = case_recipe(case, sseed, size=clean.shape[0])
            result = compose_mixed(clean, recipe)

            stem = f"sample_{index:05d}"
            paths = {
                "clean": f"{stem}_clean.png",
                "degraded": f"{stem}_degraded.png",
                "union_mask": f"{stem}_mask_union.png",
            }
            save_image(clean, out / paths["clean"])
            save_image(result.degraded, out / paths["degraded"])
            save_image(result.union_mask, out / paths["union_mask"])
            mask_paths = {}
            for name, mask in result.masks:
                p = f"{stem}_mask_{name}.png"
                save_image(mask, out / p)
                mask_paths[name] = p
            files = dict(paths)
            files.update({f"mask_{n}": p for n, p in mask_paths.items()})
            records.append(
                {
                    "sample_id": stem,
                    "case_id": int(case),
                    "seed": sseed,
                    "recipe": json.loads(recipe.to_json()),
                    "atmospheric_light": result.atmospheric_light,
                    "files": files,
                    "digests": {k: _sha256(out / p) for k, p in files.items()},
                }
            )
            index += 1
    manifest = {
        "seed": int(seed),
        "size": int(size),
        "cases": [int(CaseId(c)) for c in cases],
        "count_per_case": int(count_per_case),
        "samples": records,
    }
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1)
    return manifest


def load_manifest(path):
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    with open(path) as f:
        manifest = json.load(f)
    manifest["_dir"] = str(path.parent)
    return manifest


def verify_manifest(manifest):
    """Check that every referenced file exists and matches its digest."""
    base = Path(manifest["_dir"])
    for rec in manifest["samples"]:
        for key, rel in rec["files"].items():
            p = base / rel
            if not p.exists():
                raise FileNotFoundError(f"{rec['sample_id']}: missing {rel}")
            if _sha256(p) != rec["digests"][key]:
                raise ValueError(f"{rec['sample_id']}: digest mismatch for {rel}")


def load_sample(manifest, rec):
    """Load one record as float arrays: (clean, degraded, union_mask)."""
    base = Path(manifest["_dir"])
    clean = load_image(base / rec["files"]["clean"])
    degraded = load_image(base / rec["files"]["degraded"])
    mask = load_image(base / rec["files"]["union_mask"])
    return clean, degraded, mask
