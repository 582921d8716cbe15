"""Physical mixed-degradation synthesis.

Images are float ndarrays of shape (H, W, C) with intensities in [0, 1];
masks, depth maps, and transmission maps are (H, W). Two compositing
primitives cover every degradation type: a masked blend toward the
atmospheric light (rain streaks, snow, raindrops) and a transmission
blend (haze). A recipe drives the full pipeline deterministically from a
single seed.
"""

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

# Scattering density per unit depth for the named haze tiers, assuming a
# depth map normalized to [0, 1].
HAZE_TIERS = {"light": 0.4, "moderate": 0.8, "heavy": 1.6}

MASK_TYPES = ("streak", "snow", "raindrop")


class ShapeError(ValueError):
    pass


@dataclass
class HazeParams:
    beta: float = HAZE_TIERS["moderate"]
    depth_source: str = "ramp"  # provided | ramp | constant
    depth_constant: float = 1.0


@dataclass
class StreakParams:
    count: int = 20
    length_px: float = 12.0
    angle_deg: float = 70.0
    thickness_px: float = 1.5


@dataclass
class SnowParams:
    flake_count: int = 30
    radius_range_px: tuple = (1.0, 2.5)


@dataclass
class RaindropParams:
    drop_count: int = 8
    radius_range_px: tuple = (2.0, 4.0)
    metaball_threshold: float = 1.0


@dataclass
class DegradationRecipe:
    """Declarative description of which degradations to apply.

    ``atmospheric_light`` may be a fixed scalar in [0, 1] or None, in
    which case A is drawn uniformly from [0.7, 1.0] using the recipe seed.
    """

    haze: HazeParams = None
    streaks: StreakParams = None
    snow: SnowParams = None
    raindrops: RaindropParams = None
    atmospheric_light: float = None
    seed: int = 0
    apply_order: tuple = MASK_TYPES

    def enabled_masks(self):
        by_name = {"streak": self.streaks, "snow": self.snow, "raindrop": self.raindrops}
        return [name for name in self.apply_order if by_name[name] is not None]

    def validate(self):
        n = len(self.enabled_masks())
        if n > 3:
            raise ValueError(f"at most 3 mask degradations, got {n}")
        for name in self.apply_order:
            if name not in MASK_TYPES:
                raise ValueError(f"unknown degradation type {name!r}")
        if self.haze is not None and self.haze.beta <= 0:
            raise ValueError(f"haze beta must be > 0, got {self.haze.beta}")
        if self.atmospheric_light is not None and not (0.0 <= self.atmospheric_light <= 1.0):
            raise ValueError("atmospheric_light must lie in [0, 1]")

    def to_json(self):
        doc = dataclasses.asdict(self)
        doc["apply_order"] = list(self.apply_order)
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        kwargs = {
            "atmospheric_light": doc.get("atmospheric_light"),
            "seed": doc.get("seed", 0),
            "apply_order": tuple(doc.get("apply_order", MASK_TYPES)),
        }
        if doc.get("haze") is not None:
            h = dict(doc["haze"])
            kwargs["haze"] = HazeParams(**h)
        if doc.get("streaks") is not None:
            kwargs["streaks"] = StreakParams(**doc["streaks"])
        if doc.get("snow") is not None:
            s = dict(doc["snow"])
            s["radius_range_px"] = tuple(s["radius_range_px"])
            kwargs["snow"] = SnowParams(**s)
        if doc.get("raindrops") is not None:
            r = dict(doc["raindrops"])
            r["radius_range_px"] = tuple(r["radius_range_px"])
            kwargs["raindrops"] = RaindropParams(**r)
        return cls(**kwargs)


# -- compositing primitives ----------------------------------------------


def _check_spatial(img, field, what):
    if img.shape[:2] != field.shape[:2]:
        raise ShapeError(f"{what} {field.shape[:2]} does not match image {img.shape[:2]}")


def _broadcast(field, img):
    return field[:, :, None] if img.ndim == 3 else field


def reflect_g(a, b, A):
    """Masked blend toward the atmospheric light: a*(1-b) + A*b, clamped."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_spatial(a, b, "mask")
    bb = _broadcast(b, a)
    return np.clip(a * (1.0 - bb) + A * bb, 0.0, 1.0)


def reflect_t(a, t, A):
    """Transmission blend: a*t + A*(1-t), clamped. With a clean image this
    is exactly the atmospheric scattering haze model."""
    a = np.asarray(a, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    _check_spatial(a, t, "transmission map")
    tt = _broadcast(t, a)
    return np.clip(a * tt + A * (1.0 - tt), 0.0, 1.0)


# Single-degradation models are the same masked blend under three names;
# kept as aliases so the shared formula is explicit.
rain_streak_composite = reflect_g
snow_composite = reflect_g
raindrop_composite = reflect_g


def transmission_from_depth(d, beta):
    """t = exp(-beta * d); strictly in (0, 1] for finite nonnegative depth."""
    if beta <= 0:
        raise ValueError(f"beta must be > 0, got {beta}")
    d = np.asarray(d, dtype=np.float64)
    if not np.all(np.isfinite(d)) or np.any(d < 0):
        raise ValueError("depth map must be finite and nonnegative")
    return np.exp(-beta * d)


def depth_ramp(h, w):
    """Default desk-scale depth: linear top-to-bottom ramp normalized to [0,1],
    far (depth 1) at the top of the frame."""
    col = np.linspace(1.0, 0.0, h)
    return np.repeat(col[:, None], w, axis=1)


# -- mask generators -----------------------------------------------------


def _threshold(field):
    return (field >= 0.5).astype(np.float64)


def gen_streak_mask(h, w, params, seed):
    """Binary mask of oriented line segments, anti-aliased then thresholded."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    field = np.zeros((h, w))
    half_len = params.length_px / 2.0
    theta = np.deg2rad(params.angle_deg)
    direction = np.array([np.sin(theta), np.cos(theta)])  # (dy, dx)
    ys, xs = np.mgrid[0:h, 0:w]
    for _ in range(params.count):
        cy = rng.uniform(0, h)
        cx = rng.uniform(0, w)
        # distance from each pixel center to the segment
        ry = ys - cy
        rx = xs - cx
        proj = np.clip(ry * direction[0] + rx * direction[1], -half_len, half_len)
        dy = ry - proj * direction[0]
        dx = rx - proj * direction[1]
        dist = np.hypot(dy, dx)
        cov = np.clip(params.thickness_px / 2.0 + 0.5 - dist, 0.0, 1.0)
        np.maximum(field, cov, out=field)
    return _threshold(field)


def gen_snow_mask(h, w, params, seed):
    """Binary mask of disk-shaped flakes with radii in the given range."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    field = np.zeros((h, w))
    r_lo, r_hi = params.radius_range_px
    ys, xs = np.mgrid[0:h, 0:w]
    for _ in range(params.flake_count):
        cy = rng.uniform(0, h)
        cx = rng.uniform(0, w)
        r = rng.uniform(r_lo, r_hi)
        dist = np.hypot(ys - cy, xs - cx)
        cov = np.clip(r + 0.5 - dist, 0.0, 1.0)
        np.maximum(field, cov, out=field)
    return _threshold(field)


def gen_raindrop_mask(h, w, params, seed):
    """Metaball raindrops: threshold the summed radial falloff field.

    Each drop contributes f_k(x) = r_k^2 / ||x - c_k||^2; overlapping
    drops merge where the total field exceeds the threshold.
    """
    if params.metaball_threshold <= 0:
        raise ValueError("metaball_threshold must be > 0")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
    field = np.zeros((h, w))
    r_lo, r_hi = params.radius_range_px
    ys, xs = np.mgrid[0:h, 0:w]
    for _ in range(params.drop_count):
        cy = rng.uniform(0, h)
        cx = rng.uniform(0, w)
        r = rng.uniform(r_lo, r_hi)
        d2 = (ys - cy) ** 2 + (xs - cx) ** 2
        field += r * r / np.maximum(d2, 1e-9)
    return (field >= params.metaball_threshold).astype(np.float64)


_GENERATORS = {
    "streak": ("streaks", gen_streak_mask),
    "snow": ("snow", gen_snow_mask),
    "raindrop": ("raindrops", gen_raindrop_mask),
}


# -- full pipeline -------------------------------------------------------


@dataclass
class MixedResult:
    degraded: np.ndarray
    masks: list  # [(type, mask)]
    transmission: np.ndarray  # None when haze disabled
    union_mask: np.ndarray
    atmospheric_light: float


def resolve_atmospheric_light(recipe):
    if recipe.atmospheric_light is not None:
        return float(recipe.atmospheric_light)
    rng = np.random.default_rng(np.random.SeedSequence([recipe.seed, 17]))
    return float(rng.uniform(0.7, 1.0))


def compose_mixed(J, recipe, depth=None):
    """Apply a full recipe to a clean image.

    Haze goes first via the transmission blend (skipped when disabled,
    equivalent to t = 1 everywhere), then each enabled mask degradation in
    ``recipe.apply_order``. All generators are seeded from the recipe seed,
    so the output is a pure function of (J, recipe, depth).
    """
    recipe.validate()
    J = np.asarray(J, dtype=np.float64)
    h, w = J.shape[:2]
    A = resolve_atmospheric_light(recipe)

    transmission = None
    img = J
    if recipe.haze is not None:
        hz = recipe.haze
        if hz.depth_source == "provided":
            if depth is None:
                raise ValueError("recipe requires a provided depth map")
            d = np.asarray(depth, dtype=np.float64)
            _check_spatial(J, d, "depth map")
        elif hz.depth_source == "ramp":
            d = depth_ramp(h, w)
        elif hz.depth_source == "constant":
            d = np.full((h, w), hz.depth_constant)
        else:
            raise ValueError(f"unknown depth_source {hz.depth_source!r}")
        transmission = transmission_from_depth(d, hz.beta)
        img = reflect_t(img, transmission, A)

    masks = []
    union = np.zeros((h, w))
    for name in recipe.enabled_masks():
        attr, gen = _GENERATORS[name]
        mask = gen(h, w, getattr(recipe, attr), recipe.seed)
        img = reflect_g(img, mask, A)
        masks.append((name, mask))
        np.maximum(union, mask, out=union)

    return MixedResult(
        degraded=img,
        masks=masks,
        transmission=transmission,
        union_mask=union,
        atmospheric_light=A,
    )


def predict_mask_baseline(I, A, threshold):
    """Residual-threshold mask predictor: flag pixels near the atmospheric
    light. Degraded pixels are replaced by A, so |I - A| is small there."""
    if not (0.0 < threshold < 1.0):
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    I = np.asarray(I, dtype=np.float64)
    dist = np.abs(I - A)
    if I.ndim == 3:
        dist = dist.max(axis=2)
    return (dist < threshold).astype(np.float64)
