"""The three networks: conditional noise estimator, uncertainty estimation
block (UEB), and the U-shaped refiner with uncertainty-guided modulation.

Parameters live in a flat ParamStore under dotted names so checkpoints are
a plain name -> array mapping. Forward functions take the store plus a
config and build autodiff graphs; conditioning enters the noise estimator
by channel concatenation of (noisy state, degraded image, mask).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import ParamStore, conv_init, linear_init, time_embedding


# -- conditional noise estimator -----------------------------------------


@dataclass
class DenoiserConfig:
    image_channels: int = 3
    base_channels: int = 32
    depth: int = 2              # number of down/up levels
    time_embed_dim: int = 64

    @property
    def in_channels(self):
        # noisy state + degraded image + 1 mask channel
        return 2 * self.image_channels + 1

    def level_channels(self, lvl):
        return self.base_channels * (2 ** lvl)


def _add_block(store, rng, prefix, c_in, c_out, ted):
    w, b = conv_init(rng, c_in, c_out)
    store.add(f"{prefix}.conv1.w", w)
    store.add(f"{prefix}.conv1.b", b)
    tw, tb = linear_init(rng, ted, c_out)
    store.add(f"{prefix}.temb.w", tw)
    store.add(f"{prefix}.temb.b", tb)
    w, b = conv_init(rng, c_out, c_out)
    store.add(f"{prefix}.conv2.w", w)
    store.add(f"{prefix}.conv2.b", b)


def _block(store, prefix, h, temb):
    h = ad.conv2d(h, store[f"{prefix}.conv1.w"], store[f"{prefix}.conv1.b"])
    if temb is not None:
        bias = ad.linear(temb, store[f"{prefix}.temb.w"], store[f"{prefix}.temb.b"])
        n, c = bias.shape
        h = h + ad.reshape(bias, (n, c, 1, 1))
    h = ad.relu(h)
    h = ad.conv2d(h, store[f"{prefix}.conv2.w"], store[f"{prefix}.conv2.b"])
    return ad.relu(h)


def build_denoiser(cfg, seed=0):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 100]))
    store = ParamStore()
    w, b = conv_init(rng, cfg.in_channels, cfg.base_channels)
    store.add("conv_in.w", w)
    store.add("conv_in.b", b)
    ted = cfg.time_embed_dim
    c_prev = cfg.base_channels
    for lvl in range(cfg.depth):
        c_lvl = cfg.level_channels(lvl)
        _add_block(store, rng, f"down{lvl}", c_prev, c_lvl, ted)
        c_prev = c_lvl
    _add_block(store, rng, "mid", c_prev, c_prev, ted)
    for lvl in reversed(range(cfg.depth)):
        c_lvl = cfg.level_channels(lvl)
        _add_block(store, rng, f"up{lvl}", c_prev + c_lvl, c_lvl, ted)
        c_prev = c_lvl
    # zero-init head: the network predicts exactly zero noise at init
    w, b = conv_init(rng, c_prev, cfg.image_channels, zero=True)
    store.add("conv_out.w", w)
    store.add("conv_out.b", b)
    return store


def denoiser_forward(store, cfg, noisy, degraded, mask, t):
    """Predict the injected noise.

    noisy/degraded: (N, C, H, W); mask: (N, 1, H, W); t: int or (N,) array.
    Inputs may be Tensors (to backprop into them) or plain arrays.
    """
    noisy = ad.wrap(noisy)
    degraded = ad.wrap(degraded, noisy.dtype)
    mask = ad.wrap(mask, noisy.dtype)
    n = noisy.shape[0]
    if noisy.shape[2] % (2 ** cfg.depth) or noisy.shape[3] % (2 ** cfg.depth):
        raise ValueError(f"spatial dims {noisy.shape[2:]} not divisible by 2^{cfg.depth}")
    t_arr = np.full(n, t) if np.isscalar(t) else np.asarray(t)
    temb = Tensor(time_embedding(t_arr, cfg.time_embed_dim).astype(noisy.dtype))

    x = ad.concat_channels([noisy, degraded, mask])
    h = ad.relu(ad.conv2d(x, store["conv_in.w"], store["conv_in.b"]))
    skips = []
    for lvl in range(cfg.depth):
        h = _block(store, f"down{lvl}", h, temb)
        skips.append(h)
        h = ad.avg_pool2(h)
    h = _block(store, "mid", h, temb)
    for lvl in reversed(range(cfg.depth)):
        h = ad.upsample2(h)
        h = ad.concat_channels([h, skips[lvl]])
        h = _block(store, f"up{lvl}", h, temb)
    return ad.conv2d(h, store["conv_out.w"], store["conv_out.b"])


# -- uncertainty estimation block ----------------------------------------


@dataclass
class UEBConfig:
    s_t: int = 8            # Monte-Carlo sample count
    q: float = 0.2          # channel-mask fraction in [0, 1)

    def validate(self):
        if self.s_t < 1:
            raise ValueError("s_t must be >= 1")
        if not (0.0 <= self.q < 1.0):
            raise ValueError("q must lie in [0, 1)")


@dataclass
class UncertaintyMaps:
    u_a: Tensor     # aleatoric, sigmoid output in (0,1), (N,1,H,W)
    u_e: Tensor     # epistemic, per-pixel variance >= 0, (N,1,H,W)
    u: Tensor       # clamp(u_e + u_a, 0, 1)
    j_a: Tensor     # mean prediction over the Monte-Carlo passes
    mask_sets: list = field(default_factory=list)  # channel subsets zeroed per pass


def add_ueb_params(store, rng, prefix, channels, out_channels):
    w, b = conv_init(rng, channels, channels)
    store.add(f"{prefix}.entry.w", w)
    store.add(f"{prefix}.entry.b", b)
    w, b = conv_init(rng, channels, 1)
    store.add(f"{prefix}.aleatoric.w", w)
    store.add(f"{prefix}.aleatoric.b", b)
    w, b = conv_init(rng, channels, out_channels)
    store.add(f"{prefix}.shared.w", w)
    store.add(f"{prefix}.shared.b", b)


def draw_mask_sets(channels, cfg, rng):
    """Pre-draw the channel subsets zeroed in each Monte-Carlo pass."""
    k = math.floor(cfg.q * channels)
    return [np.sort(rng.choice(channels, size=k, replace=False)) for _ in range(cfg.s_t)]


def ueb_forward(store, prefix, F, cfg, rng=None, mask_sets=None):
    """Two-branch uncertainty estimation on a feature map.

    A shared entry convolution feeds both branches. The upper branch
    produces the aleatoric map through a sigmoid; the lower branch runs
    s_t passes, each zeroing a random channel subset before a shared
    convolution and tanh. The pass mean is the approximate prediction and
    the per-pixel variance the epistemic map.
    """
    cfg.validate()
    F = ad.wrap(F)
    c = F.shape[1]
    if mask_sets is None:
        if rng is None:
            raise ValueError("ueb_forward needs an rng when mask_sets are not pre-drawn")
        mask_sets = draw_mask_sets(c, cfg, rng)
    h = ad.relu(ad.conv2d(F, store[f"{prefix}.entry.w"], store[f"{prefix}.entry.b"]))
    u_a = ad.sigmoid(ad.conv2d(h, store[f"{prefix}.aleatoric.w"], store[f"{prefix}.aleatoric.b"]))

    passes = []
    for subset in mask_sets:
        keep = np.ones((1, c, 1, 1), dtype=F.dtype)
        keep[0, subset, 0, 0] = 0.0
        hm = h * Tensor(keep)
        passes.append(ad.tanh(ad.conv2d(hm, store[f"{prefix}.shared.w"], store[f"{prefix}.shared.b"])))
    j_a = passes[0]
    for p in passes[1:]:
        j_a = j_a + p
    j_a = j_a * (1.0 / len(passes))
    if len(passes) == 1:
        u_e_chan = ad.mul(j_a, 0.0)
    else:
        sq = None
        for p in passes:
            d = p - j_a
            sq = d * d if sq is None else sq + d * d
        u_e_chan = sq * (1.0 / len(passes))
    u_e = ad.tmean(u_e_chan, axis=1, keepdims=True)
    u = ad.clip01(u_e + u_a)
    return UncertaintyMaps(u_a=u_a, u_e=u_e, u=u, j_a=j_a, mask_sets=mask_sets)


def modulate(F_in, F_out, U):
    """Uncertainty-guided blend: F_in*U + F_out*(1-U), U broadcast over channels."""
    F_in = ad.wrap(F_in)
    F_out = ad.wrap(F_out)
    U = ad.wrap(U, F_in.dtype)
    if F_in.shape != F_out.shape:
        raise ValueError(f"shape mismatch {F_in.shape} vs {F_out.shape}")
    one_minus = ad.add(ad.mul(U, -1.0), 1.0)
    return F_in * U + F_out * one_minus


# -- refiner -------------------------------------------------------------


@dataclass
class RefinerConfig:
    image_channels: int = 3
    base_channels: int = 32
    depth: int = 2
    ueb: UEBConfig = field(default_factory=UEBConfig)

    def level_channels(self, lvl):
        return self.base_channels * (2 ** lvl)


def build_refiner(cfg, seed=0):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 200]))
    store = ParamStore()
    w, b = conv_init(rng, cfg.image_channels, cfg.base_channels)
    store.add("conv_in.w", w)
    store.add("conv_in.b", b)
    for lvl in range(cfg.depth):
        c_lvl = cfg.level_channels(lvl)
        # feature-extraction block preserves channels so Eq-style modulation
        # blends co-shaped maps
        w, b = conv_init(rng, c_lvl, c_lvl)
        store.add(f"enc{lvl}.conv1.w", w)
        store.add(f"enc{lvl}.conv1.b", b)
        w, b = conv_init(rng, c_lvl, c_lvl)
        store.add(f"enc{lvl}.conv2.w", w)
        store.add(f"enc{lvl}.conv2.b", b)
        out_ch = cfg.image_channels if lvl == 0 else c_lvl
        add_ueb_params(store, rng, f"ueb{lvl}", c_lvl, out_ch)
        if lvl < cfg.depth - 1:
            w, b = conv_init(rng, c_lvl, cfg.level_channels(lvl + 1))
            store.add(f"trans{lvl}.w", w)
            store.add(f"trans{lvl}.b", b)
    for lvl in reversed(range(cfg.depth - 1)):
        c_lvl = cfg.level_channels(lvl)
        c_deep = cfg.level_channels(lvl + 1)
        w, b = conv_init(rng, c_deep + c_lvl, c_lvl)
        store.add(f"dec{lvl}.conv1.w", w)
        store.add(f"dec{lvl}.conv1.b", b)
        w, b = conv_init(rng, c_lvl, c_lvl)
        store.add(f"dec{lvl}.conv2.w", w)
        store.add(f"dec{lvl}.conv2.b", b)
    # zero-init residual head: refiner starts as the identity on its input
    w, b = conv_init(rng, cfg.base_channels, cfg.image_channels, zero=True)
    store.add("head.w", w)
    store.add("head.b", b)
    return store


def refiner_forward(store, cfg, coarse, rng=None, mask_sets_per_scale=None):
    """Refine a coarse restoration.

    coarse: (N, C, H, W) in [0, 1]. Returns (refined Tensor clamped to
    [0, 1], per-scale UncertaintyMaps list, finest to coarsest).
    Channel-mask subsets may be pre-drawn (one list per scale) for
    reproducibility; otherwise they are drawn from ``rng``.
    """
    coarse = ad.wrap(coarse)
    per_scale = []
    h = ad.relu(ad.conv2d(coarse, store["conv_in.w"], store["conv_in.b"]))
    skips = []
    for lvl in range(cfg.depth):
        f_in = h
        f = ad.relu(ad.conv2d(f_in, store[f"enc{lvl}.conv1.w"], store[f"enc{lvl}.conv1.b"]))
        f_out = ad.relu(ad.conv2d(f, store[f"enc{lvl}.conv2.w"], store[f"enc{lvl}.conv2.b"]))
        preset = None if mask_sets_per_scale is None else mask_sets_per_scale[lvl]
        maps = ueb_forward(store, f"ueb{lvl}", f_in, cfg.ueb, rng=rng, mask_sets=preset)
        per_scale.append(maps)
        h = modulate(f_in, f_out, maps.u)
        skips.append(h)
        if lvl < cfg.depth - 1:
            h = ad.avg_pool2(h)
            h = ad.relu(ad.conv2d(h, store[f"trans{lvl}.w"], store[f"trans{lvl}.b"]))
    for lvl in reversed(range(cfg.depth - 1)):
        h = ad.upsample2(h)
        h = ad.concat_channels([h, skips[lvl]])
        h = ad.relu(ad.conv2d(h, store[f"dec{lvl}.conv1.w"], store[f"dec{lvl}.conv1.b"]))
        h = ad.relu(ad.conv2d(h, store[f"dec{lvl}.conv2.w"], store[f"dec{lvl}.conv2.b"]))
    residual = ad.conv2d(h, store["head.w"], store["head.b"])
    refined = ad.clip01(coarse + residual)
    return refined, per_scale
