"""Training loops, restoration pipeline, and evaluation."""

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np

from .data import load_sample
from .diffusion import Condition, make_training_example, restore
from .losses import LossWeights, au_loss, diffusion_loss, rec_loss, total_loss, un_loss
from .metrics import psnr, ssim
from .models import (
    DenoiserConfig,
    RefinerConfig,
    UEBConfig,
    build_denoiser,
    build_refiner,
    denoiser_forward,
    refiner_forward,
)
from .nn import adam_step, load_checkpoint, save_checkpoint
from .schedule import linear_schedule


class NumericError(RuntimeError):
    """Raised when training produces a non-finite loss."""


@dataclass
class Hyper:
    steps: int = 5000
    batch_size: int = 8
    lr: float = 3e-5
    betas: tuple = (0.9, 0.999)
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    S: int = 25
    eta: float = 1.0        # sampler stochasticity; 0 is the deterministic implicit path
    clamp_x0: bool = True   # clip the implied clean estimate each sampler step
    log_every: int = 50


def _to_nchw(img):
    """(H,W,C) or (H,W) float image -> (C,H,W) float32."""
    if img.ndim == 2:
        img = img[:, :, None]
    return np.ascontiguousarray(img.transpose(2, 0, 1).astype(np.float32))


def _to_hwc(arr):
    return np.asarray(arr).transpose(1, 2, 0)


def _load_arrays(manifest, records):
    cleans, degradeds, masks = [], [], []
    for rec in records:
        clean, degraded, mask = load_sample(manifest, rec)
        cleans.append(_to_nchw(clean))
        degradeds.append(_to_nchw(degraded))
        masks.append(mask[None].astype(np.float32))
    return np.stack(cleans), np.stack(degradeds), np.stack(masks)


def _write_log(path, header, rows):
    if path is None:
        return
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def save_model(store, cfg, path):
    save_checkpoint(store, path)
    with open(str(path) + ".cfg.json", "w") as f:
        json.dump({"kind": type(cfg).__name__, **asdict(cfg)}, f)


def load_model(path):
    store = load_checkpoint(path)
    with open(str(path) + ".cfg.json") as f:
        doc = json.load(f)
    kind = doc.pop("kind")
    if kind == "DenoiserConfig":
        cfg = DenoiserConfig(**doc)
    elif kind == "RefinerConfig":
        doc["ueb"] = UEBConfig(**doc["ueb"])
        cfg = RefinerConfig(**doc)
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    return store, cfg


# -- denoiser training -----------------------------------------------------


def train_denoiser(manifest, cfg, hyper, seed, records=None, log_path=None, init_store=None):
    """Train the conditional noise estimator.

    Each step draws a batch of samples, a uniform timestep and fresh
    Gaussian noise per sample, and takes one Adam step on the noise MSE.
    Returns (store, loss_history).
    """
    records = records if records is not None else manifest["samples"]
    cleans, degradeds, masks = _load_arrays(manifest, records)
    sched = linear_schedule(hyper.T, hyper.beta_start, hyper.beta_end)
    store = init_store if init_store is not None else build_denoiser(cfg, seed=seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 300]))
    n = len(records)
    history = []
    rows = []
    for step in range(hyper.steps):
        idx = rng.integers(0, n, size=hyper.batch_size)
        noisy, target, tsteps = [], [], []
        for i in idx:
            cond = Condition(degraded=degradeds[i], mask=masks[i])
            ex = make_training_example(cleans[i].astype(np.float64), cond, sched, rng)
            noisy.append(ex.noisy.astype(np.float32))
            target.append(ex.target_noise.astype(np.float32))
            tsteps.append(ex.timestep)
        noisy = np.stack(noisy)
        target = np.stack(target)
        eps_hat = denoiser_forward(
            store, cfg, noisy, degradeds[idx], masks[idx], np.asarray(tsteps)
        )
        loss = diffusion_loss(eps_hat, target)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericError(f"non-finite diffusion loss at step {step}")
        loss.backward()
        gnorm = store.grad_norm()
        adam_step(store, lr=hyper.lr, betas=hyper.betas)
        history.append(value)
        if step % hyper.log_every == 0 or step == hyper.steps - 1:
            rows.append([step, f"{value:.6f}", f"{gnorm:.6f}"])
    _write_log(log_path, ["step", "loss", "grad_norm"], rows)
    return store, history


# -- restoration pipeline --------------------------------------------------


def make_denoiser_fn(store, cfg):
    """Adapt the network to the sampler's (state, condition, t) callable."""

    def fn(J_t, condition, t):
        out = denoiser_forward(
            store, cfg, J_t.astype(np.float32), condition.degraded, condition.mask, t
        )
        return out.data.astype(np.float64)

    return fn


def restore_batch(degradeds, masks, store, cfg, sched, S, rng, trace=None,
                  eta=1.0, clamp_x0=True):
    """Subsequence-sampler restoration of an NCHW batch; returns NCHW in [0,1].

    Defaults to the stochastic stabilized sampler, which holds up much
    better under small trained denoisers than the deterministic path.
    """
    cond = Condition(degraded=degradeds, mask=masks)
    return restore(cond, make_denoiser_fn(store, cfg), sched, S, rng, trace=trace,
                   eta=eta, clamp_x0=clamp_x0)


def refine_batch(coarse, store, cfg, rng):
    """Run the refiner on an NCHW batch; returns (refined, per-scale maps)."""
    refined, per_scale = refiner_forward(store, cfg, coarse.astype(np.float32), rng=rng)
    return refined.data.astype(np.float64), per_scale


# -- refiner training -------------------------------------------------------


def train_refiner(
    manifest,
    den_store,
    den_cfg,
    cfg,
    hyper,
    seed,
    records=None,
    weights=None,
    coarse_cache=None,
    log_path=None,
):
    """Train the refiner on coarse restorations from a frozen denoiser.

    Coarse inputs are generated once up front (same sampler settings as
    evaluation) and reused across epochs. Returns (store, history of
    (total, rec, un) tuples).
    """
    records = records if records is not None else manifest["samples"]
    weights = weights if weights is not None else LossWeights()
    cleans, degradeds, masks = _load_arrays(manifest, records)
    sched = linear_schedule(hyper.T, hyper.beta_start, hyper.beta_end)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 400]))

    if coarse_cache is None:
        coarse_cache = np.empty_like(cleans)
        for lo in range(0, len(records), hyper.batch_size):
            sel = slice(lo, min(lo + hyper.batch_size, len(records)))
            coarse_cache[sel] = restore_batch(
                degradeds[sel], masks[sel], den_store, den_cfg, sched, hyper.S, rng,
                eta=hyper.eta, clamp_x0=hyper.clamp_x0,
            ).astype(np.float32)

    store = build_refiner(cfg, seed=seed)
    n = len(records)
    history = []
    rows = []
    for step in range(hyper.steps):
        idx = rng.integers(0, n, size=hyper.batch_size)
        refined, per_scale = refiner_forward(store, cfg, coarse_cache[idx], rng=rng)
        maps = per_scale[0]
        rec = rec_loss(cleans[idx], refined)
        au = au_loss(degradeds[idx], maps.j_a, maps.u_a, weights)
        un = un_loss(cleans[idx], maps.j_a, au)
        loss = total_loss(rec, un, weights.lam)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericError(f"non-finite refiner loss at step {step}")
        loss.backward()
        gnorm = store.grad_norm()
        adam_step(store, lr=hyper.lr, betas=hyper.betas)
        history.append((value, rec.item(), un.item()))
        if step % hyper.log_every == 0 or step == hyper.steps - 1:
            rows.append(
                [step, f"{value:.6f}", f"{rec.item():.6f}", f"{un.item():.6f}", f"{gnorm:.6f}"]
            )
    _write_log(log_path, ["step", "total", "rec", "un", "grad_norm"], rows)
    return store, history


# -- evaluation --------------------------------------------------------------


def default_restore_fn(den_store, den_cfg, ref_store, ref_cfg, hyper):
    sched = linear_schedule(hyper.T, hyper.beta_start, hyper.beta_end)

    def fn(clean, degraded, mask, rng):
        coarse = restore_batch(
            degraded[None], mask[None], den_store, den_cfg, sched, hyper.S, rng,
            eta=hyper.eta, clamp_x0=hyper.clamp_x0,
        )[0]
        if ref_store is None:
            return coarse, coarse
        refined, _ = refine_batch(coarse[None], ref_store, ref_cfg, rng)
        return coarse, refined[0]

    return fn


def evaluate(manifest, restore_fn, seed, records=None, out_csv=None, out_json=None):
    """Restore every sample and score PSNR/SSIM against the clean image.

    Emits one row per (sample, variant) with variants ``degraded`` (the
    corrupted input), ``coarse`` (diffusion only), and ``refined``
    (diffusion + refiner); the refined row reuses the same coarse output.
    Returns (rows, aggregates).
    """
    records = records if records is not None else manifest["samples"]
    rows = []
    for i, rec in enumerate(records):
        clean, degraded, mask = load_sample(manifest, rec)
        if clean.ndim == 2:
            clean = clean[:, :, None]
        rng = np.random.default_rng(np.random.SeedSequence([seed, 500, i]))
        coarse, refined = restore_fn(
            _to_nchw(clean).astype(np.float64),
            _to_nchw(degraded).astype(np.float64),
            mask[None].astype(np.float64),
            rng,
        )
        variants = {
            "degraded": degraded if degraded.ndim == 3 else degraded[:, :, None],
            "coarse": _to_hwc(coarse),
            "refined": _to_hwc(refined),
        }
        for name, img in variants.items():
            rows.append(
                {
                    "sample_id": rec["sample_id"],
                    "case_id": rec["case_id"],
                    "variant": name,
                    "psnr_db": psnr(clean, img),
                    "ssim": ssim(clean, img),
                }
            )
    aggregates = aggregate_rows(rows)
    if out_csv is not None:
        write_metric_rows(rows, out_csv)
    if out_json is not None:
        with open(out_json, "w") as f:
            json.dump(aggregates, f, indent=1, sort_keys=True)
    return rows, aggregates


def write_metric_rows(rows, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sample_id", "case_id", "variant", "psnr_db", "ssim"])
        for r in rows:
            writer.writerow(
                [r["sample_id"], r["case_id"], r["variant"], f"{r['psnr_db']:.6f}", f"{r['ssim']:.6f}"]
            )


def read_metric_rows(path):
    rows = []
    with open(path, newline="") as f:
        for r in csv.DictReader(f):
            rows.append(
                {
                    "sample_id": r["sample_id"],
                    "case_id": int(r["case_id"]),
                    "variant": r["variant"],
                    "psnr_db": float(r["psnr_db"]),
                    "ssim": float(r["ssim"]),
                }
            )
    return rows


def aggregate_rows(rows):
    """Per-case, per-variant mean PSNR/SSIM."""
    groups = {}
    for r in rows:
        groups.setdefault((r["case_id"], r["variant"]), []).append(r)
    out = {}
    for (case_id, variant), rs in sorted(groups.items()):
        out.setdefault(f"case_{case_id}", {})[variant] = {
            "psnr_db": float(np.mean([r["psnr_db"] for r in rs])),
            "ssim": float(np.mean([r["ssim"] for r in rs])),
            "count": len(rs),
        }
    return out
