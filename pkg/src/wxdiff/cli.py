"""Command-line entry point: one verb per pipeline stage."""

import json
import sys
from pathlib import Path

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

import click
import numpy as np

from .data import CaseId, load_image, load_manifest, save_image, synth_dataset
from .degrade import predict_mask_baseline
from .diffusion import write_trace
from .losses import LossWeights
from .models import DenoiserConfig, RefinerConfig, UEBConfig
from .schedule import linear_schedule
from .train import (
    Hyper,
    NumericError,
    default_restore_fn,
    evaluate,
    load_model,
    restore_batch,
    refine_batch,
    save_model,
    train_denoiser,
    train_refiner,
    _to_nchw,
    _to_hwc,
)

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _load_config(path):
    p = Path(path)
    if p.suffix == ".toml":
        with open(p, "rb") as f:
            return tomllib.load(f)
    with open(p) as f:
        return json.load(f)


@click.group()
@click.option("--config", type=click.Path(exists=True), default=None,
              help="TOML or JSON file with per-command defaults; flags override.")
@click.pass_context
def main(ctx, config):
    """Mixed-weather degradation synthesis and diffusion restoration."""
    if config is not None:
        ctx.default_map = _load_config(config)


def _parse_cases(text):
    try:
        return [CaseId(int(c)) for c in text.split(",") if c.strip()]
    except ValueError as e:
        raise click.UsageError(f"bad case list {text!r}: {e}")


def _split(manifest, holdout):
    records = manifest["samples"]
    if holdout <= 0:
        return records, records
    if holdout >= len(records):
        raise click.UsageError("holdout must be smaller than the sample count")
    return records[:-holdout], records[-holdout:]


@main.command()
@click.option("--out", required=True, type=click.Path())
@click.option("--cases", default="1", show_default=True, help="Comma-separated case ids 1-6.")
@click.option("--count", default=8, show_default=True, help="Samples per case.")
@click.option("--seed", default=0, show_default=True)
@click.option("--size", default=32, show_default=True)
@click.option("--clean-dir", default=None, type=click.Path(exists=True),
              help="Directory of clean PNGs; procedural images when omitted.")
def synth(out, cases, count, seed, size, clean_dir):
    """Synthesize a degraded/clean paired dataset."""
    try:
        manifest = synth_dataset(out, _parse_cases(cases), count, seed, size=size,
                                 clean_dir=clean_dir)
    except (ValueError, OSError) as e:
        raise click.UsageError(str(e))
    click.echo(f"wrote {len(manifest['samples'])} samples to {out}")


def _hyper_options(fn):
    for opt in reversed([
        click.option("--steps", default=5000, show_default=True),
        click.option("--batch-size", default=8, show_default=True),
        click.option("--lr", default=3e-5, show_default=True),
        click.option("--t-steps", "t_steps", default=1000, show_default=True,
                     help="Diffusion steps T."),
        click.option("--sample-steps", "sample_steps", default=25, show_default=True,
                     help="Implicit sampler steps S."),
        click.option("--eta", default=1.0, show_default=True,
                     help="Sampler stochasticity in [0,1]; 0 is fully deterministic."),
        click.option("--clamp-x0/--no-clamp-x0", "clamp_x0", default=True, show_default=True,
                     help="Clip the implied clean estimate every sampler step."),
        click.option("--seed", default=0, show_default=True),
        click.option("--holdout", default=0, show_default=True,
                     help="Samples reserved for evaluation (taken from the end)."),
        click.option("--log", "log_path", default=None, type=click.Path(),
                     help="Training log CSV."),
    ]):
        fn = opt(fn)
    return fn


@main.command("train-diffusion")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--base-channels", default=32, show_default=True)
@click.option("--depth", default=2, show_default=True)
@_hyper_options
def train_diffusion_cmd(manifest_path, out, base_channels, depth, steps, batch_size, lr,
                        t_steps, sample_steps, eta, clamp_x0, seed, holdout, log_path):
    """Train the conditional noise estimator."""
    manifest = load_manifest(manifest_path)
    train_recs, _ = _split(manifest, holdout)
    channels = _image_channels(manifest)
    cfg = DenoiserConfig(image_channels=channels, base_channels=base_channels, depth=depth)
    hyper = Hyper(steps=steps, batch_size=batch_size, lr=lr, T=t_steps, S=sample_steps,
                  eta=eta, clamp_x0=clamp_x0)
    try:
        store, history = train_denoiser(manifest, cfg, hyper, seed, records=train_recs,
                                        log_path=log_path)
    except NumericError as e:
        click.echo(f"numeric failure: {e}", err=True)
        sys.exit(EXIT_NUMERIC)
    save_model(store, cfg, out)
    click.echo(f"final loss {history[-1]:.4f}; checkpoint at {out}")


@main.command("train-refine")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--diffusion-ckpt", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--base-channels", default=32, show_default=True)
@click.option("--depth", default=2, show_default=True)
@click.option("--mc-samples", default=8, show_default=True, help="UEB Monte-Carlo passes.")
@click.option("--mask-fraction", default=0.2, show_default=True, help="UEB channel-mask fraction.")
@click.option("--lam", default=0.1, show_default=True)
@click.option("--alpha-w", default=1.0, show_default=True)
@click.option("--beta-w", default=0.5, show_default=True)
@_hyper_options
def train_refine_cmd(manifest_path, diffusion_ckpt, out, base_channels, depth, mc_samples,
                     mask_fraction, lam, alpha_w, beta_w, steps, batch_size, lr, t_steps,
                     sample_steps, eta, clamp_x0, seed, holdout, log_path):
    """Train the uncertainty-guided refiner on frozen-denoiser restorations."""
    manifest = load_manifest(manifest_path)
    train_recs, _ = _split(manifest, holdout)
    den_store, den_cfg = load_model(diffusion_ckpt)
    cfg = RefinerConfig(
        image_channels=den_cfg.image_channels,
        base_channels=base_channels,
        depth=depth,
        ueb=UEBConfig(s_t=mc_samples, q=mask_fraction),
    )
    hyper = Hyper(steps=steps, batch_size=batch_size, lr=lr, T=t_steps, S=sample_steps,
                  eta=eta, clamp_x0=clamp_x0)
    weights = LossWeights(lam=lam, alpha_w=alpha_w, beta_w=beta_w)
    try:
        store, history = train_refiner(manifest, den_store, den_cfg, cfg, hyper, seed,
                                       records=train_recs, weights=weights, log_path=log_path)
    except NumericError as e:
        click.echo(f"numeric failure: {e}", err=True)
        sys.exit(EXIT_NUMERIC)
    save_model(store, cfg, out)
    click.echo(f"final loss {history[-1][0]:.4f}; checkpoint at {out}")


def _image_channels(manifest):
    from .data import load_sample

    clean, _, _ = load_sample(manifest, manifest["samples"][0])
    return 1 if clean.ndim == 2 else clean.shape[2]


def _resolve_mask(image, mask_source, mask_file, manifest_path, input_path,
                  atmospheric_light, threshold):
    if mask_source == "file":
        if mask_file is None:
            raise click.UsageError("--mask is required with --mask-source file")
        return load_image(mask_file)
    if mask_source == "baseline":
        return predict_mask_baseline(image, atmospheric_light, threshold)
    if manifest_path is None:
        raise click.UsageError("--manifest is required with --mask-source oracle")
    manifest = load_manifest(manifest_path)
    name = Path(input_path).name
    for rec in manifest["samples"]:
        if Path(rec["files"]["degraded"]).name == name:
            return load_image(Path(manifest["_dir"]) / rec["files"]["union_mask"])
    raise click.UsageError(f"{name} not found in manifest {manifest_path}")


@main.command("restore")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--mask-source", type=click.Choice(["oracle", "baseline", "file"]),
              default="baseline", show_default=True)
@click.option("--mask", "mask_file", default=None, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", default=None, type=click.Path(exists=True),
              help="Needed for oracle masks.")
@click.option("--atmospheric-light", default=0.85, show_default=True)
@click.option("--threshold", default=0.1, show_default=True)
@click.option("--diffusion-ckpt", required=True, type=click.Path(exists=True))
@click.option("--refiner-ckpt", default=None, type=click.Path(exists=True))
@click.option("--sample-steps", default=25, show_default=True)
@click.option("--eta", default=1.0, show_default=True,
              help="Sampler stochasticity in [0,1]; 0 is fully deterministic.")
@click.option("--clamp-x0/--no-clamp-x0", "clamp_x0", default=True, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--trace", "trace_path", default=None, type=click.Path(),
              help="Write a per-step sampler trace CSV.")
def restore_cmd(input_path, mask_source, mask_file, manifest_path, atmospheric_light,
                threshold, diffusion_ckpt, refiner_ckpt, sample_steps, eta, clamp_x0,
                seed, out_dir, trace_path):
    """Restore a single degraded image."""
    image = load_image(input_path)
    if image.ndim == 2:
        image = image[:, :, None]
    mask = _resolve_mask(image, mask_source, mask_file, manifest_path, input_path,
                         atmospheric_light, threshold)
    if mask.shape[:2] != image.shape[:2]:
        raise click.UsageError(f"mask {mask.shape[:2]} does not match image {image.shape[:2]}")
    den_store, den_cfg = load_model(diffusion_ckpt)
    sched = linear_schedule(1000)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 600]))
    trace = [] if trace_path else None
    coarse = restore_batch(_to_nchw(image).astype(np.float64)[None], mask[None, None],
                           den_store, den_cfg, sched, sample_steps, rng, trace=trace,
                           eta=eta, clamp_x0=clamp_x0)[0]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_image(_to_hwc(coarse), out / "coarse.png")
    if refiner_ckpt is not None:
        ref_store, ref_cfg = load_model(refiner_ckpt)
        refined, per_scale = refine_batch(coarse[None], ref_store, ref_cfg, rng)
        save_image(_to_hwc(refined[0]), out / "restored.png")
        for lvl, maps in enumerate(per_scale):
            save_image(np.clip(maps.u.data[0, 0], 0, 1), out / f"uncertainty_scale{lvl}.png")
    else:
        save_image(_to_hwc(coarse), out / "restored.png")
    if trace_path:
        write_trace(trace, trace_path)
    click.echo(f"restored image written to {out / 'restored.png'}")


@main.command("eval")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--diffusion-ckpt", required=True, type=click.Path(exists=True))
@click.option("--refiner-ckpt", default=None, type=click.Path(exists=True))
@click.option("--sample-steps", default=25, show_default=True)
@click.option("--eta", default=1.0, show_default=True,
              help="Sampler stochasticity in [0,1]; 0 is fully deterministic.")
@click.option("--clamp-x0/--no-clamp-x0", "clamp_x0", default=True, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--holdout", default=0, show_default=True,
              help="Evaluate only the last N samples; 0 evaluates everything.")
@click.option("--out-dir", required=True, type=click.Path())
def eval_cmd(manifest_path, diffusion_ckpt, refiner_ckpt, sample_steps, eta, clamp_x0,
             seed, holdout, out_dir):
    """Restore every sample and write metric CSV plus per-case aggregates."""
    manifest = load_manifest(manifest_path)
    _, eval_recs = _split(manifest, holdout)
    den_store, den_cfg = load_model(diffusion_ckpt)
    ref_store = ref_cfg = None
    if refiner_ckpt is not None:
        ref_store, ref_cfg = load_model(refiner_ckpt)
    hyper = Hyper(S=sample_steps, eta=eta, clamp_x0=clamp_x0)
    fn = default_restore_fn(den_store, den_cfg, ref_store, ref_cfg, hyper)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _, aggregates = evaluate(manifest, fn, seed, records=eval_recs,
                             out_csv=out / "metrics.csv", out_json=out / "aggregate.json")
    click.echo(json.dumps(aggregates, indent=1, sort_keys=True))


@main.command("report")
@click.option("--metrics", "metrics_csv", required=True, type=click.Path(exists=True))
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--train-log", "train_logs", multiple=True, type=click.Path(exists=True))
def report_cmd(metrics_csv, out_dir, train_logs):
    """Render aggregate tables and figures from a metrics CSV."""
    from .report import render_report

    written = render_report(metrics_csv, out_dir, train_logs=train_logs)
    for p in written:
        click.echo(str(p))


if __name__ == "__main__":
    main()
