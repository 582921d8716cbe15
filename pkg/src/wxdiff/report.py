"""Report rendering: aggregate tables and matplotlib figures."""

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .train import aggregate_rows, read_metric_rows

VARIANT_ORDER = ("degraded", "coarse", "refined")
VARIANT_LABELS = {
    "degraded": "degraded input",
    "coarse": "w/o refinement",
    "refined": "w/ refinement",
}


def write_aggregate_csv(aggregates, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["case_id", "variant", "psnr_db", "ssim", "count"])
        for case_key in sorted(aggregates, key=lambda k: int(k.split("_")[1])):
            case_id = int(case_key.split("_")[1])
            for variant in VARIANT_ORDER:
                if variant not in aggregates[case_key]:
                    continue
                agg = aggregates[case_key][variant]
                writer.writerow(
                    [case_id, variant, f"{agg['psnr_db']:.6f}", f"{agg['ssim']:.6f}", agg["count"]]
                )


def _bar_figure(aggregates, metric, ylabel, path):
    case_keys = sorted(aggregates, key=lambda k: int(k.split("_")[1]))
    variants = [v for v in VARIANT_ORDER if any(v in aggregates[c] for c in case_keys)]
    x = np.arange(len(case_keys))
    width = 0.8 / max(len(variants), 1)
    fig, ax = plt.subplots(figsize=(7, 4))
    for j, variant in enumerate(variants):
        vals = [aggregates[c].get(variant, {}).get(metric, np.nan) for c in case_keys]
        ax.bar(x + (j - (len(variants) - 1) / 2) * width, vals, width,
               label=VARIANT_LABELS.get(variant, variant))
    ax.set_xticks(x)
    ax.set_xticklabels([c.replace("case_", "case ") for c in case_keys])
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _loss_figure(log_path, path):
    steps, losses = [], []
    with open(log_path, newline="") as f:
        reader = csv.DictReader(f)
        key = "loss" if "loss" in (reader.fieldnames or []) else "total"
        for row in reader:
            steps.append(int(row["step"]))
            losses.append(float(row[key]))
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, losses)
    ax.set_xlabel("step")
    ax.set_ylabel("training loss")
    ax.set_yscale("log")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_report(metrics_csv, out_dir, train_logs=()):
    """Build the report directory: aggregate CSV + JSON and PNG figures.

    Returns the list of files written.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = read_metric_rows(metrics_csv)
    aggregates = aggregate_rows(rows)
    written = []

    agg_csv = out / "aggregate.csv"
    write_aggregate_csv(aggregates, agg_csv)
    written.append(agg_csv)
    agg_json = out / "aggregate.json"
    with open(agg_json, "w") as f:
        json.dump(aggregates, f, indent=1, sort_keys=True)
    written.append(agg_json)

    psnr_png = out / "psnr_by_case.png"
    _bar_figure(aggregates, "psnr_db", "PSNR (dB)", psnr_png)
    written.append(psnr_png)
    ssim_png = out / "ssim_by_case.png"
    _bar_figure(aggregates, "ssim", "SSIM", ssim_png)
    written.append(ssim_png)

    for log in train_logs:
        log = Path(log)
        fig_path = out / f"loss_{log.stem}.png"
        _loss_figure(log, fig_path)
        written.append(fig_path)
    return written
