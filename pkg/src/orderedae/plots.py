"""Figure rendering for the report files.

Every plot is drawn from a CSV written by the experiment pipelines, never
from in-memory state, so the delimited files remain the source of truth.
Figures are saved as SVG next to the data they come from.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader if row]
    columns = {}
    for i, name in enumerate(header):
        values = [row[i] for row in rows]
        try:
            columns[name] = [float(v) for v in values]
        except ValueError:
            columns[name] = [v == "true" for v in values]
    return columns


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return str(path)


def plot_sweep(sweep_csv, outdir=None) -> list:
    """Variance-vs-q and loss-term-vs-q line plots from a sweep report."""
    sweep_csv = Path(sweep_csv)
    outdir = Path(outdir) if outdir else sweep_csv.parent
    cols = _read_csv(sweep_csv)
    q = cols["q"]
    written = []

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name in cols:
        if name.startswith("var_y"):
            ax.plot(q, cols[name], marker="o", label=name.replace("var_", "V "))
    ax.set_yscale("log")
    ax.set_xlabel("q")
    ax.set_ylabel("latent variance")
    ax.legend(fontsize=8)
    fig.tight_layout()
    written.append(_save(fig, outdir / "variances.svg"))

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name in ("J1", "J2", "J3"):
        ax.plot(q, cols[name], marker="o", label=name)
    ax.set_yscale("log")
    ax.set_xlabel("q")
    ax.set_ylabel("loss terms")
    ax.legend(fontsize=8)
    fig.tight_layout()
    written.append(_save(fig, outdir / "loss_terms.svg"))
    return written


def plot_prediction(pred_csv, outdir=None) -> list:
    """Scatter of the target variable and its solved prediction against the
    first input variable."""
    pred_csv = Path(pred_csv)
    outdir = Path(outdir) if outdir else pred_csv.parent
    cols = _read_csv(pred_csv)
    names = list(cols)
    x = cols[names[0]]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(x, cols[names[1]], "o", ms=3, label=names[1])
    for name in names[2:]:
        ax.plot(x, cols[name], "x", ms=3, label=name)
    ax.set_xlabel(names[0])
    ax.set_ylabel("value (normalized)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return [_save(fig, outdir / "prediction.svg")]


def plot_reconstruction(recon_csv, outdir=None, max_vars=2) -> list:
    """Actual vs reconstructed series over the sample index."""
    recon_csv = Path(recon_csv)
    outdir = Path(outdir) if outdir else recon_csv.parent
    cols = _read_csv(recon_csv)
    idx = cols["sample"]
    pairs = []
    for name in cols:
        if name.endswith("_actual"):
            base = name[: -len("_actual")]
            if f"{base}_reconstructed" in cols:
                pairs.append(base)
    pairs = pairs[:max_vars] if max_vars else pairs
    fig, axes = plt.subplots(len(pairs), 1, figsize=(6, 2.2 * len(pairs)),
                             sharex=True, squeeze=False)
    for ax, base in zip(axes[:, 0], pairs):
        ax.plot(idx, cols[f"{base}_actual"], lw=0.8, label=f"{base} actual")
        ax.plot(idx, cols[f"{base}_reconstructed"], lw=0.8, ls="--",
                label=f"{base} reconstructed")
        ax.legend(fontsize=7, loc="upper right")
    axes[-1, 0].set_xlabel("sample")
    fig.tight_layout()
    return [_save(fig, outdir / "reconstruction.svg")]


def plot_table(table_csv, outdir=None) -> list:
    """Grouped bars of prediction and reconstruction error per method."""
    table_csv = Path(table_csv)
    outdir = Path(outdir) if outdir else table_csv.parent
    with open(table_csv, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    methods = [r["method"] for r in rows]
    pred = [float(r["prediction_mse"]) for r in rows]
    rec = [float(r["reconstruction_mse"]) for r in rows]
    x = range(len(methods))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar([i - 0.2 for i in x], pred, width=0.4, label="prediction MSE")
    ax.bar([i + 0.2 for i in x], rec, width=0.4, label="reconstruction MSE")
    ax.set_xticks(list(x))
    ax.set_xticklabels(methods)
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return [_save(fig, outdir / "table1.svg")]
