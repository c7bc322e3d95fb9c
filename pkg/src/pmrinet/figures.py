"""Matplotlib figures rendered next to the CSV reports.

Everything here draws to files through the Agg backend; no interactive
windows are opened.
"""

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def save_training_curves(log, path) -> None:
    """Plot mean train loss and validation PSNR over epochs.

    The PSNR panel is skipped when the log carries no validation
    metrics (all-NaN columns).
    """
    if not log:
        raise ValueError("empty training log")
    epochs = [e.epoch for e in log]
    losses = [e.train_loss for e in log]
    val = [(e.epoch, e.val_psnr) for e in log if math.isfinite(e.val_psnr)]
    panels = 2 if val else 1
    fig, axes = plt.subplots(1, panels, figsize=(5 * panels, 3.5))
    axes = [axes] if panels == 1 else list(axes)
    axes[0].semilogy(epochs, losses, color="tab:blue")
    axes[0].set_xlabel("epoch")
    axes[0].set_ylabel("mean train loss")
    axes[0].grid(True, alpha=0.3)
    if val:
        axes[1].plot([e for e, _ in val], [p for _, p in val],
                     color="tab:orange")
        axes[1].set_xlabel("epoch")
        axes[1].set_ylabel("validation PSNR (dB)")
        axes[1].grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_metric_summary(rows, path) -> None:
    """Grouped bar chart of NMSE/PSNR/SSIM for (mask, rate, method) rows.

    `rows` matches the CSV report layout: tuples of mask name, rate,
    method label, and a MetricSummary; the standard deviations become
    error bars.
    """
    if not rows:
        raise ValueError("no summary rows to plot")
    labels = [f"{mask} R={rate:g}" for mask, rate, _, _ in rows]
    methods = []
    for _, _, method, _ in rows:
        if method not in methods:
            methods.append(method)
    metrics = [("NMSE", "nmse"), ("PSNR (dB)", "psnr"), ("SSIM", "ssim")]
    fig, axes = plt.subplots(1, 3, figsize=(13, 3.8))
    cells = sorted(set(labels), key=labels.index)
    width = 0.8 / len(methods)
    for ax, (title, field) in zip(axes, metrics):
        for m, method in enumerate(methods):
            xs, means, stds = [], [], []
            for label, (_, _, row_method, summary) in zip(labels, rows):
                if row_method != method:
                    continue
                xs.append(cells.index(label) + (m - (len(methods) - 1) / 2)
                          * width)
                means.append(getattr(summary, field + "_mean"))
                stds.append(getattr(summary, field + "_std"))
            ax.bar(xs, means, width=width, yerr=stds, capsize=2,
                   label=method)
        ax.set_xticks(range(len(cells)))
        ax.set_xticklabels(cells, rotation=30, ha="right", fontsize=8)
        ax.set_title(title)
        ax.grid(True, axis="y", alpha=0.3)
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
