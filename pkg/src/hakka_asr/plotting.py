"""Report figures written next to the tab-delimited outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

REPORT_RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.bbox": "tight",
}

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def figsize(width=6.0):
    return (width, width * GOLDEN)


def _save(fig, path):
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_corpus_stats(rows, totals, path):
    with plt.rc_context(REPORT_RC):
        fig, (ax_h, ax_s) = plt.subplots(1, 2, figsize=figsize(8.0))
        names = [r.source for r in rows] or [totals.source]
        hours = [r.hours for r in rows] or [totals.hours]
        spu = [r.spu for r in rows] or [totals.spu]
        y = np.arange(len(names))
        ax_h.barh(y, hours, color="0.35")
        ax_h.set_yticks(y, names)
        ax_h.invert_yaxis()
        ax_h.set_xlabel("hours")
        ax_s.barh(y, spu, color="0.65")
        ax_s.set_yticks(y, [""] * len(names))
        ax_s.invert_yaxis()
        ax_s.axvline(totals.spu, ls="--", lw=0.8, color="k", label=f"overall {totals.spu:.2f} s")
        ax_s.set_xlabel("seconds per utterance")
        ax_s.legend(loc="lower right")
        return _save(fig, path)


def plot_loss_curve(history, path):
    """Per-epoch training (and held-out, when present) loss components."""
    epochs = [h["epoch"] for h in history]
    with plt.rc_context(REPORT_RC):
        fig, ax = plt.subplots(figsize=figsize())
        for key, style in (("total", "-"), ("mmi", "--"), ("ce", ":"), ("recon_input", "-."), ("recon_clean", "-.")):
            vals = [h["train"].get(key) for h in history]
            if all(v is not None for v in vals):
                ax.plot(epochs, vals, style, marker="o", ms=3, label=f"train {key}")
        if all(h.get("heldout") for h in history):
            ax.plot(epochs, [h["heldout"]["total"] for h in history], "k-", lw=1.5, label="held-out total")
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.legend(ncol=2)
        return _save(fig, path)


def plot_error_report(reports, path):
    with plt.rc_context(REPORT_RC):
        fig, ax = plt.subplots(figsize=figsize())
        cols = ("rate_read", "rate_spont", "rate_average")
        x = np.arange(len(cols))
        w = 0.8 / max(len(reports), 1)
        for i, r in enumerate(reports):
            vals = [getattr(r, c) or 0.0 for c in cols]
            bars = ax.bar(x + i * w, vals, w, label=r.track)
            ax.bar_label(bars, fmt="%.2f", fontsize=7)
        ax.set_xticks(x + w * (len(reports) - 1) / 2, ["Read", "Spont.", "Average"])
        ax.set_ylabel("error rate (%)")
        ax.legend()
        return _save(fig, path)


def plot_features(frames, path, title=None):
    with plt.rc_context(REPORT_RC):
        fig, ax = plt.subplots(figsize=figsize())
        im = ax.imshow(np.asarray(frames).T, aspect="auto", origin="lower", cmap="viridis", interpolation="nearest")
        fig.colorbar(im, ax=ax)
        ax.set_xlabel("frame")
        ax.set_ylabel("dimension")
        if title:
            ax.set_title(title)
        return _save(fig, path)
