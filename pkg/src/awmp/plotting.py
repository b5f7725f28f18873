"""Learning-curve figures written next to the aggregate tables."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.2),
    "font.size": 9,
    "axes.linewidth": 0.6,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
}


def plot_band(agg, path, title=None, label="mean return", ax=None):
    """Mean curve with its half-std band; returns the written path."""
    with plt.rc_context(STYLE):
        own = ax is None
        if own:
            fig, ax = plt.subplots()
        ax.plot(agg.step, agg.mean, lw=1.2, label=label)
        ax.fill_between(agg.step, agg.lo, agg.hi, alpha=0.25, lw=0)
        ax.set_xlabel("environment steps")
        ax.set_ylabel("evaluation return")
        if title:
            ax.set_title(title)
        if own:
            fig.tight_layout()
            fig.savefig(path)
            plt.close(fig)
    return path


def plot_comparison(aggs, path, title=None):
    """Several labelled bands on one axis, e.g. SAC against SAC-AWMP."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, agg in aggs.items():
            plot_band(agg, None, label=label, ax=ax)
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    return path
