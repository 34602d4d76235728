"""SVG figures: invariance vs significance scatter and cost vs alpha curves.

Axis conventions
----------------
* scatter: x = total outgoing significance of a neuron (linear), y = gamma
  in [0, 1]; colour = mean weight sign from -1 (blue) to +1 (red).
* alpha curve: x = alpha, linear up to 0.5 and logarithmic above it; y =
  best validation cost per element, one line per variant with error bars of
  the corrected sample std.  One-layer results (alpha 0) are drawn as
  dashed horizontal lines.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams["svg.hashsalt"] = "lateral-dae"

COLORS = {"nolat": "tab:blue", "add": "tab:green", "mod": "tab:red", "linear": "black"}


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def gamma_scatter(rows, path, layer=None, title=None):
    """Scatter of gamma against significance from gamma-report rows."""
    if layer is None:
        layer = max(r["layer"] for r in rows)
    rows = [r for r in rows if r["layer"] == layer and np.isfinite(r["gamma"])]
    sig = np.array([r["significance"] for r in rows])
    gamma = np.array([r["gamma"] for r in rows])
    sign = np.nan_to_num(np.array([r["mean_sign"] for r in rows]))
    fig, ax = plt.subplots(figsize=(4.5, 4))
    pts = ax.scatter(sig, gamma, c=sign, cmap="coolwarm", vmin=-1, vmax=1, s=12)
    fig.colorbar(pts, ax=ax, label="mean weight sign")
    ax.set_xlabel("significance")
    ax.set_ylabel(f"invariance gamma, layer {layer}")
    ax.set_ylim(0, 1)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


def _alpha_forward(a):
    a = np.asarray(a, dtype=float)
    return np.where(a <= 0.5, a, 0.5 + 0.5 * np.log2(np.maximum(a, 1e-12) / 0.5))


def _alpha_inverse(y):
    y = np.asarray(y, dtype=float)
    return np.where(y <= 0.5, y, 0.5 * 2 ** ((y - 0.5) / 0.5))


def alpha_curve(summary, path, linear_cost=None, title=None):
    """Cost vs alpha from :func:`lateral_dae.trainer.summarize_sweep` rows."""
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.set_xscale("function", functions=(_alpha_forward, _alpha_inverse))
    for variant in sorted({r["variant"] for r in summary}):
        rows = sorted((r for r in summary if r["variant"] == variant), key=lambda r: r["alpha"])
        color = COLORS.get(variant)
        flat = [r for r in rows if r["alpha"] == 0]
        deep = [r for r in rows if r["alpha"] > 0]
        for r in flat:
            ax.axhline(r["best"], color=color, linestyle="--", linewidth=1)
        if deep:
            x = [r["alpha"] for r in deep]
            y = [r["best"] for r in deep]
            err = [r["std"] or 0.0 for r in deep]
            ax.errorbar(x, y, yerr=err, color=color, marker="o", label=variant)
    if linear_cost is not None:
        ax.axhline(linear_cost, color="black", linestyle=":", linewidth=1, label="linear")
    ax.set_xlabel("alpha (n2 / n1)")
    ax.set_ylabel("best validation cost per element")
    if title:
        ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    _save(fig, path)
