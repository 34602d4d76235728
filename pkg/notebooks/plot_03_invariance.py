"""
Invariance and pooling in the trained models
============================================

For each hidden neuron we measure how much of its variance is explained by
which translation set a patch came from (gamma: 1 means the neuron ignores
the shift).  We then attribute each layer-1 neuron's variance to the layer-2
neurons that feed it through the decoder, and follow the strongest links to
find pooling groups.

Run ``plot_02_lateral_variants.py`` first; it leaves the checkpoints in
``out/``.
"""

import os

import numpy as np

from lateral_dae.analysis import (
    export_connection_graph,
    extract_poolings,
    invariance_reports,
    invariant_sign_median,
    read_gamma_report,
    write_gamma_report,
)
from lateral_dae.checkpoint import load_checkpoint
from lateral_dae.data import PatchStream, make_transform_sets
from lateral_dae.plots import gamma_scatter
from lateral_dae.trainer import substream
from photo_tiles import photo_tiles

OUT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "out")
images = photo_tiles().split("validation")

###############################################################################
# Translation sets: 16 patches from a 4x4 grid of 2-pixel shifts.

for variant in ("nolat", "mod"):
    ckpt = load_checkpoint(os.path.join(OUT, f"{variant}.ldae"))
    params = ckpt.params.astype(np.float64)
    rng = substream(1, "analysis")
    sets = make_transform_sets(images, ckpt.whitener, "translation", rng, 300)
    samples = PatchStream(images, 16, ckpt.whitener, np.float64).sample(10_000, rng)
    reports, edges = invariance_reports(params, sets, samples)
    print(variant, params.spec.label())
    for rep in reports:
        print(f"  layer {rep.layer}: mean gamma {rep.mean_gamma:.3f}, {len(rep.excluded)} silent neurons")
    top = reports[-1]
    print(f"  median weight sign of the most invariant top neurons: {invariant_sign_median(top):+.2f}")

    path = os.path.join(OUT, f"{variant}_gamma.csv")
    write_gamma_report(reports, path)
    gamma_scatter(read_gamma_report(path), os.path.join(OUT, f"{variant}_gamma.svg"), layer=2, title=variant)
    export_connection_graph(params, edges, [r.gamma for r in reports], os.path.join(OUT, f"{variant}_edges.csv"))

###############################################################################
# Pooling groups of the modulated model around its most significant
# layer-1 neuron, shown as dewhitened features.

anchor = int(np.argmax(edges[0].sum(axis=1)))
report = extract_poolings(params, edges, anchor, k_groups=3, k_members=20, whitener=ckpt.whitener)
for g in report.groups:
    print(f"layer-2 neuron {g.neuron} (link {g.link:.3g}) pools layer-1 neurons {[int(j) for j in g.members[:8]]} ...")

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def show(ax, vec):
    patch = vec.reshape(16, 16, 3)
    patch = (patch - patch.min()) / (np.ptp(patch) + 1e-12)
    ax.imshow(patch)
    ax.set_axis_off()


fig, axes = plt.subplots(len(report.groups), 21, figsize=(12, 0.7 * len(report.groups) + 0.3), squeeze=False)
for row, g in zip(axes, report.groups):
    show(row[0], report.features[anchor])
    for ax, j in zip(row[1:], g.members):
        show(ax, report.features[int(j)])
    for ax in row[1 + len(g.members):]:
        ax.set_axis_off()
fig.savefig(os.path.join(OUT, "mod_poolings.svg"))
