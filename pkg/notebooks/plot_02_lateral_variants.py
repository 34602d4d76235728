"""
Lateral connections under a fixed parameter budget
==================================================

Four denoisers share one parameter budget: the linear baseline, a plain
autoencoder (NoLat), additive lateral connections (Add) and modulated
lateral connections (Mod).  Patches come from photos bundled with
scikit-image, cut into 32x32 tiles, PCA-whitened to 256 dimensions and
corrupted with Gaussian noise of std 0.5.

Set ``DEMO_UPDATES`` to train longer; the ordering between the nonlinear
models only settles after many updates.  The trained models are saved in
``out/`` for the invariance demo.
"""

import os
import warnings

from lateral_dae import PatchStream, TrainConfig, count_params, fit_stream_whitener, substream, train
from lateral_dae.checkpoint import save_checkpoint
from lateral_dae.plots import alpha_curve
from lateral_dae.trainer import run_alpha_sweep, summarize_sweep, write_sweep_csv
from lateral_dae.network import OvercompleteInitWarning
from photo_tiles import photo_tiles

# first layers wider than 256 can only be partly orthogonalized at init
warnings.simplefilter("ignore", OvercompleteInitWarning)

OUT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "out")
os.makedirs(OUT, exist_ok=True)
UPDATES = int(os.environ.get("DEMO_UPDATES", 8000))
BUDGET = 300_000

images = photo_tiles()
whitener = fit_stream_whitener(images.split("train"), 16, 20_000, 256, substream(1, "whitening"))
print(f"{images.count} tiles; PCA keeps {whitener.retained_variance_fraction:.3%} of the variance")
train_stream = PatchStream(images.split("train"), 16, whitener)
valid_stream = PatchStream(images.split("validation"), 16, whitener)

###############################################################################
# One model per variant.  Sizes are solved from the budget and the ratio
# alpha = n2 / n1.

setups = {"linear": (0.0, 1), "nolat": (1.0, 2), "add": (0.4, 2), "mod": (0.03, 2)}
results = {}
for variant, (alpha, layers) in setups.items():
    config = TrainConfig(variant=variant, alpha=alpha, n_layers=layers, budget=BUDGET,
                         updates=UPDATES, valid_interval=max(1, UPDATES // 8), valid_batches=40, seed=1)
    params, history, opt = train(config, train_stream, valid_stream)
    spec = params.spec
    results[variant] = history.best_cost
    print(f"{spec.label():>22}  {count_params(spec):7d} params  best cost {history.best_cost:.4f}")
    save_checkpoint(os.path.join(OUT, f"{variant}.ldae"), params, whitener, opt, history, config)

###############################################################################
# A tied decoder only reaches n1 directions of the 256-dim whitened space,
# so a first layer narrower than the input puts a floor of (256 - n1) / 256
# under the cost.  At 100k parameters every variant is that narrow.

for variant, (alpha, layers) in setups.items():
    if variant != "linear":
        n1 = TrainConfig(variant=variant, alpha=alpha, n_layers=layers, budget=100_000).resolve_spec(256).layer_sizes[1]
        print(f"{variant} at 100k: n1 = {n1}, cost floor {(256 - n1) / 256:.3f}")

###############################################################################
# A short alpha sweep for the modulated model, two seeds per point.

base = TrainConfig(variant="mod", budget=BUDGET, updates=max(1, UPDATES // 4), valid_interval=max(1, UPDATES // 8),
                   valid_batches=20, dataset="photos")
rows = run_alpha_sweep("mod", [0.0, 0.03, 0.3], base, train_stream, valid_stream, seeds=2)
write_sweep_csv(rows, os.path.join(OUT, "mod_sweep.csv"))
summary = summarize_sweep(rows)
for row in summary:
    print(f"alpha {row['alpha']:<5g} {row['n1']}-{row['n2']}: mean {row['mean']:.4f} std {row['std']:.4f}")
alpha_curve(summary, os.path.join(OUT, "mod_sweep.svg"), linear_cost=results["linear"])
