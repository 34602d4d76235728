"""
Denoising white noise with a linear map
=======================================

On white unit-variance Gaussian inputs with additive noise of std 0.5,
the best any denoiser can do is shrink the noisy input by 1 / (1 + 0.25).
The expected squared error per element is then 0.25 / 1.25 = 0.2.  We train
the linear baseline and watch it approach that bound.
"""

import os

import numpy as np

from lateral_dae import GaussianStream, TrainConfig, evaluate, train

OUT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "out")
os.makedirs(OUT, exist_ok=True)

stream = GaussianStream(256)

# Doing nothing (returning x_tilde) costs exactly the noise variance.
print("pass-through cost:", evaluate(None, stream, predict=lambda clean, noisy: noisy))

# The shrinkage oracle is the bound itself.
print("oracle 0.8 * x_tilde:", evaluate(None, stream, predict=lambda clean, noisy: 0.8 * noisy))

###############################################################################
# Train x_hat = W x_tilde + b with ADADELTA for 20k mini-batches of 50.

config = TrainConfig(variant="linear", updates=20_000, valid_interval=1000, seed=1)
params, history, _ = train(config, stream, stream)
for update, cost in history.records[::4]:
    print(f"update {update:6d}  validation cost {cost:.4f}")
print(f"best {history.best_cost:.4f} (bound 0.2000)")

###############################################################################
# The learned map should be close to 0.8 times the identity.

w = params["W"].astype(np.float64)
print("mean diagonal:", np.diag(w).mean().round(3), " max off-diagonal:", np.abs(w - np.diag(np.diag(w))).max().round(3))

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

updates, costs = zip(*history.records)
fig, ax = plt.subplots(figsize=(5, 3))
ax.plot(updates[1:], costs[1:], marker="o")
ax.axhline(0.2, color="k", ls="--", lw=1, label="Wiener bound")
ax.set_xlabel("update")
ax.set_ylabel("validation cost per element")
ax.legend()
fig.tight_layout()
fig.savefig(os.path.join(OUT, "linear_oracle.svg"))
