"""Reverse-mode gradients of the per-element reconstruction cost.

Only the fixed architectures in :mod:`lateral_dae.network` are supported.
The tied pair Wf(l+1) / Wg(l) is one stored tensor, so its gradient is the
sum of the encoder contribution and the transposed decoder contribution.
"""

from __future__ import annotations

import numpy as np

from .network import DivergenceError, forward, reconstruction_cost


def _relu_grad(z):
    # derivative 0 at exactly 0
    return (z > 0).astype(z.dtype)


def _lateral_backward(params, l, acts, g_hhat, grads):
    """Backprop through (h + ba) * sigmoid(pre); returns (dh, dpre)."""
    h = acts.h[l]
    gate = acts.gate[l]
    g_pre = g_hhat * (h + params[f"ba{l}"]) * gate * (1 - gate)
    grads[f"ba{l}"] = (g_hhat * gate).sum(axis=0)
    grads[f"a{l}"] = (g_pre * h).sum(axis=0)
    grads[f"bb{l}"] = g_pre.sum(axis=0)
    return g_hhat * gate + g_pre * params[f"a{l}"], g_pre


def backward(params, acts, x=None):
    """Gradient of ``mean((x_hat - x)**2)`` for every trainable tensor."""
    spec = params.spec
    x = acts.x if x is None else x
    if x is None:
        raise ValueError("clean targets are required")
    g_xhat = 2.0 * (acts.x_hat - x) / acts.x_hat.size
    g_xhat = g_xhat.astype(acts.x_hat.dtype)
    grads = {"bg0": g_xhat.sum(axis=0)}

    if spec.variant == "linear":
        grads["W"] = g_xhat.T @ acts.x_tilde
        return _checked(grads)

    L = spec.n_layers
    g_h = [None] + [np.zeros_like(acts.h[l]) for l in range(1, L + 1)]
    g_dec = {0: g_xhat.T @ acts.hhat[1]}  # Wg(0), shape (n0, n1)
    g_hhat = g_xhat @ params.decoder_weight(0)

    for l in range(1, L):
        wg = params.decoder_weight(l)
        if spec.variant == "mod":
            g_lat_h, g_pre = _lateral_backward(params, l, acts, g_hhat, grads)
            g_h[l] += g_lat_h
            g_top = g_pre
        else:
            g_top = g_hhat * _relu_grad(acts.topdown_pre[l])
            grads[f"bg{l}"] = g_top.sum(axis=0)
            if spec.variant == "add":
                g_lat_h, _ = _lateral_backward(params, l, acts, g_hhat, grads)
                g_h[l] += g_lat_h
        g_dec[l] = g_top.T @ acts.hhat[l + 1]
        g_hhat = g_top @ wg

    if spec.variant == "nolat":
        g_h[L] += g_hhat
    else:
        g_lat_h, _ = _lateral_backward(params, L, acts, g_hhat, grads)
        g_h[L] += g_lat_h

    for l in range(L, 0, -1):
        g_z = g_h[l] * _relu_grad(acts.z[l])
        grads[f"Wf{l}"] = g_z.T @ acts.h[l - 1] + g_dec[l - 1].T
        grads[f"bf{l}"] = g_z.sum(axis=0)
        if l > 1:
            g_h[l - 1] += g_z @ params.encoder_weight(l)
    return _checked(grads)


def _checked(grads):
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for {name}")
    return grads


def cost_and_grads(params, x_tilde, x):
    acts = forward(params, x_tilde, x)
    return reconstruction_cost(acts.x_hat, x), backward(params, acts), acts


def _relu_pattern(params, x_tilde):
    acts = forward(params, x_tilde)
    return [z > 0 for z in acts.rectifier_inputs()]


def finite_diff_check(params, x_tilde, x, epsilon=1e-5):
    """Compare :func:`backward` with central differences, scalar by scalar.

    Runs in float64.  Scalars whose perturbation flips any rectifier
    between on and off are skipped.  Returns ``(max_relative_error,
    n_excluded)`` with relative error ``|a - b| / max(|a|, |b|, 1e-12)``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    params = params.astype(np.float64)
    x_tilde = np.asarray(x_tilde, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    _, analytic, _ = cost_and_grads(params, x_tilde, x)
    base_pattern = _relu_pattern(params, x_tilde)

    worst = 0.0
    excluded = 0
    for name, tensor in params.tensors.items():
        flat = tensor.reshape(-1)
        g = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = reconstruction_cost(forward(params, x_tilde).x_hat, x)
            up_pattern = _relu_pattern(params, x_tilde)
            flat[i] = orig - epsilon
            down = reconstruction_cost(forward(params, x_tilde).x_hat, x)
            down_pattern = _relu_pattern(params, x_tilde)
            flat[i] = orig
            kinked = any(
                not (np.array_equal(a, b) and np.array_equal(a, c))
                for a, b, c in zip(base_pattern, up_pattern, down_pattern)
            )
            if kinked:
                excluded += 1
                continue
            numeric = (up - down) / (2 * epsilon)
            denom = max(abs(numeric), abs(g[i]), 1e-12)
            worst = max(worst, abs(numeric - g[i]) / denom)
    return worst, excluded
