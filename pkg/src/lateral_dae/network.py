"""Denoising autoencoders with and without lateral connections.

Three decoder families share one rectifier encoder::

    h(l) = relu(Wf(l) h(l-1) + bf(l)) + beta(l),        h(0) = corrupted input

* ``nolat``: plain decoder, hhat(L) = h(L), hhat(l) = relu(Wg(l) hhat(l+1) + bg(l))
* ``add``:   gated lateral term plus the rectified top-down term
* ``mod``:   the top-down term moves inside the gate and modulates the lateral term

All variants decode affinely at the bottom, x_hat = Wg(0) hhat(1) + bg(0), and
every decoder matrix is tied to the transposed encoder matrix one layer up:
Wg(l) = Wf(l+1).T.  The tied pair is stored once, as ``Wf{l+1}``.

``linear`` is the single affine map x_hat = W x_tilde + b used as the
linear-denoising baseline.

Batches are rows: a ``(batch, d)`` matrix multiplies ``W.T`` on the right.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

VARIANTS = ("linear", "nolat", "add", "mod")


class OvercompleteInitWarning(UserWarning):
    """A weight matrix has more rows than columns, so not all rows can be orthogonal."""


class DivergenceError(FloatingPointError):
    """Non-finite values appeared in activations, costs or gradients."""


@dataclass(frozen=True)
class ModelSpec:
    variant: str
    layer_sizes: tuple
    tied: bool = True
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(n) for n in self.layer_sizes))
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if any(n < 1 for n in self.layer_sizes):
            raise ValueError(f"layer sizes must be >= 1, got {self.layer_sizes}")
        if self.variant == "linear":
            if len(self.layer_sizes) != 1:
                raise ValueError("the linear model takes layer_sizes=(d,)")
        elif len(self.layer_sizes) < 2:
            raise ValueError("need at least one hidden layer")
        if not self.tied:
            raise ValueError("only tied weights are supported")
        if self.activation != "relu":
            raise ValueError("only the rectifier activation is supported")

    @property
    def n_layers(self):
        return len(self.layer_sizes) - 1

    @property
    def input_dim(self):
        return self.layer_sizes[0]

    @property
    def alpha(self):
        if self.n_layers < 2:
            return 0.0
        return self.layer_sizes[2] / self.layer_sizes[1]

    def has_lateral(self, l):
        return self.variant in ("add", "mod") and 1 <= l <= self.n_layers

    def has_decoder_bias(self, l):
        if l == 0:
            return True
        return self.variant in ("nolat", "add") and l < self.n_layers

    def label(self):
        return f"{self.variant} " + "-".join(str(n) for n in self.layer_sizes)


def tensor_shapes(spec):
    """Trainable tensors of ``spec`` in canonical order, as ``{name: shape}``."""
    sizes = spec.layer_sizes
    if spec.variant == "linear":
        d = sizes[0]
        return {"W": (d, d), "bg0": (d,)}
    shapes = {}
    for l in range(1, spec.n_layers + 1):
        shapes[f"Wf{l}"] = (sizes[l], sizes[l - 1])
        shapes[f"bf{l}"] = (sizes[l],)
    for l in range(spec.n_layers + 1):
        if spec.has_decoder_bias(l):
            shapes[f"bg{l}"] = (sizes[l],)
        if spec.has_lateral(l):
            for name in ("a", "ba", "bb"):
                shapes[f"{name}{l}"] = (sizes[l],)
    return shapes


def count_params(spec):
    """Parameter count with each tied copy counted separately; centering excluded."""
    total = 0
    for name, shape in tensor_shapes(spec).items():
        size = math.prod(shape)
        total += 2 * size if name.startswith("Wf") else size
    return total


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def solve_layer_sizes(budget, alpha, variant, d, n_layers):
    """Widest architecture that fits ``budget`` parameters.

    For two hidden layers the upper width follows the lower one as
    ``round(alpha * n1)`` and the largest admissible ``n1`` wins.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    if variant == "linear":
        sizes = (d,)
        if count_params(ModelSpec("linear", sizes)) > budget:
            raise ValueError(f"no feasible size: the linear model needs more than {budget} parameters")
        return sizes
    if n_layers == 1:
        def make(n1):
            return (d, n1)
    elif n_layers == 2:
        if not alpha or alpha <= 0:
            raise ValueError("alpha must be positive for two hidden layers")

        def make(n1):
            return (d, n1, max(1, _round_half_up(alpha * n1)))
    else:
        raise ValueError("only one or two hidden layers are supported")

    def fits(n1):
        return count_params(ModelSpec(variant, make(n1))) <= budget

    if not fits(1):
        raise ValueError(f"no feasible size for {variant} within a budget of {budget}")
    lo, hi = 1, 2
    while fits(hi):
        lo, hi = hi, hi * 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if fits(mid):
            lo = mid
        else:
            hi = mid
    return make(lo)


def max_first_width(budget, variant, d, n2=None):
    """Largest ``n1`` fitting the budget for a fixed upper width ``n2``."""
    def sizes(n1):
        return (d, n1) if n2 is None else (d, n1, n2)

    n1 = 0
    while count_params(ModelSpec(variant, sizes(n1 + 1))) <= budget:
        n1 += 1
    if n1 == 0:
        raise ValueError(f"no feasible size for {variant} within a budget of {budget}")
    return sizes(n1)


def orthonormal_rows(n_out, n_in, rng, dtype=np.float64):
    """Gaussian matrix with unit-norm rows, orthogonalized where possible."""
    w = rng.standard_normal((n_out, n_in))
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    m = min(n_out, n_in)
    q, r = np.linalg.qr(w[:m].T)
    w[:m] = (q * np.where(np.diag(r) < 0, -1.0, 1.0)).T
    if n_out > n_in:
        warnings.warn(
            f"{n_out}x{n_in} weight: only the first {n_in} rows are orthogonalized",
            OvercompleteInitWarning,
            stacklevel=3,
        )
    w /= np.linalg.norm(w, axis=1, keepdims=True)
    return w.astype(dtype)


@dataclass
class Params:
    """Trainable tensors plus the non-gradient centering offsets."""

    spec: ModelSpec
    tensors: dict
    centering: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.tensors[name]

    def __setitem__(self, name, value):
        self.tensors[name] = value

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def encoder_weight(self, l):
        return self.tensors[f"Wf{l}"]

    def decoder_weight(self, l):
        """Wg(l), a transposed view of the tied encoder matrix one layer up."""
        if self.spec.variant == "linear":
            return self.tensors["W"]
        return self.tensors[f"Wf{l + 1}"].T

    def beta(self, l):
        return self.centering[f"beta{l}"]

    def copy(self):
        return Params(
            self.spec,
            {k: v.copy() for k, v in self.tensors.items()},
            {k: v.copy() for k, v in self.centering.items()},
        )

    def astype(self, dtype):
        return Params(
            self.spec,
            {k: v.astype(dtype) for k, v in self.tensors.items()},
            {k: v.astype(dtype) for k, v in self.centering.items()},
        )

    def all_tensors(self):
        out = dict(self.tensors)
        out.update(self.centering)
        return out


def init_params(spec, rng, dtype=np.float64):
    """Unit-norm orthogonalized weights, zero biases and lateral vectors."""
    tensors = {}
    for name, shape in tensor_shapes(spec).items():
        if name.startswith("W"):
            tensors[name] = orthonormal_rows(*shape, rng, dtype)
        else:
            tensors[name] = np.zeros(shape, dtype=dtype)
    centering = {f"beta{l}": np.zeros(spec.layer_sizes[l], dtype=dtype) for l in range(1, spec.n_layers + 1)}
    return Params(spec, tensors, centering)


def relu(z):
    return np.maximum(z, 0)


def sigmoid(z):
    return expit(z)


def rectifier_unit(x, w, b):
    """A single rectifier unit, relu(x . w + b), evaluated row-wise."""
    return relu(np.asarray(x) @ np.asarray(w) + b)


@dataclass
class Activations:
    """Everything the backward pass needs from one forward evaluation.

    ``h``, ``z`` and ``hhat`` are indexed by layer; ``z[0]`` and ``hhat[0]``
    are unused.  ``gate_pre``, ``gate`` and ``topdown_pre`` hold the decoder's
    sigmoid argument, sigmoid value and rectifier argument per layer.
    """

    x_tilde: np.ndarray
    h: list
    z: list
    hhat: list
    x_hat: np.ndarray
    x: np.ndarray = None
    noise: np.ndarray = None
    gate_pre: dict = field(default_factory=dict)
    gate: dict = field(default_factory=dict)
    topdown_pre: dict = field(default_factory=dict)

    def rectifier_inputs(self):
        """All pre-activations that pass through a rectifier."""
        out = [z for z in self.z[1:]]
        out.extend(self.topdown_pre[l] for l in sorted(self.topdown_pre))
        return out


def encode(params, x_tilde):
    """Encoder pass only; returns ``(h, z)`` lists indexed by layer."""
    spec = params.spec
    h = [x_tilde]
    z = [None]
    for l in range(1, spec.n_layers + 1):
        zl = h[-1] @ params.encoder_weight(l).T + params[f"bf{l}"]
        z.append(zl)
        h.append(relu(zl) + params.beta(l))
    return h, z


def gated_lateral(h, a, ba, bb, topdown=0.0):
    """Elementwise (h + ba) * sigmoid(a * h + topdown + bb); returns (value, pre, gate)."""
    pre = a * h + bb + topdown
    gate = sigmoid(pre)
    return (h + ba) * gate, pre, gate


def _lateral(params, l, h, topdown=0.0):
    return gated_lateral(h, params[f"a{l}"], params[f"ba{l}"], params[f"bb{l}"], topdown)


def forward(params, x_tilde, x=None):
    """Run the encoder and the variant's decoder on a batch of rows."""
    spec = params.spec
    x_tilde = np.asarray(x_tilde, dtype=params.dtype)
    if x_tilde.ndim != 2 or x_tilde.shape[1] != spec.input_dim:
        raise ValueError(f"expected a (batch, {spec.input_dim}) input, got {x_tilde.shape}")
    if spec.variant == "linear":
        x_hat = x_tilde @ params["W"].T + params["bg0"]
        return Activations(x_tilde, [x_tilde], [None], [None], x_hat, x)

    L = spec.n_layers
    h, z = encode(params, x_tilde)
    acts = Activations(x_tilde, h, z, [None] * (L + 1), None, x)
    if spec.variant == "nolat":
        acts.hhat[L] = h[L]
    else:
        acts.hhat[L], acts.gate_pre[L], acts.gate[L] = _lateral(params, L, h[L])
    for l in range(L - 1, 0, -1):
        topdown = acts.hhat[l + 1] @ params.decoder_weight(l).T
        if spec.variant == "mod":
            acts.hhat[l], acts.gate_pre[l], acts.gate[l] = _lateral(params, l, h[l], topdown)
            continue
        u = topdown + params[f"bg{l}"]
        acts.topdown_pre[l] = u
        if spec.variant == "nolat":
            acts.hhat[l] = relu(u)
        else:
            lat, acts.gate_pre[l], acts.gate[l] = _lateral(params, l, h[l])
            acts.hhat[l] = lat + relu(u)
    acts.x_hat = acts.hhat[1] @ params.decoder_weight(0).T + params["bg0"]
    return acts


def check_finite(acts):
    if not np.all(np.isfinite(acts.x_hat)):
        raise DivergenceError("non-finite reconstruction")


def reconstruction_cost(x_hat, x):
    """Mean squared reconstruction error per element."""
    x_hat = np.asarray(x_hat)
    x = np.asarray(x)
    if x_hat.shape != x.shape:
        raise ValueError(f"shape mismatch {x_hat.shape} vs {x.shape}")
    diff = x_hat.astype(np.float64) - x
    return float(np.mean(diff * diff))


def update_centering(params, acts, rate=0.99):
    """Move each beta(l) so hidden activations drift toward zero mean.

    ``beta <- beta - rate * mean(h)`` where h already includes beta.  This
    is an exponential moving average of the rectifier output means with
    weight ``rate`` on the newest batch: ``rate=1`` replaces beta by minus
    the current batch mean.
    """
    if not 0 < rate <= 1:
        raise ValueError("rate must lie in (0, 1]")
    for l in range(1, params.spec.n_layers + 1):
        beta = params.centering[f"beta{l}"]
        beta -= (rate * acts.h[l].mean(axis=0)).astype(beta.dtype)
