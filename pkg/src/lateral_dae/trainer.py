"""Training loop, validation, and the multi-seed alpha sweep."""

from __future__ import annotations

import csv
import logging
import math
import time
import zlib
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .data import corrupt
from .gradients import backward
from .network import (
    DivergenceError,
    ModelSpec,
    count_params,
    forward,
    init_params,
    solve_layer_sizes,
    update_centering,
)
from .optimizer import OptState, adadelta_step

log = logging.getLogger(__name__)

SWEEP_HEADER = ("dataset", "variant", "alpha", "n1", "n2", "seed", "min_cost", "updates")
DTYPES = {"float32": np.float32, "float64": np.float64}


def substream(seed, name):
    """Independent generator for one named use of a run seed."""
    ss = np.random.SeedSequence([int(seed), zlib.crc32(name.encode("utf-8"))])
    return np.random.Generator(np.random.PCG64(ss))


@dataclass
class TrainConfig:
    variant: str = "mod"
    layer_sizes: tuple = None
    alpha: float = 0.0
    n_layers: int = 1
    budget: int = 1_000_000
    dataset: str = "synthetic"
    sigma_n: float = 0.5
    batch: int = 50
    updates: int = 1000
    seed: int = 1
    valid_interval: int = 1000
    valid_batches: int = 200
    precision: str = "float32"
    rho: float = 0.99
    epsilon: float = 1e-8
    centering_rate: float = 0.99

    def __post_init__(self):
        if self.layer_sizes is not None:
            self.layer_sizes = tuple(int(n) for n in self.layer_sizes)
        if self.precision not in DTYPES:
            raise ValueError(f"precision must be one of {sorted(DTYPES)}")
        if self.updates < 0 or self.batch < 1 or self.valid_interval < 1 or self.valid_batches < 1:
            raise ValueError("updates >= 0, batch >= 1, valid_interval >= 1, valid_batches >= 1 required")
        if self.sigma_n < 0:
            raise ValueError("sigma_n must be non-negative")

    @property
    def dtype(self):
        return DTYPES[self.precision]

    def resolve_spec(self, d):
        """Model spec for input dimension ``d``, solved from the budget if needed."""
        if self.layer_sizes is not None:
            if self.layer_sizes[0] != d:
                raise ValueError(f"layer_sizes start with {self.layer_sizes[0]} but data has dimension {d}")
            spec = ModelSpec(self.variant, self.layer_sizes)
        elif self.variant == "linear":
            spec = ModelSpec("linear", (d,))
        else:
            spec = ModelSpec(self.variant, solve_layer_sizes(self.budget, self.alpha, self.variant, d, self.n_layers))
        if count_params(spec) > self.budget:
            raise ValueError(f"{spec.label()} has {count_params(spec)} parameters, over the budget of {self.budget}")
        return spec

    def to_dict(self):
        out = asdict(self)
        if out["layer_sizes"] is not None:
            out["layer_sizes"] = list(out["layer_sizes"])
        return out

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    wall_clock: float = 0.0

    @property
    def best_cost(self):
        return min(c for _, c in self.records) if self.records else math.nan

    @property
    def final_cost(self):
        return self.records[-1][1] if self.records else math.nan

    def to_dict(self):
        return {"records": [[int(u), float(c)] for u, c in self.records]}

    @classmethod
    def from_dict(cls, d):
        return cls([(int(u), float(c)) for u, c in d.get("records", [])])


class TrainingDiverged(RuntimeError):
    def __init__(self, message, params, history, update):
        super().__init__(message)
        self.params = params
        self.history = history
        self.update = update


@dataclass
class ValidationSet:
    clean: np.ndarray
    corrupted: np.ndarray


def make_validation_set(stream, n_batches, batch, sigma_n, seed):
    """Fixed, seeded validation patches with a fixed corruption draw."""
    rng = substream(seed, "validation")
    clean = np.concatenate([stream.sample(batch, rng) for _ in range(n_batches)])
    return ValidationSet(clean, corrupt(clean, sigma_n, rng).corrupted)


def validation_cost(params, valid, predict=None, chunk=2000):
    """Mean per-element cost of ``params`` (or a ``predict(clean, corrupted)`` stub)."""
    total = 0.0
    n = valid.clean.shape[0]
    for start in range(0, n, chunk):
        clean = valid.clean[start:start + chunk]
        noisy = valid.corrupted[start:start + chunk]
        x_hat = predict(clean, noisy) if predict is not None else forward(params, noisy).x_hat
        diff = np.asarray(x_hat, dtype=np.float64) - clean
        total += float(np.sum(diff * diff))
    return total / valid.clean.size


def evaluate(params, stream, n_batches=200, sigma_n=0.5, seed=0, batch=50, predict=None):
    """Validation cost per element over a seeded draw from ``stream``."""
    if n_batches < 1:
        raise ValueError("n_batches must be >= 1")
    return validation_cost(params, make_validation_set(stream, n_batches, batch, sigma_n, seed), predict)


def train(config, train_stream, valid_stream, params=None, opt_state=None, valid=None):
    """Train one model; returns ``(params, history, opt_state)``.

    Each update samples a clean batch, corrupts it, runs forward and
    backward on the per-element cost against the clean batch, applies
    ADADELTA and then moves the centering offsets.  The validation cost is
    recorded before the first update, every ``valid_interval`` updates and
    after the last one.
    """
    spec = config.resolve_spec(train_stream.dim)
    dtype = config.dtype
    if params is None:
        params = init_params(spec, substream(config.seed, "init"), dtype=np.float64).astype(dtype)
    if opt_state is None:
        opt_state = OptState.for_params(params, config.rho, config.epsilon)
    if valid is None:
        valid = make_validation_set(valid_stream, config.valid_batches, config.batch, config.sigma_n, config.seed)
    rng_sample = substream(config.seed, "sampling")
    rng_noise = substream(config.seed, "corruption")

    history = TrainHistory()
    history.records.append((0, validation_cost(params, valid)))
    last_good = params.copy()
    started = time.perf_counter()
    log.info("training %s (%d params) for %d updates", spec.label(), count_params(spec), config.updates)

    for step in range(1, config.updates + 1):
        batch = corrupt(train_stream.sample(config.batch, rng_sample), config.sigma_n, rng_noise)
        try:
            acts = forward(params, batch.corrupted, batch.clean)
            if not np.all(np.isfinite(acts.x_hat)):
                raise DivergenceError("non-finite reconstruction")
            grads = backward(params, acts)
        except DivergenceError as exc:
            history.wall_clock = time.perf_counter() - started
            raise TrainingDiverged(f"diverged at update {step}: {exc}", last_good, history, step) from exc
        adadelta_step(opt_state, params, grads)
        if spec.n_layers:
            update_centering(params, acts, config.centering_rate)
        if step % config.valid_interval == 0 or step == config.updates:
            cost = validation_cost(params, valid)
            if not math.isfinite(cost):
                history.wall_clock = time.perf_counter() - started
                raise TrainingDiverged(f"non-finite validation cost at update {step}", last_good, history, step)
            history.records.append((step, cost))
            last_good = params.copy()
            log.debug("update %d: validation cost %.6f", step, cost)
    history.wall_clock = time.perf_counter() - started
    return params, history, opt_state


@dataclass
class SweepRow:
    dataset: str
    variant: str
    alpha: float
    n1: int
    n2: int
    seed: int
    min_cost: float
    updates: int

    def as_csv(self):
        return [self.dataset, self.variant, repr(float(self.alpha)), self.n1, self.n2, self.seed,
                repr(float(self.min_cost)), self.updates]


def _sweep_cell(base, variant, alpha, seed, train_stream, valid_stream):
    config = TrainConfig(**{**base.to_dict(), "variant": variant, "alpha": alpha, "seed": seed,
                            "layer_sizes": None})
    spec = config.resolve_spec(train_stream.dim)
    n1 = spec.layer_sizes[1] if spec.n_layers >= 1 else 0
    n2 = spec.layer_sizes[2] if spec.n_layers >= 2 else 0
    try:
        _, history, _ = train(config, train_stream, valid_stream)
        best = history.best_cost
    except TrainingDiverged as exc:
        log.warning("%s alpha=%s seed=%d: %s", variant, alpha, seed, exc)
        best = math.nan
    return SweepRow(base.dataset, variant, alpha, n1, n2, seed, best, config.updates)


def run_alpha_sweep(variant, alphas, base_config, train_stream, valid_stream, seeds=2, workers=1):
    """Train ``seeds`` replicas (seeds 1..N) per alpha and return one row per replica.

    Alpha 0 means a single hidden layer.  Divergent replicas are reported
    with a NaN cost and the sweep continues.
    """
    cells = [(alpha, seed) for alpha in alphas for seed in range(1, seeds + 1)]
    base = TrainConfig(**{**base_config.to_dict(), "n_layers": 2})

    def cfg_for(alpha):
        return base if alpha else TrainConfig(**{**base.to_dict(), "n_layers": 1})

    if workers <= 1:
        return [_sweep_cell(cfg_for(a), variant, a, s, train_stream, valid_stream) for a, s in cells]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(workers) as pool:
        futures = [pool.submit(_sweep_cell, cfg_for(a), variant, a, s, train_stream, valid_stream) for a, s in cells]
        return [f.result() for f in futures]


def write_sweep_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_HEADER)
        for row in rows:
            writer.writerow(row.as_csv())


def read_sweep_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SWEEP_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [
            SweepRow(r["dataset"], r["variant"], float(r["alpha"]), int(r["n1"]), int(r["n2"]),
                     int(r["seed"]), float(r["min_cost"]), int(r["updates"]))
            for r in reader
        ]


def summarize_sweep(rows):
    """Per (variant, alpha): mean and best of the per-seed minima, and their corrected std.

    ``std`` is ``None`` when only one finite replica exists.
    """
    groups = {}
    for row in rows:
        groups.setdefault((row.variant, row.alpha), []).append(row)
    summary = []
    for (variant, alpha), group in sorted(groups.items()):
        costs = np.array([r.min_cost for r in group if math.isfinite(r.min_cost)])
        summary.append({
            "variant": variant,
            "alpha": alpha,
            "n1": group[0].n1,
            "n2": group[0].n2,
            "replicas": len(costs),
            "mean": float(costs.mean()) if len(costs) else math.nan,
            "best": float(costs.min()) if len(costs) else math.nan,
            "std": float(costs.std(ddof=1)) if len(costs) >= 2 else None,
        })
    return summary
