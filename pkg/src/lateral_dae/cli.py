"""Command-line driver: ``lateral-dae {prepare,train,sweep,gradcheck,analyze,report}``.

Settings come from an optional ``--config`` file of ``[section]`` blocks with
``key = value`` lines; command-line flags override the file.  Unknown keys
are rejected.  Exit status: 0 on success, 1 when a check or run fails, 2 on
bad input.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import os
import sys
import warnings

import numpy as np

from . import analysis, checkpoint, data, plots
from .gradients import finite_diff_check
from .network import ModelSpec, OvercompleteInitWarning, init_params
from .trainer import (
    SWEEP_HEADER,
    TrainConfig,
    TrainingDiverged,
    read_sweep_csv,
    run_alpha_sweep,
    substream,
    summarize_sweep,
    train,
    write_sweep_csv,
)

log = logging.getLogger("lateral_dae")

SECTIONS = {
    "data": {
        "dataset": str, "data_dir": str, "data_path": str, "sidecar": str, "whitener": str,
        "patch_size": int, "whiten_k": int, "whiten_patches": int, "dim": int, "stride": int,
    },
    "model": {"variant": str, "alpha": float, "n_layers": int, "budget": int, "layer_sizes": str},
    "training": {
        "sigma_n": float, "batch": int, "updates": int, "seed": int, "valid_interval": int,
        "valid_batches": int, "precision": str, "rho": float, "epsilon": float, "centering_rate": float,
    },
    "sweep": {"alphas": str, "seeds": int, "workers": int},
    "analysis": {
        "checkpoint": str, "kind": str, "sets": int, "samples": int, "anchors": str,
        "k_groups": int, "k_members": int,
    },
    "output": {"out": str, "out_dir": str, "input": str, "gradcheck_seeds": int, "threshold": float},
}
KEY_TYPES = {k: t for keys in SECTIONS.values() for k, t in keys.items()}
DEFAULTS = {
    "dataset": "synthetic", "patch_size": 16, "whiten_k": 256, "whiten_patches": 50000, "dim": 256, "stride": 2,
    "variant": "mod", "alpha": 0.0, "n_layers": 1, "budget": 1_000_000,
    "sigma_n": 0.5, "batch": 50, "updates": 1000, "seed": 1, "valid_interval": 1000, "valid_batches": 200,
    "precision": "float32", "rho": 0.99, "epsilon": 1e-8, "centering_rate": 0.99,
    "seeds": 2, "workers": 1, "kind": "translation", "sets": 500, "samples": 10000,
    "k_groups": 3, "k_members": 20, "out_dir": ".", "gradcheck_seeds": 20, "threshold": 1e-4,
}


class UsageError(ValueError):
    pass


def read_config_file(path):
    parser = configparser.ConfigParser(interpolation=None)
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    values = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise UsageError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SECTIONS[section]:
                raise UsageError(f"{path}: unknown key {key!r} in [{section}]")
            values[key] = _convert(key, raw)
    return values


def _convert(key, raw):
    try:
        return KEY_TYPES[key](raw)
    except ValueError as exc:
        raise UsageError(f"bad value for {key}: {raw!r}") from exc


def resolve(args):
    """Defaults, then the config file, then explicit flags."""
    values = dict(DEFAULTS)
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for key in KEY_TYPES:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    return values


def write_resolved(values, path, command):
    parser = configparser.ConfigParser(interpolation=None)
    parser["run"] = {"command": command}
    for section, keys in SECTIONS.items():
        present = {k: str(values[k]) for k in keys if values.get(k) is not None}
        if present:
            parser[section] = present
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)


def _floats(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def load_images(values):
    kind = values["dataset"]
    if kind == "cifar10":
        if not values.get("data_dir"):
            raise UsageError("dataset cifar10 needs data_dir")
        return data.load_cifar10(values["data_dir"])
    if kind == "raw":
        if not values.get("data_path") or not values.get("sidecar"):
            raise UsageError("dataset raw needs data_path and sidecar")
        return data.load_raw_images(values["data_path"], values["sidecar"])
    if kind == "synthetic":
        return None
    raise UsageError(f"unknown dataset {kind!r}; expected cifar10, raw or synthetic")


def fit_dataset_whitener(images, values):
    rng = substream(values["seed"], "whitening")
    train_set = images.split("train")
    if values["dataset"] == "cifar10":
        return data.fit_stream_whitener(train_set, values["patch_size"], values["whiten_patches"], values["whiten_k"], rng)
    return data.fit_global_scaler(train_set, values["patch_size"], values["whiten_patches"], rng)


def build_streams(values, dtype=np.float32):
    """``(images, whitener, train_stream, valid_stream)`` for the configured dataset."""
    images = load_images(values)
    if images is None:
        stream = data.GaussianStream(values["dim"], dtype)
        return None, None, stream, stream
    if values.get("whitener"):
        whitener = checkpoint.load_whitener(values["whitener"])
    else:
        whitener = fit_dataset_whitener(images, values)
    size = values["patch_size"]
    train_stream = data.PatchStream(images.split("train"), size, whitener, dtype)
    valid_stream = data.PatchStream(images.split("validation"), size, whitener, dtype)
    return images, whitener, train_stream, valid_stream


def train_config(values):
    sizes = values.get("layer_sizes")
    return TrainConfig(
        variant=values["variant"],
        layer_sizes=_ints(sizes) if sizes else None,
        alpha=values["alpha"],
        n_layers=values["n_layers"],
        budget=values["budget"],
        dataset=values["dataset"],
        sigma_n=values["sigma_n"],
        batch=values["batch"],
        updates=values["updates"],
        seed=values["seed"],
        valid_interval=values["valid_interval"],
        valid_batches=values["valid_batches"],
        precision=values["precision"],
        rho=values["rho"],
        epsilon=values["epsilon"],
        centering_rate=values["centering_rate"],
    )


def _out_path(values, default_name):
    if values.get("out"):
        return values["out"]
    os.makedirs(values["out_dir"], exist_ok=True)
    return os.path.join(values["out_dir"], default_name)


def cmd_prepare(values):
    images = load_images(values)
    if images is None:
        raise UsageError("prepare needs an image dataset (cifar10 or raw)")
    whitener = fit_dataset_whitener(images, values)
    path = _out_path(values, "whitener.ldae")
    checkpoint.save_whitener(path, whitener, extra={"resolved": values})
    print(f"whitener: {whitener.input_dim} -> {whitener.output_dim} dims, "
          f"retained variance {whitener.retained_variance_fraction:.4f}; wrote {path}")
    return 0


def cmd_train(values):
    config = train_config(values)
    _, whitener, train_stream, valid_stream = build_streams(values, config.dtype)
    path = _out_path(values, "model.ldae")
    extra = {"resolved": values}
    try:
        params, history, opt_state = train(config, train_stream, valid_stream)
        status = 0
    except TrainingDiverged as exc:
        print(f"error: {exc}; saving the last good parameters", file=sys.stderr)
        params, history, opt_state = exc.params, exc.history, None
        extra["diverged_at"] = exc.update
        status = 1
    checkpoint.save_checkpoint(path, params, whitener, opt_state, history, config, extra)
    hist_path = os.path.splitext(path)[0] + "_history.csv"
    with open(hist_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["update", "validation_cost"])
        for u, c in history.records:
            writer.writerow([u, repr(c)])
    write_resolved(values, os.path.splitext(path)[0] + "_config.ini", "train")
    print(f"{params.spec.label()}: best validation cost {history.best_cost:.6f}; wrote {path} and {hist_path}")
    return status


def cmd_sweep(values):
    config = train_config(values)
    if not values.get("alphas"):
        raise UsageError("sweep needs alphas")
    _, _, train_stream, valid_stream = build_streams(values, config.dtype)
    rows = run_alpha_sweep(values["variant"], _floats(values["alphas"]), config, train_stream, valid_stream,
                           seeds=values["seeds"], workers=values["workers"])
    path = _out_path(values, "sweep.csv")
    write_sweep_csv(rows, path)
    write_resolved(values, os.path.splitext(path)[0] + "_config.ini", "sweep")
    for r in summarize_sweep(rows):
        std = "n/a" if r["std"] is None else f"{r['std']:.5f}"
        print(f"{r['variant']} alpha={r['alpha']:g} {r['n1']}-{r['n2']}: best {r['best']:.5f} "
              f"mean {r['mean']:.5f} std {std}")
    print(f"wrote {path}")
    return 0 if all(np.isfinite(r.min_cost) for r in rows) else 1


def gradcheck_all(seeds=20, epsilon=1e-5):
    """Max finite-difference error per variant over sizes (8,6) and (8,6,3)."""
    results = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OvercompleteInitWarning)
        for variant in ("nolat", "add", "mod"):
            worst, excluded = 0.0, 0
            for sizes in ((8, 6), (8, 6, 3)):
                for seed in range(seeds):
                    rng = np.random.default_rng(seed)
                    params = init_params(ModelSpec(variant, sizes), rng)
                    for name, t in params.all_tensors().items():
                        if not name.startswith("W"):
                            t[...] = 0.5 * rng.standard_normal(t.shape)
                    x = rng.standard_normal((4, 8))
                    x_tilde = x + 0.5 * rng.standard_normal(x.shape)
                    err, n = finite_diff_check(params, x_tilde, x, epsilon)
                    worst, excluded = max(worst, err), excluded + n
            results[variant] = (worst, excluded)
    return results


def cmd_gradcheck(values):
    results = gradcheck_all(values["gradcheck_seeds"])
    ok = True
    for variant, (err, excluded) in results.items():
        passed = err < values["threshold"]
        ok &= passed
        print(f"{variant}: max relative error {err:.3e} ({excluded} kink-adjacent scalars excluded) "
              f"{'PASS' if passed else 'FAIL'}")
    return 0 if ok else 1


def cmd_analyze(values):
    if not values.get("checkpoint"):
        raise UsageError("analyze needs checkpoint")
    ckpt = checkpoint.load_checkpoint(values["checkpoint"])
    if ckpt.params is None or ckpt.params.spec.n_layers < 1:
        raise UsageError("analyze needs a checkpoint of a model with hidden layers")
    images = load_images(values)
    if images is None:
        raise UsageError("analyze needs an image dataset (cifar10 or raw)")
    whitener = ckpt.whitener or fit_dataset_whitener(images, values)
    params = ckpt.params.astype(np.float64)
    valid = images.split("validation")
    rng = substream(values["seed"], "analysis")
    sets = data.make_transform_sets(valid, whitener, values["kind"], rng, values["sets"],
                                    values["patch_size"], values["stride"])
    samples = data.PatchStream(valid, values["patch_size"], whitener, np.float64).sample(values["samples"], rng)
    reports, edges = analysis.invariance_reports(params, sets, samples)

    os.makedirs(values["out_dir"], exist_ok=True)
    out = values["out_dir"]
    analysis.write_gamma_report(reports, os.path.join(out, "gamma.csv"))
    gammas = [r.gamma for r in reports]
    analysis.export_connection_graph(params, edges, gammas, os.path.join(out, "edges.csv"))
    for rep in reports:
        print(f"layer {rep.layer}: mean {values['kind']} gamma {rep.mean_gamma:.3f}"
              f" ({len(rep.excluded)} zero-variance neurons excluded)")

    if params.spec.n_layers >= 2:
        anchors = _ints(values["anchors"]) if values.get("anchors") else \
            [int(i) for i in np.argsort(-edges[0].sum(axis=1), kind="stable")[:4]]
        features = {}
        with open(os.path.join(out, "poolings.csv"), "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["anchor", "group", "layer2_neuron", "link", "rank", "layer1_neuron", "member_link"])
            for a in anchors:
                rep = analysis.extract_poolings(params, edges, a, values["k_groups"], values["k_members"], whitener)
                for g, group in enumerate(rep.groups):
                    for rank, (j, s) in enumerate(zip(group.members, group.member_links)):
                        writer.writerow([a, g, group.neuron, repr(group.link), rank, int(j), repr(float(s))])
                features.update(rep.features)
        keys = sorted(features)
        np.savez(os.path.join(out, "pooling_features.npz"), neurons=np.array(keys, dtype=np.int64),
                 features=np.array([features[k] for k in keys]))
    write_resolved(values, os.path.join(out, "analysis_config.ini"), "analyze")
    print(f"wrote analysis to {out}")
    return 0


def cmd_report(values):
    src = values.get("input")
    if not src:
        raise UsageError("report needs input (a gamma or sweep CSV)")
    with open(src, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    target = values.get("out") or os.path.splitext(src)[0] + ".svg"
    if tuple(header) == analysis.GAMMA_HEADER:
        plots.gamma_scatter(analysis.read_gamma_report(src), target)
    elif tuple(header) == SWEEP_HEADER:
        plots.alpha_curve(summarize_sweep(read_sweep_csv(src)), target)
    else:
        raise UsageError(f"{src}: not a gamma report or sweep CSV")
    print(f"wrote {target}")
    return 0


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "gradcheck": cmd_gradcheck,
    "analyze": cmd_analyze,
    "report": cmd_report,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="lateral-dae", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config")
        for key, typ in KEY_TYPES.items():
            p.add_argument("--" + key.replace("_", "-"), dest=key, type=typ, default=None)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        values = resolve(args)
        return COMMANDS[args.command](values)
    except (UsageError, data.DataFormatError, checkpoint.CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
