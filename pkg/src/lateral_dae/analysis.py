"""Invariance, connection significance and pooling structure of trained models."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .network import encode

MIN_VARIANCE = 1e-12
GAMMA_HEADER = ("layer", "neuron", "gamma", "significance", "mean_sign")
EDGE_HEADER = ("upper", "lower", "sign", "significance")


def compute_gamma(activations):
    """Invariance of each neuron over transformation sets.

    ``activations`` has shape ``(S, T, n)``.  For neuron i the result is the
    population variance of its per-set means divided by its population
    variance over all ``S * T`` samples.  Neurons whose total variance is
    below 1e-12 get NaN and are listed in the second return value.
    """
    acts = np.asarray(activations, dtype=np.float64)
    if acts.ndim == 2:
        acts = acts[..., None]
    S, T, _ = acts.shape
    if S < 2 or T < 2:
        raise ValueError(f"need at least 2 sets of at least 2 members, got {S}x{T}")
    set_means = acts.mean(axis=1)
    total = acts.reshape(S * T, -1).var(axis=0)
    between = set_means.var(axis=0)
    excluded = np.flatnonzero(total < MIN_VARIANCE)
    gamma = np.full(total.shape, np.nan)
    ok = total >= MIN_VARIANCE
    gamma[ok] = between[ok] / total[ok]
    return gamma, excluded


def layer_activations(params, inputs):
    """Encoder activations h(0..L) for an array of clean inputs of any leading shape."""
    inputs = np.asarray(inputs, dtype=params.dtype)
    lead = inputs.shape[:-1]
    h, _ = encode(params, inputs.reshape(-1, inputs.shape[-1]))
    return [layer.reshape(lead + (layer.shape[-1],)) for layer in h]


def layer_gammas(params, transform_sets):
    """Per-layer ``(gamma, excluded)`` for the clean members of ``transform_sets``."""
    sets = getattr(transform_sets, "sets", transform_sets)
    return [compute_gamma(h) for h in layer_activations(params, sets)]


def activation_variances(params, samples):
    """Population variance of every neuron of h(0..L) over clean ``samples``."""
    return [h.astype(np.float64).var(axis=0) for h in layer_activations(params, samples)]


def compute_significance(params, variances):
    """Edge significances between consecutive layers.

    Returns a list whose entry ``l`` is an ``(n_{l+1}, n_l)`` matrix: row i,
    column j is the share of ``var(h_j(l))`` attributed to upper neuron i
    through the decoder weight Wg(l).  Raw shares ``Wg(l)[j, i]**2 *
    var(h_i(l+1))`` are rescaled per lower neuron j so that they sum to
    ``var(h_j(l))``; this treats upper neurons as independent.
    """
    spec = params.spec
    edges = []
    for l in range(spec.n_layers):
        wg = np.asarray(params.decoder_weight(l), dtype=np.float64)  # (n_l, n_{l+1})
        upper = np.asarray(variances[l + 1], dtype=np.float64)
        lower = np.asarray(variances[l], dtype=np.float64)
        raw = (wg ** 2 * upper[None, :]).T  # (n_{l+1}, n_l)
        incoming = raw.sum(axis=0)
        factor = np.divide(lower, incoming, out=np.zeros_like(lower), where=incoming > 0)
        edges.append(raw * factor[None, :])
    return edges


def neuron_significance(edges):
    """Total outgoing significance of each upper neuron, per layer pair."""
    return [e.sum(axis=1) for e in edges]


def mean_weight_sign(params, edges):
    """Significance-weighted average sign of each upper neuron's decoder weights.

    Entry ``l`` covers the neurons of layer l+1.  A neuron with no
    significance at all falls back to the plain average sign.
    """
    out = []
    for l, e in enumerate(edges):
        signs = np.sign(np.asarray(params.decoder_weight(l), dtype=np.float64)).T  # (n_{l+1}, n_l)
        total = e.sum(axis=1)
        weighted = np.divide((signs * e).sum(axis=1), total, out=signs.mean(axis=1), where=total > 0)
        out.append(weighted)
    return out


@dataclass
class InvarianceReport:
    layer: int
    gamma: np.ndarray
    significance: np.ndarray
    mean_sign: np.ndarray
    excluded: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def mean_gamma(self):
        return float(np.nanmean(self.gamma)) if np.isfinite(self.gamma).any() else float("nan")


def invariance_reports(params, transform_sets, samples):
    """One report per layer 0..L from transformation sets and a large clean sample."""
    gammas = layer_gammas(params, transform_sets)
    edges = compute_significance(params, activation_variances(params, samples))
    sig = neuron_significance(edges)
    signs = mean_weight_sign(params, edges)
    reports = []
    for l, (gamma, excluded) in enumerate(gammas):
        n = gamma.shape[0]
        reports.append(InvarianceReport(
            layer=l,
            gamma=gamma,
            significance=sig[l - 1] if l >= 1 else np.full(n, np.nan),
            mean_sign=signs[l - 1] if l >= 1 else np.full(n, np.nan),
            excluded=excluded,
        ))
    return reports, edges


def invariant_sign_median(report, fraction=0.1):
    """Median mean-sign over the most invariant ``fraction`` of a layer's neurons."""
    ok = np.flatnonzero(np.isfinite(report.gamma))
    k = max(1, int(round(fraction * len(ok))))
    top = ok[np.argsort(-report.gamma[ok], kind="stable")[:k]]
    return float(np.median(report.mean_sign[top]))


def _rank_desc(values):
    """Indices sorted by value descending, ties by index ascending."""
    values = np.asarray(values)
    return np.lexsort((np.arange(len(values)), -values))


@dataclass
class PoolingGroup:
    neuron: int
    link: float
    members: np.ndarray
    member_links: np.ndarray


@dataclass
class PoolingReport:
    anchor: int
    groups: list
    features: dict
    empty: bool = False


def extract_poolings(params, edges, anchor, k_groups=3, k_members=20, whitener=None):
    """Pooling groups that a layer-1 neuron takes part in.

    Follows the strongest significance links from ``anchor`` up to layer 2,
    then for each chosen layer-2 neuron walks back to its strongest layer-1
    inputs.  ``features`` maps every referenced layer-1 neuron to its
    encoder row, dewhitened when a whitener is given.
    """
    sig = np.asarray(edges[1] if isinstance(edges, (list, tuple)) else edges)  # (n2, n1)
    up = sig[:, anchor]
    if not np.any(up > 0):
        return PoolingReport(anchor, [], {}, empty=True)
    groups = []
    linked = [i for i in _rank_desc(up) if up[i] > 0]
    for i in linked[:k_groups]:
        members = _rank_desc(sig[i])[:k_members]
        groups.append(PoolingGroup(int(i), float(up[i]), members, sig[i, members]))
    wf = np.asarray(params.encoder_weight(1), dtype=np.float64)
    referenced = sorted({anchor} | {int(j) for g in groups for j in g.members})
    features = {}
    for j in referenced:
        row = wf[j]
        features[j] = whitener.inverse(row) - whitener.mean if whitener is not None else row.copy()
    return PoolingReport(anchor, groups, features)


def _order(gamma):
    g = np.where(np.isfinite(gamma), gamma, np.inf)
    return np.lexsort((np.arange(len(g)), g))


def export_connection_graph(params, edges, gammas, path, layer=None):
    """Write the edges between ``layer`` and ``layer - 1`` (default: top pair).

    Rows are ordered by the upper neuron's gamma ascending, then the lower
    neuron's gamma ascending, ties broken by index.  Returns the rows.
    """
    layer = params.spec.n_layers if layer is None else layer
    sig = edges[layer - 1]
    wg = np.asarray(params.decoder_weight(layer - 1))
    rows = []
    for i in _order(gammas[layer]):
        for j in _order(gammas[layer - 1]):
            rows.append((int(i), int(j), int(np.sign(wg[j, i])), float(sig[i, j])))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(EDGE_HEADER)
        for i, j, sign, s in rows:
            writer.writerow([i, j, sign, repr(s)])
    return rows


def write_gamma_report(reports, path):
    """CSV of every neuron, each layer ordered by gamma ascending."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(GAMMA_HEADER)
        for rep in reports:
            for i in _order(rep.gamma):
                writer.writerow([rep.layer, int(i), repr(float(rep.gamma[i])),
                                 repr(float(rep.significance[i])), repr(float(rep.mean_sign[i]))])


def read_gamma_report(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != GAMMA_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [{k: (int(v) if k in ("layer", "neuron") else float(v)) for k, v in r.items()} for r in reader]
