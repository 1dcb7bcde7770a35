"""Grouping constructors: bins, feature grids, level sets, k-NN and kernel families."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterator

import numpy as np
from scipy.spatial.distance import cdist

from .core import Dataset, Group, GroupDistribution, Grouping, ValidationError

_CHUNK = 256


@dataclass(frozen=True)
class BinningScheme:
    """``count`` bins, ``mode`` 'equal-width' or 'equal-frequency', over
    ``space`` 'predictions' or a feature name / column index."""

    count: int
    mode: str = "equal-width"
    space: str | int = "predictions"

    def __post_init__(self):
        if int(self.count) < 1:
            raise ValidationError("bin count must be >= 1")
        if self.mode not in ("equal-width", "equal-frequency"):
            raise ValidationError(f"unknown binning mode {self.mode!r}")


@dataclass(frozen=True)
class MetricSpec:
    """L^p distance with optional per-dimension scaling ('none', 'range', 'std')."""

    p: float = 2
    scaling: str = "range"

    def __post_init__(self):
        if self.p not in (1, 2, np.inf):
            raise ValidationError(f"metric exponent must be 1, 2 or inf, got {self.p!r}")
        if self.scaling not in ("none", "range", "std"):
            raise ValidationError(f"unknown scaling {self.scaling!r}")

    def divisors(self, features: np.ndarray) -> np.ndarray:
        X = np.asarray(features, dtype=float)
        if self.scaling == "none":
            return np.ones(X.shape[1])
        if self.scaling == "range":
            div = X.max(axis=0) - X.min(axis=0)
        else:
            div = X.std(axis=0)
        # constant features get divisor 1
        return np.where(div > 0, div, 1.0)

    def as_dict(self):
        return {"p": "inf" if self.p == np.inf else int(self.p), "scaling": self.scaling}


def _gaussian(t):
    return np.exp(-0.5 * t * t)


def _epanechnikov(t):
    return np.clip(1.0 - t * t, 0.0, None)


def _boxcar(t):
    return (t <= 1.0).astype(float)


KERNELS = {"gaussian": _gaussian, "epanechnikov": _epanechnikov, "boxcar": _boxcar}

# Profile H and constants (c1, c2, c3, r) with c1*H <= k <= c2*H and
# k >= c3 on the ball of radius r; H bounded, decreasing, t^d H(t) -> 0.
KERNEL_CONSTRAINTS = {
    "gaussian": {"H": "exp(-t^2/2)", "c1": 1.0, "c2": 1.0, "c3": float(np.exp(-0.5)), "r": 1.0},
    "boxcar": {"H": "1{t<=1}", "c1": 1.0, "c2": 1.0, "c3": 1.0, "r": 1.0},
}


@dataclass(frozen=True)
class KernelSpec:
    shape: str = "gaussian"
    bandwidth: float = 1.0
    space: str = "features"

    def __post_init__(self):
        if self.shape not in KERNELS:
            raise ValidationError(f"unknown kernel shape {self.shape!r}")
        if not self.bandwidth > 0:
            raise ValidationError("kernel bandwidth must be > 0")
        if self.space not in ("features", "predictions"):
            raise ValidationError(f"unknown kernel space {self.space!r}")

    def __call__(self, dist: np.ndarray) -> np.ndarray:
        return KERNELS[self.shape](np.asarray(dist) / self.bandwidth)


def _bin_index(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    # half-open [l, u), final bin closed
    b = np.searchsorted(edges, values, side="right") - 1
    return np.clip(b, 0, len(edges) - 2)


def _resolve_feature(dataset: Dataset, space) -> int:
    if isinstance(space, (int, np.integer)):
        if not 0 <= space < dataset.d:
            raise ValidationError(f"feature column {space} out of range")
        return int(space)
    names = dataset.feature_names or ()
    if space in names:
        return names.index(space)
    raise ValidationError(f"unknown feature {space!r}")


def bin_edges(values: np.ndarray, scheme: BinningScheme, lo=0.0, hi=1.0) -> np.ndarray:
    K = int(scheme.count)
    if scheme.mode == "equal-width":
        return lo + (hi - lo) * (np.arange(K + 1) / K)
    if len(values) < K:
        raise ValidationError(
            f"equal-frequency binning needs N >= K (N={len(values)}, K={K})")
    s = np.sort(values)
    cuts = s[(np.arange(1, K) * len(s)) // K]
    return np.concatenate([[lo], cuts, [hi]])


def _partition_from_labels(labels: np.ndarray, n: int, provenance: dict,
                           measure="empirical") -> Grouping:
    uniq = np.unique(labels)
    members = tuple(Group(np.flatnonzero(labels == u)) for u in uniq)
    prov = dict(provenance)
    prov.setdefault("cells", uniq.tolist())
    return Grouping("partition", members, n, measure, prov, input_complete=True)


def prediction_bins(dataset: Dataset, scheme: BinningScheme, measure="empirical") -> Grouping:
    """Partition datapoints by the bin their prediction falls in.

    Empty bins are omitted; ``provenance['cells']`` records the bin number
    of each member and ``provenance['edges']`` the cut-points.
    """
    if scheme.space != "predictions":
        raise ValidationError("prediction_bins requires a scheme over predictions")
    edges = bin_edges(dataset.predictions, scheme)
    labels = _bin_index(dataset.predictions, edges)
    prov = {"constructor": "prediction_bins", "bins": int(scheme.count),
            "mode": scheme.mode, "edges": edges.tolist()}
    return _partition_from_labels(labels, dataset.n, prov, measure)


def feature_bins(dataset: Dataset, scheme: BinningScheme, measure="empirical") -> Grouping:
    """Partition by bins of a single named feature over its observed range."""
    col = _resolve_feature(dataset, scheme.space)
    x = dataset.features[:, col]
    lo, hi = float(x.min()), float(x.max())
    edges = bin_edges(x, scheme, lo, hi) if hi > lo else np.array([lo, hi])
    labels = _bin_index(x, edges)
    prov = {"constructor": "feature_bins", "feature": col, "bins": int(scheme.count),
            "mode": scheme.mode, "edges": edges.tolist()}
    return _partition_from_labels(labels, dataset.n, prov, measure)


def feature_grid(dataset: Dataset, bins_per_dim, metric: MetricSpec | None = None,
                 measure="empirical") -> Grouping:
    """Product grid of equal-width bins over each feature's observed range.

    Only nonempty cells become groups. A constant feature is collapsed to
    a single bin and a warning is recorded in the provenance. ``metric`` is
    recorded only: per-dimension rescaling does not move range-relative cells.
    """
    bins = [int(b) for b in bins_per_dim]
    if len(bins) != dataset.d:
        raise ValidationError(f"need {dataset.d} bin counts, got {len(bins)}")
    if any(b < 1 for b in bins):
        raise ValidationError("bin counts must be >= 1")
    warnings = []
    cols = []
    for s, B in enumerate(bins):
        x = dataset.features[:, s]
        lo, hi = float(x.min()), float(x.max())
        if hi == lo:
            if B > 1:
                warnings.append(f"feature {s} is constant; collapsed to 1 bin")
            cols.append(np.zeros(dataset.n, dtype=np.int64))
            continue
        edges = lo + (hi - lo) * (np.arange(B + 1) / B)
        cols.append(_bin_index(x, edges))
    cells = np.stack(cols, axis=1)
    uniq, labels = np.unique(cells, axis=0, return_inverse=True)
    prov = {"constructor": "feature_grid", "bins_per_dim": bins,
            "metric": (metric or MetricSpec()).as_dict(), "cells": uniq.tolist()}
    if warnings:
        prov["warnings"] = warnings
    return _partition_from_labels(labels.reshape(-1), dataset.n, prov, measure)


def level_sets(dataset: Dataset, by: str = "predictions", measure="empirical") -> Grouping:
    """Groups of exactly equal predictions (``by='predictions'``) or inputs."""
    if by == "predictions":
        labels = np.unique(dataset.predictions, return_inverse=True)[1].reshape(-1)
    elif by == "inputs":
        labels = dataset.input_ids
    else:
        raise ValidationError(f"level_sets by must be 'predictions' or 'inputs', got {by!r}")
    return _partition_from_labels(labels, dataset.n,
                                  {"constructor": "level_sets", "by": by}, measure)


def _points(dataset: Dataset, space: str, metric: MetricSpec):
    if space == "features":
        return dataset.features / metric.divisors(dataset.features)
    if space == "predictions":
        return dataset.predictions[:, None]
    raise ValidationError(f"space must be 'features' or 'predictions', got {space!r}")


def _distances(queries: np.ndarray, points: np.ndarray, p) -> np.ndarray:
    if p == 1:
        return cdist(queries, points, "cityblock")
    if p == np.inf:
        return cdist(queries, points, "chebyshev")
    return cdist(queries, points, "euclidean")


def _chunks(m: int) -> Iterator[slice]:
    for s in range(0, m, _CHUNK):
        yield slice(s, min(s + _CHUNK, m))


def nearest_neighbors(dataset: Dataset, queries: np.ndarray, k: int,
                      metric: MetricSpec | None = None, space: str = "features",
                      complete_inputs: bool = True) -> list[np.ndarray]:
    """Indices of the ``k`` nearest datapoints to each query point.

    ``queries`` live in raw feature space (or prediction space); the
    dataset's scaling is applied to both. Distance ties are broken by the
    smaller index. With ``complete_inputs``, every datapoint sharing an
    input with a selected one is added, so groups may exceed ``k``.
    """
    metric = metric or MetricSpec()
    if not 1 <= k <= dataset.n:
        raise ValidationError(f"k must be in [1, N={dataset.n}], got {k}")
    pts = _points(dataset, space, metric)
    q = np.asarray(queries, dtype=float)
    if space == "features":
        q = q.reshape(-1, dataset.d) / metric.divisors(dataset.features)
    else:
        q = q.reshape(-1, 1)
    ids = dataset.input_ids
    out = []
    for sl in _chunks(len(q)):
        D = _distances(q[sl], pts, metric.p)
        order = np.argsort(D, axis=1, kind="stable")[:, :k]
        for sel in order:
            if complete_inputs:
                sel = np.flatnonzero(np.isin(ids, ids[sel]))
            else:
                sel = np.sort(sel)
            out.append(sel)
    return out


def knn_groups(dataset: Dataset, k: int, metric: MetricSpec | None = None,
               space: str = "features", measure="uniform") -> Grouping:
    """One group per datapoint: its ``k`` nearest neighbours, itself included.

    Exact-duplicate inputs of any selected datapoint are always added, so
    a group can exceed ``k`` members; otherwise ties go to the smaller index.
    """
    metric = metric or MetricSpec()
    if space == "features":
        queries = dataset.features
    elif space == "predictions":
        queries = dataset.predictions
    else:
        raise ValidationError(f"space must be 'features' or 'predictions', got {space!r}")
    nbrs = nearest_neighbors(dataset, queries, k, metric, space)
    members = tuple(Group(s) for s in nbrs)
    prov = {"constructor": "knn_groups", "k": int(k), "space": space,
            "metric": metric.as_dict()}
    return Grouping("overlapping", members, dataset.n, measure, prov,
                    anchors=tuple(range(dataset.n)), input_complete=True)


def kernel_weights(dataset: Dataset, queries: np.ndarray, spec: KernelSpec,
                   metric: MetricSpec | None = None) -> np.ndarray:
    """Unnormalised kernel weights, shape (len(queries), N)."""
    metric = metric or MetricSpec()
    pts = _points(dataset, spec.space, metric)
    q = np.asarray(queries, dtype=float)
    if spec.space == "features":
        q = q.reshape(-1, dataset.d) / metric.divisors(dataset.features)
    else:
        q = q.reshape(-1, 1)
    return spec(_distances(q, pts, metric.p))


def _normalise_rows(W: np.ndarray, anchors) -> np.ndarray:
    tot = W.sum(axis=1)
    zero = np.flatnonzero(~(tot > 0))
    if zero.size:
        raise ValidationError(
            f"all kernel weights vanish for anchor {anchors[zero[0]]}; bandwidth too small")
    return W / tot[:, None]


def kernel_distributions(dataset: Dataset, spec: KernelSpec,
                         metric: MetricSpec | None = None, measure="uniform") -> Grouping:
    """One kernel-weighted distribution per datapoint anchor.

    Weights are proportional to ``k(dist / bandwidth)`` and normalised to
    sum to one; identical inputs automatically receive identical weights.
    """
    metric = metric or MetricSpec()
    queries = dataset.features if spec.space == "features" else dataset.predictions
    members = []
    for sl in _chunks(dataset.n):
        W = _normalise_rows(kernel_weights(dataset, queries[sl], spec, metric),
                            range(sl.start, sl.stop))
        members.extend(GroupDistribution(w) for w in W)
    prov = {"constructor": "kernel_distributions", "kernel": asdict(spec),
            "metric": metric.as_dict()}
    return Grouping("weighted", tuple(members), dataset.n, measure, prov,
                    anchors=tuple(range(dataset.n)), input_complete=True)


def mlce_groups(dataset: Dataset, spec: KernelSpec, scheme: BinningScheme,
                metric: MetricSpec | None = None, measure="uniform") -> Grouping:
    """Kernel distributions restricted to the anchor's prediction bin.

    The kernel acts on the raw feature space. Anchors whose masked weights
    all vanish are dropped and listed in ``provenance['dropped_anchors']``.
    """
    if scheme.space != "predictions":
        raise ValidationError("mlce_groups requires a binning scheme over predictions")
    metric = metric or MetricSpec()
    edges = bin_edges(dataset.predictions, scheme)
    bins = _bin_index(dataset.predictions, edges)
    queries = dataset.features if spec.space == "features" else dataset.predictions
    members, anchors, dropped = [], [], []
    for sl in _chunks(dataset.n):
        W = kernel_weights(dataset, queries[sl], spec, metric)
        W = W * (bins[None, :] == bins[sl, None])
        for a, w in zip(range(sl.start, sl.stop), W):
            tot = w.sum()
            if not tot > 0:
                dropped.append(a)
                continue
            members.append(GroupDistribution(w / tot))
            anchors.append(a)
    if not members:
        raise ValidationError("every MLCE anchor has vanishing weights")
    prov = {"constructor": "mlce_groups", "kernel": asdict(spec), "metric": metric.as_dict(),
            "bins": int(scheme.count), "mode": scheme.mode, "edges": edges.tolist()}
    if dropped:
        prov["dropped_anchors"] = dropped
    return Grouping("weighted", tuple(members), dataset.n, measure, prov,
                    anchors=tuple(anchors), input_complete=True)


def is_refinement(finer: Grouping, coarser: Grouping) -> bool:
    """True iff every cell of ``finer`` lies inside a cell of ``coarser``."""
    if finer.kind != "partition" or coarser.kind != "partition":
        raise ValidationError("is_refinement needs two partitions")
    if finer.n != coarser.n:
        raise ValidationError("partitions are over different index sets")
    owner = np.empty(coarser.n, dtype=np.int64)
    for j, m in enumerate(coarser.members):
        owner[m.array] = j
    return all(len(np.unique(owner[m.array])) <= 1 for m in finer.members)


def membership_counts(grouping: Grouping) -> np.ndarray:
    """Number of members containing each datapoint."""
    if grouping.kind == "weighted":
        raise ValidationError("membership is undefined for weighted groupings")
    counts = np.zeros(grouping.n, dtype=np.int64)
    for m in grouping.members:
        counts[m.array] += 1
    return counts
