"""Named calibration scores built from a grouping, an error sign and an agglomerator."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .agglomerate import Agglomerator, apply, maximum, mean
from .core import Dataset, ErrorProfile, Grouping, ValidationError, member_errors
from .grouping import BinningScheme, KernelSpec, MetricSpec, mlce_groups, prediction_bins


@dataclass(frozen=True)
class GroupRow:
    group: int
    size: int | None
    weight: float
    signed: float
    absolute: float
    anchor: int | None = None

    def as_dict(self) -> dict[str, Any]:
        return {"group": self.group, "size": self.size, "weight": self.weight,
                "signed": self.signed, "absolute": self.absolute, "anchor": self.anchor}


@dataclass(frozen=True)
class ScoreReport:
    """Global score plus the per-group table it was computed from."""

    name: str
    value: float
    groups: tuple[GroupRow, ...]
    signedness: str
    grouping: dict[str, Any]
    agglomerator: dict[str, Any]
    dataset: dict[str, Any]
    notes: dict[str, Any] = field(default_factory=dict)

    def profile(self) -> ErrorProfile:
        col = "signed" if self.signedness == "signed" else "absolute"
        return ErrorProfile([getattr(r, col) for r in self.groups],
                            [r.weight for r in self.groups], self.signedness == "signed")

    def recompute(self) -> float:
        """Re-derive the global value from the table and agglomerator description."""
        return apply(Agglomerator.from_dict(self.agglomerator), self.profile())

    def as_dict(self) -> dict[str, Any]:
        return {"name": self.name, "value": self.value, "signedness": self.signedness,
                "grouping": self.grouping, "agglomerator": self.agglomerator,
                "dataset": self.dataset, "notes": self.notes,
                "groups": [r.as_dict() for r in self.groups]}


def global_score(dataset: Dataset, grouping: Grouping, signedness: str,
                 agg: Agglomerator, name: str | None = None,
                 notes: dict[str, Any] | None = None) -> ScoreReport:
    """Agglomerate the group errors of ``grouping`` into one score.

    Signed profiles under a deviation-type agglomerator give fairness
    scores; absolute profiles under a risk-type one give quality scores.
    Both signed and absolute errors are stored per group either way.
    """
    if signedness not in ("signed", "absolute"):
        raise ValidationError(f"signedness must be 'signed' or 'absolute', got {signedness!r}")
    kept, errs, w = member_errors(dataset, grouping)
    signed = signedness == "signed"
    profile = ErrorProfile(errs if signed else np.abs(errs), w, signed)
    value = apply(agg, profile)
    sizes = None if grouping.kind == "weighted" else grouping.member_sizes()
    rows = tuple(
        GroupRow(int(j), None if sizes is None else int(sizes[j]), float(wj),
                 float(e), float(abs(e)),
                 None if grouping.anchors is None else grouping.anchors[j])
        for j, e, wj in zip(kept, errs, w))
    return ScoreReport(name or agg.kind, float(value), rows, signedness,
                       grouping.describe(), agg.describe(), dataset.fingerprint(),
                       dict(notes or {}))


def ece(dataset: Dataset, scheme: BinningScheme) -> ScoreReport:
    """Expected calibration error: bin-size-weighted mean of absolute bin errors."""
    g = prediction_bins(dataset, scheme, measure="empirical")
    return global_score(dataset, g, "absolute", mean(), name="ece")


def ace(dataset: Dataset, scheme: BinningScheme) -> ScoreReport:
    """Average calibration error: nonempty bins weighted equally."""
    g = prediction_bins(dataset, scheme, measure="uniform")
    return global_score(dataset, g, "absolute", mean(), name="ace")


def mce(dataset: Dataset, scheme: BinningScheme) -> ScoreReport:
    """Maximum absolute bin error."""
    g = prediction_bins(dataset, scheme, measure="empirical")
    return global_score(dataset, g, "absolute", maximum(), name="mce")


def brier(dataset: Dataset) -> float:
    r = dataset.residuals
    return float(np.dot(r, r) / dataset.n)


def brier_decomposition(dataset: Dataset, by: str = "inputs") -> tuple[float, float]:
    """Split the Brier score into calibration and refinement terms.

    Datapoints are grouped into level sets of the predictions or of the
    inputs. The calibration term is the size-weighted mean squared group
    error; the refinement term is the size-weighted ``pbar * (1 - pbar)``
    of the group label means. The two add up to :func:`brier`.
    """
    if by == "predictions":
        ids = np.unique(dataset.predictions, return_inverse=True)[1].reshape(-1)
    elif by == "inputs":
        ids = dataset.input_ids
    else:
        raise ValidationError(f"by must be 'predictions' or 'inputs', got {by!r}")
    counts = np.bincount(ids).astype(float)
    c = np.bincount(ids, weights=dataset.residuals) / counts
    pbar = np.bincount(ids, weights=dataset.labels.astype(float)) / counts
    share = counts / dataset.n
    return float(np.dot(share, c * c)), float(np.dot(share, pbar * (1.0 - pbar)))


def local_errors(dataset: Dataset, grouping: Grouping) -> list[tuple[int, float]]:
    """Signed error of each anchor's group or distribution, as ``(anchor, error)``."""
    if grouping.kind == "partition" or grouping.anchors is None:
        raise ValidationError("local errors need an anchored overlapping or weighted grouping")
    kept, errs, _ = member_errors(dataset, grouping)
    return [(grouping.anchors[j], float(e)) for j, e in zip(kept, errs)]


def mlce(dataset: Dataset, spec: KernelSpec, scheme: BinningScheme,
         metric: MetricSpec | None = None, absolute: bool = False) -> ScoreReport:
    """Maximum local calibration error over bin-restricted kernel distributions.

    By default the signed errors are maximised; ``absolute=True`` maximises
    their absolute values instead and is flagged in the report notes.
    """
    g = mlce_groups(dataset, spec, scheme, metric)
    sign = "absolute" if absolute else "signed"
    return global_score(dataset, g, sign, maximum(), name="mlce",
                        notes={"absolute_variant": bool(absolute)})
