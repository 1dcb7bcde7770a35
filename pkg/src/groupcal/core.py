"""Data model: datasets, groups, group distributions, groupings and error profiles.

Indices are 0-based throughout. All containers are immutable after
construction; numpy arrays held by them are flagged read-only.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Sequence, Union

import numpy as np

WEIGHT_TOL = 1e-9


class ValidationError(ValueError):
    """Input violates a documented invariant."""


class DegenerateGroupError(ValidationError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Features, binary labels and predictor outputs for N datapoints.

    Parameters
    ----------
    features : array_like, shape (N, d) or (N,)
        Real-valued inputs. A 1-d array is read as a single feature.
    labels : array_like, shape (N,)
        Binary labels in {0, 1}.
    predictions : array_like, shape (N,)
        The predictor evaluated at each input, in [0, 1].
    feature_names : sequence of str, optional

    Raises
    ------
    ValidationError
        On length mismatch, labels outside {0, 1}, predictions outside
        [0, 1], non-finite values, or datapoints with identical features
        but different predictions.
    """

    features: np.ndarray
    labels: np.ndarray
    predictions: np.ndarray
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise ValidationError(f"features must be 2-d, got shape {X.shape}")
        y_raw = np.asarray(self.labels)
        p = np.asarray(self.predictions, dtype=float)
        n = X.shape[0]
        if n < 1:
            raise ValidationError("dataset must contain at least one datapoint")
        if y_raw.shape != (n,) or p.shape != (n,):
            raise ValidationError(
                f"column lengths differ: features {n}, labels {y_raw.shape}, "
                f"predictions {p.shape}")
        if not np.all(np.isfinite(X)):
            row = int(np.argwhere(~np.isfinite(X))[0, 0])
            raise ValidationError(f"non-finite feature at index {row}")
        bad = ~np.isin(y_raw, (0, 1))
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise ValidationError(f"label {y_raw[i]!r} at index {i} is not in {{0, 1}}")
        bad = ~((p >= 0.0) & (p <= 1.0))
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise ValidationError(f"prediction {p[i]!r} at index {i} is outside [0, 1]")
        if self.feature_names is not None:
            names = tuple(str(s) for s in self.feature_names)
            if len(names) != X.shape[1]:
                raise ValidationError("feature_names length does not match d")
            object.__setattr__(self, "feature_names", names)

        object.__setattr__(self, "features", _frozen(X))
        object.__setattr__(self, "labels", _frozen(y_raw.astype(np.int64)))
        object.__setattr__(self, "predictions", _frozen(p))

        conflict = inconsistent_duplicates(X, p)
        if conflict is not None:
            i, j = conflict
            raise ValidationError(
                f"datapoints {i} and {j} share a feature vector but have "
                f"predictions {p[i]!r} and {p[j]!r}")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @cached_property
    def input_ids(self) -> np.ndarray:
        """Level-set id of each datapoint under exact feature equality."""
        _, inv = np.unique(self.features, axis=0, return_inverse=True)
        return _frozen(inv.reshape(-1).astype(np.int64))

    @cached_property
    def bayes_labels(self) -> np.ndarray:
        """Empirical conditional label mean at each datapoint's input."""
        ids = self.input_ids
        sums = np.bincount(ids, weights=self.labels.astype(float))
        counts = np.bincount(ids)
        return _frozen((sums / counts)[ids])

    @cached_property
    def residuals(self) -> np.ndarray:
        return _frozen(self.predictions - self.labels)

    def fingerprint(self) -> dict[str, Any]:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.features, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.labels, dtype="<i8").tobytes())
        h.update(np.ascontiguousarray(self.predictions, dtype="<f8").tobytes())
        return {"n": self.n, "d": self.d, "sha256": h.hexdigest()}


def inconsistent_duplicates(features: np.ndarray, predictions: np.ndarray):
    """Return ``(i, j)``, the first pair with equal features but unequal predictions, or None.

    ``j`` is the smallest offending index and ``i`` the first datapoint sharing its input.
    """
    _, inv = np.unique(features, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    rep = np.full(inv.max() + 1, len(inv), dtype=np.int64)
    np.minimum.at(rep, inv, np.arange(len(inv)))
    bad = np.flatnonzero(predictions != predictions[rep[inv]])
    if bad.size == 0:
        return None
    j = int(bad[0])
    return int(rep[inv[j]]), j


@dataclass(frozen=True)
class Group:
    """A set of datapoint indices (stored sorted)."""

    indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(sorted({int(i) for i in self.indices}))
        object.__setattr__(self, "indices", idx)

    def __len__(self):
        return len(self.indices)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.indices, dtype=np.int64)


@dataclass(frozen=True, eq=False)
class GroupDistribution:
    """Nonnegative datapoint weights summing to one (a dense length-N vector)."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1:
            raise ValidationError("weights must be a 1-d vector over datapoints")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValidationError("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValidationError(f"weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "weights", _frozen(w))

    @classmethod
    def from_group(cls, group: Group, n: int) -> "GroupDistribution":
        """Uniform distribution over a group's datapoints."""
        if len(group) == 0:
            raise DegenerateGroupError("degenerate group: no datapoints")
        w = np.zeros(n)
        w[group.array] = 1.0 / len(group)
        return cls(w)

    @classmethod
    def point_mass(cls, index: int, n: int) -> "GroupDistribution":
        w = np.zeros(n)
        w[index] = 1.0
        return cls(w)


Member = Union[Group, GroupDistribution]
KINDS = ("partition", "overlapping", "weighted")


@dataclass(frozen=True, eq=False)
class Grouping:
    """A family of groups (or group distributions) over the index set ``range(n)``.

    ``measure`` is ``"uniform"``, ``"empirical"`` (proportional to group size;
    uniform for weighted members, whose total mass is always one) or an
    explicit weight vector over members.
    """

    kind: str
    members: tuple
    n: int
    measure: Any = "empirical"
    provenance: dict = field(default_factory=dict)
    anchors: tuple[int, ...] | None = None
    input_complete: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown grouping kind {self.kind!r}")
        members = tuple(self.members)
        object.__setattr__(self, "members", members)
        want = GroupDistribution if self.kind == "weighted" else Group
        for m in members:
            if not isinstance(m, want):
                raise ValidationError(
                    f"{self.kind} grouping members must be {want.__name__}")
            if want is Group and m.indices and (m.indices[0] < 0 or m.indices[-1] >= self.n):
                raise ValidationError("group index out of range")
            if want is GroupDistribution and m.weights.shape != (self.n,):
                raise ValidationError("distribution length does not match n")
        if self.kind == "partition":
            seen = np.zeros(self.n, dtype=np.int64)
            for m in members:
                seen[m.array] += 1
            if np.any(seen != 1):
                raise ValidationError(
                    "partition members must be disjoint and cover every index")
        if not isinstance(self.measure, str):
            mw = np.asarray(self.measure, dtype=float)
            if mw.shape != (len(members),) or np.any(mw < 0) or abs(mw.sum() - 1) > WEIGHT_TOL:
                raise ValidationError(
                    "explicit measure must be nonnegative, one weight per member, summing to 1")
            object.__setattr__(self, "measure", _frozen(mw))
        elif self.measure not in ("uniform", "empirical"):
            raise ValidationError(f"unknown measure {self.measure!r}")
        if self.anchors is not None:
            anchors = tuple(int(a) for a in self.anchors)
            if len(anchors) != len(members):
                raise ValidationError("need one anchor per member")
            object.__setattr__(self, "anchors", anchors)

    def __len__(self):
        return len(self.members)

    def member_sizes(self) -> np.ndarray:
        if self.kind == "weighted":
            return np.ones(len(self.members))
        return np.array([len(m) for m in self.members], dtype=float)

    def measure_weights(self) -> np.ndarray:
        if isinstance(self.measure, np.ndarray):
            return self.measure.copy()
        if self.measure == "uniform":
            return np.full(len(self.members), 1.0 / len(self.members))
        sizes = self.member_sizes()
        return sizes / sizes.sum()

    def with_measure(self, measure) -> "Grouping":
        return Grouping(self.kind, self.members, self.n, measure,
                        dict(self.provenance), self.anchors, self.input_complete)

    def describe(self) -> dict[str, Any]:
        measure = self.measure if isinstance(self.measure, str) else self.measure.tolist()
        return {"kind": self.kind, "members": len(self.members),
                "measure": measure, **self.provenance}


@dataclass(frozen=True, eq=False)
class ErrorProfile:
    """Weighted collection of group calibration errors."""

    values: np.ndarray
    weights: np.ndarray
    signed: bool = True

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if v.size == 0 or v.shape != w.shape:
            raise ValidationError("values and weights must be nonempty and of equal length")
        if not np.all(np.isfinite(v)):
            raise ValidationError("error values must be finite")
        if np.any(w < 0) or abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValidationError("profile weights must be nonnegative and sum to 1")
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "weights", _frozen(w))

    @classmethod
    def uniform(cls, values: Sequence[float], signed: bool = True) -> "ErrorProfile":
        v = np.asarray(values, dtype=float)
        return cls(v, np.full(v.size, 1.0 / v.size), signed)

    def __len__(self):
        return self.values.size

    def mean(self) -> float:
        return float(np.dot(self.weights, self.values) / self.weights.sum())

    def is_constant(self) -> bool:
        return bool(np.all(self.values == self.values[0]))

    def replace(self, values=None, weights=None) -> "ErrorProfile":
        return ErrorProfile(self.values if values is None else values,
                            self.weights if weights is None else weights, self.signed)


def group_error(dataset: Dataset, group: Group) -> float:
    """Signed calibration error of a group: mean of prediction minus label.

    >>> ds = Dataset([[0.0], [1.0]], [0, 1], [0.2, 0.4])
    >>> round(group_error(ds, Group((0, 1))), 12)
    -0.2
    """
    if len(group) == 0:
        raise DegenerateGroupError("degenerate group: no datapoints")
    idx = group.array
    if idx[0] < 0 or idx[-1] >= dataset.n:
        raise ValidationError("group index out of range")
    return float(dataset.residuals[idx].mean())


def empirical_bayes(dataset: Dataset) -> dict[tuple[float, ...], float]:
    """Mean label for each distinct feature vector (keys are feature tuples)."""
    out: dict[tuple[float, ...], float] = {}
    first = np.unique(dataset.input_ids, return_index=True)[1]
    for i in first:
        out[tuple(dataset.features[i].tolist())] = float(dataset.bayes_labels[i])
    return out


def generalized_error(dataset: Dataset, dist: GroupDistribution) -> float:
    """Expected prediction minus empirical Bayes label under ``dist``.

    The weights must depend on a datapoint only through its feature vector;
    under that condition the result equals the weighted mean residual.
    """
    w = dist.weights
    if w.shape != (dataset.n,):
        raise ValidationError("distribution length does not match dataset")
    total = w.sum()
    if abs(total - 1.0) > WEIGHT_TOL:
        raise ValidationError(f"distribution weights sum to {total!r}, not 1")
    ids = dataset.input_ids
    per_input = np.bincount(ids, weights=w) / np.bincount(ids)
    if np.max(np.abs(per_input[ids] - w)) > 1e-12 * max(1.0, float(w.max())):
        raise ValidationError(
            "distribution assigns different weights to identical inputs")
    return float(np.dot(w, dataset.predictions - dataset.bayes_labels))


def member_errors(dataset: Dataset, grouping: Grouping):
    """Signed error per nonempty member.

    Returns ``(kept, errors, measure)`` where ``kept`` lists member positions,
    ``errors`` their signed errors and ``measure`` the renormalized measure.
    """
    if grouping.n != dataset.n:
        raise ValidationError(
            f"grouping is over {grouping.n} indices but dataset has {dataset.n}")
    if grouping.input_complete and grouping.kind != "weighted":
        check_input_complete(dataset, grouping)
    kept, errs = [], []
    for j, m in enumerate(grouping.members):
        if grouping.kind == "weighted":
            errs.append(generalized_error(dataset, m))
        elif len(m) == 0:
            continue
        else:
            errs.append(group_error(dataset, m))
        kept.append(j)
    if not kept:
        raise ValidationError("vacuous grouping: every member is empty")
    kept = np.asarray(kept, dtype=np.int64)
    w = grouping.measure_weights()[kept]
    if w.sum() <= 0:
        raise ValidationError("vacuous grouping: nonempty members carry no measure")
    return kept, np.asarray(errs, dtype=float), w / w.sum()


def error_profile(dataset: Dataset, grouping: Grouping,
                  signedness: str = "absolute") -> ErrorProfile:
    """Assemble the error profile of ``grouping`` on ``dataset``.

    ``signedness`` is ``"signed"`` or ``"absolute"``. Empty members are
    dropped and the measure renormalized over the rest.
    """
    if signedness not in ("signed", "absolute"):
        raise ValidationError(f"signedness must be 'signed' or 'absolute', got {signedness!r}")
    _, errs, w = member_errors(dataset, grouping)
    if signedness == "absolute":
        errs = np.abs(errs)
    return ErrorProfile(errs, w, signed=signedness == "signed")


def check_input_complete(dataset: Dataset, grouping: Grouping) -> None:
    """Raise unless every group holds all or none of each input's datapoints."""
    ids = dataset.input_ids
    level_size = np.bincount(ids)
    for j, m in enumerate(grouping.members):
        if len(m) == 0:
            continue
        u, c = np.unique(ids[m.array], return_counts=True)
        if np.any(c != level_size[u]):
            raise ValidationError(
                f"member {j} splits the datapoints of an input; grouping is not input-complete")
