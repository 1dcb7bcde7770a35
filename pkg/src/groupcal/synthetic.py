"""Synthetic distributions with known Bayes predictors, plus fixtures with known group-error structure."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, NamedTuple, Sequence

import numpy as np

from .core import Dataset, Group, ValidationError
from .grouping import KernelSpec, MetricSpec, kernel_weights, nearest_neighbors

Predictor = Callable[[np.ndarray], np.ndarray]

FAMILIES = ("linear-clipped", "logistic", "step", "constant")


@dataclass(frozen=True)
class BayesFunction:
    """Conditional label probability ``p(x)`` from a named family.

    * ``linear-clipped``: ``clip(intercept + weights . x, 0, 1)``
    * ``logistic``: ``sigmoid(intercept + weights . x)``
    * ``step``: ``high`` where ``x[0] > threshold``, else ``low``
    * ``constant``: ``value`` everywhere

    Missing ``weights`` default to ``(1, 0, ..., 0)``.
    """

    family: str = "linear-clipped"
    weights: tuple[float, ...] | None = None
    intercept: float = 0.0
    threshold: float = 0.5
    low: float = 0.2
    high: float = 0.8
    value: float = 0.5

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown Bayes family {self.family!r}")
        for name in ("low", "high", "value"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {v!r}")
        if self.weights is not None:
            object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))

    def _linear(self, X):
        w = np.zeros(X.shape[1])
        if self.weights is None:
            w[0] = 1.0
        else:
            if len(self.weights) != X.shape[1]:
                raise ValidationError("weights length does not match dimension")
            w[:] = self.weights
        return self.intercept + X @ w

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.family == "constant":
            return np.full(X.shape[0], self.value)
        if self.family == "step":
            return np.where(X[:, 0] > self.threshold, self.high, self.low)
        z = self._linear(X)
        if self.family == "logistic":
            return 1.0 / (1.0 + np.exp(-z))
        return np.clip(z, 0.0, 1.0)


@dataclass(frozen=True)
class SyntheticSpec:
    d: int = 1
    feature_law: str = "uniform"
    bayes: BayesFunction = field(default_factory=BayesFunction)
    n: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.d < 1 or self.d > 10:
            raise ValidationError("dimension must be in [1, 10]")
        if self.feature_law not in ("uniform", "normal"):
            raise ValidationError(f"unknown feature law {self.feature_law!r}")
        if self.n < 1:
            raise ValidationError("sample size must be >= 1")

    def as_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        d = dict(d)
        bayes = d.pop("bayes", {})
        if bayes.get("weights") is not None:
            bayes = {**bayes, "weights": tuple(bayes["weights"])}
        return cls(bayes=BayesFunction(**bayes), **d)


def sample_features(spec: SyntheticSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    if spec.feature_law == "uniform":
        return rng.random((n, spec.d))
    return rng.standard_normal((n, spec.d))


def _draw(spec: SyntheticSpec, n: int, rng: np.random.Generator):
    X = sample_features(spec, n, rng)
    y = (rng.random(n) < spec.bayes(X)).astype(np.int64)
    return X, y


class SyntheticSample(NamedTuple):
    features: np.ndarray
    labels: np.ndarray
    oracle: BayesFunction

    def dataset(self, predictor: Predictor) -> Dataset:
        """Attach a predictor column and build a :class:`Dataset`."""
        return Dataset(self.features, self.labels, predictor(self.features))


def generate(spec: SyntheticSpec) -> SyntheticSample:
    """Draw ``spec.n`` i.i.d. points; labels are Bernoulli(p(x))."""
    X, y = _draw(spec, spec.n, np.random.default_rng(spec.seed))
    return SyntheticSample(X, y, spec.bayes)


def variance_experiment(spec: SyntheticSpec, predictor: Predictor, K: int,
                        resamples: int = 10_000, seed: int = 0,
                        mc_samples: int = 100_000) -> tuple[float, float]:
    """Empirical vs. predicted variance of the error of a random size-``K`` group.

    Returns ``(empirical, theoretical)`` where theoretical is
    ``E[p(X)(1 - p(X))] / K`` with the expectation estimated from
    ``mc_samples`` fresh draws. The formula ignores the spread of
    ``predictor - p`` across inputs, so the two agree when that difference
    is constant in ``x`` (e.g. constant ``p`` and predictor).
    """
    if resamples < 100:
        raise ValidationError("resamples must be >= 100")
    if K < 1:
        raise ValidationError("group size K must be >= 1")
    rng = np.random.default_rng([seed, 0])
    X, y = _draw(spec, resamples * K, rng)
    err = (predictor(X) - y).reshape(resamples, K).mean(axis=1)
    empirical = float(err.var(ddof=1))
    Xmc = sample_features(spec, mc_samples, np.random.default_rng([seed, 1]))
    p = spec.bayes(Xmc)
    theoretical = float(np.mean(p * (1.0 - p)) / K)
    return empirical, theoretical


class ResolutionFixture(NamedTuple):
    dataset: Dataset
    group1: Group
    group2: Group


def feasible_epsilon(labels1: Sequence[int], labels2: Sequence[int]) -> float:
    """Supremum of admissible ``eps`` for :func:`resolution_fixture` (equal-mean case)."""
    n1, n2 = len(labels1), len(labels2)
    n = n1 + n2
    z = float(np.mean(labels1))
    return min(z * n / n1, (1.0 - z) * n / n2)


def resolution_fixture(labels1: Sequence[int], labels2: Sequence[int],
                       eps: float | None = None) -> ResolutionFixture:
    """Dataset calibrated on the union of two groups but on neither group.

    Inputs are distinct. If the groups' label means differ the predictor is
    the constant overall label mean; otherwise it is raised by
    ``eps*|I2|/n`` on the first group and lowered by ``eps*|I1|/n`` on the
    second. ``eps`` defaults to half its feasible supremum.
    """
    y1 = np.asarray(labels1, dtype=np.int64)
    y2 = np.asarray(labels2, dtype=np.int64)
    if y1.size == 0 or y2.size == 0:
        raise ValidationError("both label lists must be nonempty")
    y = np.concatenate([y1, y2])
    if np.all(y == y[0]):
        raise ValidationError("all labels are equal; no such predictor exists")
    n1, n2 = y1.size, y2.size
    n = n1 + n2
    z1, z2 = y1.mean(), y2.mean()
    if z1 != z2:
        pred = np.full(n, y.mean())
    else:
        sup = feasible_epsilon(y1, y2)
        if eps is None:
            eps = sup / 2
        if not 0 < eps < sup:
            raise ValidationError(f"eps={eps!r} infeasible; need 0 < eps < {sup!r}")
        pred = np.concatenate([np.full(n1, z1 + eps * n2 / n),
                               np.full(n2, z1 - eps * n1 / n)])
    ds = Dataset(np.arange(n, dtype=float), y, pred)
    return ResolutionFixture(ds, Group(range(n1)), Group(range(n1, n)))


def overlap_fixture(d: int, k: int, N: int) -> np.ndarray:
    """Point set on which one datapoint sits in ``min(N, 2d(k-1)+1)`` k-NN groups.

    Index 0 is the outlier ``3 e_1`` (member of its own group only, if
    ``N > k``); index ``N-1`` is the origin, which lies in every group. Up to
    ``k-1`` points sit on each ray ``+-e_s`` at distinct radii in
    ``(0.5, 0.9]`` (``k-2`` on ``+e_1``, whose first slot the outlier
    takes); surplus points are spread over ``[-2.5, -2] e_1``.
    """
    if k < 2 or N < 2 or d < 1:
        raise ValidationError("need d >= 1, k >= 2 and N >= 2")
    full = 2 * d * (k - 1) + 1
    rays = [(s, +1.0) for s in range(d)] + [(s, -1.0) for s in range(d)]
    first_slot = [2 if r == (0, +1.0) else 1 for r in rays]
    capacity = [k - 1 - (f - 1) for f in first_slot]
    n_axis = min(N, full) - 2
    fill = [0] * len(rays)
    placed = 0
    while placed < n_axis:
        for r in range(len(rays)):
            if placed < n_axis and fill[r] < capacity[r]:
                fill[r] += 1
                placed += 1
    X = [3.0 * np.eye(d)[0]]
    for (s, sign), f0, cnt in zip(rays, first_slot, fill):
        for j in range(f0, f0 + cnt):
            x = np.zeros(d)
            x[s] = sign * (0.5 + 0.4 * j / (k - 1))
            X.append(x)
    surplus = max(0, N - full)
    for j in range(surplus):
        # distinct inputs: duplicate closure would merge these k-NN groups
        X.append(-(2.0 + 0.5 * j / surplus) * np.eye(d)[0])
    X.append(np.zeros(d))
    return np.asarray(X)


@dataclass(frozen=True)
class Rung:
    n: int
    parameter: float
    deviation: float


@dataclass(frozen=True)
class ConsistencyLadder:
    """Mean absolute deviation of an estimator from the true individual error, per N."""

    estimator: str
    schedule: str
    rungs: tuple[Rung, ...]
    anchors: int

    def __post_init__(self):
        ns = [r.n for r in self.rungs]
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise ValidationError("ladder sample sizes must be strictly increasing")

    @property
    def deviations(self) -> list[float]:
        return [r.deviation for r in self.rungs]

    def decreasing(self, allowance: float = 0.2) -> bool:
        dv = self.deviations
        return all(b <= (1 + allowance) * a for a, b in zip(dv, dv[1:]))

    def halved(self) -> bool:
        dv = self.deviations
        return dv[-1] < 0.5 * dv[0]

    def as_dict(self) -> dict[str, Any]:
        return {"estimator": self.estimator, "schedule": self.schedule,
                "anchors": self.anchors, "rungs": [asdict(r) for r in self.rungs]}


def _rung_rngs(seed: int, m: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(m)]


def _ladder(spec, predictor, n_ladder, anchors, estimate, schedule_fn):
    if anchors < 500:
        raise ValidationError("need at least 500 anchors")
    rungs = []
    for n, rng in zip(n_ladder, _rung_rngs(spec.seed, len(n_ladder))):
        X, y = _draw(spec, int(n), rng)
        ds = Dataset(X, y, predictor(X))
        A = sample_features(spec, anchors, rng)
        truth = predictor(A) - spec.bayes(A)
        param = schedule_fn(int(n))
        est = estimate(ds, A, param)
        rungs.append(Rung(int(n), float(param), float(np.mean(np.abs(est - truth)))))
    return tuple(rungs)


def knn_consistency(spec: SyntheticSpec, predictor: Predictor, n_ladder: Sequence[int],
                    k_schedule: Callable[[int], int] | None = None, anchors: int = 500,
                    metric: MetricSpec | None = None) -> ConsistencyLadder:
    """k-NN group errors at fresh anchors vs. ``predictor(x) - p(x)``.

    Each rung draws its own dataset and anchors from an independent seed
    stream spawned from ``spec.seed``. Default schedule: ``k = ceil(sqrt(N))``.
    """
    k_schedule = k_schedule or (lambda n: math.ceil(math.sqrt(n)))
    desc = "k = ceil(sqrt(N))" if k_schedule.__name__ == "<lambda>" else k_schedule.__name__

    def estimate(ds, A, k):
        nbrs = nearest_neighbors(ds, A, int(k), metric)
        r = ds.residuals
        return np.array([r[s].mean() for s in nbrs])

    rungs = _ladder(spec, predictor, n_ladder, anchors, estimate, k_schedule)
    return ConsistencyLadder("knn", desc, rungs, anchors)


def kernel_consistency(spec: SyntheticSpec, predictor: Predictor, n_ladder: Sequence[int],
                       gamma_schedule: Callable[[int], float] | None = None,
                       shape: str = "gaussian", anchors: int = 500,
                       metric: MetricSpec | None = None) -> ConsistencyLadder:
    """Kernel-weighted mean residuals at fresh anchors vs. ``predictor(x) - p(x)``.

    Default bandwidth ``N ** (-1 / (d + 2))``.
    """
    d = spec.d
    gamma_schedule = gamma_schedule or (lambda n: n ** (-1.0 / (d + 2)))
    desc = (f"gamma = N^(-1/{d + 2})" if gamma_schedule.__name__ == "<lambda>"
            else gamma_schedule.__name__)

    def estimate(ds, A, gamma):
        ks = KernelSpec(shape, float(gamma))
        out = np.empty(len(A))
        for s in range(0, len(A), 128):
            W = kernel_weights(ds, A[s:s + 128], ks, metric)
            tot = W.sum(axis=1)
            if not np.all(tot > 0):
                raise ValidationError("kernel weights vanish at an anchor; bandwidth too small")
            out[s:s + 128] = (W @ ds.residuals) / tot
        return out

    rungs = _ladder(spec, predictor, n_ladder, anchors, estimate, gamma_schedule)
    return ConsistencyLadder(f"kernel/{shape}", desc, rungs, anchors)
