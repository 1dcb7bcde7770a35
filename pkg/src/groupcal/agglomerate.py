"""Agglomeration functions for error profiles and checks of their axioms.

Risk-type agglomerators (mean, max, CVaR and mixtures) are meant for
absolute errors; deviation-type ones (standard deviation, range,
superquantile deviation) for signed errors. Both act on
:class:`~groupcal.core.ErrorProfile` values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Union

import numpy as np

from .core import Dataset, ErrorProfile, Grouping, ValidationError, error_profile
from .grouping import is_refinement

TOL = 1e-9

RISK_KINDS = ("mean", "max", "cvar", "cvar_mixture", "quadrangle_risk")
DEVIATION_KINDS = ("std_dev", "range_dev", "superquantile_dev", "quadrangle_dev")


@dataclass(frozen=True)
class Agglomerator:
    """A named, parameterised functional from error profiles to reals.

    Build instances with the module-level constructors (:func:`mean`,
    :func:`cvar`, :func:`superquantile_dev`, ...) rather than directly.
    """

    kind: str
    alpha: float | None = None
    mixture: tuple[tuple[float, float], ...] | None = None
    inner: "Agglomerator | None" = None

    def __post_init__(self):
        if self.kind not in RISK_KINDS + DEVIATION_KINDS:
            raise ValidationError(f"unknown agglomerator kind {self.kind!r}")
        if self.kind in ("cvar", "superquantile_dev"):
            if self.alpha is None or not 0.0 <= self.alpha <= 1.0:
                raise ValidationError(f"alpha must lie in [0, 1], got {self.alpha!r}")
            if self.kind == "superquantile_dev" and not self.alpha > 0:
                raise ValidationError("superquantile deviation needs alpha > 0")
        if self.kind == "cvar_mixture":
            mix = tuple((float(a), float(w)) for a, w in (self.mixture or ()))
            if not mix:
                raise ValidationError("cvar_mixture needs at least one component")
            alphas = np.array([a for a, _ in mix])
            ws = np.array([w for _, w in mix])
            if np.any((alphas < 0) | (alphas > 1)):
                raise ValidationError("mixture levels must lie in [0, 1]")
            if np.any(ws < 0) or abs(ws.sum() - 1.0) > TOL:
                raise ValidationError("mixture weights must be nonnegative and sum to 1")
            object.__setattr__(self, "mixture", mix)
        if self.kind == "quadrangle_risk" and (self.inner is None or
                                               self.inner.kind not in DEVIATION_KINDS):
            raise ValidationError("quadrangle_risk wraps a deviation-type agglomerator")
        if self.kind == "quadrangle_dev" and (self.inner is None or
                                              self.inner.kind not in RISK_KINDS):
            raise ValidationError("quadrangle_dev wraps a risk-type agglomerator")

    def __call__(self, profile: ErrorProfile) -> float:
        return apply(self, profile)

    @property
    def is_deviation(self) -> bool:
        return self.kind in DEVIATION_KINDS

    def describe(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind}
        if self.alpha is not None:
            out["alpha"] = self.alpha
        if self.mixture is not None:
            out["mixture"] = [list(c) for c in self.mixture]
        if self.inner is not None:
            out["inner"] = self.inner.describe()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Agglomerator":
        d = dict(d)
        inner = d.pop("inner", None)
        mixture = d.pop("mixture", None)
        kind = d.pop("kind")
        alpha = d.pop("alpha", None)
        if d:
            raise ValidationError(f"unexpected agglomerator parameters {sorted(d)}")
        return cls(kind, alpha=alpha,
                   mixture=None if mixture is None else tuple(tuple(c) for c in mixture),
                   inner=None if inner is None else cls.from_dict(inner))


def mean() -> Agglomerator:
    return Agglomerator("mean")


def maximum() -> Agglomerator:
    return Agglomerator("max")


def cvar(alpha: float) -> Agglomerator:
    return Agglomerator("cvar", alpha=float(alpha))


def cvar_mixture(components: Iterable[tuple[float, float]]) -> Agglomerator:
    """Finite mixture ``sum_m w_m * CVaR_{alpha_m}`` from ``(alpha_m, w_m)`` pairs."""
    return Agglomerator("cvar_mixture", mixture=tuple(components))


def std_dev() -> Agglomerator:
    return Agglomerator("std_dev")


def range_dev() -> Agglomerator:
    return Agglomerator("range_dev")


def superquantile_dev(alpha: float) -> Agglomerator:
    return Agglomerator("superquantile_dev", alpha=float(alpha))


def quadrangle_risk(deviation: Agglomerator) -> Agglomerator:
    """Risk measure ``mean + D`` induced by a deviation measure ``D``."""
    return Agglomerator("quadrangle_risk", inner=deviation)


def quadrangle_dev(risk: Agglomerator) -> Agglomerator:
    """Deviation measure ``R - mean`` induced by a risk measure ``R``."""
    return Agglomerator("quadrangle_dev", inner=risk)


def _sorted(profile: ErrorProfile):
    order = np.argsort(profile.values, kind="stable")
    return profile.values[order], profile.weights[order]


def quantile(profile: ErrorProfile, t: float) -> float:
    """Left-continuous inverse of the weighted CDF, ``inf{v : F(v) >= t}``.

    ``t = 0`` gives the minimum value.
    """
    if not 0.0 <= t <= 1.0:
        raise ValidationError(f"quantile level must lie in [0, 1], got {t!r}")
    v, w = _sorted(profile)
    if t == 0.0:
        return float(v[0])
    cum = np.cumsum(w) / w.sum()
    i = int(np.searchsorted(cum, t, side="left"))
    return float(v[min(i, v.size - 1)])


def _cvar_values(v: np.ndarray, w: np.ndarray, alpha: float) -> float:
    # exact integral of the step quantile function over [alpha, 1]
    if alpha >= 1.0:
        return float(v.max())
    order = np.argsort(v, kind="stable")
    v, w = v[order], w[order]
    w = w / w.sum()
    before = np.concatenate([[0.0], np.cumsum(w)[:-1]])
    length = w - np.clip(alpha - before, 0.0, w)
    total = length.sum()
    if not total > 0:
        return float(v[-1])
    return float(np.dot(length, v) / total)


def _mean(profile: ErrorProfile) -> float:
    return profile.mean()


def apply(agg: Agglomerator, profile: ErrorProfile) -> float:
    """Evaluate ``agg`` on ``profile``."""
    if np.any(profile.weights == 0):
        keep = profile.weights > 0
        profile = profile.replace(profile.values[keep], profile.weights[keep])
    v, w = profile.values, profile.weights
    k = agg.kind
    if k == "mean":
        return _mean(profile)
    if k == "max":
        return float(v.max())
    if k == "cvar":
        return _cvar_values(v, w, agg.alpha)
    if k == "cvar_mixture":
        return float(sum(wm * _cvar_values(v, w, a) for a, wm in agg.mixture))
    if k == "quadrangle_risk":
        return _mean(profile) + apply(agg.inner, profile)
    if k == "quadrangle_dev":
        return apply(agg.inner, profile) - _mean(profile)

    # deviation measures vanish exactly on constants
    if profile.is_constant():
        return 0.0
    if k == "range_dev":
        return float(v.max() - v.min())
    centred = v - _mean(profile)
    if k == "std_dev":
        return float(math.sqrt(np.dot(w, centred * centred) / w.sum()))
    if k == "superquantile_dev":
        return _cvar_values(centred, w, agg.alpha)
    raise ValidationError(f"unhandled agglomerator kind {k!r}")  # pragma: no cover


# ---------------------------------------------------------------------------
# axiom checking

AXIOMS = ("A1", "A2", "A3", "A4", "A5", "A6", "A7", "aversity")

AggLike = Union[Agglomerator, Callable[[ErrorProfile], float]]


@dataclass
class Witness:
    axiom: str
    trial: int
    seed: list[int]
    profiles: list[dict[str, list[float]]]
    params: dict[str, float]
    lhs: float
    rhs: float
    relation: str

    def as_dict(self) -> dict[str, Any]:
        return {"axiom": self.axiom, "trial": self.trial, "seed": self.seed,
                "profiles": self.profiles, "params": self.params,
                "lhs": self.lhs, "rhs": self.rhs, "relation": self.relation}


@dataclass
class AxiomReport:
    """Verdict per axiom, with one reproducible witness per failed axiom."""

    agglomerator: dict[str, Any]
    verdicts: dict[str, bool]
    witnesses: dict[str, Witness] = field(default_factory=dict)
    trials: int = 0
    tolerance: float = TOL
    seed: int = 0

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    def as_dict(self) -> dict[str, Any]:
        return {"agglomerator": self.agglomerator,
                "verdicts": dict(self.verdicts),
                "witnesses": {k: w.as_dict() for k, w in self.witnesses.items()},
                "trials": self.trials, "tolerance": self.tolerance, "seed": self.seed}


def _random_values(rng: np.random.Generator, m: int) -> np.ndarray:
    style = rng.integers(4)
    if style == 0:
        return rng.normal(size=m)
    if style == 1:
        return rng.uniform(-1, 1, size=m)
    if style == 2:
        # heavy ties
        return rng.integers(-3, 4, size=m) / 4.0
    return rng.exponential(size=m) * rng.choice([-1.0, 1.0])


def _random_weights(rng: np.random.Generator, m: int, equal: bool = False) -> np.ndarray:
    if equal or rng.random() < 0.3:
        return np.full(m, 1.0 / m)
    w = rng.dirichlet(np.full(m, 0.7))
    w = np.maximum(w, 1e-3)
    return w / w.sum()


def _random_profile(rng, m=None, equal=False) -> ErrorProfile:
    m = int(rng.integers(1, 13)) if m is None else m
    return ErrorProfile(_random_values(rng, m), _random_weights(rng, m, equal))


def _nonconstant_profile(rng, equal=False) -> ErrorProfile:
    m = int(rng.integers(2, 13))
    while True:
        p = _random_profile(rng, m, equal)
        if np.ptp(p.values) > 0.05:
            return p


def _prof(p: ErrorProfile) -> dict[str, list[float]]:
    return {"values": p.values.tolist(), "weights": p.weights.tolist()}


def _close(a: float, b: float, tol: float) -> bool:
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


def _le(a: float, b: float, tol: float) -> bool:
    return a <= b + tol * max(1.0, abs(a), abs(b))


def _trial(agg: Callable, axiom: str, rng: np.random.Generator, tol: float):
    """Run one randomized trial; return None on success or (profiles, params, lhs, rhs, rel)."""
    if axiom == "A1":
        c = _random_profile(rng)
        bump = rng.exponential(size=len(c)) * (rng.random(len(c)) < 0.6)
        c2 = c.replace(values=c.values + bump)
        a, b = agg(c), agg(c2)
        return None if _le(a, b, tol) else ([c, c2], {}, a, b, "R(C) <= R(C')")
    if axiom == "A2":
        c = _random_profile(rng)
        shift = float(rng.normal() * 2)
        a, b = agg(c.replace(values=c.values + shift)), agg(c) + shift
        return None if _close(a, b, tol) else ([c], {"shift": shift}, a, b, "R(C+a) == R(C)+a")
    if axiom == "A3":
        c = _random_profile(rng)
        zero = c.replace(values=np.zeros(len(c)))
        z = agg(zero)
        if not _close(z, 0.0, tol):
            return [zero], {}, z, 0.0, "R(0) == 0"
        mu = float(rng.uniform(0.05, 10.0))
        a, b = agg(c.replace(values=mu * c.values)), mu * agg(c)
        return None if _close(a, b, tol) else ([c], {"scale": mu}, a, b, "R(mu C) == mu R(C)")
    if axiom == "A4":
        c = _random_profile(rng)
        c2 = c.replace(values=_random_values(rng, len(c)))
        a = agg(c.replace(values=c.values + c2.values))
        b = agg(c) + agg(c2)
        return None if _le(a, b, tol) else ([c, c2], {}, a, b, "R(C+C') <= R(C)+R(C')")
    if axiom == "A5":
        c = _random_profile(rng, equal=True)
        perm = rng.permutation(len(c))
        c2 = c.replace(values=c.values[perm])
        a, b = agg(c), agg(c2)
        if not _close(a, b, tol):
            return [c, c2], {}, a, b, "R(C) == R(permuted C)"
        c = _random_profile(rng)
        j = int(rng.integers(len(c)))
        vals = np.insert(c.values, j, c.values[j])
        ws = np.insert(c.weights, j, c.weights[j] / 2)
        ws[j + 1] = c.weights[j] / 2
        c2 = ErrorProfile(vals, ws, c.signed)
        a, b = agg(c), agg(c2)
        return None if _close(a, b, tol) else ([c, c2], {"split": j}, a, b,
                                                "R(C) == R(C with atom split)")
    if axiom == "A6":
        m = int(rng.integers(1, 13))
        const = ErrorProfile(np.full(m, float(rng.normal())), _random_weights(rng, m))
        z = agg(const)
        if not _close(z, 0.0, tol):
            return [const], {}, z, 0.0, "D(constant) == 0"
        c = _nonconstant_profile(rng)
        a = agg(c)
        return None if a > tol else ([c], {}, a, 0.0, "D(non-constant) > 0")
    if axiom == "A7":
        m = int(rng.integers(1, 13))
        level = float(rng.normal() * 2)
        const = ErrorProfile(np.full(m, level), _random_weights(rng, m))
        a = agg(const)
        return None if _close(a, level, tol) else ([const], {"level": level}, a, level,
                                                    "R(constant) == constant")
    if axiom == "aversity":
        c = _nonconstant_profile(rng)
        a, b = agg(c), c.mean()
        return None if a > b + tol else ([c], {}, a, b, "R(C) > E[C]")
    raise ValidationError(f"unknown axiom {axiom!r}")


def check_axioms(agg: AggLike, axioms: Iterable[str] = ("A1", "A2", "A3", "A4", "A5"),
                 trials: int = 1000, seed: int = 0, tolerance: float = TOL) -> AxiomReport:
    """Randomized property checks of agglomerator axioms.

    Each trial of each axiom draws from its own generator seeded with
    ``[seed, axiom position, trial]`` so a failure is reproducible from the
    recorded witness seed. Comparisons use ``tolerance`` scaled by
    ``max(1, |lhs|, |rhs|)``. ``agg`` may be any callable on profiles.
    """
    if trials < 1:
        raise ValidationError("trials must be >= 1")
    axioms = list(axioms)
    for a in axioms:
        if a not in AXIOMS:
            raise ValidationError(f"unknown axiom {a!r}")
    desc = agg.describe() if isinstance(agg, Agglomerator) else {
        "kind": getattr(agg, "__name__", type(agg).__name__)}
    report = AxiomReport(desc, {}, {}, trials, tolerance, seed)
    for a in axioms:
        pos = AXIOMS.index(a)
        ok = True
        for t in range(trials):
            s = [int(seed), pos, t]
            res = _trial(agg, a, np.random.default_rng(s), tolerance)
            if res is not None:
                profiles, params, lhs, rhs, rel = res
                report.witnesses[a] = Witness(a, t, s, [_prof(p) for p in profiles],
                                              params, float(lhs), float(rhs), rel)
                ok = False
                break
        report.verdicts[a] = ok
    return report


@dataclass(frozen=True)
class RefinementVerdict:
    holds: bool
    finer_score: float
    coarser_score: float
    signedness: str


def check_refinement_monotonicity(agg: Agglomerator, dataset: Dataset, finer: Grouping,
                                  coarser: Grouping, signedness: str = "signed",
                                  tolerance: float = TOL) -> RefinementVerdict:
    """Check that refining a partition does not lower the global score.

    Both groupings must be partitions with the empirical measure and
    ``finer`` must refine ``coarser``. For absolute errors the guarantee
    additionally needs ``agg`` to be monotone.
    """
    if not is_refinement(finer, coarser):
        raise ValidationError("finer grouping is not a refinement of coarser")
    for g in (finer, coarser):
        if not (isinstance(g.measure, str) and g.measure == "empirical"):
            raise ValidationError("refinement monotonicity needs the empirical measure")
    sf = apply(agg, error_profile(dataset, finer, signedness))
    sc = apply(agg, error_profile(dataset, coarser, signedness))
    return RefinementVerdict(bool(_le(sc, sf, tolerance)), sf, sc, signedness)
