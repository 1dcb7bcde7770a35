"""Acceptance gate: one check per criterion, each printing a PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v`` (lines appear in the terminal summary)
or ``python3 tests/test_acceptance.py`` to print the lines directly.
"""

import hashlib
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from groupcal import (BinningScheme, Dataset, ErrorProfile, Group, GroupDistribution, Grouping,
                      ace, apply, brier, brier_decomposition, check_axioms,
                      check_refinement_monotonicity, cvar, cvar_mixture, ece,
                      generalized_error, group_error, knn_groups, maximum, mce, mean,
                      membership_counts, quadrangle_dev, quadrangle_risk, range_dev, std_dev,
                      superquantile_dev)
from groupcal.synthetic import (BayesFunction, SyntheticSpec, feasible_epsilon,
                                kernel_consistency, knn_consistency, overlap_fixture,
                                resolution_fixture, variance_experiment)

try:
    from conftest import ACCEPTANCE_LINES, random_dataset
except ImportError:  # pragma: no cover
    sys.path.insert(0, str(Path(__file__).parent))
    from conftest import ACCEPTANCE_LINES, random_dataset

FIXTURES = Path(__file__).parent / "fixtures"


def report(n, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  [{n:2d}] {title}: {detail}"
    ACCEPTANCE_LINES[n] = line
    print(line)
    return ok


# ---------------------------------------------------------------------------
# brute-force oracles (plain Python loops, no library code)


def oracle_bins(preds, K):
    bins = {}
    for i, p in enumerate(preds):
        b = next(k for k in range(K) if k / K <= p < (k + 1) / K) if p < 1.0 else K - 1
        bins.setdefault(b, []).append(i)
    return bins


def oracle_scores(preds, labels, K):
    bins = oracle_bins(preds, K)
    err = {b: sum(preds[i] - labels[i] for i in idx) / len(idx) for b, idx in bins.items()}
    n = len(preds)
    # per-datapoint sum: each datapoint contributes its own bin's error
    ece_ = sum(abs(err[b]) for b, idx in bins.items() for _ in idx) / n
    ace_ = sum(abs(e) for e in err.values()) / len(err)
    mce_ = max(abs(e) for e in err.values())
    return ece_, ace_, mce_


def random_profile(rng, m=None):
    m = int(rng.integers(1, 15)) if m is None else m
    v = rng.normal(size=m) if rng.random() < 0.5 else rng.integers(-3, 4, m) / 2.0
    w = rng.dirichlet(np.ones(m)) if rng.random() < 0.7 else np.full(m, 1 / m)
    return ErrorProfile(v, w)


# ---------------------------------------------------------------------------


def criterion_1():
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(200):
        ds = random_dataset(rng, n=int(rng.integers(1, 101)), d=int(rng.integers(1, 4)))
        K = int(rng.integers(1, 11))
        if rng.random() < 0.2:
            # exercise bin boundaries exactly
            edges = np.arange(K + 1) / K
            p = rng.choice(edges, ds.n)
            ds = Dataset(ds.features, ds.labels, p)
        want = oracle_scores(ds.predictions.tolist(), ds.labels.tolist(), K)
        s = BinningScheme(K)
        got = (ece(ds, s).value, ace(ds, s).value, mce(ds, s).value)
        worst = max(worst, max(abs(a - b) for a, b in zip(got, want)))
    return report(1, "oracle equivalence ece/ace/mce", worst <= 1e-12,
                  f"200 datasets, max |diff| = {worst:.2e} (tol 1e-12)")


def criterion_2():
    rng = np.random.default_rng(202)
    worst = 0.0
    for _ in range(200):
        ds = random_dataset(rng, n=int(rng.integers(1, 1001)), dup_frac=0.4, levels=6)
        b = sum((p - y) ** 2 for p, y in zip(ds.predictions.tolist(), ds.labels.tolist())) / ds.n
        assert abs(b - brier(ds)) <= 1e-12
        for by in ("predictions", "inputs"):
            cal, ref = brier_decomposition(ds, by)
            worst = max(worst, abs(cal + ref - b) / max(b, 1e-300))
    return report(2, "Brier identity (both keys)", worst <= 1e-10,
                  f"200 datasets with duplicates, max rel diff = {worst:.2e} (tol 1e-10)")


def criterion_3():
    rng = np.random.default_rng(303)
    worst = 0.0
    for t in range(500):
        ds = random_dataset(rng, dup_frac=0.3 if t % 2 else 0.0, levels=5 if t % 2 else None)
        idx = rng.choice(ds.n, int(rng.integers(1, ds.n + 1)), replace=False)
        ids = ds.input_ids
        g = Group(np.flatnonzero(np.isin(ids, ids[idx])))
        dist = GroupDistribution.from_group(g, ds.n)
        worst = max(worst, abs(generalized_error(ds, dist) - group_error(ds, g)))
    return report(3, "generalized error on uniform group distributions", worst <= 1e-12,
                  f"500 input-complete groups, max |diff| = {worst:.2e} (tol 1e-12)")


def criterion_4():
    rng = np.random.default_rng(404)
    ends = mono = split = 0.0
    grid = np.linspace(0, 1, 21)
    for _ in range(500):
        p = random_profile(rng)
        ends = max(ends, abs(apply(cvar(0), p) - p.mean()), abs(apply(cvar(1), p) - p.values.max()))
        vals = [apply(cvar(a), p) for a in grid]
        mono = max(mono, max((a - b for a, b in zip(vals, vals[1:])), default=0.0))
        j = int(rng.integers(len(p)))
        w = p.weights
        sp = ErrorProfile(np.insert(p.values, j, p.values[j]),
                          np.concatenate([w[:j], [w[j] / 2, w[j] / 2], w[j + 1:]]))
        for a in grid:
            split = max(split, abs(apply(cvar(a), sp) - apply(cvar(a), p)))
    ok = ends <= 1e-12 and mono <= 1e-12 and split <= 1e-12
    return report(4, "CVaR structure", ok,
                  f"500 profiles: endpoint diff {ends:.1e}, worst decrease {mono:.1e}, "
                  f"split diff {split:.1e} (tol 1e-12)")


def average_of_squares(profile):
    return float(np.dot(profile.weights, profile.values ** 2))


def criterion_5():
    risk = [mean(), maximum(), cvar(0.25), cvar(0.5), cvar(0.9),
            cvar_mixture([(0.1, 0.3), (0.5, 0.3), (0.9, 0.4)])]
    dev = [std_dev(), range_dev(), superquantile_dev(0.5)]
    failed = []
    for agg in risk:
        r = check_axioms(agg, ("A1", "A2", "A3", "A4", "A5"), trials=1000, seed=5, tolerance=1e-9)
        if not r.passed:
            failed.append((agg.describe(), r.verdicts))
    for agg in dev:
        r = check_axioms(agg, ("A3", "A4", "A5", "A6"), trials=1000, seed=5, tolerance=1e-9)
        if not r.passed:
            failed.append((agg.describe(), r.verdicts))
    dbl = check_axioms(average_of_squares, ("A2", "A3"), trials=1000, seed=5, tolerance=1e-9)
    double_ok = (dbl.verdicts == {"A2": False, "A3": False}
                 and set(dbl.witnesses) == {"A2", "A3"})
    ok = not failed and double_ok
    detail = (f"6 risk measures x A1-A5, 3 deviation measures x A3-A6, 1000 trials; "
              f"average-of-squares fails A2 (trial {dbl.witnesses['A2'].trial}) and A3 "
              f"(trial {dbl.witnesses['A3'].trial})" if ok else f"failures {failed}, double {dbl.verdicts}")
    return report(5, "axiom suite", ok, detail)


def criterion_6():
    sqd = superquantile_dev(0.5)
    risk = quadrangle_risk(sqd)
    r = check_axioms(risk, ("A2", "A3", "A4", "A5", "aversity"), trials=1000, seed=6,
                     tolerance=1e-9)
    back = quadrangle_dev(risk)
    rng = np.random.default_rng(606)
    worst = max(abs(apply(back, p) - apply(sqd, p)) for p in (random_profile(rng) for _ in range(100)))
    ok = r.passed and worst <= 1e-9
    return report(6, "quadrangle correspondence", ok,
                  f"A2-A5+aversity {'pass' if r.passed else r.verdicts}; "
                  f"round-trip max diff {worst:.1e} on 100 profiles (tol 1e-9)")


def criterion_7():
    rng = np.random.default_rng(707)
    for trial in range(1000):
        p = random_profile(rng, int(rng.integers(2, 8)))
        gap = apply(range_dev(), p) - (p.values.max() - p.mean())
        if gap > 1e-9:
            v = np.round(p.values, 4).tolist()
            w = np.round(p.weights, 4).tolist()
            return report(7, "range deviation induces no risk measure", True,
                          f"witness (seed 707, trial {trial}) values {v} weights {w}: "
                          f"range_dev exceeds sup - mean by {gap:.3g}")
    return report(7, "range deviation induces no risk measure", False, "no witness found")


def criterion_8():
    rng = np.random.default_rng(808)
    aggs = {"mean": mean(), "cvar(0.5)": cvar(0.5), "max": maximum()}
    worst = -np.inf
    for _ in range(200):
        ds = random_dataset(rng, n=int(rng.integers(2, 201)))
        coarse_lab = rng.integers(0, int(rng.integers(1, 6)), ds.n)
        fine_lab = coarse_lab * 10 + rng.integers(0, int(rng.integers(1, 5)), ds.n)
        part = lambda lab: Grouping("partition", tuple(
            Group(np.flatnonzero(lab == u)) for u in np.unique(lab)), ds.n)
        fine, coarse = part(fine_lab), part(coarse_lab)
        for agg in aggs.values():
            for sign in ("signed", "absolute"):
                v = check_refinement_monotonicity(agg, ds, fine, coarse, sign, tolerance=1e-9)
                worst = max(worst, v.coarser_score - v.finer_score)
    ok = worst <= 1e-9
    return report(8, "refinement monotonicity", ok,
                  f"200 triples x 3 agglomerators x signed/absolute, "
                  f"largest decrease {max(worst, 0.0):.1e} (tol 1e-9)")


def criterion_9():
    rng = np.random.default_rng(909)
    done = 0
    ok = True
    while done < 50:
        y1 = rng.integers(0, 2, int(rng.integers(1, 10))).tolist()
        y2 = rng.integers(0, 2, int(rng.integers(1, 10))).tolist()
        if len(set(y1 + y2)) == 1:
            continue
        eps = None
        if np.mean(y1) == np.mean(y2):
            eps = float(rng.uniform(0.05, 0.95)) * feasible_epsilon(y1, y2)
        fx = resolution_fixture(y1, y2, eps)
        r = fx.dataset.residuals
        ok &= abs(r.mean()) <= 1e-12
        ok &= min(abs(r[fx.group1.array].mean()), abs(r[fx.group2.array].mean())) > 0
        done += 1
    worst = -np.inf
    for _ in range(500):
        ds = random_dataset(rng, n=int(rng.integers(2, 101)))
        perm = rng.permutation(ds.n)
        a = int(rng.integers(1, ds.n))
        b = int(rng.integers(a + 1, ds.n + 1))
        g1, g2 = Group(perm[:a]), Group(perm[a:b])
        lhs = abs(group_error(ds, Group(perm[:b])))
        rhs = (len(g1) * abs(group_error(ds, g1)) + len(g2) * abs(group_error(ds, g2))) / b
        worst = max(worst, lhs - rhs)
    ok &= worst <= 1e-12
    return report(9, "resolution and mixing bound", bool(ok),
                  f"50 label configurations calibrated on union only; "
                  f"mixing bound max excess {max(worst, 0.0):.1e} over 500 pairs (tol 1e-12)")


def criterion_10():
    spec = SyntheticSpec(bayes=BayesFunction("constant", value=0.5))
    half = lambda X: np.full(len(X), 0.5)
    emp, theo = variance_experiment(spec, half, 25, 10_000, seed=10)
    _, theo2 = variance_experiment(spec, half, 50, 10_000, seed=10)
    rel = abs(emp - 0.01) / 0.01
    ok = rel <= 0.10 and theo == 0.01 and theo2 == theo / 2
    return report(10, "variance law", ok,
                  f"empirical {emp:.5f} vs 0.01 ({rel:.1%} off, tol 10%); "
                  f"theory K=25 {theo}, K=50 {theo2}")


def criterion_11():
    bad = []
    for d in (1, 2, 3):
        for k in (2, 3, 4, 5):
            full = 2 * d * (k - 1) + 1
            for n, want_max in ((full, full), (full + 3, full)):
                X = overlap_fixture(d, k, n)
                ds = Dataset(X, np.zeros(n, dtype=int), np.zeros(n))
                c = membership_counts(knn_groups(ds, k))
                if c.max() != want_max or c.min() != 1:
                    bad.append((d, k, n, int(c.max()), int(c.min())))
    return report(11, "overlap fixture membership", not bad,
                  "12 (d, k) pairs x 2 sizes attain max = 2d(k-1)+1, min = 1"
                  if not bad else f"mismatches {bad}")


def criterion_12():
    spec = SyntheticSpec(d=1, bayes=BayesFunction("linear-clipped"), seed=12)
    pred = BayesFunction("linear-clipped", intercept=0.1)
    ladder = [200, 2000, 20000]
    parts = []
    ok = True
    for name, fn, kw in (("knn", knn_consistency, {}),
                         ("kernel", kernel_consistency,
                          {"gamma_schedule": lambda n: n ** (-1 / 3)})):
        t0 = time.perf_counter()
        lad = fn(spec, pred, ladder, **kw)
        dt = time.perf_counter() - t0
        good = lad.decreasing(0.2) and lad.halved() and dt < 60
        ok &= good
        devs = ", ".join(f"{v:.4f}" for v in lad.deviations)
        parts.append(f"{name} [{devs}] in {dt:.1f}s")
    return report(12, "consistency ladders", bool(ok), "; ".join(parts))


def criterion_13(tmp_dir: Path):
    cfg = FIXTURES / "four_point_config.json"
    digests = []
    for i in range(2):
        out = tmp_dir / f"report{i}.json"
        res = subprocess.run([sys.executable, "-m", "groupcal", "--config", str(cfg),
                              "--out", str(out)], capture_output=True, text=True)
        if res.returncode != 0:
            return report(13, "CLI determinism", False, f"exit {res.returncode}: {res.stderr}")
        digests.append(hashlib.sha256(out.read_bytes()).hexdigest())
    import json
    doc = json.loads((tmp_dir / "report0.json").read_text())
    ece_val = next(s["value"] for s in doc["scores"] if s["name"] == "ece")
    ok = digests[0] == digests[1] and abs(ece_val - 0.25) <= 1e-15
    return report(13, "CLI determinism", ok,
                  f"two runs sha256 {digests[0][:12]}{'==' if digests[0] == digests[1] else '!='}"
                  f"{digests[1][:12]}, embedded ece {ece_val}")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8, criterion_9, criterion_10, criterion_11, criterion_12]


@pytest.mark.parametrize("criterion", CRITERIA, ids=lambda f: f.__name__)
def test_criterion(criterion):
    assert criterion()


def test_criterion_13(tmp_path):
    assert criterion_13(tmp_path)


if __name__ == "__main__":
    import tempfile
    results = [c() for c in CRITERIA]
    with tempfile.TemporaryDirectory() as d:
        results.append(criterion_13(Path(d)))
    sys.exit(0 if all(results) else 1)
