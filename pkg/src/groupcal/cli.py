"""Batch command line: load a CSV dataset, run configured scores and experiments, write a report.

The configuration is a JSON document::

    {
      "dataset": {"path": "data.csv", "features": ["x"], "label": "y", "prediction": "p"},
      "seed": 0,
      "output": "report.json",
      "scores": [
        {"preset": "ece", "bins": 10},
        {"grouping": {"kind": "knn_groups", "k": 5},
         "signedness": "signed",
         "agglomerator": {"kind": "superquantile_dev", "alpha": 0.5}}
      ],
      "experiments": [{"kind": "axioms", "agglomerator": {"kind": "cvar", "alpha": 0.5}}]
    }

Relative paths are resolved against the directory of the config file.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import grouping as grp
from . import scores as sc
from . import synthetic as syn
from .agglomerate import AXIOMS, DEVIATION_KINDS, RISK_KINDS, Agglomerator, check_axioms
from .core import Dataset, ValidationError, inconsistent_duplicates

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 1, 2


# ---------------------------------------------------------------------------
# dataset ingestion


@dataclass(frozen=True)
class ColumnRoles:
    features: tuple[str, ...]
    label: str
    prediction: str

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        names = list(self.features) + [self.label, self.prediction]
        if not self.features:
            raise ValidationError("at least one feature column is required")
        if len(set(names)) != len(names):
            raise ValidationError(f"column roles must be disjoint, got {names}")


def _parse_float(text: str, row: int, column: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ValidationError(f"row {row}: column {column!r} value {text!r} is not numeric") from None
    if not math.isfinite(v):
        raise ValidationError(f"row {row}: column {column!r} value {text!r} is not finite")
    return v


def load_dataset(path, roles: ColumnRoles) -> Dataset:
    """Read a comma-separated file with a header row into a :class:`Dataset`.

    Diagnostics cite 1-based data rows (the header is not counted).
    """
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"dataset file {str(path)!r} not found")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError("dataset file is empty") from None
        missing = [c for c in (*roles.features, roles.label, roles.prediction) if c not in header]
        if missing:
            raise ValidationError(f"columns {missing} not in header {header}")
        fcols = [header.index(c) for c in roles.features]
        ycol, pcol = header.index(roles.label), header.index(roles.prediction)
        X, y, p = [], [], []
        for row, rec in enumerate(reader, start=1):
            if not rec:
                continue
            if len(rec) != len(header):
                raise ValidationError(
                    f"row {row}: expected {len(header)} fields, found {len(rec)}")
            X.append([_parse_float(rec[c], row, header[c]) for c in fcols])
            lab = _parse_float(rec[ycol], row, roles.label)
            if lab not in (0.0, 1.0):
                raise ValidationError(f"row {row}: label {rec[ycol].strip()!r} is not 0 or 1")
            y.append(int(lab))
            pred = _parse_float(rec[pcol], row, roles.prediction)
            if not 0.0 <= pred <= 1.0:
                raise ValidationError(f"row {row}: prediction {pred!r} is outside [0, 1]")
            p.append(pred)
    if not y:
        raise ValidationError("dataset file has no data rows")
    X = np.asarray(X, dtype=float)
    p = np.asarray(p, dtype=float)
    conflict = inconsistent_duplicates(X, p)
    if conflict is not None:
        i, j = conflict
        raise ValidationError(
            f"rows {i + 1} and {j + 1} share a feature vector but have "
            f"predictions {p[i]!r} and {p[j]!r}")
    return Dataset(X, y, p, feature_names=roles.features)


# ---------------------------------------------------------------------------
# registries


def _metric(params: dict | None) -> grp.MetricSpec:
    params = dict(params or {})
    if params.get("p") == "inf":
        params["p"] = np.inf
    return grp.MetricSpec(**params)


def _kernel(params: dict | None) -> grp.KernelSpec:
    return grp.KernelSpec(**(params or {}))


def _scheme(params: dict, space="predictions") -> grp.BinningScheme:
    return grp.BinningScheme(int(params["bins"]), params.get("mode", "equal-width"), space)


GROUPINGS: dict[str, tuple[str, Callable[[Dataset, dict], Any]]] = {
    "prediction_bins": ("bins, mode, measure", lambda ds, q: grp.prediction_bins(
        ds, _scheme(q), q.get("measure", "empirical"))),
    "feature_bins": ("feature, bins, mode, measure", lambda ds, q: grp.feature_bins(
        ds, _scheme(q, q["feature"]), q.get("measure", "empirical"))),
    "feature_grid": ("bins_per_dim, metric, measure", lambda ds, q: grp.feature_grid(
        ds, q["bins_per_dim"], _metric(q.get("metric")), q.get("measure", "empirical"))),
    "level_sets": ("by, measure", lambda ds, q: grp.level_sets(
        ds, q.get("by", "predictions"), q.get("measure", "empirical"))),
    "knn_groups": ("k, metric, space, measure", lambda ds, q: grp.knn_groups(
        ds, int(q["k"]), _metric(q.get("metric")), q.get("space", "features"),
        q.get("measure", "uniform"))),
    "kernel_distributions": ("kernel, metric, measure", lambda ds, q: grp.kernel_distributions(
        ds, _kernel(q.get("kernel")), _metric(q.get("metric")), q.get("measure", "uniform"))),
    "mlce_groups": ("kernel, bins, mode, metric, measure", lambda ds, q: grp.mlce_groups(
        ds, _kernel(q.get("kernel")), _scheme(q), _metric(q.get("metric")),
        q.get("measure", "uniform"))),
}

PRESETS = {
    "ece": "bins, mode",
    "ace": "bins, mode",
    "mce": "bins, mode",
    "mlce": "kernel, bins, mode, metric, absolute",
    "brier": "",
    "brier_decomposition": "by",
}


def catalog() -> str:
    lines = ["presets:"]
    lines += [f"  {k}({v})" for k, v in PRESETS.items()]
    lines.append("groupings:")
    lines += [f"  {k}({v[0]})" for k, v in GROUPINGS.items()]
    lines.append("agglomerators (risk type): " + ", ".join(RISK_KINDS))
    lines.append("agglomerators (deviation type): " + ", ".join(DEVIATION_KINDS))
    lines.append("axioms: " + ", ".join(AXIOMS))
    lines.append("experiments: " + ", ".join(EXPERIMENTS))
    return "\n".join(lines)


def _check_keys(req: dict, allowed: set[str], what: str):
    extra = sorted(set(req) - allowed)
    if extra:
        raise ValidationError(f"{what}: unexpected keys {extra}")


def run_score(ds: Dataset, req: dict) -> dict[str, Any]:
    if "preset" in req:
        name = req["preset"]
        if name not in PRESETS:
            raise ValidationError(f"unknown preset {name!r}")
        if name in ("ece", "ace", "mce"):
            rep = getattr(sc, name)(ds, _scheme(req))
        elif name == "mlce":
            rep = sc.mlce(ds, _kernel(req.get("kernel")), _scheme(req),
                          _metric(req.get("metric")), bool(req.get("absolute", False)))
        elif name == "brier":
            return {"name": "brier", "value": sc.brier(ds)}
        else:
            by = req.get("by", "inputs")
            cal, ref = sc.brier_decomposition(ds, by)
            return {"name": "brier_decomposition", "by": by, "calibration": cal,
                    "refinement": ref, "value": sc.brier(ds)}
        return rep.as_dict()
    _check_keys(req, {"grouping", "signedness", "agglomerator", "name"}, "score request")
    g = dict(req["grouping"])
    kind = g.pop("kind")
    if kind not in GROUPINGS:
        raise ValidationError(f"unknown grouping constructor {kind!r}")
    grouping = GROUPINGS[kind][1](ds, g)
    agg = Agglomerator.from_dict(req["agglomerator"])
    return sc.global_score(ds, grouping, req.get("signedness", "absolute"), agg,
                           name=req.get("name")).as_dict()


# ---------------------------------------------------------------------------
# experiments


def _predictor(params, spec: syn.SyntheticSpec):
    if params is None or params == "oracle":
        return spec.bayes
    p = dict(params)
    if p.get("weights") is not None:
        p["weights"] = tuple(p["weights"])
    return syn.BayesFunction(**p)


def _synthetic(req: dict, seed: int) -> syn.SyntheticSpec:
    params = dict(req.get("synthetic", {}))
    params["seed"] = seed
    return syn.SyntheticSpec.from_dict(params)


def _exp_axioms(req, seed):
    agg = Agglomerator.from_dict(req["agglomerator"])
    axioms = req.get("axioms") or (list(AXIOMS[2:6]) if agg.is_deviation else list(AXIOMS[:5]))
    return check_axioms(agg, axioms, int(req.get("trials", 1000)), seed).as_dict()


def _exp_consistency(req, seed, estimator):
    spec = _synthetic(req, seed)
    pred = _predictor(req.get("predictor"), spec)
    ladder = [int(n) for n in req.get("ladder", (200, 2000, 20000))]
    anchors = int(req.get("anchors", 500))
    metric = _metric(req.get("metric"))
    if estimator == "knn":
        lad = syn.knn_consistency(spec, pred, ladder, anchors=anchors, metric=metric)
    else:
        lad = syn.kernel_consistency(spec, pred, ladder, shape=req.get("shape", "gaussian"),
                                     anchors=anchors, metric=metric)
    out = lad.as_dict()
    out.update(decreasing=lad.decreasing(), halved=lad.halved())
    return out


def _exp_variance(req, seed):
    spec = _synthetic(req, seed)
    pred = _predictor(req.get("predictor"), spec)
    emp, theo = syn.variance_experiment(spec, pred, int(req.get("K", 25)),
                                        int(req.get("resamples", 10_000)), seed)
    return {"empirical": emp, "theoretical": theo}


def _exp_overlap(req, seed):
    X = syn.overlap_fixture(int(req["d"]), int(req["k"]), int(req["N"]))
    ds = Dataset(X, np.zeros(len(X), dtype=int), np.zeros(len(X)))
    counts = grp.membership_counts(grp.knn_groups(ds, int(req["k"]), _metric(req.get("metric"))))
    return {"max_membership": int(counts.max()), "min_membership": int(counts.min()),
            "counts": counts.tolist()}


def _exp_resolution(req, seed):
    fx = syn.resolution_fixture(req["labels1"], req["labels2"], req.get("eps"))
    r = fx.dataset.residuals
    return {"union_error": float(r.mean()), "error1": float(r[fx.group1.array].mean()),
            "error2": float(r[fx.group2.array].mean()),
            "predictions": fx.dataset.predictions.tolist()}


EXPERIMENTS: dict[str, Callable[[dict, int], dict]] = {
    "axioms": _exp_axioms,
    "knn_consistency": lambda q, s: _exp_consistency(q, s, "knn"),
    "kernel_consistency": lambda q, s: _exp_consistency(q, s, "kernel"),
    "variance": _exp_variance,
    "overlap": _exp_overlap,
    "resolution": _exp_resolution,
}
RANDOMIZED = {"axioms", "knn_consistency", "kernel_consistency", "variance"}


# ---------------------------------------------------------------------------
# configuration and run


@dataclass
class RunConfig:
    dataset_path: str | None = None
    roles: ColumnRoles | None = None
    scores: list[dict] = field(default_factory=list)
    experiments: list[dict] = field(default_factory=list)
    seed: int | None = None
    output: str | None = None
    base_dir: Path = field(default_factory=Path)

    def __post_init__(self):
        for i, e in enumerate(self.experiments):
            if e.get("kind") not in EXPERIMENTS:
                raise ValidationError(f"experiment {i}: unknown kind {e.get('kind')!r}")
        for i, s in enumerate(self.scores):
            if "preset" not in s and not {"grouping", "agglomerator"} <= set(s):
                raise ValidationError(
                    f"score request {i}: needs a preset or a grouping and an agglomerator")
            kind = (s.get("grouping") or {}).get("kind")
            if "preset" not in s and kind not in GROUPINGS:
                raise ValidationError(f"score request {i}: unknown grouping {kind!r}")
        if self.scores and self.dataset_path is None:
            raise ValidationError("score requests need a dataset")
        if self.dataset_path is not None and self.roles is None:
            raise ValidationError("dataset needs column roles")
        if self.seed is None and any(e["kind"] in RANDOMIZED for e in self.experiments):
            raise ValidationError("a seed is required for randomized experiments")

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path = Path(".")) -> "RunConfig":
        _check_keys(doc, {"dataset", "scores", "experiments", "seed", "output"}, "config")
        dsd = doc.get("dataset")
        path = roles = None
        if dsd is not None:
            _check_keys(dsd, {"path", "features", "label", "prediction"}, "dataset")
            path = dsd["path"]
            roles = ColumnRoles(tuple(dsd["features"]), dsd["label"], dsd["prediction"])
        seed = doc.get("seed")
        return cls(path, roles, list(doc.get("scores", [])), list(doc.get("experiments", [])),
                   None if seed is None else int(seed), doc.get("output"), base_dir)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {str(path)!r}: {exc}") from None
        if not isinstance(doc, dict):
            raise ValidationError("config must be a JSON object")
        try:
            return cls.from_dict(doc, path.parent)
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed config: {exc}") from None

    def resolve(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else self.base_dir / q

    def as_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"scores": self.scores, "experiments": self.experiments,
                               "seed": self.seed}
        if self.dataset_path is not None:
            out["dataset"] = {"path": self.dataset_path, "features": list(self.roles.features),
                              "label": self.roles.label, "prediction": self.roles.prediction}
        return out


class RequestError(Exception):
    """A score or experiment request failed; wraps the original exception."""

    def __init__(self, what: str, exc: Exception):
        super().__init__(f"{what}: {exc}")
        self.original = exc


def request_seed(master: int, index: int) -> int:
    """Seed for experiment ``index``, derived from the master seed."""
    return int(np.random.SeedSequence([master, index]).generate_state(1)[0])


def run(config: RunConfig) -> dict[str, Any]:
    """Execute all requests in order and return the report document."""
    report: dict[str, Any] = {"config": config.as_dict(), "seed": config.seed,
                              "scores": [], "experiments": []}
    ds = None
    if config.dataset_path is not None:
        ds = load_dataset(config.resolve(config.dataset_path), config.roles)
        report["dataset"] = {**ds.fingerprint(), "features": list(ds.feature_names),
                             "label_mean": float(ds.labels.mean()),
                             "prediction_mean": float(ds.predictions.mean())}
    for i, req in enumerate(config.scores):
        what = f"score request {i} ({req.get('preset') or req['grouping']['kind']})"
        try:
            out = run_score(ds, req)
        except KeyError as exc:
            raise RequestError(what, ValidationError(f"missing parameter {exc}")) from exc
        except Exception as exc:
            raise RequestError(what, exc) from exc
        report["scores"].append({"request": req, **out})
    for i, req in enumerate(config.experiments):
        seed = None if config.seed is None else request_seed(config.seed, i)
        what = f"experiment {i} ({req['kind']})"
        try:
            out = EXPERIMENTS[req["kind"]](req, seed)
        except KeyError as exc:
            raise RequestError(what, ValidationError(f"missing parameter {exc}")) from exc
        except Exception as exc:
            raise RequestError(what, exc) from exc
        report["experiments"].append({"request": req, "seed": seed, "result": out})
    return report


def _jsonable(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


def dumps(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2, default=_jsonable, allow_nan=False) + "\n"


def render_text(report: dict) -> str:
    lines = [f"seed: {report['seed']}"]
    if "dataset" in report:
        d = report["dataset"]
        lines.append(f"dataset: N={d['n']} d={d['d']} sha256={d['sha256'][:16]}")
    for s in report["scores"]:
        extra = ""
        if "groups" in s:
            extra = f"  [{s['signedness']}, {s['grouping']['kind']}, {len(s['groups'])} groups]"
        lines.append(f"{s['name']} = {s['value']:.6g}{extra}")
    for e in report["experiments"]:
        res = e["result"]
        if e["request"]["kind"] == "axioms":
            verdicts = " ".join(f"{a}:{'ok' if v else 'FAIL'}" for a, v in res["verdicts"].items())
            lines.append(f"axioms {res['agglomerator']['kind']}: {verdicts}")
        elif "rungs" in res:
            devs = ", ".join(f"N={r['n']}: {r['deviation']:.4g}" for r in res["rungs"])
            lines.append(f"{res['estimator']} ({res['schedule']}): {devs}")
        else:
            body = {k: v for k, v in res.items() if not isinstance(v, list)}
            lines.append(f"{e['request']['kind']}: {json.dumps(body, sort_keys=True)}")
    return "\n".join(lines) + "\n"


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="groupcal", description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="JSON run configuration")
    ap.add_argument("--data", help="dataset CSV (overrides the config path)")
    ap.add_argument("--out", help="report path (.json); a .txt summary is written beside it")
    ap.add_argument("--seed", type=int, help="master seed (overrides the config)")
    ap.add_argument("--list-scores", action="store_true",
                    help="print the registered presets, groupings and agglomerators")
    args = ap.parse_args(argv)
    if args.list_scores:
        print(catalog())
        return EXIT_OK
    if not args.config:
        ap.print_usage(sys.stderr)
        print("groupcal: error: --config is required", file=sys.stderr)
        return EXIT_INVALID
    try:
        config = RunConfig.load(args.config)
        if args.data is not None:
            config.dataset_path = str(Path(args.data).resolve())
        if args.seed is not None:
            config.seed = args.seed
        config.__post_init__()
        report = run(config)
        text = dumps(report)
    except ValidationError as exc:
        print(f"groupcal: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except RequestError as exc:
        code = EXIT_INVALID if isinstance(exc.original, ValidationError) else EXIT_FAILED
        print(f"groupcal: {exc}", file=sys.stderr)
        return code
    except Exception as exc:
        print(f"groupcal: execution failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED
    out = args.out or (config.output and str(config.resolve(config.output)))
    if out:
        out = Path(out)
        out.write_text(text)
        out.with_suffix(".txt").write_text(render_text(report))
    else:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
