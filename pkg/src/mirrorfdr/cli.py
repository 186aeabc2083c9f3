"""Command line entry point: ``simulate``, ``select`` and ``bench``.

Exit codes: 0 success, 2 usage or validation error, 3 method failure.
Feature indices in every written file are 1-based.
"""

from __future__ import annotations

import argparse
import copy
import csv
import itertools
import json
import logging
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import estimators as est
from .baselines import benjamini_hochberg, debiased_lasso_pvalues, wald_pvalues_mle
from .bench import Scenario, format_csv, format_table, run_bench
from .core import Dataset, DomainError, GlmFamily, MirrorConfig, MirrorFdrError
from .datagen import CovarianceSpec, SignalSpec, make_covariance, sample_coefficients, sample_design, sample_response
from .mirror import HighDimRules, ds_high_glm, ds_high_linear, ds_moderate, gm_moderate, mds
from ._parallel import resolve_threads

log = logging.getLogger("mirrorfdr")

EXIT_OK, EXIT_USAGE, EXIT_METHOD = 0, 2, 3

FAMILY_CHOICES = ("gaussian", "logistic", "poisson", "negbin")
METHOD_CHOICES = ("ds", "mds", "gm", "bhq-mle", "bhq-debiased")
BENCH_METHODS = {"ds": "DS", "mds": "MDS", "gm": "GM", "bhq-mle": "BHq_mle", "bhq-debiased": "BHq_debiased"}


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# CSV helpers
# --------------------------------------------------------------------------


def read_dataset_csv(path, response: str, family: GlmFamily) -> Dataset:
    """Header row required; ``response`` names the response column and every
    other column is a numeric feature."""
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"{path}: no such file")
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0]:
        raise UsageError(f"{path}: missing header row")
    header = [h.strip() for h in rows[0]]
    if response not in header:
        raise UsageError(f"{path}: response column {response!r} not found in header")
    if len(set(header)) != len(header):
        raise UsageError(f"{path}: duplicate column names in header")
    body = [r for r in rows[1:] if r]
    if not body:
        raise UsageError(f"{path}: no data rows")
    vals = np.empty((len(body), len(header)))
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise UsageError(f"{path}: row {i} has {len(row)} fields, expected {len(header)}")
        for k, cell in enumerate(row):
            try:
                vals[i - 2, k] = float(cell)
            except ValueError:
                raise UsageError(f"{path}: row {i}, column {header[k]!r}: not a number: {cell!r}") from None
    ridx = header.index(response)
    names = [h for k, h in enumerate(header) if k != ridx]
    if not names:
        raise UsageError(f"{path}: no feature columns")
    X = np.delete(vals, ridx, axis=1)
    try:
        return Dataset(X, vals[:, ridx], family, tuple(names))
    except DomainError as exc:
        raise UsageError(f"{path}: {exc}") from None


def write_report(path, names, stats, selected) -> None:
    sel = set(int(j) for j in selected)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "feature", "statistic", "selected"])
        for j, (name, s) in enumerate(zip(names, stats)):
            w.writerow([j + 1, name, repr(float(s)), int(j in sel)])


def read_report(path):
    """Inverse of ``write_report``: ``(names, stats, selected 0-based)``."""
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    names = tuple(r["feature"] for r in rows)
    stats = np.array([float(r["statistic"]) for r in rows])
    selected = np.array([int(r["index"]) - 1 for r in rows if r["selected"] == "1"], dtype=np.intp)
    return names, stats, selected


def _dump_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _family(args) -> GlmFamily:
    if args.family != "negbin" and args.dispersion is not None:
        raise UsageError("--dispersion only applies to --family negbin")
    try:
        return GlmFamily(args.family, args.dispersion)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# --------------------------------------------------------------------------
# simulate
# --------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    fam = _family(args)
    try:
        cov = CovarianceSpec(args.covariance, args.r, args.blocks)
        sig = SignalSpec(args.p1, args.magnitude, args.signal_mode)
        if args.n < 2 or args.p < 1:
            raise ValueError("need n >= 2 and p >= 1")
        rng = np.random.default_rng(args.seed)
        sigma = make_covariance(cov, args.p)
        X = sample_design(args.n, args.p, sigma, args.scale, rng)
        beta, s1 = sample_coefficients(args.p, sig, rng)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    y = sample_response(X, beta, fam, rng)
    out = Path(args.out)
    names = [f"x{j + 1}" for j in range(args.p)]
    with open(out, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names + ["y"])
        for i in range(args.n):
            yi = int(y[i]) if not fam.is_gaussian else repr(float(y[i]))
            w.writerow([repr(float(v)) for v in X[i]] + [yi])
    truth = {
        "beta": [float(b) for b in beta],
        "s1": [int(j) + 1 for j in s1],
        "index_base": 1,
        "family": str(fam),
        "seed": args.seed,
        "n": args.n,
        "p": args.p,
    }
    _dump_json(truth, truth_path(out))
    print(f"wrote {out} ({args.n} x {args.p + 1}) and {truth_path(out)}")
    return EXIT_OK


def truth_path(out: Path) -> Path:
    return Path(out).with_suffix(".truth.json")


# --------------------------------------------------------------------------
# select
# --------------------------------------------------------------------------


def _run_select(args, data: Dataset):
    """Returns ``(statistics, selected, summary extras)``."""
    cfg = MirrorConfig(args.q, args.f, args.seed)
    rules = HighDimRules(args.lam, args.nodewise_lambda)
    regime = args.regime
    if regime == "auto":
        regime = "moderate" if data.n // 2 > data.p else "high"
    high_base = "ds_high_linear" if data.family.is_gaussian else "ds_high_glm"
    threads = args.threads
    extra = {"regime": regime}
    if args.method == "ds":
        res = ds_moderate(data, cfg) if regime == "moderate" else (
            ds_high_linear(data, cfg, rules) if data.family.is_gaussian else ds_high_glm(data, cfg, rules)
        )
        extra["statistic"] = "mirror"
    elif args.method == "mds":
        base = "ds_moderate" if regime == "moderate" else high_base
        kw = {} if regime == "moderate" else {"rules": rules}
        res, inc = mds(data, base, args.m, cfg, threads=threads, **kw)
        extra.update(statistic="inclusion_rate", m=inc.m, dropped_splits=inc.dropped)
    elif args.method == "gm":
        if regime != "moderate":
            raise UsageError("gm is only available in the moderate regime")
        res = gm_moderate(data, cfg, threads=threads)
        extra["statistic"] = "mirror"
    elif args.method == "bhq-mle":
        fit = est.fit_mle(data)
        rep = wald_pvalues_mle(data, fit)
        sel = benjamini_hochberg(rep.pvals, args.q)
        extra.update(statistic="pvalue", cutoff=None, fdp_hat=None)
        return rep.pvals, sel, extra
    else:
        rep = debiased_lasso_pvalues(data, args.lam, args.nodewise_lambda, args.seed)
        sel = benjamini_hochberg(rep.pvals, args.q)
        extra.update(statistic="pvalue", cutoff=None, fdp_hat=None)
        return rep.pvals, sel, extra
    extra.update(cutoff=res.cutoff, fdp_hat=res.fdp_hat)
    if res.warnings:
        extra["warnings"] = list(res.warnings)
    return res.mirror, res.selected, extra


def cmd_select(args) -> int:
    try:
        MirrorConfig(args.q, args.f, args.seed)
        est.parse_lambda_rule(args.lam)
        est.parse_lambda_rule(args.nodewise_lambda)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.m < 1:
        raise UsageError("--m must be at least 1")
    fam = _family(args)
    data = read_dataset_csv(args.data, args.response, fam)
    stats, selected, extra = _run_select(args, data)
    out = Path(args.out)
    report = out.with_suffix(".csv")
    write_report(report, data.names(), stats, selected)
    summary = {
        "method": args.method,
        "family": str(fam),
        "q": args.q,
        "f_choice": args.f,
        "seed": args.seed,
        "n": data.n,
        "p": data.p,
        "n_selected": int(len(selected)),
        "selected": [data.names()[j] for j in selected],
        "index_base": 1,
        "report": str(report),
        **extra,
    }
    _dump_json(summary, out.with_suffix(".json"))
    print(f"selected {len(selected)} of {data.p} features; report {report}")
    return EXIT_OK


# --------------------------------------------------------------------------
# bench
# --------------------------------------------------------------------------

_SCALAR = {"type": ["number", "string", "boolean", "null"]}

RUNFILE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["data", "method"],
    "properties": {
        "label": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "reps": {"type": "integer", "minimum": 1},
        "data": {
            "type": "object",
            "additionalProperties": False,
            "required": ["n", "p", "p1"],
            "properties": {
                "n": {"type": "integer", "minimum": 2},
                "p": {"type": "integer", "minimum": 1},
                "p1": {"type": "integer", "minimum": 0},
                "family": {"enum": list(FAMILY_CHOICES) + ["negative_binomial"]},
                "dispersion": {"type": "number", "exclusiveMinimum": 0},
                "scale": {"enum": ["unit", "inv_n"]},
                "covariance": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"type": "string"},
                        "r": {"type": "number"},
                        "blocks": {"type": "integer", "minimum": 1},
                    },
                },
                "signal": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["magnitude"],
                    "properties": {
                        "magnitude": {"type": "number"},
                        "mode": {"enum": ["fixed", "gaussian"]},
                        "units": {"enum": ["absolute", "sqrt_logp_n"]},
                    },
                },
            },
        },
        "method": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"enum": list(METHOD_CHOICES)},
                "regime": {"enum": ["moderate", "high"]},
                "m": {"type": "integer", "minimum": 1},
                "q": {"type": "number"},
                "f": {"enum": ["min2", "product", "sum"]},
            },
        },
        "lambda": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"lasso": _SCALAR, "nodewise": _SCALAR},
        },
        "sweep": {
            "type": "object",
            "additionalProperties": {"type": "array", "items": _SCALAR},
        },
        "grid": {"type": "array", "items": {"type": "object"}},
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"csv": {"type": "string"}},
        },
    },
}


def load_runfile(spec: str) -> dict:
    """A path, or the name of a bundled run file (e.g. ``fig2_desk``)."""
    path = Path(spec)
    if path.is_file():
        text = path.read_text(encoding="utf-8")
    else:
        res = resources.files("mirrorfdr") / "runfiles" / f"{spec}.json"
        if not res.is_file():
            raise UsageError(f"run file {spec!r} not found (neither a path nor a bundled name)")
        text = res.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"run file is not valid JSON: {exc}") from None
    try:
        jsonschema.validate(doc, RUNFILE_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise UsageError(f"run file schema violation at {where}: {exc.message}") from None
    return doc


def _set_dotted(doc: dict, key: str, value) -> None:
    parts = key.split(".")
    node = doc
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise UsageError(f"sweep key {key!r} does not address a section")
    node[parts[-1]] = value


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def expand_runfile(doc: dict) -> list[dict]:
    """Cartesian product of ``sweep`` (dotted keys) or the explicit ``grid``
    overrides; each expanded cell is re-validated against the schema."""
    base = {k: v for k, v in doc.items() if k not in ("sweep", "grid")}
    if "sweep" in doc and "grid" in doc:
        raise UsageError("use either 'sweep' or 'grid', not both")
    if "grid" in doc:
        cells = [_merge(base, g) for g in doc["grid"]]
    elif "sweep" in doc:
        keys = sorted(doc["sweep"])
        cells = []
        for combo in itertools.product(*(doc["sweep"][k] for k in keys)):
            cell = copy.deepcopy(base)
            for k, v in zip(keys, combo):
                _set_dotted(cell, k, v)
            cells.append(cell)
    else:
        cells = [base]
    for cell in cells:
        try:
            jsonschema.validate(cell, RUNFILE_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise UsageError(f"grid cell violates the schema: {exc.message}") from None
    return cells


def scenario_from_cell(cell: dict, reps_override: int | None = None) -> Scenario:
    d, meth = cell["data"], cell["method"]
    lam = cell.get("lambda", {})
    cov = d.get("covariance", {})
    sig = d.get("signal", {"magnitude": 0.0})
    name = meth["name"]
    regime = meth.get("regime") or ("moderate" if name in ("gm", "bhq-mle") or d["n"] // 2 > d["p"] else "high")
    fam = d.get("family", "logistic")
    try:
        return Scenario(
            n=d["n"],
            p=d["p"],
            p1=d["p1"],
            method=BENCH_METHODS[name],
            regime=regime,
            family=fam,
            dispersion=d.get("dispersion"),
            covariance=CovarianceSpec(cov.get("kind", "identity"), float(cov.get("r", 0.0)), cov.get("blocks", 10)),
            signal=SignalSpec(d["p1"], float(sig["magnitude"]), sig.get("mode", "fixed")),
            signal_units=sig.get("units", "absolute"),
            q=meth.get("q", 0.1),
            f_choice=meth.get("f", "product"),
            m=meth.get("m", 50),
            reps=reps_override or cell.get("reps", 20),
            seed=cell.get("seed", 0),
            scale=d.get("scale"),
            lasso=str(lam.get("lasso", "cv:10")),
            nodewise=str(lam.get("nodewise", "theory:1")),
            label=cell.get("label", ""),
        )
    except ValueError as exc:
        raise UsageError(f"invalid scenario: {exc}") from None


def cmd_bench(args) -> int:
    doc = load_runfile(args.runfile)
    if args.reps is not None and args.reps < 1:
        raise UsageError("--reps must be at least 1")
    cells = expand_runfile(doc)
    if not cells:
        raise UsageError("the run file expands to an empty grid")
    grid = [scenario_from_cell(c, args.reps) for c in cells]
    results = run_bench(grid, threads=args.threads)
    out = args.out or doc.get("output", {}).get("csv") or "bench.csv"
    text = format_csv(results)
    with open(out, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    print(format_table(results))
    print(f"wrote {out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mirrorfdr", description="FDR-controlled selection with mirror statistics")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--family", choices=FAMILY_CHOICES, default="logistic")
        p.add_argument("--dispersion", type=float, default=None)
        p.add_argument("--seed", type=int, default=0)

    sim = sub.add_parser("simulate", help="write a synthetic dataset and its truth sidecar")
    common(sim)
    sim.add_argument("--n", type=int, required=True)
    sim.add_argument("--p", type=int, required=True)
    sim.add_argument("--p1", type=int, default=0)
    sim.add_argument("--magnitude", type=float, default=1.0)
    sim.add_argument("--signal-mode", choices=("fixed", "gaussian"), default="fixed")
    sim.add_argument("--covariance", default="identity")
    sim.add_argument("--r", type=float, default=0.0)
    sim.add_argument("--blocks", type=int, default=10)
    sim.add_argument("--scale", choices=("unit", "inv_n"), default="unit")
    sim.add_argument("--out", required=True)
    sim.set_defaults(func=cmd_simulate)

    sel = sub.add_parser("select", help="run a selector on a CSV dataset")
    common(sel)
    sel.add_argument("--data", required=True)
    sel.add_argument("--response", required=True)
    sel.add_argument("--method", choices=METHOD_CHOICES, default="ds")
    sel.add_argument("--regime", choices=("auto", "moderate", "high"), default="auto")
    sel.add_argument("--q", type=float, default=0.1)
    sel.add_argument("--f", choices=("min2", "product", "sum"), default="product")
    sel.add_argument("--m", type=int, default=50)
    sel.add_argument("--lambda", dest="lam", default="cv:10")
    sel.add_argument("--nodewise-lambda", default="theory:1")
    sel.add_argument("--threads", type=int, default=None)
    sel.add_argument("--out", required=True, help="output prefix; writes PREFIX.csv and PREFIX.json")
    sel.set_defaults(func=cmd_select)

    be = sub.add_parser("bench", help="run a benchmark grid from a run file")
    be.add_argument("runfile", help="path to a JSON run file or a bundled name such as fig2_desk")
    be.add_argument("--reps", type=int, default=None, help="override the replication count")
    be.add_argument("--threads", type=int, default=None)
    be.add_argument("--out", default=None)
    be.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if hasattr(args, "threads"):
            args.threads = resolve_threads(args.threads)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MirrorFdrError as exc:
        print(f"method failure ({exc.code}): {exc}", file=sys.stderr)
        return EXIT_METHOD
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
